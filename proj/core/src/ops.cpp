#include "mi3d/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>

#include "mi3d/errors.hpp"

namespace mi3d {

namespace {

using detail::TensorNode;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

std::shared_ptr<TensorNode> op_node(const char* name, std::vector<std::size_t> shape,
                                    detail::Buffer values,
                                    std::vector<std::shared_ptr<TensorNode>> parents,
                                    std::function<void(TensorNode&)> backward) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = name;
  bool needs = false;
  for (const auto& p : parents) {
    if (p->requires_grad) needs = true;
  }
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward);
  }
  return node;
}

void check_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw Error(std::string("undefined tensor passed as ") + what);
}

// Affine kernel shared by linear and shared_pointwise_mlp: the input is
// treated as [M, I] with M = product of leading dims.
Tensor affine_impl(const char* name, const Tensor& x, const Tensor& weight, const Tensor& bias,
                   std::vector<std::size_t> out_shape, std::size_t rows, std::size_t in_dim) {
  const auto& wsh = weight.shape();
  const auto& bsh = bias.shape();
  if (wsh.size() != 2 || wsh[0] != in_dim) {
    throw DimensionError(std::string(name) + ": input shape " + shape_to_string(x.shape()) +
                         " does not match weight shape " + shape_to_string(wsh));
  }
  const std::size_t out_dim = wsh[1];
  if (bsh.size() != 1 || bsh[0] != out_dim) {
    throw DimensionError(std::string(name) + ": bias shape " + shape_to_string(bsh) +
                         " does not match weight shape " + shape_to_string(wsh));
  }

  detail::Buffer out(rows * out_dim);
  {
    ConstMatMap xm(x.values().data(), rows, in_dim);
    ConstMatMap wm(weight.values().data(), in_dim, out_dim);
    ConstVecMap bv(bias.values().data(), out_dim);
    MatMap om(out.data(), rows, out_dim);
    om.noalias() = xm * wm;
    om.rowwise() += bv.transpose();
  }

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  auto backward = [rows, in_dim, out_dim, xn, wn, bn](TensorNode& self) {
    ConstMatMap dy(self.grad.data(), rows, out_dim);
    if (xn->requires_grad) {
      ConstMatMap wm(wn->values.data(), in_dim, out_dim);
      MatMap dx(xn->grad.data(), rows, in_dim);
      dx.noalias() += dy * wm.transpose();
    }
    if (wn->requires_grad) {
      ConstMatMap xm(xn->values.data(), rows, in_dim);
      MatMap dw(wn->grad.data(), in_dim, out_dim);
      dw.noalias() += xm.transpose() * dy;
    }
    if (bn->requires_grad) {
      VecMap db(bn->grad.data(), out_dim);
      db.noalias() += dy.colwise().sum().transpose();
    }
  };
  return Tensor(op_node(name, std::move(out_shape), std::move(out), {xn, wn, bn}, backward));
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_defined(x, "linear input");
  check_defined(weight, "linear weight");
  check_defined(bias, "linear bias");
  const auto& xsh = x.shape();
  if (xsh.size() != 2) {
    throw DimensionError("linear expects a rank-2 input, got " + shape_to_string(xsh));
  }
  return affine_impl("linear", x, weight, bias, {xsh[0], weight.shape()[1]}, xsh[0], xsh[1]);
}

Tensor shared_pointwise_mlp(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_defined(x, "shared_pointwise_mlp input");
  const auto& xsh = x.shape();
  if (xsh.size() != 3) {
    throw DimensionError("shared_pointwise_mlp expects a rank-3 input, got " + shape_to_string(xsh));
  }
  return affine_impl("shared_pointwise_mlp", x, weight, bias,
                     {xsh[0], xsh[1], weight.shape()[1]}, xsh[0] * xsh[1], xsh[2]);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul lhs");
  check_defined(b, "matmul rhs");
  const auto& ash = a.shape();
  const auto& bsh = b.shape();
  if (ash.size() != 2 || bsh.size() != 2 || ash[1] != bsh[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(ash) + " and " +
                         shape_to_string(bsh));
  }
  const std::size_t m = ash[0], k = ash[1], n = bsh[1];
  detail::Buffer out(m * n);
  {
    ConstMatMap am(a.values().data(), m, k);
    ConstMatMap bm(b.values().data(), k, n);
    MatMap om(out.data(), m, n);
    om.noalias() = am * bm;
  }
  auto an = a.node();
  auto bn = b.node();
  auto backward = [m, k, n, an, bn](TensorNode& self) {
    ConstMatMap dy(self.grad.data(), m, n);
    if (an->requires_grad) {
      ConstMatMap bm(bn->values.data(), k, n);
      MatMap da(an->grad.data(), m, k);
      da.noalias() += dy * bm.transpose();
    }
    if (bn->requires_grad) {
      ConstMatMap am(an->values.data(), m, k);
      MatMap db(bn->grad.data(), k, n);
      db.noalias() += am.transpose() * dy;
    }
  };
  return Tensor(op_node("matmul", {m, n}, std::move(out), {an, bn}, backward));
}

Tensor bmm(const Tensor& x, const Tensor& t) {
  check_defined(x, "bmm lhs");
  check_defined(t, "bmm rhs");
  const auto& xsh = x.shape();
  const auto& tsh = t.shape();
  if (xsh.size() != 3 || tsh.size() != 3 || xsh[0] != tsh[0] || tsh[1] != tsh[2] ||
      xsh[2] != tsh[1]) {
    throw DimensionError("bmm: incompatible shapes " + shape_to_string(xsh) + " and " +
                         shape_to_string(tsh));
  }
  const std::size_t batch = xsh[0], n = xsh[1], k = xsh[2];
  detail::Buffer out(batch * n * k);
  for (std::size_t b = 0; b < batch; ++b) {
    ConstMatMap xm(x.values().data() + b * n * k, n, k);
    ConstMatMap tm(t.values().data() + b * k * k, k, k);
    MatMap om(out.data() + b * n * k, n, k);
    om.noalias() = xm * tm;
  }
  auto xn = x.node();
  auto tn = t.node();
  auto backward = [batch, n, k, xn, tn](TensorNode& self) {
    for (std::size_t b = 0; b < batch; ++b) {
      ConstMatMap dy(self.grad.data() + b * n * k, n, k);
      if (xn->requires_grad) {
        ConstMatMap tm(tn->values.data() + b * k * k, k, k);
        MatMap dx(xn->grad.data() + b * n * k, n, k);
        dx.noalias() += dy * tm.transpose();
      }
      if (tn->requires_grad) {
        ConstMatMap xm(xn->values.data() + b * n * k, n, k);
        MatMap dt(tn->grad.data() + b * k * k, k, k);
        dt.noalias() += xm.transpose() * dy;
      }
    }
  };
  return Tensor(op_node("bmm", {batch, n, k}, std::move(out), {xn, tn}, backward));
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu input");
  const std::size_t n = x.size();
  detail::Buffer out(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  auto xn = x.node();
  auto backward = [n, xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < n; ++i) {
      if (xn->values[i] > 0.0) xn->grad[i] += self.grad[i];
    }
  };
  return Tensor(op_node("relu", x.shape(), std::move(out), {xn}, backward));
}

Tensor sigmoid(const Tensor& x) {
  check_defined(x, "sigmoid input");
  const std::size_t n = x.size();
  detail::Buffer out(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 1.0 / (1.0 + std::exp(-xv[i]));
    if (s < kSigmoidClamp) s = kSigmoidClamp;
    if (s > 1.0 - kSigmoidClamp) s = 1.0 - kSigmoidClamp;
    out[i] = s;
  }
  auto xn = x.node();
  auto backward = [n, xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < n; ++i) {
      double s = self.values[i];
      xn->grad[i] += self.grad[i] * s * (1.0 - s);
    }
  };
  return Tensor(op_node("sigmoid", x.shape(), std::move(out), {xn}, backward));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  Mode mode) {
  check_defined(x, "batch_norm input");
  check_defined(gamma, "batch_norm gamma");
  check_defined(beta, "batch_norm beta");
  const auto& xsh = x.shape();
  if (xsh.size() != 2 && xsh.size() != 3) {
    throw DimensionError("batch_norm expects rank 2 or 3, got " + shape_to_string(xsh));
  }
  const std::size_t channels = xsh.back();
  std::size_t m = 1;
  for (std::size_t i = 0; i + 1 < xsh.size(); ++i) m *= xsh[i];
  if (gamma.shape() != std::vector<std::size_t>{channels} ||
      beta.shape() != std::vector<std::size_t>{channels}) {
    throw DimensionError("batch_norm: gamma/beta must have shape [" + std::to_string(channels) +
                         "], got " + shape_to_string(gamma.shape()) + " and " +
                         shape_to_string(beta.shape()));
  }
  if (stats.mean.size() != channels || stats.var.size() != channels) {
    throw DimensionError("batch_norm: running stats sized for " +
                         std::to_string(stats.mean.size()) + " channels, input has " +
                         std::to_string(channels));
  }

  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  detail::Buffer out(m * channels);

  if (mode == Mode::kEval) {
    std::vector<double> scale_c(channels), shift_c(channels), inv_std(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + kBatchNormEps);
      scale_c[c] = gv[c] * inv_std[c];
      shift_c[c] = bv[c] - stats.mean[c] * scale_c[c];
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < channels; ++c) {
        out[i * channels + c] = xv[i * channels + c] * scale_c[c] + shift_c[c];
      }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    std::vector<double> mean = stats.mean;
    auto backward = [m, channels, xn, gn, bn, scale_c, inv_std,
                     mean = std::move(mean)](TensorNode& self) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
          double dy = self.grad[i * channels + c];
          if (xn->requires_grad) xn->grad[i * channels + c] += dy * scale_c[c];
          if (gn->requires_grad) {
            gn->grad[c] += dy * (xn->values[i * channels + c] - mean[c]) * inv_std[c];
          }
          if (bn->requires_grad) bn->grad[c] += dy;
        }
      }
    };
    return Tensor(op_node("batch_norm_eval", xsh, std::move(out), {xn, gn, bn}, backward));
  }

  if (m < 2) {
    throw DegenerateBatchError("batch_norm train mode needs at least 2 elements per channel, got " +
                               std::to_string(m));
  }

  // Single-pass channel statistics via sums of x and x^2. The backward
  // closure keeps mu/inv_std and recomputes normalized values from the
  // parent's stored input instead of materializing them here.
  std::vector<double> mu(channels, 0.0), var(channels, 0.0), inv_std(channels);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * channels;
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] += row[c];
      var[c] += row[c] * row[c];
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t c = 0; c < channels; ++c) {
    mu[c] *= inv_m;
    var[c] = std::max(0.0, var[c] * inv_m - mu[c] * mu[c]);
    inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
  }

  {
    std::vector<double> scale_c(channels), shift_c(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      scale_c[c] = gv[c] * inv_std[c];
      shift_c[c] = bv[c] - mu[c] * scale_c[c];
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = xv.data() + i * channels;
      double* orow = out.data() + i * channels;
      for (std::size_t c = 0; c < channels; ++c) orow[c] = row[c] * scale_c[c] + shift_c[c];
    }
  }

  for (std::size_t c = 0; c < channels; ++c) {
    stats.mean[c] = kBatchNormMomentum * stats.mean[c] + (1.0 - kBatchNormMomentum) * mu[c];
    stats.var[c] = kBatchNormMomentum * stats.var[c] + (1.0 - kBatchNormMomentum) * var[c];
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto backward = [m, channels, xn, gn, bn, mu = std::move(mu),
                   inv_std = std::move(inv_std)](TensorNode& self) {
    std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* dyr = self.grad.data() + i * channels;
      const double* row = xn->values.data() + i * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        sum_dy[c] += dyr[c];
        sum_dy_xhat[c] += dyr[c] * (row[c] - mu[c]) * inv_std[c];
      }
    }
    if (gn->requires_grad) {
      for (std::size_t c = 0; c < channels; ++c) gn->grad[c] += sum_dy_xhat[c];
    }
    if (bn->requires_grad) {
      for (std::size_t c = 0; c < channels; ++c) bn->grad[c] += sum_dy[c];
    }
    if (xn->requires_grad) {
      const double inv_m = 1.0 / static_cast<double>(m);
      std::vector<double> k1(channels), k2(channels);
      for (std::size_t c = 0; c < channels; ++c) {
        k1[c] = inv_m * sum_dy[c];
        k2[c] = inv_m * sum_dy_xhat[c] * inv_std[c];
      }
      for (std::size_t i = 0; i < m; ++i) {
        const double* dyr = self.grad.data() + i * channels;
        const double* row = xn->values.data() + i * channels;
        double* gxr = xn->grad.data() + i * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          const double dxhat = dyr[c] - k1[c] - (row[c] - mu[c]) * k2[c];
          gxr[c] += gn->values[c] * inv_std[c] * dxhat;
        }
      }
    }
  };
  return Tensor(op_node("batch_norm", xsh, std::move(out), {xn, gn, bn}, backward));
}

Tensor max_pool_points(const Tensor& x) {
  check_defined(x, "max_pool_points input");
  const auto& xsh = x.shape();
  if (xsh.size() != 3) {
    throw DimensionError("max_pool_points expects [B,N,C], got " + shape_to_string(xsh));
  }
  const std::size_t batch = xsh[0], n = xsh[1], channels = xsh[2];
  if (n == 0) throw EmptyCloudError("max_pool_points over an empty point axis");
  detail::Buffer out(batch * channels);
  std::vector<std::size_t> argmax(batch * channels);
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    double* orow = out.data() + b * channels;
    std::size_t* arow = argmax.data() + b * channels;
    const double* first = xv.data() + b * n * channels;
    for (std::size_t c = 0; c < channels; ++c) {
      orow[c] = first[c];
      arow[c] = 0;
    }
    for (std::size_t i = 1; i < n; ++i) {
      const double* row = first + i * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        if (row[c] > orow[c]) {  // strict: ties keep the lowest index
          orow[c] = row[c];
          arow[c] = i;
        }
      }
    }
  }
  auto xn = x.node();
  auto backward = [batch, n, channels, xn, argmax = std::move(argmax)](TensorNode& self) {
    if (!xn->requires_grad) return;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t i = argmax[b * channels + c];
        xn->grad[(b * n + i) * channels + c] += self.grad[b * channels + c];
      }
    }
  };
  return Tensor(op_node("max_pool_points", {batch, channels}, std::move(out), {xn}, backward));
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  check_defined(x, "dropout input");
  if (p < 0.0 || p >= 1.0) {
    throw ParameterError("dropout probability must be in [0,1), got " + std::to_string(p));
  }
  if (mode == Mode::kEval || p == 0.0) return x;

  const std::size_t n = x.size();
  const double keep_scale = 1.0 / (1.0 - p);
  detail::Buffer out(n);
  std::vector<std::uint8_t> mask(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    bool keep = rng.uniform() >= p;
    mask[i] = keep ? 1 : 0;
    out[i] = keep ? xv[i] * keep_scale : 0.0;
  }
  auto xn = x.node();
  auto backward = [n, keep_scale, xn, mask = std::move(mask)](TensorNode& self) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) xn->grad[i] += self.grad[i] * keep_scale;
    }
  };
  return Tensor(op_node("dropout", x.shape(), std::move(out), {xn}, backward));
}

Tensor bce_loss(const Tensor& probs, const std::vector<int>& labels) {
  check_defined(probs, "bce_loss probabilities");
  const auto& psh = probs.shape();
  if (psh.size() != 1 || psh[0] != labels.size()) {
    throw DimensionError("bce_loss: probabilities shape " + shape_to_string(psh) +
                         " does not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = labels.size();
  auto pv = probs.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double p = pv[i];
    loss -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  loss /= static_cast<double>(batch);
  auto pn = probs.node();
  auto backward = [batch, pn, labels](TensorNode& self) {
    if (!pn->requires_grad) return;
    const double d = self.grad[0] / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      double p = pn->values[i];
      pn->grad[i] += d * (p - static_cast<double>(labels[i])) / (p * (1.0 - p));
    }
  };
  return Tensor(op_node("bce_loss", {1}, {loss}, {pn}, backward));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add lhs");
  check_defined(b, "add rhs");
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  const std::size_t n = a.size();
  detail::Buffer out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
  auto an = a.node();
  auto bn = b.node();
  auto backward = [n, an, bn](TensorNode& self) {
    for (std::size_t i = 0; i < n; ++i) {
      if (an->requires_grad) an->grad[i] += self.grad[i];
      if (bn->requires_grad) bn->grad[i] += self.grad[i];
    }
  };
  return Tensor(op_node("add", a.shape(), std::move(out), {an, bn}, backward));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul lhs");
  check_defined(b, "mul rhs");
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  const std::size_t n = a.size();
  detail::Buffer out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
  auto an = a.node();
  auto bn = b.node();
  auto backward = [n, an, bn](TensorNode& self) {
    for (std::size_t i = 0; i < n; ++i) {
      if (an->requires_grad) an->grad[i] += self.grad[i] * bn->values[i];
      if (bn->requires_grad) bn->grad[i] += self.grad[i] * an->values[i];
    }
  };
  return Tensor(op_node("mul", a.shape(), std::move(out), {an, bn}, backward));
}

Tensor scale(const Tensor& a, double factor) {
  check_defined(a, "scale input");
  const std::size_t n = a.size();
  detail::Buffer out(n);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * factor;
  auto an = a.node();
  auto backward = [n, factor, an](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * factor;
  };
  return Tensor(op_node("scale", a.shape(), std::move(out), {an}, backward));
}

Tensor sum(const Tensor& a) {
  check_defined(a, "sum input");
  const std::size_t n = a.size();
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto an = a.node();
  auto backward = [n, an](TensorNode& self) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[0];
  };
  return Tensor(op_node("sum", {1}, {s}, {an}, backward));
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  check_defined(x, "reshape input");
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  detail::Buffer out(x.values().begin(), x.values().end());
  auto xn = x.node();
  auto backward = [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  };
  return Tensor(op_node("reshape", std::move(shape), std::move(out), {xn}, backward));
}

Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1) {
  check_defined(x, "slice_channels input");
  const auto& xsh = x.shape();
  if (xsh.size() != 3) {
    throw DimensionError("slice_channels expects [B,N,C], got " + shape_to_string(xsh));
  }
  if (c0 >= c1 || c1 > xsh[2]) {
    throw DimensionError("slice_channels: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for " + shape_to_string(xsh));
  }
  const std::size_t rows = xsh[0] * xsh[1], c_in = xsh[2], c_out = c1 - c0;
  detail::Buffer out(rows * c_out);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < c_out; ++c) out[r * c_out + c] = xv[r * c_in + c0 + c];
  }
  auto xn = x.node();
  auto backward = [rows, c_in, c_out, c0, xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < c_out; ++c) {
        xn->grad[r * c_in + c0 + c] += self.grad[r * c_out + c];
      }
    }
  };
  return Tensor(op_node("slice_channels", {xsh[0], xsh[1], c_out}, std::move(out), {xn}, backward));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_defined(a, "concat_channels lhs");
  check_defined(b, "concat_channels rhs");
  const auto& ash = a.shape();
  const auto& bsh = b.shape();
  if (ash.size() != 3 || bsh.size() != 3 || ash[0] != bsh[0] || ash[1] != bsh[1]) {
    throw DimensionError("concat_channels: incompatible shapes " + shape_to_string(ash) + " and " +
                         shape_to_string(bsh));
  }
  const std::size_t rows = ash[0] * ash[1], ca = ash[2], cb = bsh[2];
  detail::Buffer out(rows * (ca + cb));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out[r * (ca + cb) + c] = av[r * ca + c];
    for (std::size_t c = 0; c < cb; ++c) out[r * (ca + cb) + ca + c] = bv[r * cb + c];
  }
  auto an = a.node();
  auto bn = b.node();
  auto backward = [rows, ca, cb, an, bn](TensorNode& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (an->requires_grad) {
        for (std::size_t c = 0; c < ca; ++c) an->grad[r * ca + c] += self.grad[r * (ca + cb) + c];
      }
      if (bn->requires_grad) {
        for (std::size_t c = 0; c < cb; ++c) {
          bn->grad[r * cb + c] += self.grad[r * (ca + cb) + ca + c];
        }
      }
    }
  };
  return Tensor(op_node("concat_channels", {ash[0], ash[1], ca + cb}, std::move(out), {an, bn},
                        backward));
}

}  // namespace mi3d
