#include "mi3d/pointnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mi3d/errors.hpp"
#include "mi3d/experiment.hpp"

namespace mi3d {

namespace {

// Fixed alignment-network widths, mirroring the cited architecture.
constexpr std::size_t kTNetPointWidths[] = {64, 128, 1024};
constexpr std::size_t kTNetFcWidths[] = {512, 256};

Tensor init_dense_weight(std::size_t fan_in, std::size_t fan_out, double std_scale, Rng& rng) {
  std::vector<double> w(fan_in * fan_out);
  const double std = std_scale * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w) v = rng.normal(0.0, std);
  return Tensor::from_values({fan_in, fan_out}, std::move(w), true);
}

DenseLayer make_dense(std::size_t fan_in, std::size_t fan_out, Rng& rng, double std_scale = 1.0) {
  DenseLayer layer;
  layer.weight = init_dense_weight(fan_in, fan_out, std_scale, rng);
  layer.bias = Tensor::zeros({fan_out}, true);
  return layer;
}

NormLayer make_norm(std::size_t channels) {
  NormLayer norm;
  norm.gamma = Tensor::full({channels}, 1.0, true);
  norm.beta = Tensor::zeros({channels}, true);
  norm.stats = RunningStats::init(channels);
  return norm;
}

TNet make_tnet(std::size_t k, bool batch_norm, Rng& rng) {
  TNet net;
  net.k = k;
  std::size_t width = k;
  for (std::size_t w : kTNetPointWidths) {
    net.point_layers.push_back(make_dense(width, w, rng));
    if (batch_norm) net.point_norms.push_back(make_norm(w));
    width = w;
  }
  for (std::size_t w : kTNetFcWidths) {
    net.fc_layers.push_back(make_dense(width, w, rng));
    if (batch_norm) net.fc_norms.push_back(make_norm(w));
    width = w;
  }
  // Zero weights + identity bias: the initial transform is exactly I.
  net.out_layer.weight = Tensor::zeros({width, k * k}, true);
  std::vector<double> eye(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
  net.out_layer.bias = Tensor::from_values({k * k}, std::move(eye), true);
  return net;
}

Tensor tnet_forward(TNet& net, const Tensor& points, Mode mode, bool batch_norm) {
  Tensor h = points;
  for (std::size_t i = 0; i < net.point_layers.size(); ++i) {
    h = shared_pointwise_mlp(h, net.point_layers[i].weight, net.point_layers[i].bias);
    if (batch_norm) {
      auto& n = net.point_norms[i];
      h = mi3d::batch_norm(h, n.gamma, n.beta, n.stats, mode);
    }
    h = relu(h);
  }
  Tensor g = max_pool_points(h);
  for (std::size_t i = 0; i < net.fc_layers.size(); ++i) {
    g = linear(g, net.fc_layers[i].weight, net.fc_layers[i].bias);
    if (batch_norm) {
      auto& n = net.fc_norms[i];
      g = mi3d::batch_norm(g, n.gamma, n.beta, n.stats, mode);
    }
    g = relu(g);
  }
  Tensor flat = linear(g, net.out_layer.weight, net.out_layer.bias);
  return reshape(flat, {points.shape()[0], net.k, net.k});
}

void collect_tnet(const std::string& prefix, TNet& net,
                  std::vector<std::pair<std::string, Tensor>>& out) {
  for (std::size_t i = 0; i < net.point_layers.size(); ++i) {
    out.emplace_back(prefix + ".point" + std::to_string(i) + ".weight", net.point_layers[i].weight);
    out.emplace_back(prefix + ".point" + std::to_string(i) + ".bias", net.point_layers[i].bias);
    if (i < net.point_norms.size()) {
      out.emplace_back(prefix + ".point_norm" + std::to_string(i) + ".gamma",
                       net.point_norms[i].gamma);
      out.emplace_back(prefix + ".point_norm" + std::to_string(i) + ".beta",
                       net.point_norms[i].beta);
    }
  }
  for (std::size_t i = 0; i < net.fc_layers.size(); ++i) {
    out.emplace_back(prefix + ".fc" + std::to_string(i) + ".weight", net.fc_layers[i].weight);
    out.emplace_back(prefix + ".fc" + std::to_string(i) + ".bias", net.fc_layers[i].bias);
    if (i < net.fc_norms.size()) {
      out.emplace_back(prefix + ".fc_norm" + std::to_string(i) + ".gamma", net.fc_norms[i].gamma);
      out.emplace_back(prefix + ".fc_norm" + std::to_string(i) + ".beta", net.fc_norms[i].beta);
    }
  }
  out.emplace_back(prefix + ".out.weight", net.out_layer.weight);
  out.emplace_back(prefix + ".out.bias", net.out_layer.bias);
}

void collect_tnet_stats(const std::string& prefix, TNet& net,
                        std::vector<std::pair<std::string, std::vector<double>*>>& out) {
  for (std::size_t i = 0; i < net.point_norms.size(); ++i) {
    out.emplace_back(prefix + ".point_norm" + std::to_string(i) + ".running_mean",
                     &net.point_norms[i].stats.mean);
    out.emplace_back(prefix + ".point_norm" + std::to_string(i) + ".running_var",
                     &net.point_norms[i].stats.var);
  }
  for (std::size_t i = 0; i < net.fc_norms.size(); ++i) {
    out.emplace_back(prefix + ".fc_norm" + std::to_string(i) + ".running_mean",
                     &net.fc_norms[i].stats.mean);
    out.emplace_back(prefix + ".fc_norm" + std::to_string(i) + ".running_var",
                     &net.fc_norms[i].stats.var);
  }
}

DenseLayer clone_dense(const DenseLayer& l) {
  return DenseLayer{l.weight.clone_detached(), l.bias.clone_detached()};
}

NormLayer clone_norm(const NormLayer& n) {
  NormLayer out;
  out.gamma = n.gamma.clone_detached();
  out.beta = n.beta.clone_detached();
  out.stats = n.stats;
  return out;
}

TNet clone_tnet(const TNet& t) {
  TNet out;
  out.k = t.k;
  for (const auto& l : t.point_layers) out.point_layers.push_back(clone_dense(l));
  for (const auto& n : t.point_norms) out.point_norms.push_back(clone_norm(n));
  for (const auto& l : t.fc_layers) out.fc_layers.push_back(clone_dense(l));
  for (const auto& n : t.fc_norms) out.fc_norms.push_back(clone_norm(n));
  out.out_layer = clone_dense(t.out_layer);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join_list(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<T, double>) {
      s += format_double(xs[i]);
    } else {
      s += std::to_string(xs[i]);
    }
  }
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string serialize_config(const ClassifierConfig& c) {
  std::ostringstream os;
  os << "dropout_probs=" << join_list(c.dropout_probs) << "\n";
  os << "encoder_widths=" << join_list(c.encoder_widths) << "\n";
  os << "head_widths=" << join_list(c.head_widths) << "\n";
  os << "input_channels=" << c.input_channels << "\n";
  os << "ortho_reg_weight=" << format_double(c.ortho_reg_weight) << "\n";
  os << "use_batch_norm=" << (c.use_batch_norm ? 1 : 0) << "\n";
  os << "use_feature_tnet=" << (c.use_feature_tnet ? 1 : 0) << "\n";
  os << "use_input_tnet=" << (c.use_input_tnet ? 1 : 0) << "\n";
  return os.str();
}

ClassifierConfig parse_config_block(const std::string& block) {
  ClassifierConfig c;
  c.dropout_probs.clear();
  c.encoder_widths.clear();
  c.head_widths.clear();
  std::istringstream is(block);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("checkpoint: malformed config line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "dropout_probs") {
      for (const auto& t : split_list(val)) c.dropout_probs.push_back(std::stod(t));
    } else if (key == "encoder_widths") {
      for (const auto& t : split_list(val)) c.encoder_widths.push_back(std::stoul(t));
    } else if (key == "head_widths") {
      for (const auto& t : split_list(val)) c.head_widths.push_back(std::stoul(t));
    } else if (key == "input_channels") {
      c.input_channels = std::stoul(val);
    } else if (key == "ortho_reg_weight") {
      c.ortho_reg_weight = std::stod(val);
    } else if (key == "use_batch_norm") {
      c.use_batch_norm = val == "1";
    } else if (key == "use_feature_tnet") {
      c.use_feature_tnet = val == "1";
    } else if (key == "use_input_tnet") {
      c.use_input_tnet = val == "1";
    } else {
      throw Error("checkpoint: unknown config key '" + key + "'");
    }
  }
  return c;
}

constexpr char kCheckpointMagic[8] = {'M', 'I', '3', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FilesystemError("checkpoint: unexpected end of file");
  return v;
}

}  // namespace

void ClassifierConfig::validate() const {
  if (input_channels < 3) {
    throw ConfigError("input_channels must be at least 3 (x,y,z), got " +
                      std::to_string(input_channels));
  }
  if (encoder_widths.empty()) throw ConfigError("encoder_widths must not be empty");
  if (head_widths.empty()) throw ConfigError("head_widths must not be empty");
  if (head_widths.back() != 1) {
    throw ConfigError("last head width must be 1 (single sigmoid output), got " +
                      std::to_string(head_widths.back()));
  }
  const std::size_t hidden = head_widths.size() - 1;
  if (dropout_probs.size() != hidden) {
    throw ConfigError("dropout_probs length " + std::to_string(dropout_probs.size()) +
                      " must equal the number of hidden head layers " + std::to_string(hidden));
  }
  for (double p : dropout_probs) {
    if (p < 0.0 || p >= 1.0) {
      throw ConfigError("dropout probability must be in [0,1), got " + std::to_string(p));
    }
  }
  if (ortho_reg_weight < 0.0) {
    throw ConfigError("ortho_reg_weight must be non-negative, got " +
                      std::to_string(ortho_reg_weight));
  }
}

std::size_t ClassifierConfig::feature_transform_index() const {
  return encoder_widths.size() >= 2 ? 1 : 0;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  // learning_rate == 0 is allowed: it turns training into a pure
  // evaluation loop (used by the grid-search tie rule).
  if (learning_rate < 0.0) {
    throw ConfigError("learning_rate must be non-negative, got " + std::to_string(learning_rate));
  }
}

Model build_model(const ClassifierConfig& config, std::uint64_t seed) {
  config.validate();
  Model model;
  model.config = config;
  Rng rng(derive_seed(seed, 0xB0D));

  if (config.use_input_tnet) {
    model.input_tnet = make_tnet(3, config.use_batch_norm, rng);
  }
  if (config.use_feature_tnet) {
    const std::size_t k = config.encoder_widths[config.feature_transform_index()];
    model.feature_tnet = make_tnet(k, config.use_batch_norm, rng);
  }
  std::size_t width = config.input_channels;
  for (std::size_t w : config.encoder_widths) {
    model.encoder.push_back(make_dense(width, w, rng));
    if (config.use_batch_norm) model.encoder_norms.push_back(make_norm(w));
    width = w;
  }
  for (std::size_t i = 0; i + 1 < config.head_widths.size(); ++i) {
    model.head.push_back(make_dense(width, config.head_widths[i], rng));
    if (config.use_batch_norm) model.head_norms.push_back(make_norm(config.head_widths[i]));
    width = config.head_widths[i];
  }
  // Small-scale final layer so the untrained output starts near 0.5.
  model.head.push_back(make_dense(width, 1, rng, 0.1));
  return model;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  if (input_tnet) collect_tnet("input_tnet", *input_tnet, out);
  if (feature_tnet) collect_tnet("feature_tnet", *feature_tnet, out);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    out.emplace_back("encoder" + std::to_string(i) + ".weight", encoder[i].weight);
    out.emplace_back("encoder" + std::to_string(i) + ".bias", encoder[i].bias);
    if (i < encoder_norms.size()) {
      out.emplace_back("encoder_norm" + std::to_string(i) + ".gamma", encoder_norms[i].gamma);
      out.emplace_back("encoder_norm" + std::to_string(i) + ".beta", encoder_norms[i].beta);
    }
  }
  for (std::size_t i = 0; i < head.size(); ++i) {
    out.emplace_back("head" + std::to_string(i) + ".weight", head[i].weight);
    out.emplace_back("head" + std::to_string(i) + ".bias", head[i].bias);
    if (i < head_norms.size()) {
      out.emplace_back("head_norm" + std::to_string(i) + ".gamma", head_norms[i].gamma);
      out.emplace_back("head_norm" + std::to_string(i) + ".beta", head_norms[i].beta);
    }
  }
  return out;
}

std::vector<Tensor> Model::trainable_parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::named_state_arrays() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  if (input_tnet) collect_tnet_stats("input_tnet", *input_tnet, out);
  if (feature_tnet) collect_tnet_stats("feature_tnet", *feature_tnet, out);
  for (std::size_t i = 0; i < encoder_norms.size(); ++i) {
    out.emplace_back("encoder_norm" + std::to_string(i) + ".running_mean",
                     &encoder_norms[i].stats.mean);
    out.emplace_back("encoder_norm" + std::to_string(i) + ".running_var",
                     &encoder_norms[i].stats.var);
  }
  for (std::size_t i = 0; i < head_norms.size(); ++i) {
    out.emplace_back("head_norm" + std::to_string(i) + ".running_mean", &head_norms[i].stats.mean);
    out.emplace_back("head_norm" + std::to_string(i) + ".running_var", &head_norms[i].stats.var);
  }
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

Model Model::clone() const {
  Model out;
  out.config = config;
  if (input_tnet) out.input_tnet = clone_tnet(*input_tnet);
  if (feature_tnet) out.feature_tnet = clone_tnet(*feature_tnet);
  for (const auto& l : encoder) out.encoder.push_back(clone_dense(l));
  for (const auto& n : encoder_norms) out.encoder_norms.push_back(clone_norm(n));
  for (const auto& l : head) out.head.push_back(clone_dense(l));
  for (const auto& n : head_norms) out.head_norms.push_back(clone_norm(n));
  out.training_history = training_history;
  return out;
}

ForwardResult forward_with_transform(Model& model, const Tensor& batch, Mode mode, Rng* rng) {
  const auto& sh = batch.shape();
  if (sh.size() != 3) {
    throw DimensionError("forward expects a [B,N,C] batch, got " + shape_to_string(sh));
  }
  if (sh[2] != model.config.input_channels) {
    throw DimensionError("batch has " + std::to_string(sh[2]) + " channels, model expects " +
                         std::to_string(model.config.input_channels));
  }
  if (sh[1] == 0) throw EmptyCloudError("forward on an empty point cloud");

  const std::size_t channels = sh[2];
  const bool bn = model.config.use_batch_norm;
  Tensor x = batch;

  if (model.input_tnet) {
    Tensor xyz = channels == 3 ? x : slice_channels(x, 0, 3);
    Tensor t = tnet_forward(*model.input_tnet, xyz, mode, bn);
    Tensor aligned = bmm(xyz, t);
    x = channels == 3 ? aligned : concat_channels(aligned, slice_channels(x, 3, channels));
  }

  Tensor feature_transform;
  for (std::size_t i = 0; i < model.encoder.size(); ++i) {
    x = shared_pointwise_mlp(x, model.encoder[i].weight, model.encoder[i].bias);
    if (bn) {
      auto& n = model.encoder_norms[i];
      x = batch_norm(x, n.gamma, n.beta, n.stats, mode);
    }
    x = relu(x);
    if (model.feature_tnet && i == model.config.feature_transform_index()) {
      feature_transform = tnet_forward(*model.feature_tnet, x, mode, bn);
      x = bmm(x, feature_transform);
    }
  }

  Tensor g = max_pool_points(x);
  for (std::size_t i = 0; i + 1 < model.head.size(); ++i) {
    g = linear(g, model.head[i].weight, model.head[i].bias);
    if (bn) {
      auto& n = model.head_norms[i];
      g = batch_norm(g, n.gamma, n.beta, n.stats, mode);
    }
    g = relu(g);
    const double p = model.config.dropout_probs[i];
    if (p > 0.0 && mode == Mode::kTrain) {
      if (!rng) throw ParameterError("train-mode forward with dropout requires an rng");
      g = dropout(g, p, mode, *rng);
    }
  }
  Tensor logits = linear(g, model.head.back().weight, model.head.back().bias);
  Tensor probs = reshape(sigmoid(logits), {sh[0]});
  return ForwardResult{probs, feature_transform};
}

Tensor forward(Model& model, const Tensor& batch, Mode mode, Rng* rng) {
  return forward_with_transform(model, batch, mode, rng).probs;
}

double predict(Model& model, const TrainSample& sample) {
  Tensor batch = Tensor::from_values({1, sample.n_points, sample.channels}, sample.values);
  return forward(model, batch, Mode::kEval).scalar_value();
}

Tensor orthogonality_penalty(const Tensor& a) {
  const auto& sh = a.shape();
  if (sh.size() != 2 || sh[0] != sh[1]) {
    throw DimensionError("orthogonality_penalty expects a square matrix, got " +
                         shape_to_string(sh));
  }
  return orthogonality_penalty_batch(reshape(a, {1, sh[0], sh[1]}));
}

Tensor orthogonality_penalty_batch(const Tensor& a) {
  const auto& sh = a.shape();
  if (sh.size() != 3 || sh[1] != sh[2]) {
    throw DimensionError("orthogonality_penalty_batch expects [B,K,K], got " + shape_to_string(sh));
  }
  const std::size_t batch = sh[0], k = sh[1];
  auto av = a.values();
  // residual R_b = A_b * A_b^T - I, penalty = mean_b ||R_b||_F^2
  std::vector<double> residual(batch * k * k);
  double penalty = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* A = av.data() + b * k * k;
    double* R = residual.data() + b * k * k;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < k; ++t) dot += A[i * k + t] * A[j * k + t];
        double r = dot - (i == j ? 1.0 : 0.0);
        R[i * k + j] = r;
        penalty += r * r;
      }
    }
  }
  penalty /= static_cast<double>(batch);

  auto an = a.node();
  auto backward = [batch, k, an, residual = std::move(residual)](detail::TensorNode& self) {
    if (!an->requires_grad) return;
    // d/dA ||A A^T - I||^2 = 4 (A A^T - I) A, averaged over the batch
    const double d = self.grad[0] * 4.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* A = an->values.data() + b * k * k;
      const double* R = residual.data() + b * k * k;
      double* G = an->grad.data() + b * k * k;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          double g = 0.0;
          for (std::size_t t = 0; t < k; ++t) g += R[i * k + t] * A[t * k + j];
          G[i * k + j] += d * g;
        }
      }
    }
  };
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = {1};
  node->values = detail::Buffer{penalty};
  node->op = "orthogonality_penalty";
  node->requires_grad = an->requires_grad;
  if (node->requires_grad) {
    node->parents = {an};
    node->backward_fn = backward;
  }
  return Tensor(std::move(node));
}

Tensor batch_from_samples(const std::vector<TrainSample>& samples,
                          const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DatasetError("batch_from_samples: empty index set");
  const std::size_t n = samples[indices[0]].n_points;
  const std::size_t c = samples[indices[0]].channels;
  detail::Buffer values;
  values.reserve(indices.size() * n * c);
  for (std::size_t idx : indices) {
    const auto& s = samples[idx];
    if (s.n_points != n || s.channels != c) {
      throw DatasetError("inconsistent sample shapes: [" + std::to_string(n) + "," +
                         std::to_string(c) + "] vs [" + std::to_string(s.n_points) + "," +
                         std::to_string(s.channels) + "]");
    }
    values.insert(values.end(), s.values.begin(), s.values.end());
  }
  return Tensor::from_buffer({indices.size(), n, c}, std::move(values));
}

Model train(const Model& base, const std::vector<TrainSample>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw DatasetError("training dataset is empty");
  for (const auto& s : dataset) {
    if (s.channels != base.config.input_channels) {
      throw DatasetError("sample has " + std::to_string(s.channels) + " channels, model expects " +
                         std::to_string(base.config.input_channels));
    }
    if (s.n_points != dataset.front().n_points) {
      throw DatasetError("inconsistent point counts across dataset: " +
                         std::to_string(dataset.front().n_points) + " vs " +
                         std::to_string(s.n_points));
    }
  }

  Model model = base.clone();
  auto params = model.trainable_parameters();
  AdamState adam = AdamState::init(params, AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(derive_seed(cfg.seed, 0x5au));
  Rng dropout_rng(derive_seed(cfg.seed, 0xd0u));

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0u);
  const std::size_t n_batches = (dataset.size() + cfg.batch_size - 1) / cfg.batch_size;

  model.training_history.clear();
  model.training_history.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = shuffle_rng.uniform_index(i);
        std::swap(order[i - 1], order[j]);
      }
    }
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(dataset.size(), lo + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);
      Tensor batch = batch_from_samples(dataset, idx);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = dataset[idx[i]].label;

      ForwardResult fr = forward_with_transform(model, batch, Mode::kTrain, &dropout_rng);
      Tensor loss = bce_loss(fr.probs, labels);
      Tensor total = loss;
      if (fr.feature_transform.defined() && model.config.ortho_reg_weight > 0.0) {
        total = add(loss, scale(orthogonality_penalty_batch(fr.feature_transform),
                                model.config.ortho_reg_weight));
      }
      for (auto& p : params) p.zero_grad();
      total.backward();
      adam_step(params, adam);
      loss_sum += loss.scalar_value() * static_cast<double>(idx.size());
    }
    model.training_history.push_back(loss_sum / static_cast<double>(dataset.size()));
  }
  return model;
}

GridSearchResult grid_search_dropout(const ClassifierConfig& base_config,
                                     const std::vector<TrainSample>& dataset,
                                     const std::vector<std::vector<double>>& grid,
                                     const std::vector<FoldSplit>& folds, const TrainConfig& cfg) {
  if (grid.empty()) throw ParameterError("grid_search_dropout: empty grid");
  if (folds.empty()) throw ParameterError("grid_search_dropout: no folds");

  GridSearchResult result;
  result.grid = grid;
  result.fold_scores.assign(grid.size(), std::vector<double>(folds.size(), 0.0));
  result.mean_scores.assign(grid.size(), 0.0);

  for (std::size_t si = 0; si < grid.size(); ++si) {
    ClassifierConfig config = base_config;
    config.dropout_probs = grid[si];
    config.validate();
    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
      // Seeds depend on the fold only, so settings are compared with
      // matched initializations and data streams.
      Model model = build_model(config, derive_seed(cfg.seed, 0x6d, fi));
      std::vector<TrainSample> fold_train;
      for (std::size_t idx : folds[fi].train_indices) fold_train.push_back(dataset[idx]);
      TrainConfig fold_cfg = cfg;
      fold_cfg.seed = derive_seed(cfg.seed, 0x7e, fi);
      Model trained = train(model, fold_train, fold_cfg);

      std::vector<double> scores;
      std::vector<int> labels;
      for (std::size_t idx : folds[fi].val_indices) {
        scores.push_back(predict(trained, dataset[idx]));
        labels.push_back(dataset[idx].label);
      }
      result.fold_scores[si][fi] = auroc(scores, labels);
    }
    double mean = 0.0;
    for (double s : result.fold_scores[si]) mean += s;
    result.mean_scores[si] = mean / static_cast<double>(folds.size());
  }

  auto total_dropout = [](const std::vector<double>& setting) {
    double t = 0.0;
    for (double p : setting) t += p;
    return t;
  };
  std::size_t best = 0;
  for (std::size_t si = 1; si < grid.size(); ++si) {
    if (result.mean_scores[si] > result.mean_scores[best] ||
        (result.mean_scores[si] == result.mean_scores[best] &&
         total_dropout(grid[si]) < total_dropout(grid[best]))) {
      best = si;
    }
  }
  result.best_index = best;
  result.best_setting = grid[best];
  return result;
}

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  const std::string config_block = serialize_config(model.config);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FilesystemError("cannot open checkpoint for writing: " + tmp.string());

    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_raw<std::uint32_t>(os, kCheckpointVersion);
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(config_block.size()));
    os.write(config_block.data(), static_cast<std::streamsize>(config_block.size()));

    auto params = model.named_parameters();
    auto stats = model.named_state_arrays();
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(params.size() + stats.size()));
    auto write_array = [&os](const std::string& name, const std::vector<std::size_t>& shape,
                             std::span<const double> data) {
      write_raw<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_raw<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
      for (std::size_t d : shape) write_raw<std::uint64_t>(os, d);
      os.write(reinterpret_cast<const char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)));
    };
    for (auto& [name, t] : params) write_array(name, t.shape(), t.values());
    for (auto& [name, v] : stats) write_array(name, {v->size()}, *v);

    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(model.training_history.size()));
    os.write(reinterpret_cast<const char*>(model.training_history.data()),
             static_cast<std::streamsize>(model.training_history.size() * sizeof(double)));
    if (!os) throw FilesystemError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FilesystemError("cannot open checkpoint: " + path.string());

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FilesystemError("not a checkpoint file: " + path.string());
  }
  const auto version = read_raw<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw FilesystemError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = read_raw<std::uint32_t>(is);
  std::string config_block(config_len, '\0');
  is.read(config_block.data(), config_len);
  if (!is) throw FilesystemError("checkpoint: truncated config block");

  Model model = build_model(parse_config_block(config_block), 0);
  auto params = model.named_parameters();
  auto stats = model.named_state_arrays();
  const auto n_arrays = read_raw<std::uint32_t>(is);
  if (n_arrays != params.size() + stats.size()) {
    throw FilesystemError("checkpoint: expected " + std::to_string(params.size() + stats.size()) +
                          " arrays, found " + std::to_string(n_arrays));
  }
  auto read_array = [&is](const std::string& want_name, const std::vector<std::size_t>& want_shape,
                          std::span<double> dest) {
    const auto name_len = read_raw<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = read_raw<std::uint8_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_raw<std::uint64_t>(is));
    if (name != want_name || shape != want_shape) {
      throw FilesystemError("checkpoint: array '" + name + "' does not match expected '" +
                            want_name + "' " + shape_to_string(want_shape));
    }
    is.read(reinterpret_cast<char*>(dest.data()),
            static_cast<std::streamsize>(dest.size() * sizeof(double)));
    if (!is) throw FilesystemError("checkpoint: truncated array payload");
  };
  for (auto& [name, t] : params) read_array(name, t.shape(), t.mutable_values());
  for (auto& [name, v] : stats) read_array(name, {v->size()}, *v);

  const auto hist_len = read_raw<std::uint32_t>(is);
  model.training_history.resize(hist_len);
  if (hist_len > 0) {
    is.read(reinterpret_cast<char*>(model.training_history.data()),
            static_cast<std::streamsize>(hist_len * sizeof(double)));
    if (!is) throw FilesystemError("checkpoint: truncated history");
  }
  return model;
}

}  // namespace mi3d
