#pragma once

#include <vector>

#include "mi3d/rng.hpp"
#include "mi3d/tensor.hpp"

namespace mi3d {

// Per-channel running statistics owned by a batch-norm layer. Mutated only
// by train-mode batch_norm calls; eval mode reads them.
struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;

  static RunningStats init(std::size_t channels) {
    return RunningStats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

// out[i,j] = sum_k x[i,k] * W[k,j] + b[j].  x: [B,I], W: [I,O], b: [O].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Same affine map applied independently to every point. x: [B,N,Cin],
// W: [Cin,Cout], b: [Cout] -> [B,N,Cout].
Tensor shared_pointwise_mlp(const Tensor& x, const Tensor& weight, const Tensor& bias);

// General 2-D matrix product. A: [M,K], B: [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Batched product x[b] * t[b]. x: [B,N,K], t: [B,K,K] -> [B,N,K].
Tensor bmm(const Tensor& x, const Tensor& t);

Tensor relu(const Tensor& x);

// Elementwise logistic with outputs clamped to [1e-12, 1 - 1e-12] so a
// downstream log() can never see 0 or 1.
Tensor sigmoid(const Tensor& x);

inline constexpr double kSigmoidClamp = 1e-12;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Normalizes each channel over all leading axes (B or B*N). Train mode
// uses batch statistics (eps=1e-5) and folds them into `stats` with
// momentum 0.9: running = 0.9*running + 0.1*batch. Eval mode normalizes
// with the running statistics. x: [B,C] or [B,N,C].
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  Mode mode);

// out[b,c] = max_n x[b,n,c]. Backward routes the gradient to the first
// (lowest-index) maximum, which keeps the backward pass deterministic.
Tensor max_pool_points(const Tensor& x);

// Inverted dropout: train mode zeroes each element with probability p and
// scales survivors by 1/(1-p); eval mode is the identity (same tensor).
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

// Mean binary cross entropy: -(1/B) * sum_i [y ln p + (1-y) ln(1-p)].
// probs: [B]; labels in {0,1}.
Tensor bce_loss(const Tensor& probs, const std::vector<int>& labels);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);

// Same values, new shape (element count must match).
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);

// Channel-range view of a rank-3 tensor: x[:, :, c0:c1].
Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1);

// Concatenation along the channel axis of two rank-3 tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace mi3d
