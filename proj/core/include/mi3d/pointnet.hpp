#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mi3d/adam.hpp"
#include "mi3d/folds.hpp"
#include "mi3d/ops.hpp"
#include "mi3d/rng.hpp"
#include "mi3d/tensor.hpp"

namespace mi3d {

// Architecture of the binary point-cloud classifier: per-point shared MLPs,
// optional learned alignment transforms on the raw coordinates and on an
// intermediate feature level, symmetric max pooling into a global feature,
// and a fully connected head ending in a single sigmoid output.
struct ClassifierConfig {
  std::size_t input_channels = 7;
  bool use_input_tnet = true;
  bool use_feature_tnet = true;
  std::vector<std::size_t> encoder_widths = {64, 64, 64, 128, 1024};
  std::vector<std::size_t> head_widths = {512, 256, 1};
  // One dropout probability per hidden head layer.
  std::vector<double> dropout_probs = {0.3, 0.3};
  bool use_batch_norm = true;
  double ortho_reg_weight = 1e-3;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  // Index of the encoder layer after which the feature transform is
  // applied (the second layer when there is one, mirroring the cited
  // architecture's placement).
  std::size_t feature_transform_index() const;
};

struct TrainConfig {
  std::size_t batch_size = 20;
  double learning_rate = 1e-6;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

// One classification sample: a flattened [n_points, channels] row-major
// point matrix plus its binary label.
struct TrainSample {
  std::size_t n_points = 0;
  std::size_t channels = 0;
  std::vector<double> values;
  int label = 0;
};

struct DenseLayer {
  Tensor weight;
  Tensor bias;
};

struct NormLayer {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;
};

// Alignment sub-network: shared point MLPs, max pool, fully connected
// layers, and a final layer initialized to emit the identity transform.
struct TNet {
  std::size_t k = 0;
  std::vector<DenseLayer> point_layers;
  std::vector<NormLayer> point_norms;
  std::vector<DenseLayer> fc_layers;
  std::vector<NormLayer> fc_norms;
  DenseLayer out_layer;
};

class Model {
 public:
  ClassifierConfig config;
  std::optional<TNet> input_tnet;
  std::optional<TNet> feature_tnet;
  std::vector<DenseLayer> encoder;
  std::vector<NormLayer> encoder_norms;
  std::vector<DenseLayer> head;
  std::vector<NormLayer> head_norms;
  std::vector<double> training_history;

  // Trainable tensors in a fixed, documented order (the checkpoint order).
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<Tensor> trainable_parameters();
  // Batch-norm running statistics, named alongside the parameters.
  std::vector<std::pair<std::string, std::vector<double>*>> named_state_arrays();

  std::size_t parameter_count();

  // Deep copy: fresh tensors and running stats, shared nothing.
  Model clone() const;
};

// Builds an untrained model with seed-deterministic initialization.
// T-Net output layers start at the exact identity transform.
Model build_model(const ClassifierConfig& config, std::uint64_t seed);

struct ForwardResult {
  Tensor probs;              // [B], strictly inside (0,1)
  Tensor feature_transform;  // [B,K,K] when the feature T-Net ran, else undefined
};

// Full forward pass. rng is required in train mode when any dropout
// probability is positive. Eval mode is deterministic given parameters.
ForwardResult forward_with_transform(Model& model, const Tensor& batch, Mode mode,
                                     Rng* rng = nullptr);
Tensor forward(Model& model, const Tensor& batch, Mode mode, Rng* rng = nullptr);

// Eval-mode forward on a single sample.
double predict(Model& model, const TrainSample& sample);

// Frobenius norm squared of (A*A^T - I) for a single square matrix.
Tensor orthogonality_penalty(const Tensor& a);
// Mean of the per-matrix penalty over a [B,K,K] batch.
Tensor orthogonality_penalty_batch(const Tensor& a);

// Assembles samples (all sharing n_points/channels) into a [B,N,C] batch.
Tensor batch_from_samples(const std::vector<TrainSample>& samples,
                          const std::vector<std::size_t>& indices);

// Trains a copy of the model for epochs * ceil(n/batch_size) Adam steps on
// BCE plus the weighted orthogonality penalty of the feature transform.
// Deterministic given (seed, data, config). Records per-epoch mean BCE.
Model train(const Model& model, const std::vector<TrainSample>& dataset, const TrainConfig& cfg);

struct GridSearchResult {
  std::vector<std::vector<double>> grid;
  // per-setting, per-fold validation AUROC
  std::vector<std::vector<double>> fold_scores;
  std::vector<double> mean_scores;
  std::size_t best_index = 0;
  std::vector<double> best_setting;
};

// Trains one model per (dropout setting, fold) and returns the setting
// maximizing mean validation AUROC. Ties break toward the lower total
// dropout, then toward grid order.
GridSearchResult grid_search_dropout(const ClassifierConfig& base_config,
                                     const std::vector<TrainSample>& dataset,
                                     const std::vector<std::vector<double>>& grid,
                                     const std::vector<FoldSplit>& folds, const TrainConfig& cfg);

// Checkpoint container: config, named float64 parameter arrays, training
// history. Byte layout documented in docs/checkpoint-format.md; guarded by
// a format-version field.
void save_checkpoint(Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mi3d
