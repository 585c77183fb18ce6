#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsvr/data.hpp"
#include "tsvr/losses.hpp"
#include "tsvr/model.hpp"
#include "tsvr/rng.hpp"

namespace tsvr {

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t max_iterations = 50000;
  std::size_t batch_size = 32;
  double lambda_rec = 1e-5;
  double lambda_ent = 1e-9;
  double lambda_align = 1.0;  // MMD / adversarial comparator weight
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  AlignmentMode alignment_mode = AlignmentMode::Dsbn;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  // Architecture. embed_dim == 0 means "same as the feature dimension".
  std::size_t embed_dim = 0;
  std::size_t encoder_hidden = 1250;
  std::size_t metric_hidden = 1250;
  std::size_t domain_classifier_hidden = 64;

  void validate() const;  // throws ConfigError
  LossWeights loss_weights() const { return {lambda_ent, lambda_rec, lambda_align}; }
};

ModelDims model_dims(const TrainConfig& config, std::size_t feature_dim,
                     std::size_t attribute_dim);

// ---- Adam -------------------------------------------------------------------

struct AdamSlot {
  Matrix m;
  Matrix v;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<AdamSlot> slots;

  static AdamState for_params(std::span<const Matrix* const> params);
  // One bias-corrected update of every parameter; the step counter is shared.
  // Throws NumericError (leaving all parameters untouched) on a non-finite gradient.
  void update(std::span<Matrix* const> params, std::span<const Matrix* const> grads, double lr);
};

// Single-parameter convenience: a fresh or continuing one-slot state.
void adam_step(AdamState& state, Matrix& param, const Matrix& grad, double lr);

// ---- sampling ----------------------------------------------------------------

// Sampling without replacement within a shuffled pass over the data. When the
// remaining part of a pass cannot fill a batch, the order is reshuffled.
class EpochSampler {
 public:
  EpochSampler() = default;
  explicit EpochSampler(std::size_t population) : population_(population) {}

  std::vector<std::size_t> next_batch(Rng& rng, std::size_t batch_size);

  std::size_t population() const { return population_; }
  const std::vector<std::size_t>& order() const { return order_; }
  std::size_t cursor() const { return cursor_; }
  void restore(std::vector<std::size_t> order, std::size_t cursor);

 private:
  std::size_t population_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct SourceBatch {
  Matrix images;
  std::vector<std::size_t> labels;
};

SourceBatch sample_source_batch(Rng& rng, EpochSampler& sampler, const TrainingView& data,
                                std::size_t batch_size);
Matrix sample_target_batch(Rng& rng, EpochSampler& sampler, const TrainingView& data,
                           std::size_t batch_size);

// ---- training -------------------------------------------------------------------

// Everything that evolves during a run; a checkpoint stores exactly this.
struct TrainingState {
  TrainConfig config;
  Model model;
  AdamState optimizer;
  Rng rng;
  EpochSampler source_sampler;
  EpochSampler target_sampler;
  std::size_t iteration = 0;
  std::optional<DomainClassifier> domain_classifier;  // Dann mode only
  AdamState classifier_optimizer;
};

TrainingState init_training(const TrainConfig& config, const TrainingView& data);

struct ObjectiveResult {
  LossReport report;
  ModelGrad grad;  // gradient of report.total (alignment path reversed in Dann mode)
  std::optional<AdversarialLoss> adversarial;
};

// Forward and backward pass of the full objective on fixed batches. Updates
// running statistics exactly as a training step does. When `relu_pattern` is
// given it receives the sign pattern of every ReLU input, which lets a
// finite-difference check notice when a step crossed a kink.
ObjectiveResult evaluate_objective(Model& model, const TrainingView& data,
                                   const SourceBatch& source, const Matrix& target,
                                   const TrainConfig& config,
                                   const DomainClassifier* classifier = nullptr,
                                   std::vector<std::uint8_t>* relu_pattern = nullptr);

// One iteration: source pairs -> prediction loss, target pairs -> entropy
// loss, full attribute matrices -> reconstruction loss, optional alignment
// term, then a single Adam update of every parameter.
LossReport train_iteration(TrainingState& state, const TrainingView& data);

using LossCallback = std::function<void(const LossReport&)>;

struct TrainResult {
  Model model;
  std::vector<LossReport> history;
};

// Runs iterations until state.iteration == config.max_iterations.
std::vector<LossReport> run_training(TrainingState& state, const TrainingView& data,
                                     const LossCallback& on_iteration = {});
TrainResult train(const ZslDataset& dataset, const TrainConfig& config,
                  const LossCallback& on_iteration = {});

std::string loss_csv_header();
std::string loss_csv_row(const LossReport& report);

// ---- checkpoint -------------------------------------------------------------------

// "TSVRCKPT", version byte, then sections until end of file. Each section:
// u32 name length, name bytes, kind byte ('M' matrix, 'R' real table,
// 'I' integer table), u32 payload length, payload. All little-endian.
void save_checkpoint(const TrainingState& state, const std::filesystem::path& path);
TrainingState load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const TrainingState& state);
TrainingState decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin);

}  // namespace tsvr
