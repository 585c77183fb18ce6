#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tsvr/layers.hpp"
#include "tsvr/matrix.hpp"
#include "tsvr/rng.hpp"

namespace tsvr {

inline constexpr double kLogClamp = 1e-12;

struct LossReport {
  std::size_t iteration = 0;
  double pre = 0.0;
  double ent = 0.0;
  double rec = 0.0;
  std::optional<double> align;
  double total = 0.0;
  std::size_t clamped_scores = 0;
};

struct LossWeights {
  double ent = 0.0;
  double rec = 0.0;
  double align = 0.0;
};

// pre + w.ent * ent + w.rec * rec (+ w.align * align when present)
double total_objective(const LossReport& report, const LossWeights& weights);

struct LossGrad {
  double value = 0.0;
  Matrix grad;
  std::size_t clamped = 0;
};

// Binary cross-entropy on sigmoid scores, averaged over pairs. The gradient
// is taken with respect to the pre-sigmoid logits: (score - label) / n.
// Scores within 1e-12 of 0 or 1 are clamped for the log and counted.
LossGrad prediction_loss(const Matrix& scores, std::span<const double> labels);

// Mean over images of the entropy of softmax(logits of that image's pairs).
// Pairs of one image must be consecutive, categories_per_image of them.
// Gradient is with respect to the logits.
LossGrad entropy_loss(const Matrix& logits, std::span<const std::size_t> image_group,
                      std::size_t categories_per_image);

// Per-image entropies of a logit matrix (one row per image).
std::vector<double> row_entropies(const Matrix& logits);

// (1/K) sum_i ||a_i - a_hat_i||^2 and its gradient 2 (a_hat - a) / K.
LossGrad reconstruction_term(const Matrix& attributes, const Matrix& reconstructed);

struct ReconstructionLoss {
  double value = 0.0;
  Matrix d_source;
  Matrix d_target;
};
ReconstructionLoss reconstruction_loss(const Matrix& source, const Matrix& source_hat,
                                       const Matrix& target, const Matrix& target_hat);

// Squared linear-kernel MMD: || mean(h_s) - mean(h_t) ||^2.
struct MmdLoss {
  double value = 0.0;
  Matrix d_source;
  Matrix d_target;
};
MmdLoss mmd_loss(const Matrix& h_source, const Matrix& h_target);

// Domain discriminator for the adversarial comparator: Linear -> ReLU ->
// Linear -> sigmoid, predicting P(target). The output layer starts at zero so
// an untrained classifier sits exactly at chance.
struct DomainClassifier {
  LinearLayer hidden;
  LinearLayer out;

  static DomainClassifier make(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
};

struct AdversarialLoss {
  double value = 0.0;         // BCE of the classifier on domain labels
  Matrix d_input_reversed;    // negated classifier input gradient (feature path)
  Matrix d_input;             // classifier input gradient before reversal
  Matrix d_hidden_weight, d_hidden_bias, d_out_weight, d_out_bias;
};

AdversarialLoss adversarial_domain_loss(const DomainClassifier& classifier, const Matrix& h,
                                        std::span<const DomainTag> tags);

}  // namespace tsvr
