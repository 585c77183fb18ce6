#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "tsvr/data.hpp"
#include "tsvr/matrix.hpp"
#include "tsvr/model.hpp"

namespace tsvr {

// N_t x K_t relation scores and the logits they came from.
struct ScoreMatrix {
  Matrix scores;
  Matrix logits;
};

// Eval-mode scoring of every (image, category) pair with the running
// statistics of `tag` (Target for the usual case). Images are processed in
// chunks; every row depends only on its own image, so chunking is exact.
ScoreMatrix score_images(const Model& model, const Matrix& attributes, const Matrix& images,
                         DomainTag tag = DomainTag::Target);
ScoreMatrix score_target(const Model& model, const ZslDataset& dataset);

// Row-wise argmax; ties go to the lowest index.
std::vector<std::size_t> predict_argmax(const Matrix& scores);

// Mean over images of the entropy of softmax(logits row).
double average_entropy(const Matrix& logits);

// ---- label propagation -------------------------------------------------------------

// Sparse symmetric matrix stored as per-row (column, value) lists.
struct AffinityGraph {
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
  std::vector<std::size_t> isolated;  // rows with zero-norm features

  std::size_t size() const { return rows.size(); }
  Matrix dense() const;
  static AffinityGraph from_dense(const Matrix& s);
};

// Mutual k-nearest-neighbour graph under cosine similarity, negative
// similarities clipped to 0, then S = D^-1/2 W D^-1/2. Zero-norm rows get no
// edges. Throws ValidationError unless 1 <= k < N.
AffinityGraph build_affinity_graph(const Matrix& features, std::size_t k);

// F <- omega * S * F + (1 - omega) * Y0, `iterations` times, starting at F = Y0.
Matrix propagate(const AffinityGraph& graph, const Matrix& y0, double omega,
                 std::size_t iterations);

struct LabelPropagationConfig {
  bool enabled = true;
  std::size_t k = 10;
  double omega = 0.9;
  std::size_t iterations = 20;
};

struct RefinedScores {
  Matrix scores;  // F, one row per image
  std::vector<std::size_t> isolated;
};

// Y0 = row softmax of the logits, spread over the target feature graph.
RefinedScores label_propagation(const ScoreMatrix& raw, const Matrix& target_features,
                                const LabelPropagationConfig& config);

// ---- evaluation ----------------------------------------------------------------------

struct PredictionResult {
  std::vector<std::size_t> predicted_labels;
  std::vector<double> per_class_accuracy;
  double mca = 0.0;
  double overall_accuracy = 0.0;
};

// Per-class accuracy and its unweighted mean. A class without test
// instances makes the mean undefined and throws ValidationError.
PredictionResult mca(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                     std::size_t categories);

// Post-ReLU metric-network activations for plotting. Source rows pair each
// image with its own category; target rows pair each image with its predicted
// category. Writes hidden{1,2}_{source,target}.mtxb into `dir`.
void dump_hidden_activations(const Model& model, const ZslDataset& dataset,
                             std::span<const std::size_t> target_predictions,
                             const std::filesystem::path& dir);

}  // namespace tsvr
