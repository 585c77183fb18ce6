#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsvr/layers.hpp"
#include "tsvr/matrix.hpp"
#include "tsvr/rng.hpp"

namespace tsvr {

enum class AlignmentMode : std::uint8_t { Dsbn, SingleBn, Mmd, Dann, None };

std::string_view alignment_mode_name(AlignmentMode mode);
AlignmentMode parse_alignment_mode(std::string_view name);  // throws ConfigError
bool uses_normalization(AlignmentMode mode);

struct ModelDims {
  std::size_t feature_dim = 0;     // d
  std::size_t attribute_dim = 0;   // r
  std::size_t embed_dim = 0;       // r', encoded attribute width
  std::size_t encoder_hidden = 1250;
  std::size_t metric_hidden = 1250;
};

// Linear -> ReLU -> Linear. Used for both the attribute encoder and decoder.
struct TwoLayerMlp {
  LinearLayer first;
  LinearLayer second;
};

struct MlpCache {
  LinearCache first;
  ReluCache relu;
  LinearCache second;
};

struct MlpForward {
  Matrix output;
  MlpCache cache;
};

struct MlpGrad {
  Matrix first_weight, first_bias, second_weight, second_bias;
};

// Pair scorer: fc1 -> norm -> ReLU -> fc2 -> norm -> ReLU -> head -> sigmoid.
// With AlignmentMode::None the norm stages are skipped.
struct MetricNet {
  LinearLayer fc1;
  DsbnLayer norm1;
  LinearLayer fc2;
  DsbnLayer norm2;
  LinearLayer head;
  AlignmentMode mode = AlignmentMode::Dsbn;
};

struct Model {
  ModelDims dims;
  AlignmentMode mode = AlignmentMode::Dsbn;
  TwoLayerMlp encoder;
  TwoLayerMlp decoder;
  MetricNet metric;
};

Model make_model(const ModelDims& dims, AlignmentMode mode, double bn_momentum,
                 double bn_epsilon, Rng& rng);

struct NamedParam {
  std::string name;
  Matrix* value;
};
struct NamedConstParam {
  std::string name;
  const Matrix* value;
};

// Every trainable matrix in a fixed order; ModelGrad::slots() mirrors it.
std::vector<NamedParam> model_parameters(Model& model);
std::vector<NamedConstParam> model_parameters(const Model& model);

struct MetricGrad {
  Matrix fc1_weight, fc1_bias, norm1_gamma, norm1_beta;
  Matrix fc2_weight, fc2_bias, norm2_gamma, norm2_beta;
  Matrix head_weight, head_bias;
};

struct ModelGrad {
  MlpGrad encoder;
  MlpGrad decoder;
  MetricGrad metric;

  static ModelGrad zeros_like(const Model& model);
  std::vector<Matrix*> slots();
  std::vector<const Matrix*> slots() const;
};

// encode: attributes (K x r) -> embedded attributes (K x r').
MlpForward mlp_forward(const TwoLayerMlp& mlp, const Matrix& x);
// Returns d_input; accumulates parameter gradients into `grad`.
Matrix mlp_backward(const TwoLayerMlp& mlp, const MlpCache& cache, const Matrix& dy,
                    MlpGrad& grad);

MlpForward encode(const Model& model, const Matrix& attributes);
MlpForward decode(const Model& model, const Matrix& embedded);

// Every image of a batch paired with every category of the batch, image-major:
// pair p = i * categories + j joins image row i with attribute row j. The
// concatenated pair rows [x_i, e_j] are never stored; the first metric layer
// is applied to the two halves separately.
struct PairBatch {
  Matrix images;                         // n x d
  Matrix attributes;                     // |C_b| x r', embedded attributes of the paired categories
  std::vector<std::size_t> categories;   // dataset category of each attributes row
  std::vector<double> labels;            // source only, 0/1 per pair
  std::vector<std::size_t> image_group;  // image index (within batch) of each pair
  std::vector<std::size_t> category_index;  // dataset category of each pair
  DomainTag tag = DomainTag::Source;

  std::size_t image_count() const { return images.rows(); }
  std::size_t categories_per_image() const { return attributes.rows(); }
  std::size_t size() const { return images.rows() * attributes.rows(); }
  Matrix pair_matrix() const;  // materialized n*|C_b| x (d + r') rows
};

// Pairs each image with every category present in the batch (ascending
// category order). Label is 1 iff the image belongs to the category.
PairBatch build_source_pairs(const Matrix& images, std::span<const std::size_t> labels,
                             const Matrix& embedded_source_attributes);
// Pairs each image with every target category.
PairBatch build_target_pairs(const Matrix& images, const Matrix& embedded_target_attributes);

// Gradient with respect to the two halves of the pair inputs.
struct PairGrad {
  Matrix d_images;      // n x d
  Matrix d_attributes;  // |C_b| x r'
};

// Adds each attributes-row gradient into its dataset category row.
Matrix scatter_attribute_grad(const PairBatch& batch, const Matrix& d_attributes,
                              std::size_t categories);

struct PairLinearCache {
  Matrix images;
  Matrix attributes;
};

struct MetricCache {
  PairLinearCache fc1;
  std::optional<DsbnCache> norm1;
  ReluCache relu1;
  LinearCache fc2;
  std::optional<DsbnCache> norm2;
  ReluCache relu2;
  LinearCache head;
};

struct MetricForward {
  Matrix logits;   // n x 1
  Matrix scores;   // n x 1, sigmoid(logits)
  Matrix hidden1;  // post-ReLU activations of the first hidden block
  Matrix hidden2;  // post-ReLU activations of the second hidden block
  MetricCache cache;
};

// train=true normalizes with batch statistics and updates the running
// statistics of batch.tag; train=false uses the running statistics.
MetricForward metric_forward(MetricNet& net, const PairBatch& batch, bool train);
MetricForward metric_forward_eval(const MetricNet& net, const PairBatch& batch);
// Reference path on explicit pair rows (n x (d + r')); used to cross-check the
// factored first layer and for arbitrary, non-grid pairings.
MetricForward metric_forward_eval(const MetricNet& net, const Matrix& pairs, DomainTag tag);

// Extra gradients on hidden1/hidden2 (alignment losses) are optional.
PairGrad metric_backward(const MetricNet& net, const MetricCache& cache, const Matrix& d_logits,
                         MetricGrad& grad, const Matrix* d_hidden1 = nullptr,
                         const Matrix* d_hidden2 = nullptr);

}  // namespace tsvr
