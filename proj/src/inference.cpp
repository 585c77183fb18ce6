#include "tsvr/inference.hpp"

#include <algorithm>
#include <cmath>

#include "tsvr/error.hpp"
#include "tsvr/losses.hpp"

namespace tsvr {

namespace {

constexpr std::size_t kScoreChunk = 256;  // images per eval forward

// One pair per image: image i with category category_of_image[i].
Matrix matched_pairs(const Matrix& images, const Matrix& embedded,
                     std::span<const std::size_t> category_of_image) {
  const std::size_t d = images.cols();
  Matrix pairs(images.rows(), d + embedded.cols());
  for (std::size_t i = 0; i < images.rows(); ++i) {
    const std::size_t cat = category_of_image[i];
    if (cat >= embedded.rows()) throw ValidationError("dump: category out of range");
    auto out = pairs.row(i);
    std::copy(images.row(i).begin(), images.row(i).end(), out.begin());
    std::copy(embedded.row(cat).begin(), embedded.row(cat).end(),
              out.begin() + static_cast<std::ptrdiff_t>(d));
  }
  return pairs;
}

}  // namespace

ScoreMatrix score_images(const Model& model, const Matrix& attributes, const Matrix& images,
                         DomainTag tag) {
  if (images.cols() != model.dims.feature_dim) {
    throw ShapeError("score: images have " + std::to_string(images.cols()) +
                     " features, model expects " + std::to_string(model.dims.feature_dim));
  }
  const Matrix embedded = encode(model, attributes).output;
  const std::size_t k = embedded.rows();
  if (k == 0) throw ValidationError("score: no categories to score against");
  ScoreMatrix out{Matrix(images.rows(), k), Matrix(images.rows(), k)};
  for (std::size_t begin = 0; begin < images.rows(); begin += kScoreChunk) {
    const std::size_t end = std::min(images.rows(), begin + kScoreChunk);
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    PairBatch batch = build_target_pairs(gather_rows(images, rows), embedded);
    batch.tag = tag;
    const MetricForward f = metric_forward_eval(model.metric, batch);
    std::copy(f.logits.values().begin(), f.logits.values().end(), out.logits.data() + begin * k);
    std::copy(f.scores.values().begin(), f.scores.values().end(), out.scores.data() + begin * k);
  }
  return out;
}

ScoreMatrix score_target(const Model& model, const ZslDataset& dataset) {
  return score_images(model, dataset.target_attributes, dataset.target_features,
                      DomainTag::Target);
}

std::vector<std::size_t> predict_argmax(const Matrix& scores) {
  std::vector<std::size_t> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto row = scores.row(i);
    // max_element returns the first maximum, which is the tie rule.
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double average_entropy(const Matrix& logits) {
  if (logits.rows() == 0) throw ShapeError("average_entropy: no rows");
  const std::vector<double> h = row_entropies(logits);
  double s = 0.0;
  for (double v : h) s += v;
  return s / static_cast<double>(h.size());
}

// ---- label propagation -------------------------------------------------------------

Matrix AffinityGraph::dense() const {
  Matrix s(rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& [j, v] : rows[i]) s(i, j) = v;
  }
  return s;
}

AffinityGraph AffinityGraph::from_dense(const Matrix& s) {
  if (s.rows() != s.cols()) throw ShapeError("affinity matrix must be square, got " + s.shape_string());
  AffinityGraph g;
  g.rows.resize(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = 0; j < s.cols(); ++j) {
      if (s(i, j) != 0.0) g.rows[i].emplace_back(j, s(i, j));
    }
  }
  return g;
}

AffinityGraph build_affinity_graph(const Matrix& features, std::size_t k) {
  const std::size_t n = features.rows();
  if (k < 1 || k >= n) {
    throw ValidationError("label propagation: k=" + std::to_string(k) + " must satisfy 1 <= k < " +
                          std::to_string(n));
  }
  AffinityGraph g;
  g.rows.resize(n);

  Matrix unit = features;
  std::vector<bool> zero(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (double v : unit.row(i)) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      zero[i] = true;
      g.isolated.push_back(i);
      continue;
    }
    for (double& v : unit.row(i)) v /= norm;
  }
  const Matrix cosine = matmul_nt(unit, unit);

  // neighbour[i][j] is true when j is among the k most similar points to i.
  std::vector<std::vector<std::size_t>> knn(n);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (zero[i]) continue;
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && !zero[j]) candidates.push_back(j);
    }
    const std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                        if (cosine(i, a) != cosine(i, b)) return cosine(i, a) > cosine(i, b);
                        return a < b;
                      });
    knn[i].assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(knn[i].begin(), knn[i].end());
  }

  std::vector<std::vector<std::pair<std::size_t, double>>> w(n);
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : knn[i]) {
      if (j <= i) continue;
      if (!std::binary_search(knn[j].begin(), knn[j].end(), i)) continue;
      const double a = std::max(0.0, cosine(i, j));
      if (a == 0.0) continue;
      w[i].emplace_back(j, a);
      w[j].emplace_back(i, a);
      degree[i] += a;
      degree[j] += a;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(w[i].begin(), w[i].end());
    for (const auto& [j, a] : w[i]) {
      g.rows[i].emplace_back(j, a / (std::sqrt(degree[i]) * std::sqrt(degree[j])));
    }
  }
  return g;
}

Matrix propagate(const AffinityGraph& graph, const Matrix& y0, double omega,
                 std::size_t iterations) {
  if (!(omega >= 0.0 && omega < 1.0)) {
    throw ValidationError("label propagation: omega must lie in [0, 1)");
  }
  if (y0.rows() != graph.size()) {
    throw ShapeError("label propagation: " + std::to_string(graph.size()) + "-node graph but Y0 is " +
                     y0.shape_string());
  }
  Matrix f = y0;
  Matrix next(y0.rows(), y0.cols());
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < f.rows(); ++i) {
      auto out = next.row(i);
      for (std::size_t c = 0; c < f.cols(); ++c) out[c] = 0.0;
      for (const auto& [j, s] : graph.rows[i]) {
        auto src = f.row(j);
        for (std::size_t c = 0; c < f.cols(); ++c) out[c] += s * src[c];
      }
      for (std::size_t c = 0; c < f.cols(); ++c) {
        out[c] = omega * out[c] + (1.0 - omega) * y0(i, c);
      }
    }
    std::swap(f, next);
  }
  return f;
}

RefinedScores label_propagation(const ScoreMatrix& raw, const Matrix& target_features,
                                const LabelPropagationConfig& config) {
  if (!(config.omega > 0.0 && config.omega < 1.0)) {
    throw ValidationError("label propagation: omega must lie in (0, 1)");
  }
  if (raw.logits.rows() != target_features.rows()) {
    throw ShapeError("label propagation: " + std::to_string(raw.logits.rows()) + " score rows for " +
                     std::to_string(target_features.rows()) + " images");
  }
  AffinityGraph graph = build_affinity_graph(target_features, config.k);
  RefinedScores out;
  out.scores = propagate(graph, softmax_rows(raw.logits), config.omega, config.iterations);
  out.isolated = std::move(graph.isolated);
  return out;
}

// ---- evaluation ----------------------------------------------------------------------

PredictionResult mca(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                     std::size_t categories) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("mca: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  if (categories == 0) throw ValidationError("mca: no categories");
  std::vector<std::size_t> total(categories, 0), correct(categories, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= categories || predicted[i] >= categories) {
      throw ValidationError("mca: label out of range at index " + std::to_string(i));
    }
    ++total[truth[i]];
    if (predicted[i] == truth[i]) {
      ++correct[truth[i]];
      ++hits;
    }
  }
  PredictionResult out;
  out.predicted_labels.assign(predicted.begin(), predicted.end());
  out.per_class_accuracy.resize(categories);
  double sum = 0.0;
  for (std::size_t c = 0; c < categories; ++c) {
    if (total[c] == 0) {
      throw ValidationError("mca: class " + std::to_string(c) +
                            " has no test instances, accuracy undefined");
    }
    out.per_class_accuracy[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    sum += out.per_class_accuracy[c];
  }
  out.mca = sum / static_cast<double>(categories);
  out.overall_accuracy = static_cast<double>(hits) / static_cast<double>(truth.size());
  return out;
}

void dump_hidden_activations(const Model& model, const ZslDataset& dataset,
                             std::span<const std::size_t> target_predictions,
                             const std::filesystem::path& dir) {
  if (target_predictions.size() != dataset.target_features.rows()) {
    throw ShapeError("dump: one prediction per target image required");
  }
  std::filesystem::create_directories(dir);
  auto dump = [&](const Matrix& attributes, const Matrix& images,
                  std::span<const std::size_t> category, DomainTag tag) {
    const Matrix embedded = encode(model, attributes).output;
    const MetricForward f =
        metric_forward_eval(model.metric, matched_pairs(images, embedded, category), tag);
    const std::string suffix(domain_name(tag));
    save_matrix_mtxb(f.hidden1, dir / ("hidden1_" + suffix + ".mtxb"));
    save_matrix_mtxb(f.hidden2, dir / ("hidden2_" + suffix + ".mtxb"));
  };
  dump(dataset.source_attributes, dataset.source_features, dataset.source_labels,
       DomainTag::Source);
  dump(dataset.target_attributes, dataset.target_features, target_predictions, DomainTag::Target);
}

}  // namespace tsvr
