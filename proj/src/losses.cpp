#include "tsvr/losses.hpp"

#include <algorithm>
#include <cmath>

#include "tsvr/error.hpp"

namespace tsvr {

double total_objective(const LossReport& report, const LossWeights& weights) {
  double total = report.pre + weights.ent * report.ent + weights.rec * report.rec;
  if (report.align) total += weights.align * *report.align;
  return total;
}

LossGrad prediction_loss(const Matrix& scores, std::span<const double> labels) {
  if (scores.size() != labels.size() || (scores.cols() != 1 && scores.rows() != 1)) {
    throw ShapeError("prediction_loss: " + scores.shape_string() + " scores for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ShapeError("prediction_loss: empty batch");
  const double n = static_cast<double>(labels.size());
  LossGrad out;
  out.grad = Matrix(scores.rows(), scores.cols());
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = labels[i];
    double p = scores[i];
    if (!std::isfinite(p)) throw NumericError("prediction_loss: non-finite score");
    if (p < kLogClamp || p > 1.0 - kLogClamp) {
      p = std::clamp(p, kLogClamp, 1.0 - kLogClamp);
      ++out.clamped;
    }
    sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    out.grad[i] = (scores[i] - y) / n;
  }
  out.value = sum / n;
  return out;
}

std::vector<double> row_entropies(const Matrix& logits) {
  const Matrix log_p = log_softmax_rows(logits);
  std::vector<double> h(logits.rows(), 0.0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double s = 0.0;
    for (double lp : log_p.row(i)) s -= std::exp(lp) * lp;
    h[i] = s;
  }
  return h;
}

LossGrad entropy_loss(const Matrix& logits, std::span<const std::size_t> image_group,
                      std::size_t categories_per_image) {
  if (categories_per_image == 0) throw ShapeError("entropy_loss: zero categories per image");
  if (logits.size() != image_group.size() || (logits.cols() != 1 && logits.rows() != 1)) {
    throw ShapeError("entropy_loss: " + logits.shape_string() + " logits for " +
                     std::to_string(image_group.size()) + " group entries");
  }
  if (logits.size() == 0 || logits.size() % categories_per_image != 0) {
    throw ShapeError("entropy_loss: " + std::to_string(logits.size()) +
                     " logits do not split into groups of " +
                     std::to_string(categories_per_image));
  }
  const std::size_t images = logits.size() / categories_per_image;
  for (std::size_t i = 0; i < images; ++i) {
    const std::size_t g = image_group[i * categories_per_image];
    for (std::size_t j = 0; j < categories_per_image; ++j) {
      if (image_group[i * categories_per_image + j] != g) {
        throw ShapeError("entropy_loss: image group " + std::to_string(g) + " does not have " +
                         std::to_string(categories_per_image) + " consecutive pairs");
      }
    }
    if (i > 0 && g == image_group[(i - 1) * categories_per_image]) {
      throw ShapeError("entropy_loss: image group " + std::to_string(g) + " has more than " +
                       std::to_string(categories_per_image) + " pairs");
    }
  }

  const Matrix z(images, categories_per_image,
                 std::vector<double>(logits.values().begin(), logits.values().end()));
  const Matrix log_p = log_softmax_rows(z);
  const double inv_n = 1.0 / static_cast<double>(images);
  LossGrad out;
  out.grad = Matrix(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < images; ++i) {
    auto lp = log_p.row(i);
    double h = 0.0;
    for (double v : lp) h -= std::exp(v) * v;
    total += h;
    // dH/dz_j = -p_j (log p_j + H)
    for (std::size_t j = 0; j < categories_per_image; ++j) {
      const double p = std::exp(lp[j]);
      out.grad[i * categories_per_image + j] = -p * (lp[j] + h) * inv_n;
    }
  }
  out.value = total * inv_n;
  return out;
}

LossGrad reconstruction_term(const Matrix& attributes, const Matrix& reconstructed) {
  if (!attributes.same_shape(reconstructed)) {
    throw ShapeError("reconstruction_loss: attributes " + attributes.shape_string() +
                     " vs reconstruction " + reconstructed.shape_string());
  }
  if (attributes.rows() == 0) throw ShapeError("reconstruction_loss: empty attribute block");
  const double inv_k = 1.0 / static_cast<double>(attributes.rows());
  LossGrad out;
  out.grad = Matrix(attributes.rows(), attributes.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < attributes.rows(); ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < attributes.cols(); ++j) {
      const double diff = reconstructed(i, j) - attributes(i, j);
      d += diff * diff;
      out.grad(i, j) = 2.0 * diff * inv_k;
    }
    total += d;
  }
  out.value = total * inv_k;
  return out;
}

ReconstructionLoss reconstruction_loss(const Matrix& source, const Matrix& source_hat,
                                       const Matrix& target, const Matrix& target_hat) {
  LossGrad s = reconstruction_term(source, source_hat);
  LossGrad t = reconstruction_term(target, target_hat);
  return {s.value + t.value, std::move(s.grad), std::move(t.grad)};
}

MmdLoss mmd_loss(const Matrix& h_source, const Matrix& h_target) {
  if (h_source.rows() == 0 || h_target.rows() == 0) {
    throw ShapeError("mmd_loss: both batches must be non-empty");
  }
  if (h_source.cols() != h_target.cols()) {
    throw ShapeError("mmd_loss: width mismatch " + h_source.shape_string() + " vs " +
                     h_target.shape_string());
  }
  const double ns = static_cast<double>(h_source.rows());
  const double nt = static_cast<double>(h_target.rows());
  Matrix diff = column_sums(h_source);
  const Matrix sum_t = column_sums(h_target);
  double value = 0.0;
  for (std::size_t j = 0; j < diff.cols(); ++j) {
    diff[j] = diff[j] / ns - sum_t[j] / nt;
    value += diff[j] * diff[j];
  }
  MmdLoss out;
  out.value = value;
  out.d_source = Matrix(h_source.rows(), h_source.cols());
  out.d_target = Matrix(h_target.rows(), h_target.cols());
  for (std::size_t i = 0; i < h_source.rows(); ++i) {
    for (std::size_t j = 0; j < diff.cols(); ++j) out.d_source(i, j) = 2.0 * diff[j] / ns;
  }
  for (std::size_t i = 0; i < h_target.rows(); ++i) {
    for (std::size_t j = 0; j < diff.cols(); ++j) out.d_target(i, j) = -2.0 * diff[j] / nt;
  }
  return out;
}

DomainClassifier DomainClassifier::make(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  DomainClassifier c;
  c.hidden = LinearLayer::init_uniform(input_dim, hidden_dim, rng);
  c.out = LinearLayer(hidden_dim, 1);
  return c;
}

AdversarialLoss adversarial_domain_loss(const DomainClassifier& classifier, const Matrix& h,
                                        std::span<const DomainTag> tags) {
  if (tags.size() != h.rows()) {
    throw ShapeError("adversarial_domain_loss: " + std::to_string(tags.size()) + " tags for " +
                     std::to_string(h.rows()) + " rows");
  }
  const bool has_source = std::find(tags.begin(), tags.end(), DomainTag::Source) != tags.end();
  const bool has_target = std::find(tags.begin(), tags.end(), DomainTag::Target) != tags.end();
  if (!has_source || !has_target) {
    throw ValidationError("adversarial_domain_loss: batch must mix source and target rows");
  }
  LinearForward hidden = linear_forward(classifier.hidden, h);
  ReluForward act = relu_forward(hidden.output);
  LinearForward out = linear_forward(classifier.out, act.output);
  const Matrix scores = sigmoid(out.output);

  std::vector<double> labels(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    labels[i] = tags[i] == DomainTag::Target ? 1.0 : 0.0;
  }
  LossGrad bce = prediction_loss(scores, labels);

  AdversarialLoss result;
  result.value = bce.value;
  LinearBackward out_b = linear_backward(classifier.out, out.cache, bce.grad);
  Matrix d_act = relu_backward(act.cache, out_b.d_input);
  LinearBackward hidden_b = linear_backward(classifier.hidden, hidden.cache, d_act);
  result.d_out_weight = std::move(out_b.d_weight);
  result.d_out_bias = std::move(out_b.d_bias);
  result.d_hidden_weight = std::move(hidden_b.d_weight);
  result.d_hidden_bias = std::move(hidden_b.d_bias);
  result.d_input = std::move(hidden_b.d_input);
  result.d_input_reversed = scaled(result.d_input, -1.0);
  return result;
}

}  // namespace tsvr
