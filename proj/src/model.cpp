#include "tsvr/model.hpp"

#include <algorithm>

#include "tsvr/error.hpp"

namespace tsvr {

std::string_view alignment_mode_name(AlignmentMode mode) {
  switch (mode) {
    case AlignmentMode::Dsbn:
      return "dsbn";
    case AlignmentMode::SingleBn:
      return "singlebn";
    case AlignmentMode::Mmd:
      return "mmd";
    case AlignmentMode::Dann:
      return "dann";
    case AlignmentMode::None:
      return "none";
  }
  return "unknown";
}

AlignmentMode parse_alignment_mode(std::string_view name) {
  for (auto mode : {AlignmentMode::Dsbn, AlignmentMode::SingleBn, AlignmentMode::Mmd,
                    AlignmentMode::Dann, AlignmentMode::None}) {
    if (alignment_mode_name(mode) == name) return mode;
  }
  throw ConfigError("unknown alignment mode '" + std::string(name) +
                    "' (expected dsbn, singlebn, mmd, dann or none)");
}

bool uses_normalization(AlignmentMode mode) { return mode != AlignmentMode::None; }

Model make_model(const ModelDims& dims, AlignmentMode mode, double bn_momentum,
                 double bn_epsilon, Rng& rng) {
  if (dims.feature_dim == 0 || dims.attribute_dim == 0 || dims.embed_dim == 0 ||
      dims.encoder_hidden == 0 || dims.metric_hidden == 0) {
    throw ConfigError("model dimensions must all be positive");
  }
  Model model;
  model.dims = dims;
  model.mode = mode;
  model.encoder.first = LinearLayer::init_uniform(dims.attribute_dim, dims.encoder_hidden, rng);
  model.encoder.second = LinearLayer::init_uniform(dims.encoder_hidden, dims.embed_dim, rng);
  model.decoder.first = LinearLayer::init_uniform(dims.embed_dim, dims.encoder_hidden, rng);
  model.decoder.second = LinearLayer::init_uniform(dims.encoder_hidden, dims.attribute_dim, rng);

  const StatsMode stats = mode == AlignmentMode::Dsbn ? StatsMode::PerDomain : StatsMode::Shared;
  MetricNet& net = model.metric;
  net.mode = mode;
  net.fc1 = LinearLayer::init_uniform(dims.feature_dim + dims.embed_dim, dims.metric_hidden, rng);
  net.norm1 = DsbnLayer(dims.metric_hidden, bn_momentum, bn_epsilon, stats);
  net.fc2 = LinearLayer::init_uniform(dims.metric_hidden, dims.metric_hidden, rng);
  net.norm2 = DsbnLayer(dims.metric_hidden, bn_momentum, bn_epsilon, stats);
  net.head = LinearLayer::init_uniform(dims.metric_hidden, 1, rng);
  return model;
}

namespace {

template <typename M, typename P>
std::vector<P> collect(M& model) {
  auto& e = model.encoder;
  auto& d = model.decoder;
  auto& n = model.metric;
  return {
      {"encoder.first.weight", &e.first.weight},  {"encoder.first.bias", &e.first.bias},
      {"encoder.second.weight", &e.second.weight}, {"encoder.second.bias", &e.second.bias},
      {"decoder.first.weight", &d.first.weight},  {"decoder.first.bias", &d.first.bias},
      {"decoder.second.weight", &d.second.weight}, {"decoder.second.bias", &d.second.bias},
      {"metric.fc1.weight", &n.fc1.weight},        {"metric.fc1.bias", &n.fc1.bias},
      {"metric.norm1.gamma", &n.norm1.gamma},      {"metric.norm1.beta", &n.norm1.beta},
      {"metric.fc2.weight", &n.fc2.weight},        {"metric.fc2.bias", &n.fc2.bias},
      {"metric.norm2.gamma", &n.norm2.gamma},      {"metric.norm2.beta", &n.norm2.beta},
      {"metric.head.weight", &n.head.weight},      {"metric.head.bias", &n.head.bias},
  };
}

Matrix zeros_like(const Matrix& m) { return Matrix(m.rows(), m.cols()); }

MlpGrad mlp_zeros(const TwoLayerMlp& mlp) {
  return {zeros_like(mlp.first.weight), zeros_like(mlp.first.bias),
          zeros_like(mlp.second.weight), zeros_like(mlp.second.bias)};
}

}  // namespace

std::vector<NamedParam> model_parameters(Model& model) {
  return collect<Model, NamedParam>(model);
}

std::vector<NamedConstParam> model_parameters(const Model& model) {
  return collect<const Model, NamedConstParam>(model);
}

ModelGrad ModelGrad::zeros_like(const Model& model) {
  ModelGrad g;
  g.encoder = mlp_zeros(model.encoder);
  g.decoder = mlp_zeros(model.decoder);
  const MetricNet& n = model.metric;
  g.metric = {tsvr::zeros_like(n.fc1.weight),   tsvr::zeros_like(n.fc1.bias),
              tsvr::zeros_like(n.norm1.gamma),  tsvr::zeros_like(n.norm1.beta),
              tsvr::zeros_like(n.fc2.weight),   tsvr::zeros_like(n.fc2.bias),
              tsvr::zeros_like(n.norm2.gamma),  tsvr::zeros_like(n.norm2.beta),
              tsvr::zeros_like(n.head.weight),  tsvr::zeros_like(n.head.bias)};
  return g;
}

std::vector<Matrix*> ModelGrad::slots() {
  auto& e = encoder;
  auto& d = decoder;
  auto& n = metric;
  return {&e.first_weight,  &e.first_bias,  &e.second_weight, &e.second_bias,
          &d.first_weight,  &d.first_bias,  &d.second_weight, &d.second_bias,
          &n.fc1_weight,    &n.fc1_bias,    &n.norm1_gamma,   &n.norm1_beta,
          &n.fc2_weight,    &n.fc2_bias,    &n.norm2_gamma,   &n.norm2_beta,
          &n.head_weight,   &n.head_bias};
}

std::vector<const Matrix*> ModelGrad::slots() const {
  auto mutable_slots = const_cast<ModelGrad*>(this)->slots();
  return {mutable_slots.begin(), mutable_slots.end()};
}

MlpForward mlp_forward(const TwoLayerMlp& mlp, const Matrix& x) {
  LinearForward first = linear_forward(mlp.first, x);
  ReluForward act = relu_forward(first.output);
  LinearForward second = linear_forward(mlp.second, act.output);
  return {std::move(second.output),
          MlpCache{std::move(first.cache), std::move(act.cache), std::move(second.cache)}};
}

Matrix mlp_backward(const TwoLayerMlp& mlp, const MlpCache& cache, const Matrix& dy,
                    MlpGrad& grad) {
  LinearBackward second = linear_backward(mlp.second, cache.second, dy);
  add_in_place(grad.second_weight, second.d_weight);
  add_in_place(grad.second_bias, second.d_bias);
  Matrix d_act = relu_backward(cache.relu, second.d_input);
  LinearBackward first = linear_backward(mlp.first, cache.first, d_act);
  add_in_place(grad.first_weight, first.d_weight);
  add_in_place(grad.first_bias, first.d_bias);
  return std::move(first.d_input);
}

MlpForward encode(const Model& model, const Matrix& attributes) {
  if (attributes.cols() != model.dims.attribute_dim) {
    throw ShapeError("encode: attributes " + attributes.shape_string() + " but model expects " +
                     std::to_string(model.dims.attribute_dim) + " columns");
  }
  return mlp_forward(model.encoder, attributes);
}

MlpForward decode(const Model& model, const Matrix& embedded) {
  if (embedded.cols() != model.dims.embed_dim) {
    throw ShapeError("decode: embedded attributes " + embedded.shape_string() +
                     " but model expects " + std::to_string(model.dims.embed_dim) + " columns");
  }
  return mlp_forward(model.decoder, embedded);
}

namespace {

void fill_grid_indices(PairBatch& batch) {
  const std::size_t n = batch.size();
  batch.image_group.reserve(n);
  batch.category_index.reserve(n);
  for (std::size_t i = 0; i < batch.image_count(); ++i) {
    for (std::size_t c : batch.categories) {
      batch.image_group.push_back(i);
      batch.category_index.push_back(c);
    }
  }
}

}  // namespace

Matrix PairBatch::pair_matrix() const {
  const std::size_t d = images.cols();
  Matrix pairs(size(), d + attributes.cols());
  std::size_t row = 0;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    for (std::size_t j = 0; j < attributes.rows(); ++j) {
      auto out = pairs.row(row++);
      std::copy(images.row(i).begin(), images.row(i).end(), out.begin());
      std::copy(attributes.row(j).begin(), attributes.row(j).end(),
                out.begin() + static_cast<std::ptrdiff_t>(d));
    }
  }
  return pairs;
}

PairBatch build_source_pairs(const Matrix& images, std::span<const std::size_t> labels,
                             const Matrix& embedded_source_attributes) {
  if (labels.size() != images.rows()) {
    throw ShapeError("build_source_pairs: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(images.rows()) + " images");
  }
  const std::size_t k = embedded_source_attributes.rows();
  std::vector<std::size_t> present;
  for (std::size_t y : labels) {
    if (y >= k) {
      throw ValidationError("build_source_pairs: label " + std::to_string(y) +
                            " outside the " + std::to_string(k) + " source categories");
    }
    present.push_back(y);
  }
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());

  PairBatch batch;
  batch.tag = DomainTag::Source;
  batch.images = images;
  batch.attributes = gather_rows(embedded_source_attributes, present);
  batch.categories = std::move(present);
  fill_grid_indices(batch);
  batch.labels.reserve(batch.size());
  for (std::size_t i = 0; i < images.rows(); ++i) {
    for (std::size_t c : batch.categories) batch.labels.push_back(labels[i] == c ? 1.0 : 0.0);
  }
  return batch;
}

PairBatch build_target_pairs(const Matrix& images, const Matrix& embedded_target_attributes) {
  const std::size_t k = embedded_target_attributes.rows();
  if (k == 0) throw ValidationError("build_target_pairs: empty target category set");
  PairBatch batch;
  batch.tag = DomainTag::Target;
  batch.images = images;
  batch.attributes = embedded_target_attributes;
  batch.categories.resize(k);
  for (std::size_t c = 0; c < k; ++c) batch.categories[c] = c;
  fill_grid_indices(batch);
  return batch;
}

Matrix scatter_attribute_grad(const PairBatch& batch, const Matrix& d_attributes,
                              std::size_t categories) {
  if (d_attributes.rows() != batch.categories.size()) {
    throw ShapeError("scatter_attribute_grad: " + d_attributes.shape_string() + " gradient for " +
                     std::to_string(batch.categories.size()) + " batch categories");
  }
  Matrix out(categories, d_attributes.cols());
  for (std::size_t j = 0; j < batch.categories.size(); ++j) {
    const std::size_t c = batch.categories[j];
    if (c >= categories) throw ShapeError("scatter_attribute_grad: category out of range");
    auto src = d_attributes.row(j);
    auto dst = out.row(c);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
  }
  return out;
}

namespace {

void check_pair_width(const MetricNet& net, std::size_t d, std::size_t r) {
  if (d + r != net.fc1.in_dim()) {
    throw ShapeError("metric network expects " + std::to_string(net.fc1.in_dim()) +
                     " pair columns, got " + std::to_string(d) + " + " + std::to_string(r));
  }
}

// fc1 on the implicit pair grid: W [x_i; e_j] + b = W_x x_i + W_e e_j + b.
Matrix pair_linear_forward(const LinearLayer& fc1, const Matrix& images, const Matrix& attributes) {
  const std::size_t d = images.cols();
  const Matrix xw = matmul_nt(images, slice_cols(fc1.weight, 0, d));
  const Matrix ew = matmul_nt(attributes, slice_cols(fc1.weight, d, fc1.in_dim()));
  const std::size_t n = images.rows(), k = attributes.rows(), h = fc1.out_dim();
  Matrix out(n * k, h);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = xw.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      auto ej = ew.row(j);
      auto o = out.row(i * k + j);
      for (std::size_t u = 0; u < h; ++u) o[u] = xi[u] + ej[u] + fc1.bias[u];
    }
  }
  return out;
}

// Everything after fc1 in eval mode.
void metric_tail_eval(const MetricNet& net, Matrix h, DomainTag tag, MetricForward& out) {
  const bool norm = uses_normalization(net.mode);
  if (norm) h = dsbn_forward_eval(net.norm1, h, tag);
  out.hidden1 = relu(h);
  h = linear_forward(net.fc2, out.hidden1).output;
  if (norm) h = dsbn_forward_eval(net.norm2, h, tag);
  out.hidden2 = relu(h);
  out.logits = linear_forward(net.head, out.hidden2).output;
  out.scores = sigmoid(out.logits);
}

}  // namespace

MetricForward metric_forward(MetricNet& net, const PairBatch& batch, bool train) {
  if (!train) return metric_forward_eval(net, batch);
  check_pair_width(net, batch.images.cols(), batch.attributes.cols());
  const bool norm = uses_normalization(net.mode);
  MetricForward out;
  Matrix h = pair_linear_forward(net.fc1, batch.images, batch.attributes);
  out.cache.fc1 = {batch.images, batch.attributes};
  if (norm) {
    DsbnForward n1 = dsbn_forward_train(net.norm1, h, batch.tag);
    out.cache.norm1 = std::move(n1.cache);
    h = std::move(n1.output);
  }
  ReluForward r1 = relu_forward(h);
  out.cache.relu1 = std::move(r1.cache);
  out.hidden1 = std::move(r1.output);

  LinearForward fc2 = linear_forward(net.fc2, out.hidden1);
  out.cache.fc2 = std::move(fc2.cache);
  h = std::move(fc2.output);
  if (norm) {
    DsbnForward n2 = dsbn_forward_train(net.norm2, h, batch.tag);
    out.cache.norm2 = std::move(n2.cache);
    h = std::move(n2.output);
  }
  ReluForward r2 = relu_forward(h);
  out.cache.relu2 = std::move(r2.cache);
  out.hidden2 = std::move(r2.output);

  LinearForward head = linear_forward(net.head, out.hidden2);
  out.cache.head = std::move(head.cache);
  out.logits = std::move(head.output);
  out.scores = sigmoid(out.logits);
  return out;
}

MetricForward metric_forward_eval(const MetricNet& net, const PairBatch& batch) {
  check_pair_width(net, batch.images.cols(), batch.attributes.cols());
  MetricForward out;
  metric_tail_eval(net, pair_linear_forward(net.fc1, batch.images, batch.attributes), batch.tag,
                   out);
  return out;
}

MetricForward metric_forward_eval(const MetricNet& net, const Matrix& pairs, DomainTag tag) {
  if (pairs.cols() != net.fc1.in_dim()) {
    throw ShapeError("metric_forward: pairs " + pairs.shape_string() +
                     " but metric network expects " + std::to_string(net.fc1.in_dim()) +
                     " columns");
  }
  MetricForward out;
  metric_tail_eval(net, linear_forward(net.fc1, pairs).output, tag, out);
  return out;
}

PairGrad metric_backward(const MetricNet& net, const MetricCache& cache, const Matrix& d_logits,
                         MetricGrad& grad, const Matrix* d_hidden1, const Matrix* d_hidden2) {
  LinearBackward head = linear_backward(net.head, cache.head, d_logits);
  add_in_place(grad.head_weight, head.d_weight);
  add_in_place(grad.head_bias, head.d_bias);

  Matrix d_h2 = std::move(head.d_input);
  if (d_hidden2 != nullptr) add_in_place(d_h2, *d_hidden2);
  Matrix d = relu_backward(cache.relu2, d_h2);
  if (cache.norm2) {
    DsbnBackward n2 = dsbn_backward(net.norm2, *cache.norm2, d);
    add_in_place(grad.norm2_gamma, n2.d_gamma);
    add_in_place(grad.norm2_beta, n2.d_beta);
    d = std::move(n2.d_input);
  }
  LinearBackward fc2 = linear_backward(net.fc2, cache.fc2, d);
  add_in_place(grad.fc2_weight, fc2.d_weight);
  add_in_place(grad.fc2_bias, fc2.d_bias);

  Matrix d_h1 = std::move(fc2.d_input);
  if (d_hidden1 != nullptr) add_in_place(d_h1, *d_hidden1);
  d = relu_backward(cache.relu1, d_h1);
  if (cache.norm1) {
    DsbnBackward n1 = dsbn_backward(net.norm1, *cache.norm1, d);
    add_in_place(grad.norm1_gamma, n1.d_gamma);
    add_in_place(grad.norm1_beta, n1.d_beta);
    d = std::move(n1.d_input);
  }

  // Collapse the pair-grid gradient onto its images and its categories.
  const Matrix& x = cache.fc1.images;
  const Matrix& e = cache.fc1.attributes;
  const std::size_t n = x.rows(), k = e.rows(), h = d.cols(), dim = x.cols();
  Matrix d_img(n, h), d_cat(k, h);
  for (std::size_t i = 0; i < n; ++i) {
    auto di = d_img.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      auto src = d.row(i * k + j);
      auto dj = d_cat.row(j);
      for (std::size_t u = 0; u < h; ++u) {
        di[u] += src[u];
        dj[u] += src[u];
      }
    }
  }
  add_in_place(grad.fc1_weight, concat_cols(matmul_tn(d_img, x), matmul_tn(d_cat, e)));
  add_in_place(grad.fc1_bias, column_sums(d_img));
  return {matmul(d_img, slice_cols(net.fc1.weight, 0, dim)),
          matmul(d_cat, slice_cols(net.fc1.weight, dim, net.fc1.in_dim()))};
}

}  // namespace tsvr
