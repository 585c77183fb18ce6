#include "tsvr/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "tsvr/error.hpp"
#include "tsvr/simd.hpp"

namespace tsvr {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  for (auto [name, v] : {std::pair{"lambda_rec", lambda_rec}, std::pair{"lambda_ent", lambda_ent},
                         std::pair{"lambda_align", lambda_align}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string(name) + " must be a finite non-negative weight");
    }
  }
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must lie in (0, 1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("bn_epsilon must be positive");
  if (log_every == 0) throw ConfigError("log_every must be at least 1");
  if (encoder_hidden == 0 || metric_hidden == 0 || domain_classifier_hidden == 0) {
    throw ConfigError("hidden widths must be positive");
  }
}

ModelDims model_dims(const TrainConfig& config, std::size_t feature_dim,
                     std::size_t attribute_dim) {
  ModelDims dims;
  dims.feature_dim = feature_dim;
  dims.attribute_dim = attribute_dim;
  dims.embed_dim = config.embed_dim == 0 ? feature_dim : config.embed_dim;
  dims.encoder_hidden = config.encoder_hidden;
  dims.metric_hidden = config.metric_hidden;
  return dims;
}

// ---- Adam -------------------------------------------------------------------------

AdamState AdamState::for_params(std::span<const Matrix* const> params) {
  AdamState state;
  state.slots.reserve(params.size());
  for (const Matrix* p : params) {
    state.slots.push_back({Matrix(p->rows(), p->cols()), Matrix(p->rows(), p->cols())});
  }
  return state;
}

void AdamState::update(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                       double lr) {
  if (params.size() != grads.size() || params.size() != slots.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(slots.size()) + " optimizer slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(slots[i].m)) {
      throw ShapeError("adam: parameter " + std::to_string(i) + " is " +
                       params[i]->shape_string() + " but gradient is " +
                       grads[i]->shape_string());
    }
    if (!all_finite(*grads[i])) {
      throw NumericError("adam: non-finite gradient for parameter " + std::to_string(i));
    }
  }
  ++step;
  const double t = static_cast<double>(step);
  const simd::AdamCoefficients coeffs{beta1,
                                      beta2,
                                      epsilon,
                                      lr,
                                      1.0 - std::pow(beta1, t),
                                      1.0 - std::pow(beta2, t)};
  const auto& kernels = simd::kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->empty()) continue;
    kernels.adam_update(params[i]->data(), grads[i]->data(), slots[i].m.data(),
                        slots[i].v.data(), params[i]->size(), coeffs);
  }
}

void adam_step(AdamState& state, Matrix& param, const Matrix& grad, double lr) {
  Matrix* p = &param;
  const Matrix* g = &grad;
  if (state.slots.empty()) state = AdamState::for_params(std::span<const Matrix* const>(&g, 1));
  state.update(std::span<Matrix* const>(&p, 1), std::span<const Matrix* const>(&g, 1), lr);
}

// ---- sampling ---------------------------------------------------------------------

std::vector<std::size_t> EpochSampler::next_batch(Rng& rng, std::size_t batch_size) {
  if (batch_size == 0 || batch_size > population_) {
    throw ValidationError("batch size " + std::to_string(batch_size) + " exceeds the " +
                          std::to_string(population_) + " available images");
  }
  if (order_.size() != population_ || cursor_ + batch_size > population_) {
    order_.resize(population_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size));
  cursor_ += batch_size;
  return batch;
}

void EpochSampler::restore(std::vector<std::size_t> order, std::size_t cursor) {
  if (!order.empty() && (order.size() != population_ || cursor > population_)) {
    throw FormatError("sampler state does not match a population of " +
                      std::to_string(population_));
  }
  order_ = std::move(order);
  cursor_ = cursor;
}

SourceBatch sample_source_batch(Rng& rng, EpochSampler& sampler, const TrainingView& data,
                                std::size_t batch_size) {
  const auto idx = sampler.next_batch(rng, batch_size);
  SourceBatch batch{gather_rows(data.source_features(), idx), {}};
  batch.labels.reserve(idx.size());
  for (std::size_t i : idx) batch.labels.push_back(data.source_labels()[i]);
  return batch;
}

Matrix sample_target_batch(Rng& rng, EpochSampler& sampler, const TrainingView& data,
                           std::size_t batch_size) {
  return gather_rows(data.target_features(), sampler.next_batch(rng, batch_size));
}

// ---- training ---------------------------------------------------------------------

namespace {

std::vector<Matrix*> param_ptrs(Model& model) {
  std::vector<Matrix*> out;
  for (auto& p : model_parameters(model)) out.push_back(p.value);
  return out;
}

std::vector<Matrix*> classifier_params(DomainClassifier& c) {
  return {&c.hidden.weight, &c.hidden.bias, &c.out.weight, &c.out.bias};
}

void require_finite_term(double v, const char* term, std::size_t iteration) {
  if (!std::isfinite(v)) {
    throw NumericError("iteration " + std::to_string(iteration) + ": loss term '" + term +
                       "' is not finite");
  }
}

Matrix take_rows(const Matrix& x, std::size_t begin, std::size_t count) {
  Matrix out(count, x.cols());
  std::copy(x.data() + begin * x.cols(), x.data() + (begin + count) * x.cols(), out.data());
  return out;
}

}  // namespace

TrainingState init_training(const TrainConfig& config, const TrainingView& data) {
  config.validate();
  if (data.source_features().cols() != data.target_features().cols()) {
    throw ValidationError("source and target feature widths differ");
  }
  TrainingState state;
  state.config = config;
  state.rng = Rng(config.seed);
  state.model = make_model(model_dims(config, data.source_features().cols(),
                                      data.source_attributes().cols()),
                           config.alignment_mode, config.bn_momentum, config.bn_epsilon,
                           state.rng);
  {
    const auto ptrs = param_ptrs(state.model);
    std::vector<const Matrix*> cptrs(ptrs.begin(), ptrs.end());
    state.optimizer = AdamState::for_params(cptrs);
  }
  if (config.alignment_mode == AlignmentMode::Dann) {
    state.domain_classifier = DomainClassifier::make(state.model.dims.metric_hidden,
                                                     config.domain_classifier_hidden, state.rng);
    const auto ptrs = classifier_params(*state.domain_classifier);
    std::vector<const Matrix*> cptrs(ptrs.begin(), ptrs.end());
    state.classifier_optimizer = AdamState::for_params(cptrs);
  }
  state.source_sampler = EpochSampler(data.source_features().rows());
  state.target_sampler = EpochSampler(data.target_features().rows());
  return state;
}

namespace {

void append_signs(std::vector<std::uint8_t>* pattern, const Matrix& x) {
  if (!pattern) return;
  for (double v : x.values()) pattern->push_back(v > 0.0 ? 1 : 0);
}

}  // namespace

ObjectiveResult evaluate_objective(Model& model, const TrainingView& data,
                                   const SourceBatch& source, const Matrix& target,
                                   const TrainConfig& cfg, const DomainClassifier* classifier,
                                   std::vector<std::uint8_t>* relu_pattern) {
  const std::size_t ks = data.source_attributes().rows();
  const std::size_t kt = data.target_attributes().rows();
  if (cfg.alignment_mode == AlignmentMode::Dann && !classifier) {
    throw ConfigError("dann alignment needs a domain classifier");
  }

  ObjectiveResult result;
  result.grad = ModelGrad::zeros_like(model);
  ModelGrad& grad = result.grad;
  LossReport& report = result.report;

  const MlpForward enc_s = encode(model, data.source_attributes());
  const MlpForward enc_t = encode(model, data.target_attributes());

  // Source pass: supervised pair labels.
  const PairBatch source_pairs = build_source_pairs(source.images, source.labels, enc_s.output);
  const MetricForward fs = metric_forward(model.metric, source_pairs, true);
  const LossGrad pre = prediction_loss(fs.scores, source_pairs.labels);

  // Target pass: unlabeled pairs, entropy of the per-image softmax.
  const PairBatch target_pairs = build_target_pairs(target, enc_t.output);
  const MetricForward ft = metric_forward(model.metric, target_pairs, true);
  const LossGrad ent = entropy_loss(ft.logits, target_pairs.image_group, kt);

  // Attribute reconstruction over every category of both domains.
  const MlpForward dec_s = decode(model, enc_s.output);
  const MlpForward dec_t = decode(model, enc_t.output);
  const ReconstructionLoss rec = reconstruction_loss(data.source_attributes(), dec_s.output,
                                                     data.target_attributes(), dec_t.output);

  if (relu_pattern) {
    for (const MlpForward* m : {&enc_s, &enc_t, &dec_s, &dec_t}) {
      append_signs(relu_pattern, m->cache.relu.input);
    }
    for (const MetricForward* f : {&fs, &ft}) {
      append_signs(relu_pattern, f->cache.relu1.input);
      append_signs(relu_pattern, f->cache.relu2.input);
    }
  }

  report.pre = pre.value;
  report.ent = ent.value;
  report.rec = rec.value;
  report.clamped_scores = pre.clamped;

  std::optional<Matrix> d_h1_s, d_h1_t, d_h2_s, d_h2_t;
  if (cfg.alignment_mode == AlignmentMode::Mmd) {
    const MmdLoss m1 = mmd_loss(fs.hidden1, ft.hidden1);
    const MmdLoss m2 = mmd_loss(fs.hidden2, ft.hidden2);
    report.align = m1.value + m2.value;
    d_h1_s = scaled(m1.d_source, cfg.lambda_align);
    d_h1_t = scaled(m1.d_target, cfg.lambda_align);
    d_h2_s = scaled(m2.d_source, cfg.lambda_align);
    d_h2_t = scaled(m2.d_target, cfg.lambda_align);
  } else if (cfg.alignment_mode == AlignmentMode::Dann) {
    const std::size_t ns = fs.hidden2.rows();
    const std::size_t nt = ft.hidden2.rows();
    Matrix h(ns + nt, fs.hidden2.cols());
    std::copy(fs.hidden2.data(), fs.hidden2.data() + fs.hidden2.size(), h.data());
    std::copy(ft.hidden2.data(), ft.hidden2.data() + ft.hidden2.size(),
              h.data() + fs.hidden2.size());
    std::vector<DomainTag> tags(ns, DomainTag::Source);
    tags.resize(ns + nt, DomainTag::Target);
    result.adversarial = adversarial_domain_loss(*classifier, h, tags);
    report.align = result.adversarial->value;
    d_h2_s = scaled(take_rows(result.adversarial->d_input_reversed, 0, ns), cfg.lambda_align);
    d_h2_t = scaled(take_rows(result.adversarial->d_input_reversed, ns, nt), cfg.lambda_align);
  }
  report.total = total_objective(report, cfg.loss_weights());

  // Backward. Fixed order: source pass, target pass, reconstruction.
  auto opt = [](const std::optional<Matrix>& m) { return m ? &*m : nullptr; };
  const PairGrad d_pairs_s = metric_backward(model.metric, fs.cache, pre.grad, grad.metric,
                                             opt(d_h1_s), opt(d_h2_s));
  Matrix d_embed_s = scatter_attribute_grad(source_pairs, d_pairs_s.d_attributes, ks);

  Matrix d_embed_t(kt, model.dims.embed_dim);
  // With nothing flowing into the target pass its backward would add zeros.
  const bool target_has_grad = cfg.lambda_ent != 0.0 || d_h1_t || d_h2_t;
  if (target_has_grad) {
    const Matrix d_logits_t = scaled(ent.grad, cfg.lambda_ent);
    const PairGrad d_pairs_t = metric_backward(model.metric, ft.cache, d_logits_t, grad.metric,
                                               opt(d_h1_t), opt(d_h2_t));
    d_embed_t = scatter_attribute_grad(target_pairs, d_pairs_t.d_attributes, kt);
  }

  if (cfg.lambda_rec != 0.0) {
    add_in_place(d_embed_s, mlp_backward(model.decoder, dec_s.cache,
                                         scaled(rec.d_source, cfg.lambda_rec), grad.decoder));
    add_in_place(d_embed_t, mlp_backward(model.decoder, dec_t.cache,
                                         scaled(rec.d_target, cfg.lambda_rec), grad.decoder));
  }
  mlp_backward(model.encoder, enc_s.cache, d_embed_s, grad.encoder);
  mlp_backward(model.encoder, enc_t.cache, d_embed_t, grad.encoder);
  return result;
}

LossReport train_iteration(TrainingState& state, const TrainingView& data) {
  const TrainConfig& cfg = state.config;
  const std::size_t iteration = state.iteration + 1;

  const SourceBatch src = sample_source_batch(state.rng, state.source_sampler, data, cfg.batch_size);
  const Matrix tgt = sample_target_batch(state.rng, state.target_sampler, data, cfg.batch_size);
  const DomainClassifier* classifier =
      state.domain_classifier ? &*state.domain_classifier : nullptr;
  ObjectiveResult obj;
  try {
    obj = evaluate_objective(state.model, data, src, tgt, cfg, classifier);
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(iteration) + ": " + e.what());
  }
  LossReport& report = obj.report;
  report.iteration = iteration;

  require_finite_term(report.pre, "pre", iteration);
  require_finite_term(report.ent, "ent", iteration);
  require_finite_term(report.rec, "rec", iteration);
  if (report.align) require_finite_term(*report.align, "align", iteration);
  require_finite_term(report.total, "total", iteration);

  try {
    const auto params = param_ptrs(state.model);
    const auto slots = obj.grad.slots();
    std::vector<const Matrix*> grads(slots.begin(), slots.end());
    state.optimizer.update(params, grads, cfg.learning_rate);
    if (obj.adversarial) {
      const AdversarialLoss& adv = *obj.adversarial;
      const std::vector<const Matrix*> cgrads{&adv.d_hidden_weight, &adv.d_hidden_bias,
                                              &adv.d_out_weight, &adv.d_out_bias};
      state.classifier_optimizer.update(classifier_params(*state.domain_classifier), cgrads,
                                        cfg.learning_rate);
    }
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(iteration) + ": " + e.what());
  }
  state.iteration = iteration;
  return report;
}

std::vector<LossReport> run_training(TrainingState& state, const TrainingView& data,
                                     const LossCallback& on_iteration) {
  std::vector<LossReport> history;
  while (state.iteration < state.config.max_iterations) {
    history.push_back(train_iteration(state, data));
    if (on_iteration) on_iteration(history.back());
  }
  return history;
}

TrainResult train(const ZslDataset& dataset, const TrainConfig& config,
                  const LossCallback& on_iteration) {
  const TrainingView view(dataset);
  TrainingState state = init_training(config, view);
  std::vector<LossReport> history = run_training(state, view, on_iteration);
  return {std::move(state.model), std::move(history)};
}

std::string loss_csv_header() { return "iter,pre,ent,rec,align,total"; }

std::string loss_csv_row(const LossReport& r) {
  char buf[256];
  if (r.align) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", r.iteration, r.pre,
                  r.ent, r.rec, *r.align, r.total);
  } else {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,,%.17g", r.iteration, r.pre, r.ent,
                  r.rec, r.total);
  }
  return buf;
}

}  // namespace tsvr
