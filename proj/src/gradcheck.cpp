#include "tsvr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "tsvr/data.hpp"
#include "tsvr/layers.hpp"
#include "tsvr/losses.hpp"
#include "tsvr/model.hpp"
#include "tsvr/rng.hpp"
#include "tsvr/training.hpp"

namespace tsvr {

namespace {

// Scalar objective; may record the sign pattern of every ReLU input.
using Objective = std::function<double(std::vector<std::uint8_t>*)>;

struct Tensor {
  Matrix* value;
  Matrix analytic;
};

constexpr int kMaxKinkRetries = 3;
// Denominator floor of the error ratio. Some gradients vanish identically
// (a bias feeding batch normalization); there both sides are rounding noise.
constexpr double kErrorFloor = 1e-5;

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0,
                     double offset = 0.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = offset + scale * rng.uniform(-1.0, 1.0);
  return m;
}

// Entries bounded away from zero so a central step never crosses the kink.
Matrix kink_free_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) {
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::abs(v) < 0.05);
  }
  return m;
}

double dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void record(std::vector<std::uint8_t>* pattern, const Matrix& x) {
  if (!pattern) return;
  for (double v : x.values()) pattern->push_back(v > 0.0 ? 1 : 0);
}

void compare(ComponentResult& result, const Objective& f, std::vector<Tensor>& tensors,
             const GradcheckOptions& options, bool corrupt) {
  std::vector<std::uint8_t> base, plus, minus;
  f(&base);
  if (corrupt && !tensors.empty() && !tensors.front().analytic.empty()) {
    Matrix& a = tensors.front().analytic;
    a[0] += 0.05 * (frobenius_norm(a) + 1.0);
  }
  for (Tensor& t : tensors) {
    Matrix numeric(t.value->rows(), t.value->cols());
    for (std::size_t i = 0; i < t.value->size(); ++i) {
      const double x0 = (*t.value)[i];
      double h = options.step;
      double fp = 0.0, fm = 0.0;
      for (int attempt = 0;; ++attempt) {
        plus.clear();
        minus.clear();
        (*t.value)[i] = x0 + h;
        fp = f(&plus);
        (*t.value)[i] = x0 - h;
        fm = f(&minus);
        (*t.value)[i] = x0;
        if ((plus == base && minus == base) || attempt == kMaxKinkRetries) break;
        // The step crossed a ReLU kink; the difference quotient would mix two
        // linear pieces. Shrink the step until both sides share the pattern.
        h /= 10.0;
        ++result.kink_retries;
      }
      numeric[i] = (fp - fm) / (2.0 * h);
    }
    if (!all_finite(numeric) || !all_finite(t.analytic)) {
      result.max_relative_error = INFINITY;
    } else {
      const double scale =
          std::max({frobenius_norm(t.analytic), frobenius_norm(numeric), kErrorFloor});
      result.max_relative_error = std::max(
          result.max_relative_error, frobenius_norm(subtract(t.analytic, numeric)) / scale);
    }
    ++result.checks;
  }
}

// ---- components ------------------------------------------------------------------------

void check_linear(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt) {
  LinearLayer layer = LinearLayer::init_uniform(4, 3, rng);
  layer.bias = random_matrix(1, 3, rng);
  Matrix x = random_matrix(5, 4, rng);
  const Matrix r = random_matrix(5, 3, rng);
  Objective f = [&](std::vector<std::uint8_t>*) {
    return dot(r, linear_forward(layer, x).output);
  };
  const LinearForward fwd = linear_forward(layer, x);
  LinearBackward b = linear_backward(layer, fwd.cache, r);
  std::vector<Tensor> t{{&x, b.d_input}, {&layer.weight, b.d_weight}, {&layer.bias, b.d_bias}};
  compare(res, f, t, o, corrupt);
}

void check_relu(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt) {
  Matrix x = kink_free_matrix(5, 4, rng);
  const Matrix r = random_matrix(5, 4, rng);
  Objective f = [&](std::vector<std::uint8_t>* p) {
    record(p, x);
    return dot(r, relu_forward(x).output);
  };
  std::vector<Tensor> t{{&x, relu_backward(relu_forward(x).cache, r)}};
  compare(res, f, t, o, corrupt);
}

void check_norm(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt,
                StatsMode mode) {
  DsbnLayer layer(4, 0.9, 1e-5, mode);
  layer.gamma = random_matrix(1, 4, rng, 0.5, 1.0);
  layer.beta = random_matrix(1, 4, rng);
  Matrix x = random_matrix(6, 4, rng, 2.0, 0.5);
  const Matrix r = random_matrix(6, 4, rng);
  const DomainTag tag = mode == StatsMode::Shared ? DomainTag::Source : DomainTag::Target;
  Objective f = [&](std::vector<std::uint8_t>*) {
    DsbnLayer copy = layer;
    return dot(r, dsbn_forward_train(copy, x, tag).output);
  };
  DsbnLayer copy = layer;
  const DsbnForward fwd = dsbn_forward_train(copy, x, tag);
  DsbnBackward b = dsbn_backward(layer, fwd.cache, r);
  std::vector<Tensor> t{{&x, b.d_input}, {&layer.gamma, b.d_gamma}, {&layer.beta, b.d_beta}};
  compare(res, f, t, o, corrupt);
}

void check_mlp(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt,
               std::size_t in, std::size_t hidden, std::size_t out) {
  TwoLayerMlp mlp{LinearLayer::init_uniform(in, hidden, rng),
                  LinearLayer::init_uniform(hidden, out, rng)};
  mlp.first.bias = random_matrix(1, hidden, rng, 0.2);
  mlp.second.bias = random_matrix(1, out, rng, 0.2);
  Matrix x = random_matrix(4, in, rng);
  const Matrix r = random_matrix(4, out, rng);
  Objective f = [&](std::vector<std::uint8_t>* p) {
    const MlpForward fwd = mlp_forward(mlp, x);
    record(p, fwd.cache.relu.input);
    return dot(r, fwd.output);
  };
  const MlpForward fwd = mlp_forward(mlp, x);
  MlpGrad g{Matrix(hidden, in), Matrix(1, hidden), Matrix(out, hidden), Matrix(1, out)};
  Matrix dx = mlp_backward(mlp, fwd.cache, r, g);
  std::vector<Tensor> t{{&x, dx},
                        {&mlp.first.weight, g.first_weight},
                        {&mlp.first.bias, g.first_bias},
                        {&mlp.second.weight, g.second_weight},
                        {&mlp.second.bias, g.second_bias}};
  compare(res, f, t, o, corrupt);
}

void check_prediction_loss(ComponentResult& res, Rng& rng, const GradcheckOptions& o,
                           bool corrupt) {
  Matrix z = random_matrix(8, 1, rng, 3.0);
  std::vector<double> labels(8);
  for (double& y : labels) y = rng.coin() ? 1.0 : 0.0;
  Objective f = [&](std::vector<std::uint8_t>*) {
    return prediction_loss(sigmoid(z), labels).value;
  };
  std::vector<Tensor> t{{&z, prediction_loss(sigmoid(z), labels).grad}};
  compare(res, f, t, o, corrupt);
}

void check_entropy_loss(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt) {
  const std::size_t images = 4, k = 3;
  Matrix z = random_matrix(images * k, 1, rng, 2.0);
  std::vector<std::size_t> group;
  for (std::size_t i = 0; i < images; ++i) group.insert(group.end(), k, i);
  Objective f = [&](std::vector<std::uint8_t>*) { return entropy_loss(z, group, k).value; };
  std::vector<Tensor> t{{&z, entropy_loss(z, group, k).grad}};
  compare(res, f, t, o, corrupt);
}

void check_reconstruction_loss(ComponentResult& res, Rng& rng, const GradcheckOptions& o,
                               bool corrupt) {
  const Matrix a_s = random_matrix(4, 5, rng);
  const Matrix a_t = random_matrix(3, 5, rng);
  Matrix s_hat = random_matrix(4, 5, rng);
  Matrix t_hat = random_matrix(3, 5, rng);
  Objective f = [&](std::vector<std::uint8_t>*) {
    return reconstruction_loss(a_s, s_hat, a_t, t_hat).value;
  };
  ReconstructionLoss l = reconstruction_loss(a_s, s_hat, a_t, t_hat);
  std::vector<Tensor> t{{&s_hat, l.d_source}, {&t_hat, l.d_target}};
  compare(res, f, t, o, corrupt);
}

void check_mmd_loss(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt) {
  Matrix hs = random_matrix(5, 4, rng);
  Matrix ht = random_matrix(6, 4, rng, 1.0, 0.3);
  Objective f = [&](std::vector<std::uint8_t>*) { return mmd_loss(hs, ht).value; };
  MmdLoss l = mmd_loss(hs, ht);
  std::vector<Tensor> t{{&hs, l.d_source}, {&ht, l.d_target}};
  compare(res, f, t, o, corrupt);
}

void check_domain_classifier(ComponentResult& res, Rng& rng, const GradcheckOptions& o,
                             bool corrupt) {
  DomainClassifier c = DomainClassifier::make(4, 5, rng);
  c.hidden.bias = random_matrix(1, 5, rng, 0.2);
  c.out.weight = random_matrix(1, 5, rng);  // the zero start would hide this layer's gradient
  c.out.bias = random_matrix(1, 1, rng);
  Matrix h = random_matrix(8, 4, rng);
  std::vector<DomainTag> tags(8, DomainTag::Source);
  for (std::size_t i = 4; i < 8; ++i) tags[i] = DomainTag::Target;
  Objective f = [&](std::vector<std::uint8_t>* p) {
    record(p, linear_forward(c.hidden, h).output);
    return adversarial_domain_loss(c, h, tags).value;
  };
  AdversarialLoss l = adversarial_domain_loss(c, h, tags);
  std::vector<Tensor> t{{&h, l.d_input},
                        {&c.hidden.weight, l.d_hidden_weight},
                        {&c.hidden.bias, l.d_hidden_bias},
                        {&c.out.weight, l.d_out_weight},
                        {&c.out.bias, l.d_out_bias}};
  compare(res, f, t, o, corrupt);
}

// Zero biases can park a ReLU input exactly on its kink (a category whose
// encoder units are all inactive embeds to exactly zero), where no derivative
// exists. Random biases move every unit off the kink.
void randomize_biases(Model& model, Rng& rng) {
  for (auto& p : model_parameters(model)) {
    if (p.name.ends_with(".bias")) *p.value = random_matrix(1, p.value->cols(), rng, 0.3);
  }
  model.metric.norm1.gamma = random_matrix(1, model.metric.norm1.width(), rng, 0.5, 1.0);
  model.metric.norm1.beta = random_matrix(1, model.metric.norm1.width(), rng, 0.5);
  model.metric.norm2.gamma = random_matrix(1, model.metric.norm2.width(), rng, 0.5, 1.0);
  model.metric.norm2.beta = random_matrix(1, model.metric.norm2.width(), rng, 0.5);
}

std::vector<Tensor> metric_tensors(MetricNet& net, MetricGrad& g) {
  std::vector<Tensor> t;
  t.push_back({&net.fc1.weight, g.fc1_weight});
  t.push_back({&net.fc1.bias, g.fc1_bias});
  t.push_back({&net.norm1.gamma, g.norm1_gamma});
  t.push_back({&net.norm1.beta, g.norm1_beta});
  t.push_back({&net.fc2.weight, g.fc2_weight});
  t.push_back({&net.fc2.bias, g.fc2_bias});
  t.push_back({&net.norm2.gamma, g.norm2_gamma});
  t.push_back({&net.norm2.beta, g.norm2_beta});
  t.push_back({&net.head.weight, g.head_weight});
  t.push_back({&net.head.bias, g.head_bias});
  return t;
}

void check_metric_net(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt) {
  const ModelDims dims{5, 4, 3, 6, 6};
  Model model = make_model(dims, AlignmentMode::Dsbn, 0.9, 1e-5, rng);
  randomize_biases(model, rng);
  MetricNet& net = model.metric;
  const Matrix images = random_matrix(4, 5, rng);
  const Matrix embedded = random_matrix(3, 3, rng);
  PairBatch batch = build_target_pairs(images, embedded);
  const Matrix r = random_matrix(batch.size(), 1, rng);
  const Matrix r1 = random_matrix(batch.size(), 6, rng, 0.3);
  const Matrix r2 = random_matrix(batch.size(), 6, rng, 0.3);
  Objective f = [&](std::vector<std::uint8_t>* p) {
    MetricNet copy = net;
    const MetricForward fwd = metric_forward(copy, batch, true);
    record(p, fwd.cache.relu1.input);
    record(p, fwd.cache.relu2.input);
    return dot(r, fwd.logits) + dot(r1, fwd.hidden1) + dot(r2, fwd.hidden2);
  };
  MetricNet copy = net;
  const MetricForward fwd = metric_forward(copy, batch, true);
  ModelGrad grad = ModelGrad::zeros_like(model);
  const PairGrad d_pairs = metric_backward(net, fwd.cache, r, grad.metric, &r1, &r2);
  std::vector<Tensor> t = metric_tensors(net, grad.metric);
  t.insert(t.begin(), {{&batch.images, d_pairs.d_images}, {&batch.attributes, d_pairs.d_attributes}});
  compare(res, f, t, o, corrupt);
}

void check_composite(ComponentResult& res, Rng& rng, const GradcheckOptions& o, bool corrupt,
                     AlignmentMode mode) {
  ZslDataset data;
  data.source_attributes = random_matrix(4, 4, rng, 1.0, 0.5);
  data.target_attributes = random_matrix(3, 4, rng, 1.0, 0.5);
  data.source_features = random_matrix(8, 5, rng);
  data.target_features = random_matrix(6, 5, rng, 1.5, 0.5);
  const TrainingView view(data);

  TrainConfig cfg;
  cfg.alignment_mode = mode;
  cfg.lambda_ent = 0.5;
  cfg.lambda_rec = 0.3;
  cfg.lambda_align = 0.7;
  cfg.embed_dim = 3;
  cfg.encoder_hidden = 6;
  cfg.metric_hidden = 6;
  Model model = make_model(model_dims(cfg, 5, 4), mode, cfg.bn_momentum, cfg.bn_epsilon, rng);
  randomize_biases(model, rng);

  SourceBatch source{random_matrix(4, 5, rng), {0, 2, 2, 3}};
  const Matrix target = random_matrix(3, 5, rng, 1.5, 0.5);

  Objective f = [&](std::vector<std::uint8_t>* p) {
    Model copy = model;
    return evaluate_objective(copy, view, source, target, cfg, nullptr, p).report.total;
  };
  Model copy = model;
  const ObjectiveResult obj = evaluate_objective(copy, view, source, target, cfg);
  std::vector<Tensor> t;
  const auto params = model_parameters(model);
  const auto grads = obj.grad.slots();
  for (std::size_t i = 0; i < params.size(); ++i) t.push_back({params[i].value, *grads[i]});
  compare(res, f, t, o, corrupt);
}

struct Component {
  const char* name;
  std::function<void(ComponentResult&, Rng&, const GradcheckOptions&, bool)> run;
};

const std::vector<Component>& components() {
  using O = const GradcheckOptions&;
  static const std::vector<Component> list{
      {"linear", check_linear},
      {"relu", check_relu},
      {"bn", [](ComponentResult& r, Rng& g, O o, bool c) { check_norm(r, g, o, c, StatsMode::Shared); }},
      {"dsbn", [](ComponentResult& r, Rng& g, O o, bool c) { check_norm(r, g, o, c, StatsMode::PerDomain); }},
      {"encoder", [](ComponentResult& r, Rng& g, O o, bool c) { check_mlp(r, g, o, c, 4, 6, 3); }},
      {"decoder", [](ComponentResult& r, Rng& g, O o, bool c) { check_mlp(r, g, o, c, 3, 6, 4); }},
      {"prediction_loss", check_prediction_loss},
      {"entropy_loss", check_entropy_loss},
      {"reconstruction_loss", check_reconstruction_loss},
      {"mmd_loss", check_mmd_loss},
      {"domain_classifier", check_domain_classifier},
      {"metric_net", check_metric_net},
      {"composite", [](ComponentResult& r, Rng& g, O o, bool c) { check_composite(r, g, o, c, AlignmentMode::Dsbn); }},
      {"composite_mmd", [](ComponentResult& r, Rng& g, O o, bool c) { check_composite(r, g, o, c, AlignmentMode::Mmd); }},
  };
  return list;
}

}  // namespace

std::vector<std::string> GradcheckReport::failing() const {
  std::vector<std::string> out;
  for (const auto& c : components) {
    if (!c.passed) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> names;
  for (const auto& c : components()) names.emplace_back(c.name);
  return names;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  std::vector<std::uint64_t> seeds = options.seeds;
  if (seeds.empty()) {
    for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
  }
  GradcheckReport report;
  report.passed = true;
  for (std::size_t ci = 0; ci < components().size(); ++ci) {
    const Component& comp = components()[ci];
    ComponentResult result;
    result.name = comp.name;
    const bool corrupt = options.corrupt_component == comp.name;
    for (std::uint64_t seed : seeds) {
      Rng rng(seed * 0x9E3779B97F4A7C15ULL + ci);
      comp.run(result, rng, options, corrupt);
    }
    result.passed = result.max_relative_error < options.tolerance;
    report.passed = report.passed && result.passed;
    report.components.push_back(std::move(result));
  }
  return report;
}

std::string format_gradcheck_report(const GradcheckReport& report) {
  std::string out;
  char line[160];
  for (const auto& c : report.components) {
    std::snprintf(line, sizeof(line), "%-20s max_rel_err=%.3e checks=%zu kink_retries=%zu %s\n",
                  c.name.c_str(), c.max_relative_error, c.checks, c.kink_retries,
                  c.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace tsvr
