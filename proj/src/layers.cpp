#include "tsvr/layers.hpp"

#include <cmath>

#include "tsvr/error.hpp"

namespace tsvr {

std::string_view domain_name(DomainTag tag) {
  return tag == DomainTag::Source ? "source" : "target";
}

LinearLayer::LinearLayer(std::size_t in, std::size_t out) : weight(out, in), bias(1, out) {}

LinearLayer LinearLayer::init_uniform(std::size_t in, std::size_t out, Rng& rng) {
  LinearLayer layer(in, out);
  const double bound = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 0.0;
  for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
  return layer;
}

LinearForward linear_forward(const LinearLayer& layer, const Matrix& x) {
  if (x.cols() != layer.in_dim()) {
    throw ShapeError("linear_forward: input " + x.shape_string() + " does not match weight " +
                     layer.weight.shape_string());
  }
  Matrix y = matmul_nt(x, layer.weight);
  add_row_in_place(y, layer.bias);
  return {std::move(y), LinearCache{x}};
}

LinearBackward linear_backward(const LinearLayer& layer, const LinearCache& cache,
                               const Matrix& dy) {
  if (dy.rows() != cache.input.rows() || dy.cols() != layer.out_dim()) {
    throw ShapeError("linear_backward: upstream gradient " + dy.shape_string() +
                     " does not match output " + std::to_string(cache.input.rows()) + "x" +
                     std::to_string(layer.out_dim()));
  }
  return {matmul(dy, layer.weight), matmul_tn(dy, cache.input), column_sums(dy)};
}

ReluForward relu_forward(const Matrix& x) { return {relu(x), ReluCache{x}}; }

Matrix relu_backward(const ReluCache& cache, const Matrix& dy) {
  if (!dy.same_shape(cache.input)) {
    throw ShapeError("relu_backward: gradient " + dy.shape_string() + " vs cached input " +
                     cache.input.shape_string());
  }
  Matrix dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(cache.input[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

DsbnLayer::DsbnLayer(std::size_t width, double momentum_, double epsilon_, StatsMode mode_)
    : gamma(1, width, 1.0), beta(1, width, 0.0), momentum(momentum_), epsilon(epsilon_),
      mode(mode_) {
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw ConfigError("batch-norm momentum must lie in (0, 1)");
  }
  if (!(epsilon >= 0.0)) throw ConfigError("batch-norm epsilon must be non-negative");
  for (auto& s : stats) {
    s.mean = Matrix(1, width, 0.0);
    s.stddev = Matrix(1, width, 1.0);
    s.seen = false;
  }
}

namespace {

void require_width(const DsbnLayer& layer, const Matrix& x, const char* op) {
  if (x.cols() != layer.width()) {
    throw ShapeError(std::string(op) + ": input " + x.shape_string() + " vs layer width " +
                     std::to_string(layer.width()));
  }
}

}  // namespace

DsbnForward dsbn_forward_train(DsbnLayer& layer, const Matrix& x, DomainTag tag) {
  require_width(layer, x, "dsbn_forward_train");
  if (x.rows() < 2) {
    throw ShapeError("dsbn_forward_train: batch of " + std::to_string(x.rows()) +
                     " row(s) cannot be normalized by its own statistics");
  }
  ColumnStats stats = row_stats(x);
  const std::size_t k = layer.width();

  Matrix inv_std(1, k);
  for (std::size_t j = 0; j < k; ++j) {
    const double denom = std::sqrt(stats.variance[j] + layer.epsilon);
    inv_std[j] = denom > 0.0 ? 1.0 / denom : 0.0;
  }
  Matrix normalized(x.rows(), k);
  Matrix out(x.rows(), k);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto xh = normalized.row(i);
    auto z = out.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      xh[j] = (in[j] - stats.mean[j]) * inv_std[j];
      z[j] = layer.gamma[j] * xh[j] + layer.beta[j];
    }
  }

  RunningStats& running = layer.stats_for(tag);
  const double a = layer.momentum;
  for (std::size_t j = 0; j < k; ++j) {
    running.mean[j] = a * running.mean[j] + (1.0 - a) * stats.mean[j];
    running.stddev[j] = a * running.stddev[j] + (1.0 - a) * std::sqrt(stats.variance[j]);
  }
  running.seen = true;

  return {std::move(out), DsbnCache{std::move(normalized), std::move(inv_std), tag},
          std::move(stats)};
}

Matrix dsbn_forward_eval(const DsbnLayer& layer, const Matrix& x, DomainTag tag) {
  require_width(layer, x, "dsbn_forward_eval");
  const RunningStats& running = layer.stats_for(tag);
  if (!running.seen) {
    throw ValidationError("dsbn_forward_eval: no " + std::string(domain_name(tag)) +
                          " statistics have been accumulated yet");
  }
  const std::size_t k = layer.width();
  Matrix inv_std(1, k);
  for (std::size_t j = 0; j < k; ++j) {
    const double s = running.stddev[j];
    const double denom = std::sqrt(s * s + layer.epsilon);
    inv_std[j] = denom > 0.0 ? 1.0 / denom : 0.0;
  }
  Matrix out(x.rows(), k);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto z = out.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      z[j] = layer.gamma[j] * ((in[j] - running.mean[j]) * inv_std[j]) + layer.beta[j];
    }
  }
  return out;
}

DsbnBackward dsbn_backward(const DsbnLayer& layer, const DsbnCache& cache, const Matrix& dz) {
  if (!dz.same_shape(cache.normalized) || dz.cols() != layer.width()) {
    throw ShapeError("dsbn_backward: gradient " + dz.shape_string() + " vs cache " +
                     cache.normalized.shape_string());
  }
  const std::size_t m = dz.rows();
  const std::size_t k = dz.cols();
  const double inv_m = 1.0 / static_cast<double>(m);

  Matrix d_beta = column_sums(dz);
  Matrix d_gamma(1, k);
  Matrix sum_dxhat(1, k);
  Matrix sum_dxhat_xhat(1, k);
  for (std::size_t i = 0; i < m; ++i) {
    auto g = dz.row(i);
    auto xh = cache.normalized.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      d_gamma[j] += g[j] * xh[j];
      const double dxh = g[j] * layer.gamma[j];
      sum_dxhat[j] += dxh;
      sum_dxhat_xhat[j] += dxh * xh[j];
    }
  }

  // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
  Matrix dx(m, k);
  for (std::size_t i = 0; i < m; ++i) {
    auto g = dz.row(i);
    auto xh = cache.normalized.row(i);
    auto out = dx.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const double dxh = g[j] * layer.gamma[j];
      out[j] = cache.inv_std[j] * (dxh - inv_m * sum_dxhat[j] - xh[j] * inv_m * sum_dxhat_xhat[j]);
    }
  }
  return {std::move(dx), std::move(d_gamma), std::move(d_beta)};
}

DsbnForward bn_forward_train(DsbnLayer& layer, const Matrix& x) {
  if (layer.mode != StatsMode::Shared) {
    throw ConfigError("bn_forward_train requires a layer with shared statistics");
  }
  return dsbn_forward_train(layer, x, DomainTag::Source);
}

Matrix bn_forward_eval(const DsbnLayer& layer, const Matrix& x) {
  if (layer.mode != StatsMode::Shared) {
    throw ConfigError("bn_forward_eval requires a layer with shared statistics");
  }
  return dsbn_forward_eval(layer, x, DomainTag::Source);
}

}  // namespace tsvr
