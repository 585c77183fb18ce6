#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

#include "tsvr/matrix.hpp"
#include "tsvr/rng.hpp"

namespace tsvr {

enum class DomainTag : std::uint8_t { Source = 0, Target = 1 };

std::string_view domain_name(DomainTag tag);

// Affine map y = x W^T + b with W stored out x in.
struct LinearLayer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out);

  // Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
  static LinearLayer init_uniform(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

struct LinearCache {
  Matrix input;
};

struct LinearForward {
  Matrix output;
  LinearCache cache;
};

struct LinearBackward {
  Matrix d_input;
  Matrix d_weight;
  Matrix d_bias;
};

LinearForward linear_forward(const LinearLayer& layer, const Matrix& x);
LinearBackward linear_backward(const LinearLayer& layer, const LinearCache& cache,
                               const Matrix& dy);

// ReLU keeps its input for the backward mask.
struct ReluCache {
  Matrix input;
};
struct ReluForward {
  Matrix output;
  ReluCache cache;
};
ReluForward relu_forward(const Matrix& x);
Matrix relu_backward(const ReluCache& cache, const Matrix& dy);

// Moving-average statistics of one normalization unit. `stddev` tracks the
// standard deviation (not the variance) of the batches it has seen.
struct RunningStats {
  Matrix mean;    // 1 x K, starts at 0
  Matrix stddev;  // 1 x K, starts at 1
  bool seen = false;
};

enum class StatsMode : std::uint8_t {
  PerDomain,  // domain-specific BN: one statistics set per DomainTag
  Shared,     // standard BN: both tags share slot 0
};

// Batch normalization with shared scale/shift and one or two sets of
// running statistics. gamma and beta are the same objects for both domains.
struct DsbnLayer {
  Matrix gamma;  // 1 x K
  Matrix beta;   // 1 x K
  std::array<RunningStats, 2> stats;
  double momentum = 0.9;
  double epsilon = 1e-5;
  StatsMode mode = StatsMode::PerDomain;

  DsbnLayer() = default;
  DsbnLayer(std::size_t width, double momentum, double epsilon,
            StatsMode mode = StatsMode::PerDomain);

  std::size_t width() const { return gamma.cols(); }
  std::size_t slot(DomainTag tag) const {
    return mode == StatsMode::Shared ? 0 : static_cast<std::size_t>(tag);
  }
  RunningStats& stats_for(DomainTag tag) { return stats[slot(tag)]; }
  const RunningStats& stats_for(DomainTag tag) const { return stats[slot(tag)]; }
};

struct DsbnCache {
  Matrix normalized;  // x_hat, pre-affine
  Matrix inv_std;     // 1 x K, 1 / sqrt(var + eps)
  DomainTag tag = DomainTag::Source;
};

struct DsbnForward {
  Matrix output;
  DsbnCache cache;
  ColumnStats batch_stats;
};

struct DsbnBackward {
  Matrix d_input;
  Matrix d_gamma;
  Matrix d_beta;
};

// Normalizes with the batch's own statistics and folds them into the running
// statistics of `tag` (and only of `tag`). Rejects batches with fewer than two rows.
DsbnForward dsbn_forward_train(DsbnLayer& layer, const Matrix& x, DomainTag tag);
// Normalizes with the running statistics of `tag`. Never mutates the layer.
Matrix dsbn_forward_eval(const DsbnLayer& layer, const Matrix& x, DomainTag tag);
// Exact batch-norm derivative, including the dependence of the batch
// statistics on every input row.
DsbnBackward dsbn_backward(const DsbnLayer& layer, const DsbnCache& cache, const Matrix& dz);

// Single-statistics variants; `layer.mode` must be StatsMode::Shared.
DsbnForward bn_forward_train(DsbnLayer& layer, const Matrix& x);
Matrix bn_forward_eval(const DsbnLayer& layer, const Matrix& x);

}  // namespace tsvr
