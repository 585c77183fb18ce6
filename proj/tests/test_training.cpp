#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsvr/error.hpp"
#include "tsvr/training.hpp"

namespace tsvr {
namespace {

using testing::random_matrix;

ZslDataset small_synthetic(std::uint64_t seed = 0) {
  SyntheticSpec spec;
  spec.source_classes = 6;
  spec.target_classes = 3;
  spec.feature_dim = 10;
  spec.attribute_dim = 6;
  spec.samples_per_class = 10;
  spec.seed = seed;
  return generate_synthetic(spec).dataset;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.max_iterations = 20;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  cfg.encoder_hidden = 8;
  cfg.metric_hidden = 12;
  cfg.lambda_ent = 0.1;
  cfg.lambda_rec = 0.1;
  return cfg;
}

bool models_bitwise_equal(const Model& a, const Model& b) {
  const auto pa = model_parameters(a), pb = model_parameters(b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bitwise_equal(*pa[i].value, *pb[i].value)) return false;
  }
  for (int s = 0; s < 2; ++s) {
    if (!bitwise_equal(a.metric.norm1.stats[s].mean, b.metric.norm1.stats[s].mean) ||
        !bitwise_equal(a.metric.norm1.stats[s].stddev, b.metric.norm1.stats[s].stddev) ||
        !bitwise_equal(a.metric.norm2.stats[s].mean, b.metric.norm2.stats[s].mean) ||
        !bitwise_equal(a.metric.norm2.stats[s].stddev, b.metric.norm2.stats[s].stddev)) {
      return false;
    }
  }
  return true;
}

TEST(Defaults, MatchDocumentedValues) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.learning_rate, 1e-5);
  EXPECT_EQ(cfg.max_iterations, 50000u);
  EXPECT_EQ(cfg.batch_size, 32u);
  EXPECT_EQ(cfg.lambda_rec, 1e-5);
  EXPECT_EQ(cfg.lambda_ent, 1e-9);
  EXPECT_EQ(cfg.alignment_mode, AlignmentMode::Dsbn);
}

TEST(Config, ValidationRejectsBadValues) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lambda_ent = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.bn_momentum = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p(2, 3, 0.5);
  AdamState s;
  adam_step(s, p, Matrix(2, 3, 1.0), 1e-3);
  for (double v : p.values()) EXPECT_NEAR(v, 0.5 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameterAndSignFollowsGradient) {
  Matrix p = Matrix::from_rows({{1, 2, 3}});
  AdamState s;
  adam_step(s, p, Matrix(1, 3), 0.1);
  EXPECT_EQ(p, Matrix::from_rows({{1, 2, 3}}));

  Matrix q(1, 4);
  AdamState t;
  adam_step(t, q, Matrix::from_rows({{2, -3, 0.001, -1e-4}}), 0.01);
  EXPECT_LT(q[0], 0.0);
  EXPECT_GT(q[1], 0.0);
  EXPECT_LT(q[2], 0.0);
  EXPECT_GT(q[3], 0.0);
  for (double v : t.slots[0].v.values()) EXPECT_GE(v, 0.0);
}

TEST(Adam, NonFiniteGradientLeavesEveryParameterUntouched) {
  Matrix a(1, 2, 1.0), b(1, 2, 1.0);
  Matrix ga(1, 2, 1.0), gb(1, 2, 1.0);
  gb(0, 1) = INFINITY;
  std::vector<const Matrix*> init{&a, &b};
  AdamState s = AdamState::for_params(init);
  std::vector<Matrix*> params{&a, &b};
  std::vector<const Matrix*> grads{&ga, &gb};
  EXPECT_THROW(s.update(params, grads, 0.1), NumericError);
  EXPECT_EQ(a, Matrix(1, 2, 1.0));
  EXPECT_EQ(b, Matrix(1, 2, 1.0));
  EXPECT_EQ(s.step, 0u);
}

TEST(Sampler, FullBatchIsPermutation) {
  Rng rng(1);
  EpochSampler s(9);
  for (int round = 0; round < 3; ++round) {
    auto b = s.next_batch(rng, 9);
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(b[i], i);
  }
  EXPECT_THROW(s.next_batch(rng, 10), ValidationError);
}

TEST(Sampler, NoRepeatsWithinAPass) {
  Rng rng(2);
  EpochSampler s(20);
  std::vector<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    const auto b = s.next_batch(rng, 4);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
}

TEST(Sampler, EqualSeedsGiveEqualSequences) {
  Rng r1(3), r2(3);
  EpochSampler a(50), b(50);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(a.next_batch(r1, 7), b.next_batch(r2, 7));
}

TEST(Sampler, FrequenciesWithinBinomialBounds) {
  Rng rng(4);
  const std::size_t n = 100, bs = 7, batches = 10000;
  EpochSampler s(n);
  std::vector<double> count(n, 0.0);
  for (std::size_t i = 0; i < batches; ++i) {
    for (std::size_t k : s.next_batch(rng, bs)) count[k] += 1.0;
  }
  const double draws = static_cast<double>(batches * bs);
  const double p = 1.0 / static_cast<double>(n);
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  for (double c : count) {
    EXPECT_GE(c, mean - 3.0 * sigma);
    EXPECT_LE(c, mean + 3.0 * sigma);
  }
}

TEST(Sampler, BatchesCarryMatchingLabels) {
  const ZslDataset d = small_synthetic();
  const TrainingView view(d);
  Rng rng(5);
  EpochSampler s(d.source_features.rows());
  const SourceBatch b = sample_source_batch(rng, s, view, 6);
  ASSERT_EQ(b.images.rows(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    bool found = false;
    for (std::size_t r = 0; r < d.source_features.rows() && !found; ++r) {
      if (std::equal(b.images.row(i).begin(), b.images.row(i).end(),
                     d.source_features.row(r).begin())) {
        found = d.source_labels[r] == b.labels[i];
      }
    }
    EXPECT_TRUE(found) << "row " << i;
  }
}

TEST(Training, ZeroIterationsLeavesInitialModel) {
  const ZslDataset d = small_synthetic();
  TrainConfig cfg = small_config();
  cfg.max_iterations = 0;
  const TrainResult r = train(d, cfg);
  EXPECT_TRUE(r.history.empty());
  const TrainingView view(d);
  const TrainingState fresh = init_training(cfg, view);
  EXPECT_TRUE(models_bitwise_equal(r.model, fresh.model));
}

TEST(Training, EqualSeedsBitIdenticalAndSeedsDiffer) {
  const ZslDataset d = small_synthetic();
  TrainConfig cfg = small_config();
  const TrainResult a = train(d, cfg), b = train(d, cfg);
  EXPECT_TRUE(models_bitwise_equal(a.model, b.model));
  ASSERT_EQ(a.history.size(), 20u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].total, b.history[i].total);
    EXPECT_EQ(a.history[i].iteration, i + 1);
  }
  cfg.seed = 1;
  EXPECT_FALSE(models_bitwise_equal(a.model, train(d, cfg).model));
}

TEST(Training, TotalCombinesWeightedTerms) {
  const ZslDataset d = small_synthetic();
  const TrainResult r = train(d, small_config());
  for (const auto& h : r.history) {
    EXPECT_EQ(h.total, h.pre + 0.1 * h.ent + 0.1 * h.rec);
    EXPECT_FALSE(h.align.has_value());
  }
}

TEST(Training, WithoutReconstructionTheDecoderIsUntouched) {
  const ZslDataset d = small_synthetic();
  TrainConfig cfg = small_config();
  cfg.lambda_rec = 0.0;
  cfg.lambda_ent = 0.0;
  const TrainingView view(d);
  const TrainingState init = init_training(cfg, view);
  const TrainResult r = train(d, cfg);
  EXPECT_TRUE(bitwise_equal(r.model.decoder.first.weight, init.model.decoder.first.weight));
  EXPECT_TRUE(bitwise_equal(r.model.decoder.second.bias, init.model.decoder.second.bias));
  EXPECT_FALSE(bitwise_equal(r.model.encoder.first.weight, init.model.encoder.first.weight));
  // Target statistics are still tracked.
  EXPECT_TRUE(r.model.metric.norm1.stats[1].seen);
}

TEST(Training, SingleBnSharesOneStatisticsSet) {
  const ZslDataset d = small_synthetic();
  TrainConfig cfg = small_config();
  cfg.alignment_mode = AlignmentMode::SingleBn;
  cfg.max_iterations = 3;
  const TrainResult r = train(d, cfg);
  EXPECT_TRUE(r.model.metric.norm1.stats[0].seen);
  EXPECT_FALSE(r.model.metric.norm1.stats[1].seen);
}

TEST(Training, AlignmentModesReportTheirTerm) {
  const ZslDataset d = small_synthetic();
  for (auto mode : {AlignmentMode::Mmd, AlignmentMode::Dann}) {
    TrainConfig cfg = small_config();
    cfg.alignment_mode = mode;
    cfg.max_iterations = 5;
    const TrainResult r = train(d, cfg);
    for (const auto& h : r.history) {
      ASSERT_TRUE(h.align.has_value()) << alignment_mode_name(mode);
      EXPECT_GE(*h.align, 0.0);
    }
  }
}

TEST(Training, DannClassifierStartsAtChance) {
  const ZslDataset d = small_synthetic();
  TrainConfig cfg = small_config();
  cfg.alignment_mode = AlignmentMode::Dann;
  cfg.max_iterations = 1;
  const TrainResult r = train(d, cfg);
  EXPECT_NEAR(*r.history[0].align, std::log(2.0), 1e-15);
}

TEST(Training, NumericBlowUpNamesIteration) {
  const ZslDataset d = small_synthetic();
  TrainConfig cfg = small_config();
  // The first Adam step moves every weight by about lr, so the second
  // forward pass overflows.
  cfg.learning_rate = 1e300;
  try {
    train(d, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 2"), std::string::npos) << e.what();
  }
}

// Two separable classes in the plane; the target side mirrors the source.
ZslDataset separable_toy() {
  ZslDataset d;
  d.name = "toy";
  Rng rng(77);
  const std::size_t per = 40;
  d.source_features = Matrix(2 * per, 2);
  d.target_features = Matrix(2 * per, 2);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const std::size_t c = i / per;
    const double sx = c == 0 ? 2.0 : -2.0;
    d.source_features(i, 0) = sx + 0.3 * rng.normal();
    d.source_features(i, 1) = 0.3 * rng.normal();
    d.target_features(i, 0) = 0.3 * rng.normal();
    d.target_features(i, 1) = sx + 0.3 * rng.normal();
    d.source_labels.push_back(c);
    d.target_labels.push_back(c);
  }
  d.source_attributes = Matrix::from_rows({{1, 0}, {0, 1}});
  d.target_attributes = Matrix::from_rows({{1, 1}, {1, -1}});
  d.source_classes = {"a", "b"};
  d.target_classes = {"c", "d"};
  return d;
}

TEST(Training, SeparableToyReachesLowPredictionLoss) {
  const ZslDataset d = separable_toy();
  validate_dataset(d);
  TrainConfig cfg;
  cfg.max_iterations = 2000;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.encoder_hidden = 8;
  cfg.metric_hidden = 16;
  cfg.lambda_ent = 0.0;
  cfg.lambda_rec = 1e-5;
  const TrainResult r = train(d, cfg);
  double tail = 0.0;
  for (std::size_t i = r.history.size() - 50; i < r.history.size(); ++i) tail += r.history[i].pre;
  EXPECT_LT(tail / 50.0, 0.1);
  EXPECT_GT(r.history.front().pre, tail / 50.0);
}

TEST(LossCsv, RowFormat) {
  LossReport r;
  r.iteration = 3;
  r.pre = 0.5;
  r.ent = 0.25;
  r.rec = 1.0;
  r.total = 2.0;
  EXPECT_EQ(loss_csv_header(), "iter,pre,ent,rec,align,total");
  EXPECT_EQ(loss_csv_row(r), "3,0.5,0.25,1,,2");
  r.align = 0.125;
  EXPECT_EQ(loss_csv_row(r), "3,0.5,0.25,1,0.125,2");
}

}  // namespace
}  // namespace tsvr
