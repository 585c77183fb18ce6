#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsvr/error.hpp"
#include "tsvr/model.hpp"

namespace tsvr {
namespace {

using testing::random_matrix;

double weighted_sum(const Matrix& y, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

ModelDims small_dims() {
  ModelDims d;
  d.feature_dim = 5;
  d.attribute_dim = 4;
  d.embed_dim = 3;
  d.encoder_hidden = 6;
  d.metric_hidden = 7;
  return d;
}

void randomize_biases(Model& m, Rng& rng) {
  for (auto& p : model_parameters(m)) {
    if (p.name.find("bias") != std::string::npos || p.name.find("beta") != std::string::npos) {
      for (double& v : p.value->values()) v = 0.3 * rng.normal();
    }
  }
}

TEST(Model, ParameterListIsStable) {
  Rng rng(1);
  Model m = make_model(small_dims(), AlignmentMode::Dsbn, 0.9, 1e-5, rng);
  const auto params = model_parameters(m);
  ModelGrad g = ModelGrad::zeros_like(m);
  const auto slots = g.slots();
  ASSERT_EQ(params.size(), 18u);
  ASSERT_EQ(slots.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_TRUE(params[i].value->same_shape(*slots[i])) << params[i].name;
  }
  EXPECT_EQ(m.metric.fc1.in_dim(), 5u + 3u);
  EXPECT_EQ(m.metric.norm1.mode, StatsMode::PerDomain);
  Rng rng2(1);
  EXPECT_EQ(make_model(small_dims(), AlignmentMode::SingleBn, 0.9, 1e-5, rng2).metric.norm1.mode,
            StatsMode::Shared);
}

TEST(Model, AlignmentModeNamesRoundTrip) {
  for (auto mode : {AlignmentMode::Dsbn, AlignmentMode::SingleBn, AlignmentMode::Mmd,
                    AlignmentMode::Dann, AlignmentMode::None}) {
    EXPECT_EQ(parse_alignment_mode(alignment_mode_name(mode)), mode);
  }
  EXPECT_THROW(parse_alignment_mode("bogus"), ConfigError);
}

TEST(Model, EncoderGradientMatchesFiniteDifferences) {
  Rng rng(2);
  Model m = make_model(small_dims(), AlignmentMode::Dsbn, 0.9, 1e-5, rng);
  randomize_biases(m, rng);
  const Matrix a = random_matrix(4, 4, rng), w = random_matrix(4, 3, rng);
  MlpGrad g{Matrix(6, 4), Matrix(1, 6), Matrix(3, 6), Matrix(1, 3)};
  const MlpForward f = encode(m, a);
  const Matrix da = mlp_backward(m.encoder, f.cache, w, g);
  EXPECT_LT(relative_error(da, finite_diff_grad([&](const Matrix& v) {
                             return weighted_sum(encode(m, v).output, w);
                           }, a)),
            1e-6);
  EXPECT_LT(relative_error(g.first_weight, finite_diff_grad([&](const Matrix& v) {
                             Model c = m;
                             c.encoder.first.weight = v;
                             return weighted_sum(encode(c, a).output, w);
                           }, m.encoder.first.weight)),
            1e-6);
  EXPECT_THROW(encode(m, Matrix(2, 3)), ShapeError);
  EXPECT_THROW(decode(m, Matrix(2, 4)), ShapeError);
}

TEST(Pairs, SourcePairsFollowBatchCategories) {
  Rng rng(3);
  const Matrix images = random_matrix(3, 2, rng);
  const Matrix embedded = random_matrix(6, 3, rng);
  const std::vector<std::size_t> labels{3, 5, 3};
  const PairBatch b = build_source_pairs(images, labels, embedded);
  EXPECT_EQ(b.categories, (std::vector<std::size_t>{3, 5}));
  EXPECT_EQ(b.size(), 6u);
  EXPECT_EQ(b.labels, (std::vector<double>{1, 0, 0, 1, 1, 0}));
  EXPECT_EQ(b.image_group, (std::vector<std::size_t>{0, 0, 1, 1, 2, 2}));
  EXPECT_EQ(b.category_index, (std::vector<std::size_t>{3, 5, 3, 5, 3, 5}));
  double positives = 0.0;
  for (double l : b.labels) positives += l;
  EXPECT_EQ(positives, 3.0);
  EXPECT_EQ(b.tag, DomainTag::Source);

  const Matrix rows = b.pair_matrix();
  ASSERT_EQ(rows.cols(), 5u);
  for (std::size_t p = 0; p < b.size(); ++p) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(rows(p, c), images(b.image_group[p], c));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(rows(p, 2 + c), embedded(b.category_index[p], c));
  }
}

TEST(Pairs, TargetPairsUseEveryCategory) {
  Rng rng(4);
  const PairBatch b = build_target_pairs(random_matrix(4, 2, rng), random_matrix(3, 5, rng));
  EXPECT_EQ(b.size(), 12u);
  EXPECT_EQ(b.categories, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(b.labels.empty());
  EXPECT_EQ(b.tag, DomainTag::Target);
}

TEST(Pairs, ScatterAttributeGradAddsIntoCategoryRows) {
  Rng rng(5);
  const std::vector<std::size_t> labels{4, 1, 4};
  const PairBatch b = build_source_pairs(random_matrix(3, 2, rng), labels, random_matrix(6, 2, rng));
  const Matrix d = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix full = scatter_attribute_grad(b, d, 6);
  Matrix expected(6, 2);
  expected(1, 0) = 1;
  expected(1, 1) = 2;
  expected(4, 0) = 3;
  expected(4, 1) = 4;
  EXPECT_EQ(full, expected);
}

class FactoredFirstLayer : public ::testing::TestWithParam<AlignmentMode> {};

TEST_P(FactoredFirstLayer, MatchesExplicitPairRows) {
  Rng rng(6);
  Model m = make_model(small_dims(), GetParam(), 0.9, 1e-5, rng);
  randomize_biases(m, rng);
  const Matrix emb = random_matrix(4, 3, rng);
  const std::vector<std::size_t> labels{0, 2, 2, 3, 1};
  const PairBatch b = build_source_pairs(random_matrix(5, 5, rng), labels, emb);
  metric_forward(m.metric, b, true);  // populate running statistics
  const PairBatch t = build_target_pairs(random_matrix(3, 5, rng), emb);
  metric_forward(m.metric, t, true);

  for (const PairBatch* batch : {&b, &t}) {
    const MetricForward fac = metric_forward_eval(m.metric, *batch);
    const MetricForward ref = metric_forward_eval(m.metric, batch->pair_matrix(), batch->tag);
    ASSERT_TRUE(fac.logits.same_shape(ref.logits));
    for (std::size_t i = 0; i < fac.logits.size(); ++i) {
      EXPECT_NEAR(fac.logits[i], ref.logits[i], 1e-12);
    }
    for (std::size_t i = 0; i < fac.hidden2.size(); ++i) {
      EXPECT_NEAR(fac.hidden2[i], ref.hidden2[i], 1e-12);
    }
  }
}

TEST_P(FactoredFirstLayer, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  Model m = make_model(small_dims(), GetParam(), 0.9, 1e-5, rng);
  randomize_biases(m, rng);
  const std::vector<std::size_t> labels{0, 2, 2, 1};
  const PairBatch b = build_source_pairs(random_matrix(4, 5, rng), labels, random_matrix(3, 3, rng));
  const Matrix w = random_matrix(b.size(), 1, rng);

  auto objective = [&](const MetricNet& net, const PairBatch& batch) {
    MetricNet c = net;
    return weighted_sum(metric_forward(c, batch, true).logits, w);
  };
  MetricNet net = m.metric;
  const MetricForward f = metric_forward(net, b, true);
  MetricGrad g = ModelGrad::zeros_like(m).metric;
  const PairGrad d = metric_backward(m.metric, f.cache, w, g);

  const Matrix ni = finite_diff_grad([&](const Matrix& v) {
    PairBatch c = b;
    c.images = v;
    return objective(m.metric, c);
  }, b.images);
  EXPECT_LT(relative_error(d.d_images, ni), 1e-5);
  const Matrix na = finite_diff_grad([&](const Matrix& v) {
    PairBatch c = b;
    c.attributes = v;
    return objective(m.metric, c);
  }, b.attributes);
  EXPECT_LT(relative_error(d.d_attributes, na), 1e-5);
  const Matrix nw = finite_diff_grad([&](const Matrix& v) {
    MetricNet c = m.metric;
    c.fc1.weight = v;
    return objective(c, b);
  }, m.metric.fc1.weight);
  EXPECT_LT(relative_error(g.fc1_weight, nw), 1e-5);
  const Matrix nh = finite_diff_grad([&](const Matrix& v) {
    MetricNet c = m.metric;
    c.head.weight = v;
    return objective(c, b);
  }, m.metric.head.weight);
  EXPECT_LT(relative_error(g.head_weight, nh), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Modes, FactoredFirstLayer,
                         ::testing::Values(AlignmentMode::Dsbn, AlignmentMode::SingleBn,
                                           AlignmentMode::None),
                         [](const auto& info) {
                           return std::string(alignment_mode_name(info.param));
                         });

TEST(Metric, TrainForwardUpdatesOnlyTaggedStatistics) {
  Rng rng(8);
  Model m = make_model(small_dims(), AlignmentMode::Dsbn, 0.9, 1e-5, rng);
  const PairBatch t = build_target_pairs(random_matrix(3, 5, rng), random_matrix(2, 3, rng));
  metric_forward(m.metric, t, true);
  EXPECT_FALSE(m.metric.norm1.stats[0].seen);
  EXPECT_TRUE(m.metric.norm1.stats[1].seen);
  EXPECT_TRUE(m.metric.norm2.stats[1].seen);
}

TEST(Metric, NoneModeSkipsNormalization) {
  Rng rng(9);
  Model m = make_model(small_dims(), AlignmentMode::None, 0.9, 1e-5, rng);
  const PairBatch t = build_target_pairs(random_matrix(3, 5, rng), random_matrix(2, 3, rng));
  const MetricForward f = metric_forward(m.metric, t, true);
  EXPECT_FALSE(f.cache.norm1.has_value());
  EXPECT_FALSE(m.metric.norm1.stats[0].seen);
  // Eval needs no statistics and agrees with the train pass.
  const MetricForward e = metric_forward_eval(m.metric, t);
  EXPECT_TRUE(bitwise_equal(f.logits, e.logits));
  for (std::size_t i = 0; i < f.scores.size(); ++i) EXPECT_EQ(f.scores[i], sigmoid(f.logits[i]));
}

TEST(Metric, EvalWithoutStatisticsIsRejected) {
  Rng rng(10);
  Model m = make_model(small_dims(), AlignmentMode::Dsbn, 0.9, 1e-5, rng);
  const PairBatch t = build_target_pairs(random_matrix(3, 5, rng), random_matrix(2, 3, rng));
  EXPECT_THROW(metric_forward_eval(m.metric, t), ValidationError);
}

}  // namespace
}  // namespace tsvr
