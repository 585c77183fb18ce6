#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsvr/error.hpp"
#include "tsvr/inference.hpp"
#include "tsvr/training.hpp"

namespace tsvr {
namespace {

using testing::random_matrix;

TEST(Argmax, RowsAndTies) {
  const Matrix s = Matrix::from_rows({{0.1, 0.9, 0.3}, {0.4, 0.4, 0.4}, {0.2, 0.7, 0.7}});
  EXPECT_EQ(predict_argmax(s), (std::vector<std::size_t>{1, 0, 1}));
}

TEST(Argmax, InvariantUnderIncreasingTransform) {
  Rng rng(1);
  const Matrix z = random_matrix(20, 6, rng, 3.0);
  EXPECT_EQ(predict_argmax(z), predict_argmax(sigmoid(z)));
}

TEST(Mca, TwoClassesOneAndHalf) {
  const std::vector<std::size_t> truth{0, 0, 1, 1}, pred{0, 0, 1, 0};
  const PredictionResult r = mca(pred, truth, 2);
  EXPECT_NEAR(r.mca, 0.75, 1e-12);
  EXPECT_EQ(r.per_class_accuracy, (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(mca(truth, truth, 2).mca, 1.0);
}

TEST(Mca, ImbalancedClassesDifferFromOverallAccuracy) {
  // Per-class accuracies 3/3, 0/1, 1/2.
  const std::vector<std::size_t> truth{0, 0, 0, 1, 2, 2};
  const std::vector<std::size_t> pred{0, 0, 0, 0, 2, 1};
  const PredictionResult r = mca(pred, truth, 3);
  EXPECT_NEAR(r.mca, 0.5, 1e-12);
  EXPECT_NEAR(r.overall_accuracy, 4.0 / 6.0, 1e-12);
}

TEST(Mca, DuplicatingAClassLeavesMcaUnchanged) {
  std::vector<std::size_t> truth{0, 0, 1, 1, 1, 2}, pred{0, 1, 1, 1, 0, 2};
  const double before = mca(pred, truth, 3).mca;
  for (std::size_t i = 0; i < 6; ++i) {
    if (truth[i] == 1) {
      truth.push_back(1);
      pred.push_back(pred[i]);
    }
  }
  EXPECT_NEAR(mca(pred, truth, 3).mca, before, 1e-15);
}

TEST(Mca, EmptyClassIsAnError) {
  const std::vector<std::size_t> truth{0, 0}, pred{0, 1};
  EXPECT_THROW(mca(pred, truth, 2), ValidationError);
  EXPECT_THROW(mca(pred, truth, 3), ValidationError);
}

TEST(AverageEntropy, UniformRows) {
  EXPECT_NEAR(average_entropy(Matrix(3, 4)), std::log(4.0), 1e-15);
}

TEST(Propagate, SmallOmegaKeepsInitialScores) {
  const AffinityGraph g = AffinityGraph::from_dense(Matrix::from_rows({{0, 1}, {1, 0}}));
  const Matrix y0 = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
  const Matrix f0 = propagate(g, y0, 0.0, 10);
  EXPECT_TRUE(bitwise_equal(f0, y0));
  const Matrix f = propagate(g, y0, 1e-9, 10);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], y0[i], 1e-8);
}

TEST(Propagate, ThreeNodeChainOneIteration) {
  const AffinityGraph g =
      AffinityGraph::from_dense(Matrix::from_rows({{0, 0.5, 0}, {0.5, 0, 0.25}, {0, 0.25, 0}}));
  const Matrix y0 = Matrix::from_rows({{1, 0}, {0, 1}, {0.5, 0.5}});
  const Matrix f = propagate(g, y0, 0.8, 1);
  const Matrix expected = Matrix::from_rows({{0.2, 0.4}, {0.5, 0.3}, {0.1, 0.3}});
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], expected[i], 1e-12);
}

TEST(Propagate, IdenticalPointsApproachClosedForm) {
  const Matrix x = Matrix::from_rows({{1, 2, 3}, {1, 2, 3}});
  const AffinityGraph g = build_affinity_graph(x, 1);
  const Matrix s = g.dense();
  EXPECT_NEAR(s(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(s(1, 0), 1.0, 1e-15);

  const double w = 0.9;
  const Matrix y0 = Matrix::from_rows({{0.9, 0.1}, {0.1, 0.9}});
  // (I - wS)^-1 for S = [[0,1],[1,0]] is [[1, w], [w, 1]] / (1 - w^2).
  Matrix closed(2, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    closed(0, c) = (1 - w) * (y0(0, c) + w * y0(1, c)) / (1 - w * w);
    closed(1, c) = (1 - w) * (w * y0(0, c) + y0(1, c)) / (1 - w * w);
  }
  double prev_gap = INFINITY;
  for (std::size_t iters : {1, 5, 20, 100, 400}) {
    const Matrix f = propagate(g, y0, w, iters);
    const double gap = max_abs(subtract(f, closed));
    EXPECT_LT(gap, prev_gap);
    prev_gap = gap;
    // The two rows move toward each other.
    EXPECT_LT(std::abs(f(0, 0) - f(1, 0)), std::abs(y0(0, 0) - y0(1, 0)));
  }
  EXPECT_LT(prev_gap, 1e-12);
  EXPECT_NEAR(closed(0, 0) - closed(1, 0), (1 - w) / (1 + w) * 0.8, 1e-15);
}

TEST(AffinityGraph, MutualSymmetricNormalized) {
  Rng rng(3);
  const Matrix x = random_matrix(30, 5, rng);
  const AffinityGraph g = build_affinity_graph(x, 4);
  const Matrix s = g.dense();
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(s(i, i), 0.0);
    std::size_t degree = 0;
    for (std::size_t j = 0; j < 30; ++j) {
      EXPECT_EQ(s(i, j), s(j, i));
      EXPECT_GE(s(i, j), 0.0);
      degree += s(i, j) != 0.0;
    }
    EXPECT_LE(degree, 4u);
  }
  // Spectral radius of D^-1/2 W D^-1/2 is at most 1: power iteration stays bounded.
  Matrix v(30, 1, 1.0);
  for (int it = 0; it < 50; ++it) v = matmul(s, v);
  EXPECT_LE(frobenius_norm(v), std::sqrt(30.0) + 1e-9);
}

TEST(AffinityGraph, ZeroNormRowsAreIsolated) {
  Matrix x = Matrix::from_rows({{1, 0}, {0, 0}, {1, 0.1}, {0.9, 0.2}});
  const AffinityGraph g = build_affinity_graph(x, 2);
  EXPECT_EQ(g.isolated, (std::vector<std::size_t>{1}));
  EXPECT_TRUE(g.rows[1].empty());
  const Matrix y0 = Matrix::from_rows({{1, 0}, {0.3, 0.7}, {0, 1}, {0.5, 0.5}});
  const Matrix f = propagate(g, y0, 0.5, 5);
  // No neighbours: the row settles at (1 - omega) * Y0 after one step.
  EXPECT_NEAR(f(1, 0), 0.15, 1e-15);
  EXPECT_NEAR(f(1, 1), 0.35, 1e-15);
}

TEST(AffinityGraph, RejectsBadK) {
  const Matrix x(3, 2, 1.0);
  EXPECT_THROW(build_affinity_graph(x, 0), ValidationError);
  EXPECT_THROW(build_affinity_graph(x, 3), ValidationError);
}

TEST(LabelPropagation, RejectsOmegaOutsideOpenInterval) {
  ScoreMatrix raw{Matrix(4, 2, 0.5), Matrix(4, 2)};
  Rng rng(4);
  const Matrix x = random_matrix(4, 3, rng);
  LabelPropagationConfig cfg;
  cfg.k = 2;
  cfg.omega = 1.0;
  EXPECT_THROW(label_propagation(raw, x, cfg), ValidationError);
  cfg.omega = 0.5;
  const RefinedScores r = label_propagation(raw, x, cfg);
  for (double v : r.scores.values()) EXPECT_NEAR(v, 0.5, 1e-12);
}

class Scoring : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticSpec spec;
    spec.source_classes = 5;
    spec.target_classes = 4;
    spec.feature_dim = 6;
    spec.attribute_dim = 5;
    spec.samples_per_class = 80;  // 320 target images: more than one chunk
    data_ = generate_synthetic(spec).dataset;
    TrainConfig cfg;
    cfg.max_iterations = 10;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.encoder_hidden = 7;
    cfg.metric_hidden = 9;
    model_ = train(data_, cfg).model;
  }
  ZslDataset data_;
  Model model_;
};

TEST_F(Scoring, MatchesExplicitPairEvaluation) {
  const ScoreMatrix s = score_target(model_, data_);
  ASSERT_EQ(s.scores.rows(), data_.target_features.rows());
  ASSERT_EQ(s.scores.cols(), 4u);
  const Matrix emb = encode(model_, data_.target_attributes).output;
  for (std::size_t i : {std::size_t{0}, std::size_t{255}, std::size_t{256}, std::size_t{319}}) {
    for (std::size_t c = 0; c < 4; ++c) {
      const Matrix pair = concat_cols(gather_rows(data_.target_features, std::vector<std::size_t>{i}),
                                      gather_rows(emb, std::vector<std::size_t>{c}));
      const MetricForward f = metric_forward_eval(model_.metric, pair, DomainTag::Target);
      EXPECT_NEAR(s.logits(i, c), f.logits[0], 1e-12);
      EXPECT_EQ(s.scores(i, c), sigmoid(s.logits(i, c)));
    }
  }
}

TEST_F(Scoring, PureAndChunkIndependent) {
  const ScoreMatrix a = score_target(model_, data_), b = score_target(model_, data_);
  EXPECT_TRUE(bitwise_equal(a.logits, b.logits));
  std::vector<std::size_t> tail;
  for (std::size_t i = 250; i < 320; ++i) tail.push_back(i);
  const ScoreMatrix part =
      score_images(model_, data_.target_attributes, gather_rows(data_.target_features, tail));
  EXPECT_TRUE(bitwise_equal(part.logits, gather_rows(a.logits, tail)));
}

TEST_F(Scoring, RejectsWrongFeatureWidth) {
  EXPECT_THROW(score_images(model_, data_.target_attributes, Matrix(3, 5)), ShapeError);
}

TEST_F(Scoring, DumpWritesFourActivationFiles) {
  testing::TempDir dir("dump");
  const auto pred = predict_argmax(score_target(model_, data_).scores);
  dump_hidden_activations(model_, data_, pred, dir.path());
  for (const char* name : {"hidden1_source.mtxb", "hidden2_source.mtxb", "hidden1_target.mtxb",
                           "hidden2_target.mtxb"}) {
    const Matrix m = load_matrix_mtxb(dir / name);
    EXPECT_EQ(m.cols(), 9u) << name;
  }
  EXPECT_EQ(load_matrix_mtxb(dir / "hidden2_target.mtxb").rows(), 320u);
}

}  // namespace
}  // namespace tsvr
