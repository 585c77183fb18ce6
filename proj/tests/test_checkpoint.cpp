#include <fstream>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsvr/error.hpp"
#include "tsvr/training.hpp"

namespace tsvr {
namespace {

ZslDataset dataset() {
  SyntheticSpec spec;
  spec.source_classes = 5;
  spec.target_classes = 3;
  spec.feature_dim = 8;
  spec.attribute_dim = 5;
  spec.samples_per_class = 9;
  return generate_synthetic(spec).dataset;
}

TrainConfig config(AlignmentMode mode) {
  TrainConfig cfg;
  cfg.max_iterations = 30;
  cfg.batch_size = 7;
  cfg.learning_rate = 1e-3;
  cfg.encoder_hidden = 6;
  cfg.metric_hidden = 9;
  cfg.domain_classifier_hidden = 4;
  cfg.lambda_ent = 0.05;
  cfg.lambda_rec = 0.05;
  cfg.alignment_mode = mode;
  cfg.seed = 13;
  return cfg;
}

class CheckpointModes : public ::testing::TestWithParam<AlignmentMode> {};

TEST_P(CheckpointModes, RoundTripIsBitExact) {
  const ZslDataset d = dataset();
  const TrainingView view(d);
  TrainingState s = init_training(config(GetParam()), view);
  run_training(s, view);
  const auto bytes = encode_checkpoint(s);
  const TrainingState back = decode_checkpoint(bytes, "memory");
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto pa = model_parameters(s.model);
  const auto pb = model_parameters(back.model);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(*pa[i].value, *pb[i].value)) << pa[i].name;
  }
  for (int slot = 0; slot < 2; ++slot) {
    EXPECT_TRUE(bitwise_equal(s.model.metric.norm2.stats[slot].stddev,
                              back.model.metric.norm2.stats[slot].stddev));
    EXPECT_EQ(s.model.metric.norm1.stats[slot].seen, back.model.metric.norm1.stats[slot].seen);
  }
  EXPECT_EQ(back.optimizer.step, s.optimizer.step);
  EXPECT_TRUE(bitwise_equal(back.optimizer.slots[3].v, s.optimizer.slots[3].v));
  EXPECT_EQ(back.rng, s.rng);
  EXPECT_EQ(back.iteration, 30u);
  EXPECT_EQ(back.source_sampler.order(), s.source_sampler.order());
  EXPECT_EQ(back.target_sampler.cursor(), s.target_sampler.cursor());
  EXPECT_EQ(back.config.alignment_mode, GetParam());
  EXPECT_EQ(back.domain_classifier.has_value(), GetParam() == AlignmentMode::Dann);
}

TEST_P(CheckpointModes, ResumeEqualsUninterruptedRun) {
  const ZslDataset d = dataset();
  const TrainingView view(d);
  TrainConfig cfg = config(GetParam());
  cfg.max_iterations = 150;
  TrainingState straight = init_training(cfg, view);
  run_training(straight, view);

  cfg.max_iterations = 50;
  TrainingState first = init_training(cfg, view);
  run_training(first, view);
  testing::TempDir dir("ckpt");
  save_checkpoint(first, dir / "mid.tsvr");
  TrainingState resumed = load_checkpoint(dir / "mid.tsvr");
  resumed.config.max_iterations = 150;
  run_training(resumed, view);
  resumed.config.max_iterations = straight.config.max_iterations;
  EXPECT_EQ(encode_checkpoint(resumed), encode_checkpoint(straight));
}

INSTANTIATE_TEST_SUITE_P(Modes, CheckpointModes,
                         ::testing::Values(AlignmentMode::Dsbn, AlignmentMode::None,
                                           AlignmentMode::Dann),
                         [](const auto& info) {
                           return std::string(alignment_mode_name(info.param));
                         });

TEST(Checkpoint, TruncationNamesTheSection) {
  const ZslDataset d = dataset();
  const TrainingView view(d);
  TrainingState s = init_training(config(AlignmentMode::Dsbn), view);
  const auto bytes = encode_checkpoint(s);
  for (std::size_t cut : {std::size_t{5}, bytes.size() / 3, bytes.size() / 2, bytes.size() - 3}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      decode_checkpoint(part, "cut.tsvr");
      FAIL() << "cut at " << cut;
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      EXPECT_NE(msg.find("cut.tsvr"), std::string::npos) << msg;
      if (cut > 20) EXPECT_NE(msg.find("section"), std::string::npos) << msg;
    }
  }
}

TEST(Checkpoint, RejectsBadMagicAndTrailingBytes) {
  const ZslDataset d = dataset();
  const TrainingView view(d);
  const auto bytes = encode_checkpoint(init_training(config(AlignmentMode::Dsbn), view));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad, "bad"), FormatError);
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_checkpoint(longer, "long"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.tsvr"), InputError);
}

TEST(Checkpoint, FileStartsWithMagic) {
  const ZslDataset d = dataset();
  const TrainingView view(d);
  testing::TempDir dir("magic");
  save_checkpoint(init_training(config(AlignmentMode::Dsbn), view), dir / "c.tsvr");
  std::ifstream in(dir / "c.tsvr", std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "TSVRCKPT");
}

}  // namespace
}  // namespace tsvr
