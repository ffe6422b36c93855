#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mvd/pipeline.hpp"
#include "mvd/teacher.hpp"
#include "mvd/train.hpp"

namespace mvd {
namespace {

struct ToySet {
  ViewRig rig = make_reduced_rig(4);
  std::vector<TrainingSample> samples;
};

ToySet toy_set(std::size_t per_class, std::size_t points, std::uint64_t seed, bool logits = true) {
  ToySet set;
  TeacherSettings ts;
  ts.out_dim = 8;
  ts.seed = seed;
  ts.splat.image_size = 64;
  const Tensor2 proj = teacher_projection(ts.out_dim, ts.seed);
  std::vector<TeacherKnowledge> tks;
  std::vector<int> labels;
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, c * 100 + i));
      TrainingSample s;
      s.shape_id = std::string(to_string(kAllPrimitives[c])) + std::to_string(i);
      s.label = static_cast<int>(c);
      s.cloud = generate_primitive(kAllPrimitives[c], points, 0.01, rng);
      auto views = procedural_teacher_views(s.cloud, set.rig, proj, ts, s.shape_id);
      s.masks = std::move(views.masks);
      tks.push_back(std::move(views.knowledge));
      labels.push_back(s.label);
      set.samples.push_back(std::move(s));
    }
  }
  if (logits) attach_centroid_logits(tks, labels, 4);
  for (std::size_t i = 0; i < tks.size(); ++i) set.samples[i].teacher = std::move(tks[i]);
  return set;
}

TrainConfig small_config(DistillMode mode, std::size_t epochs) {
  TrainConfig cfg;
  cfg.distill.mode = mode;
  cfg.encoder.widths = {3, 16, 32};
  cfg.encoder.head_hidden = {16};
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.adam.lr = 5e-3;
  cfg.seed = 3;
  return cfg;
}

TEST(Train, NoneModeHasZeroDistillationAndNoAlignLayer) {
  const auto set = toy_set(3, 32, 1);
  const auto r = train(set.samples, set.rig, 4, small_config(DistillMode::none, 3));
  ASSERT_EQ(r.metrics.size(), 3u);
  for (const auto& m : r.metrics) EXPECT_EQ(m.dist_loss, 0.0);
  EXPECT_FALSE(r.params.contains(kAlignWeight));
}

TEST(Train, NoneModeNeedsNoTeacher) {
  auto set = toy_set(2, 32, 1);
  for (auto& s : set.samples) s.teacher.reset();
  EXPECT_NO_THROW(train(set.samples, set.rig, 4, small_config(DistillMode::none, 1)));
  EXPECT_THROW(train(set.samples, set.rig, 4, small_config(DistillMode::vafp, 1)), MissingTeacher);
}

TEST(Train, SameSeedSameMetricsAndWeights) {
  const auto set = toy_set(3, 32, 2);
  for (auto mode : {DistillMode::vafp, DistillMode::feature, DistillMode::logit}) {
    auto cfg = small_config(mode, 2);
    cfg.distill.schedule = ViewSchedule::rand1;
    const auto a = train(set.samples, set.rig, 4, cfg);
    const auto b = train(set.samples, set.rig, 4, cfg);
    EXPECT_EQ(a.metrics, b.metrics) << to_string(mode);
    EXPECT_EQ(encode_checkpoint(a.params), encode_checkpoint(b.params)) << to_string(mode);
    EXPECT_GT(a.metrics.front().dist_loss, 0.0);
    cfg.seed = 4;
    EXPECT_NE(encode_checkpoint(train(set.samples, set.rig, 4, cfg).params), encode_checkpoint(a.params));
  }
}

TEST(Train, VafpReducesDistillationLoss) {
  const auto set = toy_set(4, 48, 3);
  const auto r = train(set.samples, set.rig, 4, small_config(DistillMode::vafp, 25));
  EXPECT_LT(r.metrics.back().dist_loss, 0.5 * r.metrics.front().dist_loss);
}

TEST(Train, MemorizesToySet) {
  const auto set = toy_set(3, 48, 4);
  auto cfg = small_config(DistillMode::none, 60);
  cfg.distill.task_weight = 1.0;
  auto r = train(set.samples, set.rig, 4, cfg);
  EXPECT_EQ(evaluate(r.params, set.samples).accuracy(), 1.0);
}

TEST(Train, LogitModeLeavesHeadToTheTaskLoss) {
  const auto set = toy_set(2, 32, 5);
  auto cfg = small_config(DistillMode::logit, 1);
  cfg.encoder.num_classes = 4;
  ParamStore store = init_training_params(cfg, 4);
  std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
  cfg.distill.task_weight = 0.0;
  cfg.distill.dist_weight = 1.0;
  Tape tape;
  const auto f = forward_batch(tape, store, cfg, set.samples, batch, set.rig.size());
  tape.backward(f.total);
  EXPECT_GT(tape.value(f.dist)(0, 0), 0.0);
  for (const auto& p : store.params()) {
    double mag = 0;
    for (double g : p.grad.data()) mag += std::abs(g);
    if (p.name.rfind("head.", 0) == 0) {
      EXPECT_EQ(mag, 0.0) << p.name;
    } else if (p.name == "enc.0.W") {
      EXPECT_GT(mag, 0.0);
    }
  }
}

TEST(Train, ValidatesTeachers) {
  auto set = toy_set(1, 32, 6, false);
  EXPECT_THROW(train(set.samples, set.rig, 4, small_config(DistillMode::logit, 1)), MissingTeacherField);
  EXPECT_THROW(train(set.samples, make_reduced_rig(6), 4, small_config(DistillMode::vafp, 1)), ShapeMismatch);
  set.samples[1].teacher->global_feature.reset();
  EXPECT_THROW(train(set.samples, set.rig, 4, small_config(DistillMode::feature, 1)), MissingTeacherField);
  set.samples[1].label = 9;
  EXPECT_THROW(train(set.samples, set.rig, 4, small_config(DistillMode::none, 1)), LabelOutOfRange);
}

TEST(Train, NonFiniteInputAbortsWithContext) {
  auto set = toy_set(1, 32, 7);
  set.samples[2].cloud.points[5].x = std::numeric_limits<double>::infinity();
  try {
    train(set.samples, set.rig, 4, small_config(DistillMode::none, 1));
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, MetricsFormat) {
  EXPECT_EQ(format_metrics({{1, 1.5, 0.25, 0.5}, {2, 1.0 / 3.0, 0, 1}}),
            "1\t1.500000\t0.250000\t0.500000\n2\t0.333333\t0.000000\t1.000000\n");
}

TEST(Evaluate, RandomLabelsGiveChanceAccuracy) {
  ParamStore store;
  EncoderConfig cfg;
  cfg.widths = {3, 16, 16};
  cfg.head_hidden = {};
  cfg.num_classes = 4;
  init_student(store, cfg);
  std::vector<TrainingSample> samples;
  Rng rng(8);
  for (int i = 0; i < 800; ++i) {
    TrainingSample s;
    s.cloud = generate_primitive(kAllPrimitives[i % 4], 32, 0.05, rng);
    s.label = static_cast<int>(rng.index(4));
    samples.push_back(std::move(s));
  }
  const auto r = evaluate(store, samples);
  EXPECT_EQ(r.total, 800u);
  // 4 sigma of Binomial(800, 1/4).
  EXPECT_NEAR(r.accuracy(), 0.25, 4.0 * std::sqrt(0.25 * 0.75 / 800));
}

TEST(PipelineCheck, FullLossGradientsMatch) {
  PipelineCheckConfig cfg;
  cfg.train.encoder.widths = {3, 16, 32};
  cfg.train.encoder.head_hidden = {16};
  cfg.train.seed = 5;
  for (auto schedule : {ViewSchedule::all, ViewSchedule::rand1}) {
    cfg.train.distill.schedule = schedule;
    const auto report = pipeline_grad_check(cfg);
    EXPECT_TRUE(report.passed) << report.summary();
  }
  cfg.train.distill.mode = DistillMode::feature;
  EXPECT_TRUE(pipeline_grad_check(cfg).passed);
}

}  // namespace
}  // namespace mvd
