#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvd/dataset.hpp"
#include "mvd/gradcheck.hpp"
#include "mvd/teacher.hpp"
#include "mvd/train.hpp"

namespace mvd {

/// Seeded end-to-end gradient check: procedural primitives, a procedural
/// teacher on a small rig, and the full training loss of one batch.
struct PipelineCheckConfig {
  std::size_t clouds = 4;
  std::size_t points = 64;
  std::size_t classes = 4;
  int views = 4;
  std::size_t teacher_dim = 16;
  TrainConfig train{};
  GradCheckOptions check{};

  void validate() const {
    if (clouds == 0 || classes == 0) throw InvalidArgument("need at least one cloud and one class");
    if (points < 32) throw InvalidArgument("need at least 32 points per cloud");
    if (teacher_dim == 0) throw InvalidArgument("teacher width must be positive");
    if (!(check.h > 0.0) || !(check.tolerance > 0.0)) throw InvalidArgument("step and tolerance must be positive");
  }
};

struct PipelineCheck {
  ViewRig rig;
  std::vector<TrainingSample> samples;
  TrainConfig train;
  ParamStore params;
  std::vector<std::size_t> active;  // fixed rand1 draws
};

inline ViewRig rig_for_count(int views) {
  if (views == 12) return make_classification_rig();
  if (views == 16) return make_segmentation_rig();
  return make_reduced_rig(views);
}

inline PipelineCheck make_pipeline_check(const PipelineCheckConfig& cfg) {
  cfg.validate();
  PipelineCheck pc{rig_for_count(cfg.views), {}, cfg.train, {}, {}};
  pc.train.encoder.num_classes = cfg.classes;
  pc.train.validate();
  const std::uint64_t seed = pc.train.seed;
  TeacherSettings ts;
  ts.out_dim = cfg.teacher_dim;
  ts.seed = seed;
  const Tensor2 projection = teacher_projection(ts.out_dim, ts.seed);
  std::vector<TeacherKnowledge> teachers;
  std::vector<int> labels;
  for (std::size_t i = 0; i < cfg.clouds; ++i) {
    Rng rng(derive_seed(seed, 0xC0DE + i));
    TrainingSample s;
    s.label = static_cast<int>(i % cfg.classes);
    s.shape_id = "check_" + std::to_string(i);
    s.cloud = generate_primitive(kAllPrimitives[i % kAllPrimitives.size()], cfg.points, 0.01, rng);
    auto views = procedural_teacher_views(s.cloud, pc.rig, projection, ts, s.shape_id);
    s.masks = std::move(views.masks);
    teachers.push_back(std::move(views.knowledge));
    labels.push_back(s.label);
    pc.samples.push_back(std::move(s));
  }
  attach_centroid_logits(teachers, labels, cfg.classes);
  for (std::size_t i = 0; i < teachers.size(); ++i) pc.samples[i].teacher = std::move(teachers[i]);

  std::size_t align_out = 0;
  detail::check_teachers(pc.samples, pc.rig, pc.train.distill.mode, cfg.classes, align_out);
  pc.params = init_training_params(pc.train, align_out);
  if (pc.train.distill.schedule == ViewSchedule::rand1) {
    Rng rng(derive_seed(seed, 0xD4A));
    for (std::size_t i = 0; i < pc.samples.size(); ++i) pc.active.push_back(sample_random_view(pc.rig, rng));
  }
  return pc;
}

inline BranchedLossClosure pipeline_loss(PipelineCheck& pc) {
  return [&pc](ParamStore& store, bool backward) {
    std::vector<std::size_t> batch(pc.samples.size());
    std::iota(batch.begin(), batch.end(), 0);
    Tape tape;
    const auto f = forward_batch(tape, store, pc.train, pc.samples, batch, pc.rig.size(), pc.active);
    if (backward) tape.backward(f.total);
    return LossEval{tape.value(f.total)(0, 0), tape.branch_signature()};
  };
}

inline GradCheckReport pipeline_grad_check(const PipelineCheckConfig& cfg) {
  auto pc = make_pipeline_check(cfg);
  GradCheckOptions opt = cfg.check;
  opt.seed = derive_seed(pc.train.seed, 0x6C);
  return grad_check(pipeline_loss(pc), pc.params, opt);
}

}  // namespace mvd
