#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mvd/dataset.hpp"
#include "mvd/distill.hpp"
#include "mvd/encoder.hpp"
#include "mvd/parallel.hpp"
#include "mvd/params.hpp"
#include "mvd/visibility.hpp"

namespace mvd {

struct TrainingSample {
  std::string shape_id;
  PointCloud cloud;
  int label = 0;
  std::vector<VisibilityMask> masks;  // one per rig view; empty when unused
  std::optional<TeacherKnowledge> teacher;
};

struct LoadOptions {
  bool need_masks = false;
  std::filesystem::path teacher_dir;  // empty: no teacher records
  std::filesystem::path masks_dir;    // precomputed masks, used when present
  double flip_factor = kDefaultFlipFactor;
  std::size_t threads = 1;
};

/// Loads every manifest entry in manifest order (workers only fill slots).
inline std::vector<TrainingSample> load_samples(const DatasetManifest& manifest, const std::filesystem::path& root,
                                                const ViewRig& rig, const LoadOptions& opt) {
  validate_manifest(manifest);
  std::vector<TrainingSample> samples(manifest.entries.size());
  parallel_for(samples.size(), opt.threads, [&](std::size_t i) {
    const auto& entry = manifest.entries[i];
    TrainingSample& s = samples[i];
    s.shape_id = shape_id_of(entry);
    s.cloud = read_xyz(root / entry.path);
    s.label = entry.label;
    if (opt.need_masks) {
      const auto cached = opt.masks_dir.empty() ? std::filesystem::path{} : opt.masks_dir / (s.shape_id + ".mvm");
      if (!cached.empty() && std::filesystem::exists(cached)) {
        auto set = read_masks(cached);
        if (set.masks.size() != rig.size() || set.num_anchors != s.cloud.size()) {
          throw ShapeMismatch("mask file " + cached.string() + " does not match the rig or cloud");
        }
        s.masks = std::move(set.masks);
      } else {
        s.masks = compute_rig_masks(s.cloud, rig, opt.flip_factor);
      }
    }
    if (!opt.teacher_dir.empty()) {
      const auto path = opt.teacher_dir / (s.shape_id + ".tkd");
      if (!std::filesystem::exists(path)) throw MissingTeacher("no teacher file " + path.string());
      s.teacher = read_tkd(path);
      if (s.teacher->shape_id != s.shape_id) {
        throw ShapeMismatch("teacher file " + path.string() + " holds shape " + s.teacher->shape_id);
      }
    }
  });
  return samples;
}

struct TrainConfig {
  DistillConfig distill{};
  EncoderConfig encoder{};
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  AdamConfig adam{};
  std::uint64_t seed = 0;

  void validate() const {
    distill.validate();
    encoder.validate();
    if (epochs == 0) throw InvalidArgument("epochs must be positive");
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (!(adam.lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double dist_loss = 0.0;
  double train_accuracy = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

inline std::string format_metrics_line(const EpochMetrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\n", m.epoch, m.task_loss, m.dist_loss, m.train_accuracy);
  return buf;
}

inline std::string format_metrics(const std::vector<EpochMetrics>& metrics) {
  std::string out;
  for (const auto& m : metrics) out += format_metrics_line(m);
  return out;
}

struct TrainResult {
  ParamStore params;
  std::vector<EpochMetrics> metrics;
  std::size_t empty_views = 0;  // views skipped or replaced by the global fallback
};

namespace detail {

inline void check_teachers(const std::vector<TrainingSample>& samples, const ViewRig& rig, DistillMode mode,
                           std::size_t num_classes, std::size_t& align_out) {
  align_out = 0;
  if (mode == DistillMode::none) return;
  for (const auto& s : samples) {
    if (!s.teacher) throw MissingTeacher("no teacher knowledge for " + s.shape_id);
    const auto& tk = *s.teacher;
    std::size_t width = 0;
    switch (mode) {
      case DistillMode::vafp:
        if (tk.num_views() != rig.size()) {
          throw ShapeMismatch(s.shape_id + ": teacher has " + std::to_string(tk.num_views()) + " views, rig has " +
                              std::to_string(rig.size()));
        }
        if (s.masks.size() != rig.size()) throw ShapeMismatch(s.shape_id + ": masks missing for vafp");
        width = tk.descriptor_dim();
        break;
      case DistillMode::feature:
        if (!tk.global_feature) throw MissingTeacherField("feature mode needs a global feature in " + s.shape_id);
        width = tk.global_feature->cols();
        break;
      case DistillMode::logit:
        if (!tk.logits) throw MissingTeacherField("logit mode needs logits in " + s.shape_id);
        if (tk.logits->cols() != num_classes) throw ShapeMismatch(s.shape_id + ": teacher logit width");
        width = num_classes;
        break;
      case DistillMode::none: break;
    }
    if (align_out == 0) align_out = width;
    if (width != align_out) throw ShapeMismatch(s.shape_id + ": teacher width differs from other shapes");
  }
}

inline Tensor2 stack_points(const std::vector<TrainingSample>& samples, std::span<const std::size_t> batch,
                            std::vector<std::uint32_t>& offsets) {
  std::size_t rows = 0;
  offsets.clear();
  for (auto i : batch) {
    offsets.push_back(static_cast<std::uint32_t>(rows));
    rows += samples[i].cloud.size();
  }
  Tensor2 x(rows, 3);
  std::size_t r = 0;
  for (auto i : batch) {
    for (const auto& p : samples[i].cloud.points) {
      x(r, 0) = p.x;
      x(r, 1) = p.y;
      x(r, 2) = p.z;
      ++r;
    }
  }
  return x;
}

inline std::vector<Var> pool_each(Tape& tape, Var features, const std::vector<TrainingSample>& samples,
                                  std::span<const std::size_t> batch, const std::vector<std::uint32_t>& offsets) {
  std::vector<Var> pooled;
  std::vector<std::uint32_t> rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    rows.resize(samples[batch[b]].cloud.size());
    std::iota(rows.begin(), rows.end(), offsets[b]);
    pooled.push_back(global_descriptor(tape, nn::gather_rows(tape, features, rows)));
  }
  return pooled;
}

inline std::size_t argmax_row(const Tensor2& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c) {
    if (t(r, c) > t(r, best)) best = c;
  }
  return best;
}

}  // namespace detail

/// Loss graph of one mini-batch.
struct BatchForward {
  Var total, task, dist, logits;
  std::size_t empty_views = 0;
};

/// Student parameters for `cfg` plus the alignment layer the mode needs.
inline ParamStore init_training_params(const TrainConfig& cfg, std::size_t align_out) {
  ParamStore store;
  EncoderConfig enc = cfg.encoder;
  enc.seed = derive_seed(cfg.seed, 1);
  init_student(store, enc);
  if (cfg.distill.mode == DistillMode::vafp || cfg.distill.mode == DistillMode::feature) {
    init_align(store, enc.feature_dim(), align_out, derive_seed(cfg.seed, 2));
  }
  return store;
}

/// Builds  w_t * CE + w_d * (mean over the batch of the distillation loss).
/// `active[b]` restricts sample b to one view (vafp); SIZE_MAX or an empty
/// span means every view. The head only sees the task loss.
inline BatchForward forward_batch(Tape& tape, ParamStore& store, const TrainConfig& cfg,
                                  const std::vector<TrainingSample>& samples, std::span<const std::size_t> batch,
                                  std::size_t num_views, std::span<const std::size_t> active = {}) {
  const DistillMode mode = cfg.distill.mode;
  const double bsize = static_cast<double>(batch.size());
  BatchForward f;
  std::vector<std::uint32_t> offsets;
  const auto vars = bind_student(tape, store, cfg.encoder);
  const Var features = encode(tape, vars, tape.constant(detail::stack_points(samples, batch, offsets)));
  const Var global = nn::concat_rows(tape, detail::pool_each(tape, features, samples, batch, offsets));
  f.logits = classify(tape, vars, global);
  std::vector<int> labels;
  for (auto i : batch) labels.push_back(samples[i].label);
  f.task = nn::softmax_cross_entropy(tape, f.logits, labels);

  f.dist = tape.constant(Tensor2(1, 1, 0.0));
  if (mode == DistillMode::vafp) {
    const auto align = bind_align(tape, store);
    std::optional<Var> sum;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& s = samples[batch[b]];
      std::vector<std::size_t> views;
      if (b < active.size() && active[b] != SIZE_MAX) views.push_back(active[b]);
      const auto out = vafp_project(tape, features, s.masks, align, cfg.distill.empty_view_policy, views, offsets[b],
                                    static_cast<std::uint32_t>(s.cloud.size()));
      f.empty_views += out.empty_views;
      const Var l = vafp_distill_loss(tape, out, *s.teacher, cfg.distill.l2_normalize);
      sum = sum ? nn::add(tape, *sum, l) : l;
    }
    f.dist = nn::scale(tape, *sum, 1.0 / bsize);
  } else if (mode == DistillMode::feature || mode == DistillMode::logit) {
    const bool feature = mode == DistillMode::feature;
    const auto& first = *samples[batch[0]].teacher;
    Tensor2 target(batch.size(), feature ? first.global_feature->cols() : first.logits->cols());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& tk = *samples[batch[b]].teacher;
      auto src = feature ? tk.global_feature->row(0) : tk.logits->row(0);
      std::copy(src.begin(), src.end(), target.row(b).begin());
    }
    Var student;
    if (feature) {
      const auto align = bind_align(tape, store);
      student = nn::linear(tape, global, align.weight, align.bias);
    } else {
      student = classify(tape, frozen_head(tape, store, vars), global);
    }
    f.dist = nn::scale(tape, nn::l1_loss(tape, student, tape.constant(std::move(target))), 1.0 / bsize);
  }
  f.total = overall_loss(tape, f.task, f.dist, cfg.distill, num_views);
  return f;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch Adam over seeded shuffles. Deterministic for a fixed seed.
inline TrainResult train(const std::vector<TrainingSample>& samples, const ViewRig& rig, std::size_t num_classes,
                         TrainConfig cfg, const EpochCallback& on_epoch = {}) {
  cfg.encoder.num_classes = num_classes;
  cfg.validate();
  if (samples.empty()) throw EmptyInput("no training samples");
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw LabelOutOfRange(s.shape_id + ": label " + std::to_string(s.label));
    }
    if (s.cloud.points.empty()) throw EmptyInput(s.shape_id + ": empty cloud");
  }
  std::size_t align_out = 0;
  detail::check_teachers(samples, rig, cfg.distill.mode, num_classes, align_out);

  TrainResult result;
  result.params = init_training_params(cfg, align_out);
  ParamStore& store = result.params;
  Rng order_rng(derive_seed(cfg.seed, 3));
  Rng view_rng(derive_seed(cfg.seed, 4));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> active;
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double task_sum = 0.0, dist_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch_no = 1; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const double bsize = static_cast<double>(batch.size());
      active.clear();
      if (cfg.distill.schedule == ViewSchedule::rand1) {
        for (std::size_t b = 0; b < batch.size(); ++b) active.push_back(sample_random_view(rig, view_rng));
      }
      const auto where = [&] { return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no); };
      try {
        Tape tape;
        const auto f = forward_batch(tape, store, cfg, samples, batch, rig.size(), active);
        const double total = tape.value(f.total)(0, 0);
        if (!std::isfinite(total)) throw NonFiniteLoss("loss is " + std::to_string(total));
        result.empty_views += f.empty_views;
        task_sum += tape.value(f.task)(0, 0) * bsize;
        dist_sum += tape.value(f.dist)(0, 0) * bsize;
        const Tensor2& lv = tape.value(f.logits);
        for (std::size_t b = 0; b < batch.size(); ++b) {
          if (detail::argmax_row(lv, b) == static_cast<std::size_t>(samples[batch[b]].label)) ++correct;
        }
        store.zero_grad();
        tape.backward(f.total);
        adam_step(store, cfg.adam, ++step);
      } catch (const NonFiniteValue& e) {
        throw NonFiniteLoss(where() + ": " + e.what());
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss(where() + ": " + e.what());
      }
    }
    const double n = static_cast<double>(samples.size());
    EpochMetrics m{epoch, task_sum / n, dist_sum / n, static_cast<double>(correct) / n};
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<int> predictions;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Single-pass argmax accuracy, no voting or augmentation.
inline EvalResult evaluate(ParamStore& store, const std::vector<TrainingSample>& samples, std::size_t batch_size = 64) {
  if (samples.empty()) throw EmptyInput("no evaluation samples");
  const auto cfg = infer_encoder_config(store);
  EvalResult r;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint32_t> offsets;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::span<const std::size_t> batch(order.data() + start, std::min(batch_size, order.size() - start));
    Tape tape;
    const auto vars = bind_student(tape, store, cfg);
    const Var features = encode(tape, vars, tape.constant(detail::stack_points(samples, batch, offsets)));
    const Var logits = classify(tape, vars, nn::concat_rows(tape, detail::pool_each(tape, features, samples, batch, offsets)));
    const Tensor2& lv = tape.value(logits);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto label = samples[batch[b]].label;
      if (label < 0 || static_cast<std::size_t>(label) >= cfg.num_classes) {
        throw LabelOutOfRange(samples[batch[b]].shape_id + ": label " + std::to_string(label));
      }
      const auto pred = static_cast<int>(detail::argmax_row(lv, b));
      r.predictions.push_back(pred);
      if (pred == label) ++r.correct;
      ++r.total;
    }
  }
  return r;
}

}  // namespace mvd
