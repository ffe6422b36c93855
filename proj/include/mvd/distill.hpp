#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvd/encoder.hpp"
#include "mvd/error.hpp"
#include "mvd/knowledge.hpp"
#include "mvd/params.hpp"
#include "mvd/tape.hpp"
#include "mvd/visibility.hpp"

namespace mvd {

enum class DistillMode { vafp, feature, logit, none };
enum class ViewSchedule { all, rand1 };
enum class EmptyViewPolicy { skip_renormalize, global_fallback };

inline std::optional<DistillMode> parse_distill_mode(std::string_view s) {
  if (s == "vafp") return DistillMode::vafp;
  if (s == "feature") return DistillMode::feature;
  if (s == "logit") return DistillMode::logit;
  if (s == "none") return DistillMode::none;
  return std::nullopt;
}

inline const char* to_string(DistillMode m) {
  switch (m) {
    case DistillMode::vafp: return "vafp";
    case DistillMode::feature: return "feature";
    case DistillMode::logit: return "logit";
    case DistillMode::none: return "none";
  }
  return "?";
}

inline constexpr double kDefaultTaskWeight = 0.1;

struct DistillConfig {
  DistillMode mode = DistillMode::vafp;
  double task_weight = kDefaultTaskWeight;
  std::optional<double> dist_weight;  // unset: 1/K
  ViewSchedule schedule = ViewSchedule::all;
  EmptyViewPolicy empty_view_policy = EmptyViewPolicy::skip_renormalize;
  bool l2_normalize = false;

  double resolved_dist_weight(std::size_t num_views) const {
    return dist_weight ? *dist_weight : 1.0 / static_cast<double>(num_views);
  }

  void validate() const {
    if (!(task_weight >= 0.0) || (dist_weight && !(*dist_weight >= 0.0))) {
      throw InvalidArgument("loss weights must be non-negative");
    }
  }
};

// ---------------------------------------------------------------------------
// Alignment layer: one FC map C_s -> C_t shared by every view.

inline constexpr const char* kAlignWeight = "align.W";
inline constexpr const char* kAlignBias = "align.b";

inline void init_align(ParamStore& store, std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xA119));
  store.add(kAlignWeight, glorot_uniform(in_dim, out_dim, rng));
  store.add(kAlignBias, Tensor2(1, out_dim));
}

struct AlignVars {
  Var weight;
  Var bias;
};

inline AlignVars bind_align(Tape& tape, ParamStore& store) {
  return {tape.parameter(store, kAlignWeight), tape.parameter(store, kAlignBias)};
}

// ---------------------------------------------------------------------------
// View-specific grouping and projection.

/// Rows of `features` selected by each mask (indices shifted by `row_offset`
/// when `features` stacks several shapes). Empty masks give no group.
inline std::vector<std::optional<Var>> vafp_group(Tape& tape, Var features,
                                                  std::span<const VisibilityMask> masks,
                                                  std::uint32_t row_offset = 0,
                                                  std::uint32_t num_anchors = 0) {
  const std::size_t rows = tape.value(features).rows();
  const std::size_t limit = num_anchors ? num_anchors : rows - row_offset;
  std::vector<std::optional<Var>> groups;
  groups.reserve(masks.size());
  std::vector<std::uint32_t> idx;
  for (const auto& m : masks) {
    if (m.visible.empty()) {
      groups.emplace_back();
      continue;
    }
    idx.clear();
    for (auto i : m.visible) {
      if (i >= limit || row_offset + i >= rows) {
        throw IndexOutOfRange("mask index " + std::to_string(i) + " for " + std::to_string(limit) + " anchors");
      }
      idx.push_back(row_offset + i);
    }
    groups.emplace_back(nn::gather_rows(tape, features, idx));
  }
  return groups;
}

/// Projected view descriptors. Row r of `descriptors` belongs to `views[r]`;
/// views dropped by the skip policy are absent.
struct VafpOutput {
  std::optional<Var> descriptors;
  std::vector<std::size_t> views;
  std::size_t empty_views = 0;
};

/// g_k = align(channelwise_max(rows of the shape visible from view k)) for
/// each view in `active` (all views when empty).
inline VafpOutput vafp_project(Tape& tape, Var features, std::span<const VisibilityMask> masks,
                               const AlignVars& align, EmptyViewPolicy policy,
                               std::span<const std::size_t> active = {}, std::uint32_t row_offset = 0,
                               std::uint32_t num_anchors = 0) {
  std::vector<std::size_t> views(active.begin(), active.end());
  if (views.empty()) {
    for (std::size_t k = 0; k < masks.size(); ++k) views.push_back(k);
  }
  std::vector<VisibilityMask> selected;
  for (auto k : views) {
    if (k >= masks.size()) throw IndexOutOfRange("view " + std::to_string(k));
    selected.push_back(masks[k]);
  }
  const auto groups = vafp_group(tape, features, selected, row_offset, num_anchors);

  VafpOutput out;
  std::vector<Var> pooled;
  std::optional<Var> whole;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i]) {
      pooled.push_back(nn::channelwise_max(tape, *groups[i]));
      out.views.push_back(views[i]);
      continue;
    }
    ++out.empty_views;
    if (policy == EmptyViewPolicy::global_fallback) {
      if (!whole) {
        const std::size_t n = num_anchors ? num_anchors : tape.value(features).rows() - row_offset;
        std::vector<std::uint32_t> all(n);
        for (std::uint32_t j = 0; j < n; ++j) all[j] = row_offset + j;
        whole = nn::channelwise_max(tape, nn::gather_rows(tape, features, all));
      }
      pooled.push_back(*whole);
      out.views.push_back(views[i]);
    }
  }
  if (!pooled.empty()) {
    out.descriptors = nn::linear(tape, nn::concat_rows(tape, pooled), align.weight, align.bias);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

/// Sum over projected views of |v_k - g_k|_1, scaled by K / |views| so that a
/// partial view set keeps the full-rig expectation. Zero when nothing projects.
inline Var vafp_distill_loss(Tape& tape, const VafpOutput& student, const TeacherKnowledge& teacher,
                             bool l2_normalize = false) {
  const std::size_t k = teacher.num_views();
  if (!student.descriptors || student.views.empty()) return tape.constant(Tensor2(1, 1, 0.0));
  const Tensor2& g = tape.value(*student.descriptors);
  if (g.cols() != teacher.descriptor_dim()) {
    throw ShapeMismatch("student descriptors " + g.shape_str() + " vs teacher width " +
                        std::to_string(teacher.descriptor_dim()));
  }
  Tensor2 target(student.views.size(), teacher.descriptor_dim());
  for (std::size_t r = 0; r < student.views.size(); ++r) {
    if (student.views[r] >= k) throw ShapeMismatch("view index beyond teacher rows");
    auto src = teacher.descriptors.row(student.views[r]);
    std::copy(src.begin(), src.end(), target.row(r).begin());
  }
  Var s = *student.descriptors;
  Var t = tape.constant(std::move(target));
  if (l2_normalize) {
    s = nn::row_l2_normalize(tape, s);
    t = nn::row_l2_normalize(tape, t);
  }
  const Var l1 = nn::l1_loss(tape, s, t);
  if (student.views.size() == k) return l1;
  return nn::scale(tape, l1, static_cast<double>(k) / static_cast<double>(student.views.size()));
}

/// |teacher.global - align(student global descriptor)|_1.
inline Var feature_distill_loss(Tape& tape, Var global, const AlignVars& align, const TeacherKnowledge& teacher) {
  if (!teacher.global_feature) throw MissingTeacherField("feature mode needs a global feature in " + teacher.shape_id);
  const Var projected = nn::linear(tape, global, align.weight, align.bias);
  if (!tape.value(projected).same_shape(*teacher.global_feature)) {
    throw ShapeMismatch("global feature width mismatch for " + teacher.shape_id);
  }
  return nn::l1_loss(tape, projected, tape.constant(*teacher.global_feature));
}

/// |teacher.logits - student logits|_1.
inline Var logit_distill_loss(Tape& tape, Var logits, const TeacherKnowledge& teacher) {
  if (!teacher.logits) throw MissingTeacherField("logit mode needs logits in " + teacher.shape_id);
  if (!tape.value(logits).same_shape(*teacher.logits)) {
    throw ShapeMismatch("logit width mismatch for " + teacher.shape_id);
  }
  return nn::l1_loss(tape, logits, tape.constant(*teacher.logits));
}

inline double overall_loss(double task, double dist, const DistillConfig& cfg, std::size_t num_views) {
  return cfg.task_weight * task + cfg.resolved_dist_weight(num_views) * dist;
}

inline Var overall_loss(Tape& tape, Var task, Var dist, const DistillConfig& cfg, std::size_t num_views) {
  return nn::add(tape, nn::scale(tape, task, cfg.task_weight),
                 nn::scale(tape, dist, cfg.resolved_dist_weight(num_views)));
}

}  // namespace mvd
