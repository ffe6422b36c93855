#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "mvd/dataset.hpp"
#include "mvd/knowledge.hpp"
#include "mvd/parallel.hpp"
#include "mvd/random.hpp"
#include "mvd/render.hpp"
#include "mvd/visibility.hpp"

namespace mvd {

inline constexpr std::size_t kTeacherGrid = 16;
inline constexpr std::size_t kTeacherInputs = kTeacherGrid * kTeacherGrid;

/// Fixed 256 x C_t projection with entries +-1/16, drawn once per (seed, C_t).
inline Tensor2 teacher_projection(std::size_t out_dim, std::uint64_t seed) {
  if (out_dim == 0) throw InvalidArgument("teacher width must be positive");
  Rng rng(derive_seed(seed, 0x7EAC4E5));
  Tensor2 p(kTeacherInputs, out_dim);
  const double mag = 1.0 / std::sqrt(static_cast<double>(kTeacherInputs));
  for (auto& v : p.data()) v = (rng.next_u64() >> 63) ? mag : -mag;
  return p;
}

/// Box-average an image onto a 16x16 grid, scaled to [0, 1]. Cell (i, j)
/// covers pixel rows [i*H/16, (i+1)*H/16) and likewise for columns.
inline Tensor2 downsample_grid(const ImageBuffer& img) {
  if (img.width < static_cast<int>(kTeacherGrid) || img.height < static_cast<int>(kTeacherGrid)) {
    throw InvalidArgument("image smaller than the teacher grid");
  }
  Tensor2 out(1, kTeacherInputs);
  const std::size_t g = kTeacherGrid;
  for (std::size_t i = 0; i < g; ++i) {
    const int y0 = static_cast<int>(i * img.height / g), y1 = static_cast<int>((i + 1) * img.height / g);
    for (std::size_t j = 0; j < g; ++j) {
      const int x0 = static_cast<int>(j * img.width / g), x1 = static_cast<int>((j + 1) * img.width / g);
      std::uint64_t sum = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) sum += img.at(x, y);
      }
      out(0, i * g + j) = static_cast<double>(sum) / (255.0 * (y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

struct TeacherSettings {
  std::size_t out_dim = 64;
  std::uint64_t seed = 0;
  SplatConfig splat{};
  double flip_factor = kDefaultFlipFactor;
  bool with_global = true;
};

struct TeacherViews {
  TeacherKnowledge knowledge;
  std::vector<VisibilityMask> masks;
  std::vector<ImageBuffer> renders;
};

/// Render each rig view (visible anchors only), pool to 16x16, project.
/// Values are stored at f32 precision, as in the file format.
inline TeacherViews procedural_teacher_views(const PointCloud& cloud, const ViewRig& rig, const Tensor2& projection,
                                             const TeacherSettings& settings, std::string shape_id = {}) {
  if (projection.rows() != kTeacherInputs) throw ShapeMismatch("projection must have 256 rows");
  TeacherViews out;
  out.masks = compute_rig_masks(cloud, rig, settings.flip_factor);
  TeacherKnowledge& tk = out.knowledge;
  tk.shape_id = std::move(shape_id);
  tk.descriptors = Tensor2(rig.size(), projection.cols());
  Tensor2 global(1, projection.cols());
  for (std::size_t k = 0; k < rig.size(); ++k) {
    ImageBuffer img = render_splat(cloud, rig[k], settings.splat, true, &out.masks[k]);
    const Tensor2 grid = downsample_grid(img);
    for (std::size_t c = 0; c < projection.cols(); ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < kTeacherInputs; ++i) s += grid(0, i) * projection(i, c);
      tk.descriptors(k, c) = s;
      global(0, c) += s;
    }
    out.renders.push_back(std::move(img));
  }
  if (settings.with_global) {
    for (auto& v : global.data()) v /= static_cast<double>(rig.size());
    tk.global_feature = std::move(global);
    round_to_f32(*tk.global_feature);
  }
  round_to_f32(tk.descriptors);
  return out;
}

inline TeacherKnowledge procedural_teacher(const PointCloud& cloud, const ViewRig& rig, const Tensor2& projection,
                                           const TeacherSettings& settings, std::string shape_id = {}) {
  return procedural_teacher_views(cloud, rig, projection, settings, std::move(shape_id)).knowledge;
}

/// Logits from negative L2 distance between a global feature and each
/// class centroid of the exported set.
inline void attach_centroid_logits(std::vector<TeacherKnowledge>& teachers, const std::vector<int>& labels,
                                   std::size_t num_classes) {
  if (teachers.size() != labels.size()) throw ShapeMismatch("one label per teacher record");
  if (teachers.empty()) return;
  const std::size_t dim = teachers.front().global_feature ? teachers.front().global_feature->cols() : 0;
  if (dim == 0) throw MissingTeacherField("centroid logits need global features");
  Tensor2 centroids(num_classes, dim);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    const auto& g = teachers[i].global_feature;
    if (!g || g->cols() != dim) throw MissingTeacherField("global feature missing for " + teachers[i].shape_id);
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= num_classes) throw LabelOutOfRange("label " + std::to_string(labels[i]));
    ++counts[c];
    for (std::size_t j = 0; j < dim; ++j) centroids(c, j) += (*g)(0, j);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t j = 0; j < dim && counts[c]; ++j) centroids(c, j) /= static_cast<double>(counts[c]);
  }
  for (auto& tk : teachers) {
    Tensor2 logits(1, num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double e = (*tk.global_feature)(0, j) - centroids(c, j);
        d += e * e;
      }
      logits(0, c) = counts[c] ? -std::sqrt(d) : 0.0;
    }
    round_to_f32(logits);
    tk.logits = std::move(logits);
  }
}

struct TeacherExportOptions {
  TeacherSettings settings{};
  bool with_logits = false;
  std::filesystem::path masks_dir;    // empty: not written
  std::filesystem::path renders_dir;  // empty: not written
  std::size_t threads = 1;
};

/// `<out_dir>/<shape_id>.tkd` for every manifest entry, plus optional
/// `<masks_dir>/<shape_id>.mvm` and `<renders_dir>/<shape_id>_v<k>.ppm`.
inline std::vector<TeacherKnowledge> export_procedural_teacher(const DatasetManifest& manifest,
                                                               const std::filesystem::path& root, const ViewRig& rig,
                                                               const std::filesystem::path& out_dir,
                                                               const TeacherExportOptions& opt) {
  validate_manifest(manifest);
  opt.settings.splat.validate();
  std::set<std::string> ids;
  for (const auto& e : manifest.entries) {
    if (!ids.insert(shape_id_of(e)).second) throw InvalidArgument("two manifest entries share shape id " + shape_id_of(e));
  }
  const Tensor2 projection = teacher_projection(opt.settings.out_dim, opt.settings.seed);
  for (const auto& dir : {out_dir, opt.masks_dir, opt.renders_dir}) {
    if (dir.empty()) continue;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }
  TeacherSettings settings = opt.settings;
  settings.with_global = settings.with_global || opt.with_logits;

  std::vector<TeacherKnowledge> teachers(manifest.entries.size());
  parallel_for(manifest.entries.size(), opt.threads, [&](std::size_t i) {
    const auto& entry = manifest.entries[i];
    const PointCloud cloud = read_xyz(root / entry.path);
    auto views = procedural_teacher_views(cloud, rig, projection, settings, shape_id_of(entry));
    if (!opt.masks_dir.empty()) {
      write_masks(views.masks, static_cast<std::uint32_t>(cloud.size()), opt.masks_dir / (views.knowledge.shape_id + ".mvm"));
    }
    if (!opt.renders_dir.empty()) {
      for (std::size_t k = 0; k < views.renders.size(); ++k) {
        write_ppm(views.renders[k], opt.renders_dir / (views.knowledge.shape_id + "_v" + std::to_string(k) + ".ppm"));
      }
    }
    teachers[i] = std::move(views.knowledge);
  });

  if (opt.with_logits) {
    std::vector<int> labels;
    for (const auto& e : manifest.entries) labels.push_back(e.label);
    attach_centroid_logits(teachers, labels, manifest.class_names.size());
  }
  if (!opt.settings.with_global) {
    for (auto& tk : teachers) tk.global_feature.reset();
  }
  for (const auto& tk : teachers) write_tkd(tk, out_dir / (tk.shape_id + ".tkd"));
  return teachers;
}

}  // namespace mvd
