#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <vector>

#include "mvd/binary_io.hpp"
#include "mvd/error.hpp"
#include "mvd/geometry.hpp"
#include "mvd/hull.hpp"

namespace mvd {

inline constexpr double kDefaultFlipFactor = 100.0;

/// Anchors seen from one rig view. `visible` is strictly increasing.
struct VisibilityMask {
  std::size_t view_index = 0;
  std::vector<std::uint32_t> visible;

  bool operator==(const VisibilityMask&) const = default;
};

/// Spherical flipping about `viewpoint`: q = p - viewpoint maps to
/// q * (2R/|q| - 1). The result is expressed relative to the viewpoint.
inline std::vector<Vec3> spherical_flip(std::span<const Vec3> points, const Vec3& viewpoint,
                                        double radius) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  double max_d = 0.0;
  for (const auto& p : points) {
    const double d = norm(p - viewpoint);
    if (!(d > 1e-9)) throw PointAtViewpoint("point coincides with the viewpoint");
    max_d = std::max(max_d, d);
  }
  if (radius < max_d) {
    throw RadiusTooSmall("flip radius " + std::to_string(radius) + " below max distance " +
                         std::to_string(max_d));
  }
  for (const auto& p : points) {
    const Vec3 q = p - viewpoint;
    out.push_back(q * (2.0 * radius / norm(q) - 1.0));
  }
  return out;
}

/// Hidden point removal: an anchor is visible when its flipped image is a
/// vertex of the convex hull of all flipped images plus the viewpoint.
/// Exact duplicates share visibility. Rank-deficient configurations (fewer
/// than four affinely independent points) report every anchor visible.
inline VisibilityMask hpr_visible(const PointCloud& anchors, const Vec3& viewpoint,
                                  double flip_factor = kDefaultFlipFactor,
                                  std::size_t view_index = 0) {
  if (anchors.points.empty()) throw EmptyInput("no anchors");
  if (!(flip_factor > 1.0)) throw InvalidArgument("flip factor must exceed 1");
  const Vec3 c = centroid(anchors);
  double extent = 0.0;
  for (const auto& p : anchors.points) extent = std::max(extent, norm(p - c));
  if (!(norm(viewpoint - c) > extent)) {
    throw InvalidArgument("viewpoint must lie outside the anchor bounding sphere");
  }

  double max_d = 0.0;
  for (const auto& p : anchors.points) max_d = std::max(max_d, norm(p - viewpoint));
  std::vector<Vec3> flipped = spherical_flip(anchors.points, viewpoint, flip_factor * max_d);

  VisibilityMask mask;
  mask.view_index = view_index;
  const std::size_t n = flipped.size();
  flipped.push_back(Vec3{});  // the viewpoint itself

  std::vector<char> vertex(n, 0);
  try {
    const auto hull = convex_hull3(flipped);
    for (auto i : hull.vertex_indices) {
      if (i < n) vertex[i] = 1;
    }
  } catch (const DegenerateHull&) {
    mask.visible.resize(n);
    std::iota(mask.visible.begin(), mask.visible.end(), 0u);
    return mask;
  }

  // Propagate vertex status across exact duplicates.
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  auto key = [&](std::uint32_t i) {
    return std::array{flipped[i].x, flipped[i].y, flipped[i].z};
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return key(a) < key(b); });
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && key(order[hi]) == key(order[lo])) ++hi;
    bool any = false;
    for (std::size_t j = lo; j < hi; ++j) any = any || vertex[order[j]];
    if (any) {
      for (std::size_t j = lo; j < hi; ++j) vertex[order[j]] = 1;
    }
    lo = hi;
  }

  for (std::uint32_t i = 0; i < n; ++i) {
    if (vertex[i]) mask.visible.push_back(i);
  }
  return mask;
}

/// One mask per rig pose, ordered by view index. Camera distance scales
/// with the anchors' bounding radius about the origin.
inline std::vector<VisibilityMask> compute_rig_masks(const PointCloud& anchors, const ViewRig& rig,
                                                     double flip_factor = kDefaultFlipFactor) {
  const double radius = bounding_radius(anchors);
  std::vector<VisibilityMask> masks;
  masks.reserve(rig.size());
  for (std::size_t k = 0; k < rig.size(); ++k) {
    try {
      masks.push_back(hpr_visible(anchors, camera_position(rig[k], radius), flip_factor, k));
    } catch (const PointAtViewpoint& e) {
      throw PointAtViewpoint("view " + std::to_string(k) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("view " + std::to_string(k) + ": " + e.what());
    }
  }
  return masks;
}

// ---------------------------------------------------------------------------
// Mask file: "MVMK", u32 version, u32 K, u32 N_a, per view u32 count + indices.

inline constexpr std::uint32_t kMaskVersion = 1;

inline std::vector<char> encode_masks(std::span<const VisibilityMask> masks, std::uint32_t num_anchors) {
  bin::Writer w;
  w.put_bytes("MVMK");
  w.put<std::uint32_t>(kMaskVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(masks.size()));
  w.put<std::uint32_t>(num_anchors);
  for (const auto& m : masks) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.visible.size()));
    for (auto i : m.visible) w.put<std::uint32_t>(i);
  }
  return w.bytes();
}

struct MaskSet {
  std::uint32_t num_anchors = 0;
  std::vector<VisibilityMask> masks;
};

inline MaskSet decode_masks(std::span<const char> data) {
  bin::Reader r(data);
  if (r.get_bytes(4) != "MVMK") throw BadMagic("not a mask file");
  const auto version = r.get<std::uint32_t>();
  if (version != kMaskVersion) throw UnsupportedVersion("mask version " + std::to_string(version));
  MaskSet set;
  const auto k = r.get<std::uint32_t>();
  set.num_anchors = r.get<std::uint32_t>();
  for (std::uint32_t v = 0; v < k; ++v) {
    VisibilityMask m;
    m.view_index = v;
    const auto count = r.get<std::uint32_t>();
    if (count > set.num_anchors) throw ShapeMismatch("mask larger than anchor set");
    m.visible.reserve(count);
    for (std::uint32_t j = 0; j < count; ++j) {
      const auto idx = r.get<std::uint32_t>();
      if (idx >= set.num_anchors || (!m.visible.empty() && idx <= m.visible.back())) {
        throw IndexOutOfRange("mask indices must be sorted and below N_a");
      }
      m.visible.push_back(idx);
    }
    set.masks.push_back(std::move(m));
  }
  return set;
}

inline void write_masks(std::span<const VisibilityMask> masks, std::uint32_t num_anchors,
                        const std::filesystem::path& path) {
  bin::write_file_atomic(path, encode_masks(masks, num_anchors));
}

inline MaskSet read_masks(const std::filesystem::path& path) {
  return decode_masks(bin::read_file(path));
}

}  // namespace mvd
