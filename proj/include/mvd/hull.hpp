#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <unordered_map>
#include <vector>

#include "mvd/error.hpp"
#include "mvd/geometry.hpp"

namespace mvd {

/// Triangulated 3D convex hull. Faces are index triples into the input,
/// counter-clockwise seen from outside.
struct ConvexHull3 {
  std::vector<std::size_t> vertex_indices;  // sorted ascending
  std::vector<std::array<std::size_t, 3>> faces;
};

namespace detail {

class Quickhull {
 public:
  explicit Quickhull(std::span<const Vec3> pts) : pts_(pts) {}

  ConvexHull3 run() {
    init_tolerance();
    build_simplex();
    expand();
    return collect();
  }

 private:
  struct Face {
    std::array<std::uint32_t, 3> v;
    Vec3 normal;
    double offset = 0.0;
    std::vector<std::uint32_t> outside;
    bool alive = true;
  };

  static std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }

  double distance(const Face& f, const Vec3& p) const { return dot(f.normal, p) - f.offset; }

  void init_tolerance() {
    Vec3 lo = pts_[0], hi = pts_[0];
    for (const auto& p : pts_) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    eps_ = 1e-9 * norm(hi - lo);
  }

  void build_simplex() {
    const std::size_t n = pts_.size();
    // Farthest pair among the axis extremes.
    std::array<std::size_t, 6> ext{};
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = pts_[i];
      if (p.x < pts_[ext[0]].x) ext[0] = i;
      if (p.x > pts_[ext[1]].x) ext[1] = i;
      if (p.y < pts_[ext[2]].y) ext[2] = i;
      if (p.y > pts_[ext[3]].y) ext[3] = i;
      if (p.z < pts_[ext[4]].z) ext[4] = i;
      if (p.z > pts_[ext[5]].z) ext[5] = i;
    }
    std::size_t i0 = 0, i1 = 0;
    double best = -1.0;
    for (auto a : ext) {
      for (auto b : ext) {
        const double d = norm(pts_[a] - pts_[b]);
        if (d > best) best = d, i0 = a, i1 = b;
      }
    }
    if (!(best > eps_)) throw DegenerateHull(0, "all points coincide");

    const Vec3 axis = normalized(pts_[i1] - pts_[i0]);
    std::size_t i2 = i0;
    best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = norm(cross(pts_[i] - pts_[i0], axis));
      if (d > best) best = d, i2 = i;
    }
    if (!(best > eps_)) throw DegenerateHull(1, "points are collinear");

    const Vec3 pn = normalized(cross(pts_[i1] - pts_[i0], pts_[i2] - pts_[i0]));
    std::size_t i3 = i0;
    best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::abs(dot(pts_[i] - pts_[i0], pn));
      if (d > best) best = d, i3 = i;
    }
    if (!(best > eps_)) throw DegenerateHull(2, "points are coplanar");

    const std::array<std::uint32_t, 4> s{static_cast<std::uint32_t>(i0), static_cast<std::uint32_t>(i1),
                                         static_cast<std::uint32_t>(i2), static_cast<std::uint32_t>(i3)};
    const Vec3 inside = (pts_[i0] + pts_[i1] + pts_[i2] + pts_[i3]) / 4.0;
    for (const auto& tri : {std::array{0, 1, 2}, std::array{0, 1, 3}, std::array{0, 2, 3},
                            std::array{1, 2, 3}}) {
      std::uint32_t a = s[tri[0]], b = s[tri[1]], c = s[tri[2]];
      if (dot(cross(pts_[b] - pts_[a], pts_[c] - pts_[a]), inside - pts_[a]) > 0.0) std::swap(b, c);
      add_face(a, b, c);
    }

    std::vector<std::uint32_t> rest;
    rest.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      if (i != s[0] && i != s[1] && i != s[2] && i != s[3]) rest.push_back(i);
    }
    assign(rest, 0);
  }

  std::uint32_t add_face(std::uint32_t a, std::uint32_t b, std::uint32_t c) {
    Face f;
    f.v = {a, b, c};
    const Vec3 n = cross(pts_[b] - pts_[a], pts_[c] - pts_[a]);
    const double len = norm(n);
    f.normal = len > 0.0 ? n / len : Vec3{};
    f.offset = dot(f.normal, pts_[a]);
    const auto id = static_cast<std::uint32_t>(faces_.size());
    faces_.push_back(std::move(f));
    edges_[edge_key(a, b)] = id;
    edges_[edge_key(b, c)] = id;
    edges_[edge_key(c, a)] = id;
    return id;
  }

  void remove_face(std::uint32_t id) {
    auto& f = faces_[id];
    f.alive = false;
    for (int e = 0; e < 3; ++e) {
      auto it = edges_.find(edge_key(f.v[e], f.v[(e + 1) % 3]));
      if (it != edges_.end() && it->second == id) edges_.erase(it);
    }
  }

  // Hands each point to the first face (from `first_face` on) that sees it
  // beyond tolerance; points no face sees are interior and dropped.
  void assign(const std::vector<std::uint32_t>& candidates, std::size_t first_face) {
    for (auto i : candidates) {
      for (std::size_t fid = first_face; fid < faces_.size(); ++fid) {
        auto& f = faces_[fid];
        if (f.alive && distance(f, pts_[i]) > eps_) {
          f.outside.push_back(i);
          break;
        }
      }
    }
  }

  void expand() {
    std::vector<std::uint32_t> visible;
    std::vector<char> is_visible;
    std::vector<std::array<std::uint32_t, 2>> horizon;
    std::deque<std::uint32_t> bfs;

    for (std::size_t fid = 0; fid < faces_.size(); ++fid) {
      if (!faces_[fid].alive || faces_[fid].outside.empty()) continue;

      const Face& seed = faces_[fid];
      std::uint32_t apex = seed.outside.front();
      double far = distance(seed, pts_[apex]);
      for (auto i : seed.outside) {
        const double d = distance(seed, pts_[i]);
        if (d > far) far = d, apex = i;
      }
      const Vec3& p = pts_[apex];

      visible.clear();
      is_visible.assign(faces_.size(), 0);
      is_visible[fid] = 1;
      visible.push_back(static_cast<std::uint32_t>(fid));
      bfs.assign(1, static_cast<std::uint32_t>(fid));
      while (!bfs.empty()) {
        const auto cur = bfs.front();
        bfs.pop_front();
        const auto& f = faces_[cur];
        for (int e = 0; e < 3; ++e) {
          auto it = edges_.find(edge_key(f.v[(e + 1) % 3], f.v[e]));
          if (it == edges_.end()) continue;
          const auto nb = it->second;
          if (is_visible[nb]) continue;
          if (distance(faces_[nb], p) > eps_) {
            is_visible[nb] = 1;
            visible.push_back(nb);
            bfs.push_back(nb);
          }
        }
      }

      horizon.clear();
      std::vector<std::uint32_t> orphans;
      for (auto vid : visible) {
        const auto& f = faces_[vid];
        for (int e = 0; e < 3; ++e) {
          const auto a = f.v[e], b = f.v[(e + 1) % 3];
          auto it = edges_.find(edge_key(b, a));
          if (it == edges_.end() || !is_visible[it->second]) horizon.push_back({a, b});
        }
        for (auto i : f.outside) {
          if (i != apex) orphans.push_back(i);
        }
      }
      for (auto vid : visible) {
        remove_face(vid);
        faces_[vid].outside.clear();
        faces_[vid].outside.shrink_to_fit();
      }
      const std::size_t first_new = faces_.size();
      for (const auto& [a, b] : horizon) add_face(a, b, apex);
      assign(orphans, first_new);
    }
  }

  ConvexHull3 collect() const {
    ConvexHull3 hull;
    std::vector<char> on_hull(pts_.size(), 0);
    for (const auto& f : faces_) {
      if (!f.alive) continue;
      hull.faces.push_back({f.v[0], f.v[1], f.v[2]});
      for (auto v : f.v) on_hull[v] = 1;
    }
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      if (on_hull[i]) hull.vertex_indices.push_back(i);
    }
    return hull;
  }

  std::span<const Vec3> pts_;
  double eps_ = 0.0;
  std::vector<Face> faces_;
  std::unordered_map<std::uint64_t, std::uint32_t> edges_;
};

}  // namespace detail

/// Quickhull with merge tolerance 1e-9 x bounding-box diagonal. Points within
/// tolerance of an existing face are not promoted to vertices.
/// Throws DegenerateHull when the input spans fewer than three dimensions.
inline ConvexHull3 convex_hull3(std::span<const Vec3> points) {
  if (points.empty()) throw EmptyInput("convex hull of no points");
  if (points.size() >= UINT32_MAX) throw InvalidArgument("too many points for hull");
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw InvalidArgument("non-finite hull input");
    }
  }
  return detail::Quickhull(points).run();
}

}  // namespace mvd
