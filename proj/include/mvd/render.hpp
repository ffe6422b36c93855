#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mvd/binary_io.hpp"
#include "mvd/error.hpp"
#include "mvd/geometry.hpp"
#include "mvd/visibility.hpp"

namespace mvd {

enum class Shading { constant, depth };

struct SplatConfig {
  int image_size = 224;
  int splat_radius = 2;
  double field_of_view = 1.0;  // radians, full vertical angle
  std::uint8_t background = 255;
  Shading shading = Shading::depth;

  void validate() const {
    if (image_size < 16) throw InvalidArgument("image size must be at least 16");
    if (splat_radius < 1) throw InvalidArgument("splat radius must be at least 1");
    if (!(field_of_view > 0.0 && field_of_view < std::numbers::pi)) {
      throw InvalidArgument("field of view must lie in (0, pi)");
    }
  }
};

/// Row-major 8-bit grayscale image.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, std::uint8_t fill)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const ImageBuffer&) const = default;
};

/// Pinhole camera looking at `target`. `scene_radius` bounds the scene
/// around the target and fixes the depth-shading range.
struct LookAtCamera {
  Vec3 eye;
  Vec3 target;
  double scene_radius = 1.0;
};

/// Camera for a rig pose around a normalized cloud centered at the origin.
inline LookAtCamera camera_for_pose(const CameraPose& pose) {
  return {camera_position(pose, 1.0), Vec3{}, 1.0};
}

struct ProjectedPoint {
  double x = 0.0;  // pixels, +x right
  double y = 0.0;  // pixels, +y down
  double depth = 0.0;
  std::uint32_t index = 0;
};

namespace detail {

struct CameraFrame {
  Vec3 right, up, forward;
};

inline CameraFrame camera_frame(const LookAtCamera& cam) {
  const Vec3 forward = normalized(cam.target - cam.eye);
  Vec3 world_up{0, 0, 1};
  // Within 1e-3 rad of a pole the +z up vector degenerates.
  if (std::abs(dot(forward, world_up)) > std::cos(1e-3)) world_up = {1, 0, 0};
  const Vec3 right = normalized(cross(forward, world_up));
  return {right, cross(right, forward), forward};
}

}  // namespace detail

/// Perspective projection; points with depth <= 1e-6 are culled. Pixel
/// coordinates may land outside the image.
inline std::vector<ProjectedPoint> project(std::span<const Vec3> points, const LookAtCamera& cam,
                                           const SplatConfig& config) {
  config.validate();
  const auto frame = detail::camera_frame(cam);
  const double half = config.image_size / 2.0;
  const double focal = half / std::tan(config.field_of_view / 2.0);
  std::vector<ProjectedPoint> out;
  out.reserve(points.size());
  for (std::uint32_t i = 0; i < points.size(); ++i) {
    const Vec3 rel = points[i] - cam.eye;
    const double depth = dot(rel, frame.forward);
    if (depth <= 1e-6) continue;
    out.push_back({half + focal * dot(rel, frame.right) / depth,
                   half - focal * dot(rel, frame.up) / depth, depth, i});
  }
  return out;
}

inline std::vector<ProjectedPoint> project(std::span<const Vec3> points, const CameraPose& pose,
                                           const SplatConfig& config) {
  return project(points, camera_for_pose(pose), config);
}

/// Disc splats with a strict-less z-test, rasterized in ascending point
/// order. Depth shading maps [d - r, d + r] (d = eye-target distance,
/// r = scene radius) linearly onto intensities [32, 224], near = dark.
inline ImageBuffer render_splat(std::span<const Vec3> points, const LookAtCamera& cam,
                                const SplatConfig& config) {
  config.validate();
  const int size = config.image_size;
  ImageBuffer img(size, size, config.background);
  std::vector<double> zbuf(static_cast<std::size_t>(size) * size,
                           std::numeric_limits<double>::infinity());

  const double center_dist = norm(cam.target - cam.eye);
  const double near = center_dist - cam.scene_radius;
  const double span = 2.0 * cam.scene_radius;
  const int r = config.splat_radius;

  for (const auto& pp : project(points, cam, config)) {
    std::uint8_t shade = 0;
    if (config.shading == Shading::depth) {
      const double t = std::clamp((pp.depth - near) / span, 0.0, 1.0);
      shade = static_cast<std::uint8_t>(std::lround(32.0 + 192.0 * t));
    }
    const double fx = std::floor(pp.x), fy = std::floor(pp.y);
    if (fx < -r - 1 || fy < -r - 1 || fx > size + r || fy > size + r) continue;
    const int cx = static_cast<int>(fx), cy = static_cast<int>(fy);
    for (int dy = -r; dy <= r; ++dy) {
      const int y = cy + dy;
      if (y < 0 || y >= size) continue;
      for (int dx = -r; dx <= r; ++dx) {
        const int x = cx + dx;
        if (x < 0 || x >= size || dx * dx + dy * dy > r * r) continue;
        auto& z = zbuf[static_cast<std::size_t>(y) * size + x];
        if (pp.depth < z) {
          z = pp.depth;
          img.at(x, y) = shade;
        }
      }
    }
  }
  return img;
}

/// Render a rig view of a normalized cloud. With `visible_only`, only the
/// anchors listed in `mask` are drawn.
inline ImageBuffer render_splat(const PointCloud& cloud, const CameraPose& pose,
                                const SplatConfig& config, bool visible_only = false,
                                const VisibilityMask* mask = nullptr) {
  if (!visible_only) return render_splat(cloud.points, camera_for_pose(pose), config);
  if (mask == nullptr) throw InvalidArgument("visible_only rendering needs a mask");
  std::vector<Vec3> subset;
  subset.reserve(mask->visible.size());
  for (auto i : mask->visible) {
    if (i >= cloud.size()) throw IndexOutOfRange("mask index " + std::to_string(i));
    subset.push_back(cloud.points[i]);
  }
  return render_splat(subset, camera_for_pose(pose), config);
}

// ---------------------------------------------------------------------------
// Binary PPM (P6), gray replicated to RGB.

inline std::vector<char> encode_ppm(const ImageBuffer& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels.size() * 3);
  for (auto p : img.pixels) {
    out.insert(out.end(), 3, static_cast<char>(p));
  }
  return out;
}

inline ImageBuffer decode_ppm(std::span<const char> data) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    std::string t;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) t += data[pos++];
    if (t.empty()) throw TruncatedFile("PPM header");
    return t;
  };
  if (token() != "P6") throw BadMagic("not a binary PPM");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  if (token() != "255") throw UnsupportedVersion("only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (w <= 0 || h <= 0 || data.size() < pos || data.size() - pos < need) throw TruncatedFile("PPM raster");
  ImageBuffer img(w, h, 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto r = data[pos + 3 * i], g = data[pos + 3 * i + 1], b = data[pos + 3 * i + 2];
    if (r != g || g != b) throw InvalidArgument("PPM is not grayscale");
    img.pixels[i] = static_cast<std::uint8_t>(r);
  }
  return img;
}

inline void write_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  bin::write_file_atomic(path, encode_ppm(img));
}

inline ImageBuffer read_ppm(const std::filesystem::path& path) { return decode_ppm(bin::read_file(path)); }

}  // namespace mvd
