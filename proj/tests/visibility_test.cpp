#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mvd/visibility.hpp"
#include "oracles.hpp"

namespace mvd {
namespace {

PointCloud sphere_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return PointCloud{oracle::random_on_sphere(n, rng), std::nullopt};
}

TEST(SphericalFlip, HandEvaluated) {
  const Vec3 origin{};
  std::vector<Vec3> pts{{1, 0, 0}, {0, 2, 0}, {0, 0, 0.5}};
  const auto f = spherical_flip(pts, origin, 2.0);
  EXPECT_EQ(f[0], (Vec3{3, 0, 0}));
  EXPECT_EQ(f[1], (Vec3{0, 2, 0}));
  EXPECT_EQ(f[2], (Vec3{0, 0, 3.5}));
}

TEST(SphericalFlip, Errors) {
  std::vector<Vec3> pts{{1, 0, 0}, {0, 0, 0}};
  EXPECT_THROW(spherical_flip(pts, Vec3{}, 5.0), PointAtViewpoint);
  std::vector<Vec3> far{{3, 0, 0}};
  EXPECT_THROW(spherical_flip(far, Vec3{}, 2.0), RadiusTooSmall);
}

TEST(SphericalFlip, InvertsDistanceOrderAndKeepsDirection) {
  Rng rng(17);
  const Vec3 vp{2.5, -1, 0.5};
  std::vector<Vec3> pts;
  for (int i = 0; i < 300; ++i) pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  double max_d = 0;
  for (const auto& p : pts) max_d = std::max(max_d, norm(p - vp));
  const double R = 10 * max_d;
  const auto f = spherical_flip(pts, vp, R);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 q = pts[i] - vp;
    EXPECT_NEAR(norm(f[i]), 2 * R - norm(q), 1e-9 * R);
    EXPECT_LE(norm(cross(f[i], q)), 1e-9 * norm(f[i]) * norm(q));
    EXPECT_GT(dot(f[i], q), 0.0);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (norm(q) < norm(pts[j] - vp)) {
        EXPECT_GT(norm(f[i]), norm(f[j]));
      }
    }
  }
}

TEST(Hpr, SinglePointIsVisible) {
  PointCloud c{{{0.1, 0.2, 0.3}}, std::nullopt};
  const auto m = hpr_visible(c, {5, 0, 0});
  EXPECT_EQ(m.visible, (std::vector<std::uint32_t>{0}));
}

TEST(Hpr, CollinearPairFallsBackToAllVisible) {
  PointCloud c{{{0.5, 0, 0}, {-0.5, 0, 0}}, std::nullopt};
  const auto m = hpr_visible(c, {3, 0, 0});
  EXPECT_EQ(m.visible, (std::vector<std::uint32_t>{0, 1}));
}

TEST(Hpr, AgreesWithSphereTangencyOracle) {
  const auto cloud = sphere_cloud(2048, 7);
  const Vec3 dir{1, 0, 0};
  const auto mask = hpr_visible(cloud, dir * 3.0, 100.0);
  std::vector<char> vis(cloud.size(), 0);
  for (auto i : mask.visible) vis[i] = 1;
  int considered = 0, agree = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double d = dot(cloud.points[i], dir);
    if (std::abs(d - 1.0 / 3.0) < 0.05) continue;
    ++considered;
    agree += (vis[i] != 0) == oracle::sphere_point_visible(cloud.points[i], dir, 3.0);
  }
  EXPECT_GE(static_cast<double>(agree) / considered, 0.98);
}

TEST(Hpr, ScaleEquivariant) {
  const auto cloud = sphere_cloud(400, 3);
  const Vec3 vp{1.7, 1.2, 0.9};
  const auto base = hpr_visible(cloud, vp);
  for (double s : {0.5, 2.0, 8.0}) {
    PointCloud scaled = cloud;
    for (auto& p : scaled.points) p = p * s;
    EXPECT_EQ(hpr_visible(scaled, vp * s).visible, base.visible) << "scale " << s;
  }
}

TEST(Hpr, DuplicatesShareVisibility) {
  auto cloud = sphere_cloud(200, 4);
  const auto base = hpr_visible(cloud, {3, 0, 0});
  ASSERT_FALSE(base.visible.empty());
  const auto dup_of = base.visible.front();
  cloud.points.push_back(cloud.points[dup_of]);
  const auto m = hpr_visible(cloud, {3, 0, 0});
  EXPECT_TRUE(std::binary_search(m.visible.begin(), m.visible.end(), dup_of));
  EXPECT_EQ(m.visible.back(), cloud.size() - 1);
}

TEST(Hpr, RejectsInteriorViewpoint) {
  const auto cloud = sphere_cloud(50, 1);
  EXPECT_THROW(hpr_visible(cloud, {0.2, 0, 0}), InvalidArgument);
  EXPECT_THROW(hpr_visible(cloud, {3, 0, 0}, 1.0), InvalidArgument);
}

double oracle_coverage(const PointCloud& cloud, const ViewRig& rig, std::vector<char>* seen = nullptr) {
  std::size_t covered = 0;
  if (seen) seen->assign(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    bool any = false;
    for (const auto& pose : rig.poses()) {
      const Vec3 cam = camera_position(pose, 1.0);
      any = any || oracle::sphere_point_visible(cloud.points[i], normalized(cam), norm(cam));
    }
    covered += any;
    if (seen) (*seen)[i] = any;
  }
  return static_cast<double>(covered) / cloud.size();
}

std::vector<char> mask_union(const std::vector<VisibilityMask>& masks, std::size_t n) {
  std::vector<char> covered(n, 0);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    EXPECT_EQ(masks[k].view_index, k);
    EXPECT_FALSE(masks[k].visible.empty());
    EXPECT_TRUE(std::is_sorted(masks[k].visible.begin(), masks[k].visible.end()));
    EXPECT_EQ(std::adjacent_find(masks[k].visible.begin(), masks[k].visible.end()), masks[k].visible.end());
    for (auto i : masks[k].visible) covered[i] = 1;
  }
  return covered;
}

TEST(RigMasks, TwoRingRigCoversSphere) {
  const auto cloud = sphere_cloud(2048, 21);
  const auto rig = make_segmentation_rig();
  EXPECT_GE(oracle_coverage(cloud, rig), 0.99);
  const auto covered = mask_union(compute_rig_masks(cloud, rig), cloud.size());
  EXPECT_GE(static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / cloud.size(), 0.99);
}

TEST(RigMasks, SingleRingRigMatchesOracleCoverage) {
  // All twelve cameras sit 30 degrees above the equator, so the bottom cap
  // below the horizon of every camera is never seen; HPR must agree.
  const auto cloud = sphere_cloud(2048, 21);
  const auto rig = make_classification_rig();
  std::vector<char> seen;
  const double expected = oracle_coverage(cloud, rig, &seen);
  EXPECT_NEAR(expected, 0.77, 0.03);
  const auto masks = compute_rig_masks(cloud, rig);
  ASSERT_EQ(masks.size(), 12u);
  const auto covered = mask_union(masks, cloud.size());
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!seen[i]) continue;
    ++total;
    hits += covered[i];
  }
  EXPECT_GE(static_cast<double>(hits) / total, 0.99);
  const double got = static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / cloud.size();
  EXPECT_LE(got, expected + 0.06);
}

TEST(RigMasks, PosePermutationPermutesMasks) {
  const auto cloud = sphere_cloud(300, 8);
  const auto rig = make_reduced_rig(6);
  std::vector<CameraPose> perm{rig[3], rig[0], rig[5], rig[1], rig[4], rig[2]};
  const std::array<std::size_t, 6> src{3, 0, 5, 1, 4, 2};
  const auto a = compute_rig_masks(cloud, rig);
  const auto b = compute_rig_masks(cloud, ViewRig(perm));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(b[k].visible, a[src[k]].visible);
}

TEST(MaskFile, RoundTripAndErrors) {
  const auto cloud = sphere_cloud(300, 8);
  const auto masks = compute_rig_masks(cloud, make_reduced_rig(4));
  const auto bytes = encode_masks(masks, 300);
  const auto back = decode_masks(bytes);
  EXPECT_EQ(back.num_anchors, 300u);
  EXPECT_EQ(back.masks, masks);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MVMK");

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_masks(bad), BadMagic);
  auto ver = bytes;
  ver[4] = 2;
  EXPECT_THROW(decode_masks(ver), UnsupportedVersion);
  std::vector<char> cut(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(decode_masks(cut), TruncatedFile);
}

}  // namespace
}  // namespace mvd
