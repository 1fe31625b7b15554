#include "geounc/eval.hpp"
#include "geounc/io.hpp"
#include "geounc/scene.hpp"

#include <gtest/gtest.h>

using namespace geounc;

namespace {

const BoundingSphere kBounds{Vec3::Zero(), 1.5};
const AnalyticSdf kUnit = AnalyticSdf::sphere(Vec3::Zero(), 1.0);

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("geounc_test_scene_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Render, CenterPixelDepthAndColor) {
  ShadingModel sh;
  sh.specular = {0.5, 8.0};
  const CameraView cam = look_at(0, Vec3(0, 0, 3), Vec3::Zero(), Vec3::UnitZ(), 40.0, 33, 33);
  const CameraView v = render_view(kUnit, sh, cam, {kBounds});
  EXPECT_NEAR(v.depth_at(16, 16), 2.0, 1e-5);
  const Vec3 p(0, 0, 1), n(0, 0, 1);
  const Rgb a = sh.albedo(p);
  const Vec3 l = sh.lights[0].direction;
  const double I = sh.lights[0].intensity[0];
  const double expect = a[0] * (sh.ambient[0] + I * n.dot(l)) + 0.5 * I * std::pow(n.dot(l), 8.0);
  EXPECT_NEAR(v.image.at(16, 16, 0), std::clamp(expect, 0.0, 1.0), 1e-4);
  EXPECT_EQ(v.depth_at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(v.image.at(0, 0, 1), static_cast<float>(sh.background[1]));
}

TEST(Render, DepthsLieOnTheSurface) {
  const auto views = make_rig(6, RigLayout::sphere, Vec3::Zero(), 3.5, 40.0, 24, 24);
  for (const auto& c : views) {
    const CameraView v = render_view(kUnit, ShadingModel{}, c, {kBounds});
    int hits = 0;
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x) {
        const float d = v.depth_at(x, y);
        if (d <= 0.0f) continue;
        ++hits;
        EXPECT_NEAR((v.center() + d * v.pixel_direction(x, y)).norm(), 1.0, 1e-5);
      }
    EXPECT_GT(hits, 50);
  }
}

TEST(Shading, LambertianIsViewIndependent) {
  ShadingModel sh;
  const Vec3 p(0.3, 0.4, 0.866), n = p.normalized();
  Rng rng(4);
  const Rgb ref = sh.shade(p, n, n);
  for (int i = 0; i < 20; ++i) {
    Vec3 v = rng.unit_vector();
    if (v.dot(n) < 0) v = -v;
    EXPECT_LT((sh.shade(p, n, v) - ref).abs().maxCoeff(), 1e-15);
  }
}

TEST(Shading, SpecularVariesWithView) {
  ShadingModel sh;
  sh.specular = {0.8, 4.0};
  const Vec3 n = Vec3::UnitZ();
  const Vec3 p = Vec3::UnitZ();
  const Vec3 mirror = 2.0 * n.dot(sh.lights[0].direction) * n - sh.lights[0].direction;
  const Rgb near_mirror = sh.shade(p, n, mirror.normalized());
  const Rgb grazing = sh.shade(p, n, Vec3(-mirror.x(), -mirror.y(), 0.05).normalized());
  EXPECT_GT((near_mirror - grazing).abs().maxCoeff(), 0.05);
}

TEST(Perturb, NoRegionsMatchesSampling) {
  const Aabb box{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  const VoxelSdf a = perturb_sdf(kUnit, {}, {24, 24, 24}, box);
  const VoxelSdf b = sample_to_grid(kUnit, {24, 24, 24}, box);
  EXPECT_EQ(a.grid().values(), b.grid().values());
}

TEST(Perturb, OffsetsConfinedAndBounded) {
  const Aabb box{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  Rng rng(mix_seed(7, 0));
  std::vector<PerturbRegion> regions;
  for (int i = 0; i < 5; ++i) regions.push_back({rng.unit_vector(), 0.5, 0.08, static_cast<std::uint64_t>(i + 1)});
  const VoxelSdf p = perturb_sdf(kUnit, regions, {32, 32, 32}, box);
  const VoxelSdf s = sample_to_grid(kUnit, {32, 32, 32}, box);
  double in_sum = 0, out_max = 0;
  int in_n = 0;
  for (std::size_t i = 0; i < p.grid().size(); ++i) {
    const Vec3 x = p.grid().node_position(i);
    int covering = 0;
    for (const auto& r : regions) covering += (x - r.center).norm() < r.radius;
    const double diff = std::abs(double(p.grid().values()[i]) - double(s.grid().values()[i]));
    EXPECT_LE(diff, 0.08 * covering + 1e-6);
    if (covering) {
      in_sum += diff;
      ++in_n;
    } else {
      out_max = std::max(out_max, diff);
    }
  }
  EXPECT_EQ(out_max, 0.0);
  ASSERT_GT(in_n, 0);
  EXPECT_GT(in_sum / in_n, 1e-3);
  EXPECT_EQ(perturb_sdf(kUnit, regions, {32, 32, 32}, box).grid().values(), p.grid().values());
}

TEST(Perturb, RejectsCenterOutsideBox) {
  const Aabb box{Vec3::Constant(-1), Vec3::Constant(1)};
  EXPECT_THROW(perturb_sdf(kUnit, {{Vec3(2, 0, 0), 0.3, 0.05, 1}}, {8, 8, 8}, box), Error);
}

TEST(Tsdf, PlaneSignedDistanceAndMasking) {
  // Camera above the plane z = 0 looking straight down; depth filled analytically.
  CameraView cam = look_at(0, Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY(), 40.0, 201, 201);
  cam.depth.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0f);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 d = cam.pixel_direction(x, y);
      cam.depth[static_cast<std::size_t>(y) * cam.width + x] = static_cast<float>(2.0 / -d.z());
    }
  cam.image = Image(cam.width, cam.height, 3);
  const double trunc = 0.1;
  const TsdfVolume vol = tsdf_fuse(std::vector<CameraView>{cam}, {{21, 21, 21}, {Vec3::Constant(-1), Vec3::Constant(1)}, trunc, 0.0, 0});
  const auto& g = vol.sdf.grid();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.node_position(i);
    if (x.head<2>().norm() > 0.3) continue;
    if (x.z() < -trunc - 0.02) {
      EXPECT_EQ(vol.weight[i], 0.0f);
      EXPECT_FLOAT_EQ(g.values()[i], float(trunc));
    } else if (x.z() > -trunc + 0.02) {
      EXPECT_EQ(vol.weight[i], 1.0f);
      EXPECT_NEAR(g.values()[i], std::min(x.z(), trunc), 0.01);
    }
  }
}

TEST(Tsdf, MissPixelsCarveFreeSpaceAndUnseenStayTruncated) {
  CameraView cam = look_at(0, Vec3(0, 0, 5), Vec3::Zero(), Vec3::UnitY(), 20.0, 31, 31);
  cam.depth.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0f);
  const TsdfVolume vol = tsdf_fuse(std::vector<CameraView>{cam}, {{11, 11, 11}, {Vec3::Constant(-3), Vec3::Constant(3)}, 0.2, 0.0, 0});
  const auto& g = vol.sdf.grid();
  int seen = 0, unseen = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_FLOAT_EQ(g.values()[i], 0.2f);
    const auto px = cam.project(g.node_position(i));
    const bool visible = px && std::lround(px->x()) >= 0 && std::lround(px->x()) < 31 && std::lround(px->y()) >= 0 &&
                         std::lround(px->y()) < 31;
    EXPECT_EQ(vol.weight[i], visible ? 1.0f : 0.0f);
    (visible ? seen : unseen)++;
  }
  EXPECT_GT(seen, 0);
  EXPECT_GT(unseen, 0);
}

TEST(Tsdf, MoreViewsGiveLowerChamfer) {
  const Aabb box{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  auto fuse_cd = [&](int n) {
    std::vector<CameraView> views;
    for (auto& c : make_rig(n, RigLayout::sphere, Vec3::Zero(), 3.5, 40.0, 64, 64))
      views.push_back(render_view(kUnit, ShadingModel{}, c, {kBounds}));
    const TsdfVolume vol = tsdf_fuse(views, {{48, 48, 48}, box, 0.1, 0.0, 0});
    return chamfer(extract_surface_points(vol.sdf, &vol.weight), sample_surface(kUnit, {48, 48, 48}, box));
  };
  const double cd5 = fuse_cd(5), cd20 = fuse_cd(20);
  EXPECT_LT(cd20, cd5);
}

TEST(SurfaceSampling, PointsLieOnTheSurface) {
  const auto pts = sample_surface(kUnit, {32, 32, 32}, {Vec3::Constant(-1.5), Vec3::Constant(1.5)});
  ASSERT_GT(pts.size(), 1000u);
  for (const auto& p : pts) EXPECT_NEAR(p.norm(), 1.0, 1e-9);
}

TEST(Dataset, RoundTrip) {
  SceneDataset ds;
  ds.gt_sdf = kUnit;
  ds.bounds = kBounds;
  ds.shading.specular = {0.3, 5.0};
  for (auto& c : make_rig(3, RigLayout::sphere, Vec3::Zero(), 3.5, 40.0, 20, 16))
    ds.views.push_back(render_view(kUnit, ds.shading, c, {kBounds}));
  ds.recon_sdf = sample_to_grid(kUnit, {9, 10, 11}, {Vec3::Constant(-1.5), Vec3::Constant(1.5)});
  ds.validate();
  const fs::path dir = temp_dir("roundtrip");
  save_dataset(ds, dir);
  const SceneDataset back = load_dataset(dir);
  ASSERT_EQ(back.views.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto &a = ds.views[i], &b = back.views[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_LT((a.pose.R - b.pose.R).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.pose.t - b.pose.t).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_DOUBLE_EQ(a.K.fx, b.K.fx);
    EXPECT_EQ(a.depth, b.depth);
    ASSERT_EQ(a.image.data.size(), b.image.data.size());
    for (std::size_t k = 0; k < a.image.data.size(); ++k) EXPECT_NEAR(a.image.data[k], b.image.data[k], 0.5 / 255 + 1e-6);
  }
  EXPECT_EQ(back.recon_sdf.grid().values(), ds.recon_sdf.grid().values());
  EXPECT_EQ(back.recon_sdf.dims(), ds.recon_sdf.dims());
  EXPECT_DOUBLE_EQ(back.gt_sdf(Vec3(0.2, 0.1, 0.3)), kUnit(Vec3(0.2, 0.1, 0.3)));
  EXPECT_DOUBLE_EQ(back.shading.specular.ks, 0.3);
  EXPECT_DOUBLE_EQ(back.bounds.radius, 1.5);
  fs::remove_all(dir);
}

TEST(Dataset, MissingManifestIsIoError) {
  const fs::path dir = temp_dir("missing");
  fs::create_directories(dir);
  try {
    load_dataset(dir);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ValidateRejectsInconsistentDepth) {
  SceneDataset ds;
  ds.gt_sdf = kUnit;
  ds.bounds = kBounds;
  ds.views.push_back(render_view(kUnit, ShadingModel{}, make_rig(1, RigLayout::sphere, Vec3::Zero(), 3.5, 40, 16, 16)[0], {kBounds}));
  ds.validate();
  for (float& d : ds.views[0].depth)
    if (d > 0) d += 0.01f;
  EXPECT_THROW(ds.validate(), Error);
}
