#pragma once

#include "geounc/camera.hpp"
#include "geounc/render.hpp"
#include "geounc/sdf.hpp"
#include "geounc/surface.hpp"

#include <optional>
#include <vector>

namespace geounc {

/// A spherical region of injected reconstruction error.
struct PerturbRegion {
  Vec3 center = Vec3::Zero();
  double radius = 0.3;
  double amplitude = 0.05;
  std::uint64_t seed = 0;
};

/// Band-limited noise in [-1, 1]: three seeded plane waves whose wavelength is
/// tied to the region radius.
inline double region_noise(const PerturbRegion& r, const Vec3& x) {
  Rng rng(r.seed);
  const double k = 2.0 * std::numbers::pi / (1.5 * r.radius);
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const Vec3 dir = rng.unit_vector();
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s += std::sin(k * dir.dot(x - r.center) + phase);
  }
  return s / 3.0;
}

/// Additive error of one region at x: cosine falloff to 0 at the boundary.
inline double region_offset(const PerturbRegion& r, const Vec3& x) {
  const double d = (x - r.center).norm();
  if (d >= r.radius) return 0.0;
  const double falloff = 0.5 * (1.0 + std::cos(std::numbers::pi * d / r.radius));
  return r.amplitude * falloff * region_noise(r, x);
}

/// Samples `src` on a lattice and adds smooth noise inside each region; nodes
/// outside every region hold the sampled value unchanged.
template <SdfField F>
VoxelSdf perturb_sdf(const F& src, const std::vector<PerturbRegion>& regions, const Dims& dims, const Aabb& box) {
  for (const auto& r : regions) {
    require(r.radius > 0.0, "perturbation radius must be positive");
    require(r.amplitude >= 0.0, "perturbation amplitude must be >= 0");
    require(box.contains(r.center), "perturbation region center must lie inside the grid bbox");
  }
  VoxelSdf out(dims, box);
  auto& g = out.grid();
  parallel_for(g.size(), [&](std::size_t i) {
    const Vec3 p = g.node_position(i);
    double v = src(p);
    const auto sampled = static_cast<float>(v);
    double offset = 0.0;
    for (const auto& r : regions) offset += region_offset(r, p);
    g.values()[i] = offset == 0.0 ? sampled : static_cast<float>(static_cast<double>(sampled) + offset);
  });
  return out;
}

/// Fused volume plus the per-voxel observation count.
struct TsdfVolume {
  VoxelSdf sdf;
  std::vector<float> weight;
};

struct TsdfParams {
  Dims dims{64, 64, 64};
  Aabb bbox{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  double truncation = 0.1;
  double depth_noise = 0.0;
  std::uint64_t seed = 0;
};

/// Uniform-weight truncated signed distance fusion. A voxel projecting onto a
/// miss pixel counts as free space (+truncation); a voxel more than one
/// truncation behind the observed depth is occluded and skipped.
inline TsdfVolume tsdf_fuse(const std::vector<const CameraView*>& views, const TsdfParams& p) {
  for (int d : p.dims) require(d >= 2, "tsdf dims must be >= 2 per axis");
  require(p.truncation > 0.0, "tsdf truncation must be positive");
  require(p.depth_noise >= 0.0, "tsdf depth noise must be >= 0");
  require(!views.empty(), "tsdf_fuse needs at least one view");

  std::vector<std::vector<float>> depths;
  depths.reserve(views.size());
  for (const CameraView* v : views) {
    require(v->has_depth(), "tsdf_fuse: view " + std::to_string(v->id) + " has no depth");
    std::vector<float> d = v->depth;
    if (p.depth_noise > 0.0) {
      Rng rng(mix_seed(p.seed, static_cast<std::uint64_t>(v->id)));
      for (float& x : d)
        if (x > 0.0f) x = static_cast<float>(std::max(1e-6, x + p.depth_noise * rng.normal()));
    }
    depths.push_back(std::move(d));
  }

  TsdfVolume vol{VoxelSdf(p.dims, p.bbox, static_cast<float>(p.truncation)), {}};
  auto& g = vol.sdf.grid();
  vol.weight.assign(g.size(), 0.0f);
  parallel_for(g.size(), [&](std::size_t i) {
    const Vec3 x = g.node_position(i);
    double sum = 0.0;
    int count = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const CameraView& cam = *views[v];
      const auto px = cam.project(x);
      if (!px) continue;
      const int u = static_cast<int>(std::lround(px->x()));
      const int w = static_cast<int>(std::lround(px->y()));
      if (u < 0 || w < 0 || u >= cam.width || w >= cam.height) continue;
      const double depth = depths[v][static_cast<std::size_t>(w) * cam.width + u];
      double obs = p.truncation;
      if (depth > 0.0) {
        obs = depth - (x - cam.center()).norm();
        if (obs < -p.truncation) continue;
        obs = std::min(obs, p.truncation);
      }
      sum += obs;
      ++count;
    }
    if (count > 0) {
      g.values()[i] = static_cast<float>(sum / count);
      vol.weight[i] = static_cast<float>(count);
    }
  });
  return vol;
}

inline TsdfVolume tsdf_fuse(const std::vector<CameraView>& views, const TsdfParams& p) {
  std::vector<const CameraView*> ptrs;
  for (const auto& v : views) ptrs.push_back(&v);
  return tsdf_fuse(ptrs, p);
}

/// Zero crossings along lattice edges, linearly interpolated. With weights,
/// edges touching an unobserved node are skipped.
inline std::vector<Vec3> extract_surface_points(const VoxelSdf& sdf, const std::vector<float>* weight = nullptr) {
  const auto& g = sdf.grid();
  const Dims& d = g.dims();
  std::vector<Vec3> pts;
  auto edge = [&](int i, int j, int k, int di, int dj, int dk) {
    const int i2 = i + di, j2 = j + dj, k2 = k + dk;
    if (i2 >= d[0] || j2 >= d[1] || k2 >= d[2]) return;
    const std::size_t a = g.index(i, j, k), b = g.index(i2, j2, k2);
    if (weight && ((*weight)[a] <= 0.0f || (*weight)[b] <= 0.0f)) return;
    const double va = g.values()[a], vb = g.values()[b];
    if ((va > 0.0) == (vb > 0.0)) return;
    const double s = va / (va - vb);
    pts.push_back(g.node_position(i, j, k) + s * (g.node_position(i2, j2, k2) - g.node_position(i, j, k)));
  };
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        edge(i, j, k, 1, 0, 0);
        edge(i, j, k, 0, 1, 0);
        edge(i, j, k, 0, 0, 1);
      }
  return pts;
}

/// Points on an analytic surface: lattice zero crossings projected onto the
/// level set with a few Newton steps.
inline std::vector<Vec3> sample_surface(const AnalyticSdf& sdf, const Dims& dims, const Aabb& box) {
  std::vector<Vec3> pts = extract_surface_points(sample_to_grid(sdf, dims, box));
  for (Vec3& p : pts) {
    for (int it = 0; it < 5; ++it) {
      const SdfSample s = sdf.eval(p);
      const double g2 = s.grad.squaredNorm();
      if (g2 < 1e-12) break;
      p -= s.value * s.grad / g2;
    }
  }
  return pts;
}

/// Views, ground-truth scene, and the reconstruction under evaluation.
struct SceneDataset {
  std::vector<CameraView> views;
  AnalyticSdf gt_sdf;
  ShadingModel shading;
  VoxelSdf recon_sdf;
  BoundingSphere bounds;

  const CameraView& view(int id) const {
    for (const auto& v : views)
      if (v.id == id) return v;
    fail(ErrorKind::validation, "no view with id " + std::to_string(id));
  }

  /// Checks camera invariants, frustum coverage and depth/geometry agreement.
  void validate(double depth_tolerance = 1e-3) const {
    require(!views.empty(), "dataset has no views");
    for (const auto& v : views) {
      v.validate();
      const auto c = v.project(bounds.center);
      const double dist = (v.center() - bounds.center).norm();
      require((c && v.inside(*c)) || dist <= bounds.radius,
              "view " + std::to_string(v.id) + " frustum misses the bounding sphere");
      if (!v.has_depth() || gt_sdf.empty()) continue;
      require(v.depth.size() == v.image.pixel_count() || v.image.empty(), "depth/image size mismatch");
      for (int y = 0; y < v.height; ++y)
        for (int x = 0; x < v.width; ++x) {
          const float d = v.depth_at(x, y);
          if (d <= 0.0f) continue;
          const Vec3 p = v.center() + static_cast<double>(d) * v.pixel_direction(x, y);
          require(std::abs(gt_sdf(p)) < depth_tolerance,
                  "view " + std::to_string(v.id) + " depth inconsistent with ground truth at pixel (" +
                      std::to_string(x) + "," + std::to_string(y) + ")");
        }
    }
  }
};

}  // namespace geounc
