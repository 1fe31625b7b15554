#pragma once

#include "geounc/camera.hpp"
#include "geounc/consistency.hpp"
#include "geounc/grid.hpp"
#include "geounc/render.hpp"
#include "geounc/surface.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <map>
#include <unordered_map>

namespace geounc {

/// Mirror of the unit vector `to_camera` about the unit normal.
inline Vec3 reflection_dir(const Vec3& to_camera, const Vec3& normal) {
  return 2.0 * normal.dot(to_camera) * normal - to_camera;
}

using ShBasis = Eigen::Matrix<double, 9, 1>;

/// Real spherical harmonics up to degree 2.
inline ShBasis sh_basis(const Vec3& w) {
  const double x = w.x(), y = w.y(), z = w.z();
  ShBasis b;
  b << 0.28209479177387814, 0.4886025119029199 * y, 0.4886025119029199 * z, 0.4886025119029199 * x,
      1.0925484305920792 * x * y, 1.0925484305920792 * y * z, 0.31539156525252005 * (3.0 * z * z - 1.0),
      1.0925484305920792 * x * z, 0.5462742152960396 * (x * x - y * y);
  return b;
}

/// Per-cell view-independent color and degree-2 SH lobe over the reflection direction.
struct DecoupledCell {
  Rgb c_vi = Rgb::Zero();
  Eigen::Matrix<double, 9, 3> coef = Eigen::Matrix<double, 9, 3>::Zero();
  int count = 0;
};

class DecoupledField {
 public:
  DecoupledField() = default;
  DecoupledField(const Dims& cells, const Aabb& box) : cells_(cells), box_(box) {
    for (int c : cells) require(c >= 1, "decoupled field needs >= 1 cell per axis");
    require((box.min.array() < box.max.array()).all(), "decoupled field bbox must be non-empty");
  }

  const Dims& dims() const { return cells_; }
  const Aabb& bbox() const { return box_; }

  std::optional<std::size_t> cell_of(const Vec3& p) const {
    if (!box_.contains(p)) return std::nullopt;
    std::size_t idx = 0, stride = 1;
    for (int a = 0; a < 3; ++a) {
      const double u = (p[a] - box_.min[a]) / (box_.max[a] - box_.min[a]) * cells_[a];
      const int i = std::clamp(static_cast<int>(u), 0, cells_[a] - 1);
      idx += stride * static_cast<std::size_t>(i);
      stride *= static_cast<std::size_t>(cells_[a]);
    }
    return idx;
  }

  const DecoupledCell* cell(const Vec3& p) const {
    const auto idx = cell_of(p);
    if (!idx) return nullptr;
    const auto it = data_.find(*idx);
    return it == data_.end() ? nullptr : &it->second;
  }

  std::unordered_map<std::size_t, DecoupledCell>& cells() { return data_; }
  const std::unordered_map<std::size_t, DecoupledCell>& cells() const { return data_; }

  /// View-dependent color at p for reflection direction w_r, clamped >= 0.
  Rgb view_dependent(const Vec3& p, const Vec3& w_r) const {
    const DecoupledCell* c = cell(p);
    if (!c) return Rgb::Zero();
    return (c->coef.transpose() * sh_basis(w_r)).array().max(0.0);
  }

  Rgb view_independent(const Vec3& p) const {
    const DecoupledCell* c = cell(p);
    return c ? c->c_vi : Rgb::Zero();
  }

 private:
  Dims cells_{1, 1, 1};
  Aabb box_{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  std::unordered_map<std::size_t, DecoupledCell> data_;
};

struct DecoupleParams {
  int samples_per_view = 2048;
  double lambda = 1e-3;
  std::uint64_t seed = 0;
  Dims cells{64, 64, 64};
  Aabb bbox{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  bool occlusion_test = true;
  TraceParams trace{1e-4, 256, 1.0, false};

  void validate() const {
    require(samples_per_view >= 1, "decouple samples_per_view must be >= 1");
    require(lambda > 0.0, "decouple lambda must be > 0");
  }
};

/// One color observation of a surface sample.
struct ColorObservation {
  ShBasis basis;
  Rgb color;
};

/// A surface sample with all its unoccluded observations.
struct ObservedPoint {
  Vec3 position;
  std::vector<ColorObservation> obs;
};

/// Traces jittered stratified pixels of every view to the surface and gathers
/// each hit's observations in all views that see it.
template <SdfField F>
std::vector<ObservedPoint> gather_observations(const std::vector<CameraView>& views, const F& field,
                                               const BoundingSphere& bounds, const DecoupleParams& p) {
  struct Job {
    std::size_t view;
    double u, v;
  };
  std::vector<Job> jobs;
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    const CameraView& cam = views[vi];
    Rng rng(mix_seed(p.seed, static_cast<std::uint64_t>(cam.id)));
    const int side = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(p.samples_per_view)))));
    for (int sy = 0; sy < side; ++sy)
      for (int sx = 0; sx < side; ++sx) {
        const double u = (sx + rng.uniform()) * (cam.width - 1) / side;
        const double v = (sy + rng.uniform()) * (cam.height - 1) / side;
        jobs.push_back({vi, u, v});
      }
  }
  ConsistencyParams vis;
  vis.trace = p.trace;
  std::vector<ObservedPoint> pts(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const CameraView& cam = views[jobs[i].view];
    const auto ray = pixel_ray(cam, jobs[i].u, jobs[i].v, bounds);
    if (!ray) return;
    const auto tr = sphere_trace(field, *ray, p.trace);
    if (!tr.hit || tr.hit->degenerate_normal) return;
    const Vec3 x = tr.hit->position;
    const Vec3 n = tr.hit->normal;
    ObservedPoint op{x, {}};
    for (std::size_t vj = 0; vj < views.size(); ++vj) {
      const CameraView& other = views[vj];
      const Vec3 to_cam = (other.center() - x).normalized();
      if (n.dot(to_cam) <= 0.0) continue;
      const auto px = other.project(x);
      if (!px || !other.inside(*px)) continue;
      if (vj != jobs[i].view && p.occlusion_test && occluded(field, x, other.center(), vis, &bounds)) continue;
      Rgb c;
      for (int ch = 0; ch < 3; ++ch) c[ch] = bilinear(other.image, px->x(), px->y(), ch);
      op.obs.push_back({sh_basis(reflection_dir(to_cam, n)), c});
    }
    pts[i] = std::move(op);
  });
  std::erase_if(pts, [](const ObservedPoint& op) { return op.obs.empty(); });
  return pts;
}

/// Per-cell ridge fit of observed colors as c_point + SH(w_r) coef. The
/// per-point constant absorbs albedo variation inside a cell, so the lobe is
/// fit on within-point deviations; its constant term is then set so the lobe's
/// minimum over the cell's observations is 0, making C_vd >= 0 where observed.
/// Cells with fewer than 4 observations keep coef = 0 and c_vi = mean color.
inline DecoupledField fit_decoupled(const std::vector<ObservedPoint>& points, const DecoupleParams& p) {
  p.validate();
  DecoupledField field(p.cells, p.bbox);
  std::map<std::size_t, std::vector<const ObservedPoint*>> bins;
  for (const auto& op : points)
    if (auto idx = field.cell_of(op.position)) bins[*idx].push_back(&op);

  std::vector<std::pair<std::size_t, std::vector<const ObservedPoint*>>> work(bins.begin(), bins.end());
  std::vector<DecoupledCell> solved(work.size());
  parallel_for(work.size(), [&](std::size_t w) {
    const auto& members = work[w].second;
    DecoupledCell cell;
    Rgb sum = Rgb::Zero();
    for (const auto* op : members) {
      cell.count += static_cast<int>(op->obs.size());
      for (const auto& o : op->obs) sum += o.color;
    }
    if (cell.count < 4) {
      cell.c_vi = sum / std::max(1, cell.count);
      solved[w] = cell;
      return;
    }
    Eigen::Matrix<double, 9, 9> A = Eigen::Matrix<double, 9, 9>::Zero();
    Eigen::Matrix<double, 9, 3> b = Eigen::Matrix<double, 9, 3>::Zero();
    for (const auto* op : members) {
      ShBasis mean_x = ShBasis::Zero();
      Rgb mean_y = Rgb::Zero();
      for (const auto& o : op->obs) {
        mean_x += o.basis;
        mean_y += o.color;
      }
      mean_x /= static_cast<double>(op->obs.size());
      mean_y /= static_cast<double>(op->obs.size());
      for (const auto& o : op->obs) {
        const ShBasis dx = o.basis - mean_x;
        const Eigen::RowVector3d dy = (o.color - mean_y).matrix().transpose();
        A.noalias() += dx * dx.transpose();
        b.noalias() += dx * dy;
      }
    }
    A.diagonal().array() += p.lambda * cell.count;
    cell.coef = A.ldlt().solve(b);
    cell.coef.row(0).setZero();

    Eigen::RowVector3d lobe_min = Eigen::RowVector3d::Constant(std::numeric_limits<double>::infinity());
    for (const auto* op : members)
      for (const auto& o : op->obs) lobe_min = lobe_min.cwiseMin(o.basis.transpose() * cell.coef);
    cell.coef.row(0) = -lobe_min / sh_basis(Vec3::UnitZ())[0];

    Rgb resid = Rgb::Zero();
    for (const auto* op : members)
      for (const auto& o : op->obs)
        resid += o.color - (cell.coef.transpose() * o.basis).array().max(0.0);
    cell.c_vi = resid / cell.count;
    solved[w] = cell;
  });
  for (std::size_t w = 0; w < work.size(); ++w) field.cells().emplace(work[w].first, solved[w]);
  return field;
}

template <SdfField F>
DecoupledField fit_decoupled(const std::vector<CameraView>& views, const F& field, const BoundingSphere& bounds,
                             const DecoupleParams& p) {
  require(!views.empty(), "fit_decoupled needs at least one view");
  return fit_decoupled(gather_observations(views, field, bounds, p), p);
}

/// Per-pixel clamped view-dependent color; misses and unfitted cells are 0.
template <SdfField F>
Image render_vd(const CameraView& view, const F& field, const DecoupledField& dec, const BoundingSphere& bounds,
                const TraceParams& trace = {1e-4, 256, 1.0, false}) {
  Image out(view.width, view.height, 3, 0.0f);
  parallel_for(out.pixel_count(), [&](std::size_t idx) {
    const int x = static_cast<int>(idx % view.width), y = static_cast<int>(idx / view.width);
    const auto ray = pixel_ray(view, x, y, bounds);
    if (!ray) return;
    const auto tr = sphere_trace(field, *ray, trace);
    if (!tr.hit) return;
    const Rgb c = dec.view_dependent(tr.hit->position, reflection_dir(-ray->dir, tr.hit->normal));
    for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = static_cast<float>(c[ch]);
  });
  return out;
}

/// clamp(image - I_vd, 0, 1) for every view.
template <SdfField F>
std::vector<Image> decouple_images(const std::vector<CameraView>& views, const DecoupledField& dec, const F& field,
                                   const BoundingSphere& bounds, std::vector<Image>* vd_out = nullptr) {
  std::vector<Image> out;
  out.reserve(views.size());
  for (const auto& v : views) {
    Image vd = render_vd(v, field, dec, bounds);
    Image processed = v.image;
    for (std::size_t i = 0; i < processed.data.size(); ++i)
      processed.data[i] = std::clamp(processed.data[i] - vd.data[i], 0.0f, 1.0f);
    out.push_back(std::move(processed));
    if (vd_out) vd_out->push_back(std::move(vd));
  }
  return out;
}

}  // namespace geounc
