#pragma once

#include "geounc/camera.hpp"
#include "geounc/scene.hpp"
#include "geounc/sdf.hpp"
#include "geounc/surface.hpp"

#include "json.hpp"

#include <memory>
#include <numeric>
#include <span>
#include <sstream>

namespace geounc {

// ---------------------------------------------------------------------------
// Error maps

struct DepthErrorParams {
  BoundingSphere bounds;
  TraceParams trace{1e-4, 256, 1.0, false};
  /// One-sided misses: penalize (with the bounding-sphere diameter) or exclude.
  bool penalize_one_sided_miss = true;
};

/// Per-pixel depth error for pixels where GT or prediction hits.
struct DepthErrorMap {
  int width = 0;
  int height = 0;
  std::vector<std::size_t> pixel;      // linear pixel index of each entry
  std::vector<double> abs_error;       // |pred - gt|
  std::vector<double> sq_error;        // (pred - gt)^2
  std::vector<std::optional<Vec3>> predicted_point;

  std::size_t size() const { return pixel.size(); }
};

template <SdfField F>
DepthErrorMap depth_error_map(const F& field, const CameraView& view, const DepthErrorParams& p) {
  require(view.has_depth(), "depth_error_map needs ground-truth depth");
  const std::size_t n = static_cast<std::size_t>(view.width) * view.height;
  std::vector<double> pred(n, 0.0);
  std::vector<std::optional<Vec3>> hit(n);
  parallel_for(n, [&](std::size_t idx) {
    const int x = static_cast<int>(idx % view.width), y = static_cast<int>(idx / view.width);
    const auto ray = pixel_ray(view, x, y, p.bounds);
    if (!ray) return;
    if (const auto tr = sphere_trace(field, *ray, p.trace)) {
      pred[idx] = tr.hit->t;
      hit[idx] = tr.hit->position;
    }
  });
  DepthErrorMap m;
  m.width = view.width;
  m.height = view.height;
  const double penalty = 2.0 * p.bounds.radius;
  for (std::size_t idx = 0; idx < n; ++idx) {
    const double gt = view.depth[idx];
    const bool gt_hit = gt > 0.0, pred_hit = hit[idx].has_value();
    if (!gt_hit && !pred_hit) continue;
    double e;
    if (gt_hit && pred_hit) {
      e = std::abs(pred[idx] - gt);
    } else {
      if (!p.penalize_one_sided_miss) continue;
      e = penalty;
    }
    m.pixel.push_back(idx);
    m.abs_error.push_back(e);
    m.sq_error.push_back(e * e);
    m.predicted_point.push_back(hit[idx]);
  }
  return m;
}

/// Closest distance to the ground-truth surface (exact for true-distance scenes).
inline double point_3d_error(const Vec3& p, const AnalyticSdf& gt) { return std::abs(gt(p)); }

// ---------------------------------------------------------------------------
// Sparsification and AUSE

struct SparsificationCurve {
  std::vector<double> fractions;
  std::vector<double> by_gt;
  std::vector<double> by_uncertainty;
  double full_mean = 0.0;
};

/// 0, 0.01, ..., 1.00.
inline std::vector<double> default_fractions() {
  std::vector<double> f(101);
  for (int i = 0; i <= 100; ++i) f[i] = i / 100.0;
  return f;
}

namespace detail {
/// Indices sorted by descending key; ties keep original order.
inline std::vector<std::size_t> removal_order(std::span<const double> key) {
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  return order;
}

/// Mean of errors remaining after removing the first `removed` entries of `order`, for each fraction.
inline std::vector<double> remaining_means(std::span<const double> errors, const std::vector<std::size_t>& order,
                                           std::span<const double> fractions) {
  const std::size_t n = errors.size();
  // suffix[k] = sum of errors[order[k..n)]
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] + errors[order[k]];
  std::vector<double> out;
  out.reserve(fractions.size());
  for (double t : fractions) {
    const auto removed = std::min<std::size_t>(n, static_cast<std::size_t>(std::floor(t * n + 1e-9)));
    out.push_back(removed == n ? 0.0 : suffix[removed] / static_cast<double>(n - removed));
  }
  return out;
}
}  // namespace detail

/// Removes the top t*N entries by GT error and by uncertainty (stable; ties by
/// index) and records the mean remaining error. Removing everything yields 0.
inline SparsificationCurve sparsification(std::span<const double> errors, std::span<const double> uncertainties,
                                          std::span<const double> fractions) {
  require(errors.size() == uncertainties.size(), "sparsification: errors and uncertainties differ in length");
  require(!errors.empty(), "sparsification: empty input");
  for (double t : fractions) require(t >= 0.0 && t <= 1.0, "sparsification fractions must lie in [0, 1]");
  SparsificationCurve c;
  c.fractions.assign(fractions.begin(), fractions.end());
  c.by_gt = detail::remaining_means(errors, detail::removal_order(errors), fractions);
  c.by_uncertainty = detail::remaining_means(errors, detail::removal_order(uncertainties), fractions);
  c.full_mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  return c;
}

inline SparsificationCurve sparsification(std::span<const double> errors, std::span<const double> uncertainties) {
  const auto f = default_fractions();
  return sparsification(errors, uncertainties, f);
}

/// Trapezoidal area between the by-uncertainty and by-GT curves, both divided
/// by the full-set mean error.
inline double ause(const SparsificationCurve& c) {
  if (c.full_mean <= 0.0) return 0.0;
  double area = 0.0;
  for (std::size_t i = 1; i < c.fractions.size(); ++i) {
    const double d0 = (c.by_uncertainty[i - 1] - c.by_gt[i - 1]) / c.full_mean;
    const double d1 = (c.by_uncertainty[i] - c.by_gt[i]) / c.full_mean;
    area += 0.5 * (d0 + d1) * (c.fractions[i] - c.fractions[i - 1]);
  }
  return area;
}

inline std::string curve_csv(const SparsificationCurve& c) {
  std::ostringstream os;
  os.precision(9);
  os << "fraction,err_by_gt,err_by_unc\n";
  for (std::size_t i = 0; i < c.fractions.size(); ++i)
    os << c.fractions[i] << ',' << c.by_gt[i] << ',' << c.by_uncertainty[i] << '\n';
  return os.str();
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman needs two equal-length series of >= 2 values");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j);
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Chamfer distance

/// Static 3-d tree for exact nearest-neighbour distance queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> pts) : pts_(pts.begin(), pts.end()) {
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    build(0, idx_.size(), 0);
  }

  /// Euclidean distance to the closest stored point.
  double nearest(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(0, idx_.size(), 0, q, best);
    return std::sqrt(best);
  }

 private:
  void build(std::size_t lo, std::size_t hi, int axis) {
    if (hi - lo <= 1) return;
    const std::size_t mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(lo), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(std::size_t lo, std::size_t hi, int axis, const Vec3& q, double& best) const {
    if (lo >= hi) return;
    const std::size_t mid = (lo + hi) / 2;
    const Vec3& p = pts_[idx_[mid]];
    best = std::min(best, (p - q).squaredNorm());
    const double diff = q[axis] - p[axis];
    const int next = (axis + 1) % 3;
    if (diff < 0.0) {
      search(lo, mid, next, q, best);
      if (diff * diff < best) search(mid + 1, hi, next, q, best);
    } else {
      search(mid + 1, hi, next, q, best);
      if (diff * diff < best) search(lo, mid, next, q, best);
    }
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> idx_;
};

namespace detail {
inline double mean_nearest(std::span<const Vec3> from, const KdTree& to) {
  std::vector<double> d(from.size());
  parallel_for(from.size(), [&](std::size_t i) { d[i] = to.nearest(from[i]); });
  double s = 0.0;
  for (double v : d) s += v;
  return s / static_cast<double>(from.size());
}
}  // namespace detail

/// 0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|).
inline double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  require(!a.empty() && !b.empty(), "chamfer: empty point set");
  const double ab = detail::mean_nearest(a, KdTree(b));
  const double ba = detail::mean_nearest(b, KdTree(a));
  return 0.5 * (ab + ba);
}

// ---------------------------------------------------------------------------
// Unit-sphere normalization

/// x -> (x - center) * scale.
struct Similarity {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& x) const { return (x - center) * scale; }
  Vec3 inverse(const Vec3& y) const { return y / scale + center; }
};

/// Centers the bounding box at the origin and scales its half-diagonal to 1.
inline Similarity unit_sphere_transform(std::span<const Vec3> pts) {
  require(!pts.empty(), "normalize: empty point set");
  Aabb box{pts[0], pts[0]};
  for (const Vec3& p : pts) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  const double half_diag = 0.5 * box.extent().norm();
  require(half_diag > 0.0, "normalize: zero extent");
  return {box.center(), 1.0 / half_diag};
}

inline std::vector<Vec3> transform_points(const Similarity& s, std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const Vec3& p : pts) out.push_back(s.apply(p));
  return out;
}

struct NormalizedPoints {
  std::vector<Vec3> points;
  Similarity transform;
};

inline NormalizedPoints normalize_to_unit_sphere(std::span<const Vec3> pts) {
  const Similarity s = unit_sphere_transform(pts);
  return {transform_points(s, pts), s};
}

// ---------------------------------------------------------------------------
// Reports

struct AuseReport {
  double ause_mse = 0.0;
  double ause_mae = 0.0;
  double ause_3d = 0.0;
  double cd = 0.0;
  std::size_t n_pixels = 0;
  std::size_t n_points = 0;

  nlohmann::json to_json() const {
    return {{"ause_mse", ause_mse}, {"ause_mae", ause_mae}, {"ause_3d", ause_3d},
            {"cd", cd},             {"n_pixels", n_pixels}, {"n_points", n_points}};
  }
};

inline std::string ascii_ply(std::span<const Vec3> pts) {
  std::ostringstream os;
  os.precision(9);
  os << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
     << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const Vec3& p : pts) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  return os.str();
}

}  // namespace geounc
