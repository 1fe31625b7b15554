#pragma once

#include "geounc/camera.hpp"
#include "geounc/scene.hpp"
#include "geounc/sdf.hpp"
#include "geounc/surface.hpp"

#include <Eigen/LU>

#include <optional>
#include <span>
#include <sstream>
#include <vector>

namespace geounc {

/// Rec. 709 luma.
inline Image to_gray(const Image& rgb) {
  require(rgb.channels == 3, "to_gray expects an RGB image");
  Image g(rgb.width, rgb.height, 1);
  for (std::size_t i = 0; i < g.data.size(); ++i)
    g.data[i] = static_cast<float>(0.2126 * rgb.data[3 * i] + 0.7152 * rgb.data[3 * i + 1] + 0.0722 * rgb.data[3 * i + 2]);
  return g;
}

/// Local plane n^T x + d = 0 through a surface point.
struct TangentPlane {
  Vec3 normal = Vec3::UnitZ();
  Vec3 point = Vec3::Zero();
  double d = 0.0;
  bool degenerate = false;
};

inline TangentPlane tangent_plane(const SurfacePoint& sp) {
  return {sp.normal, sp.position, -sp.normal.dot(sp.position), sp.degenerate_normal};
}

/// Plane-induced homography mapping reference pixels to source pixels:
/// H = K_src (R_rel - t_rel n_ref^T / d_ref) K_ref^-1, with [R_rel | t_rel]
/// taking reference-camera coordinates to source-camera coordinates.
inline Mat3 homography(const TangentPlane& plane, const CameraView& ref, const CameraView& src) {
  const Vec3 n_ref = ref.pose.R * plane.normal;
  const double d_ref = -n_ref.dot(ref.to_camera(plane.point));
  if (std::abs(d_ref) < 1e-9) fail(ErrorKind::degenerate, "tangent plane passes through the reference camera center");
  const Mat3 R_rel = src.pose.R * ref.pose.R.transpose();
  const Vec3 t_rel = src.pose.t - R_rel * ref.pose.t;
  return src.K.matrix() * (R_rel - t_rel * n_ref.transpose() / d_ref) * ref.K.inverse();
}

/// K x K pixel coordinates with per-coordinate validity.
struct PatchGrid {
  int k = 0;
  std::vector<Vec2> coords;
  std::vector<std::uint8_t> valid;

  bool all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
  }
};

/// Axis-aligned K x K grid of 1 px spacing centered on `center`.
inline PatchGrid make_patch(const Vec2& center, int k, int width, int height) {
  require(k >= 1 && k % 2 == 1, "patch size must be odd and >= 1");
  PatchGrid p;
  p.k = k;
  p.coords.reserve(static_cast<std::size_t>(k) * k);
  p.valid.reserve(static_cast<std::size_t>(k) * k);
  const int h = k / 2;
  for (int dy = -h; dy <= h; ++dy)
    for (int dx = -h; dx <= h; ++dx) {
      const Vec2 c = center + Vec2(dx, dy);
      p.coords.push_back(c);
      p.valid.push_back(c.x() >= 0.0 && c.y() >= 0.0 && c.x() <= width - 1 && c.y() <= height - 1);
    }
  return p;
}

/// Applies H homogeneously; coordinates with w < 1e-12 or outside the target image become invalid.
inline PatchGrid warp_patch(const Mat3& H, const PatchGrid& patch, int width, int height) {
  PatchGrid out;
  out.k = patch.k;
  out.coords.resize(patch.coords.size());
  out.valid.resize(patch.coords.size());
  for (std::size_t i = 0; i < patch.coords.size(); ++i) {
    const Vec3 q = H * Vec3(patch.coords[i].x(), patch.coords[i].y(), 1.0);
    if (q.z() < 1e-12) {
      out.coords[i] = Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
      out.valid[i] = 0;
      continue;
    }
    const Vec2 c(q.x() / q.z(), q.y() / q.z());
    out.coords[i] = c;
    out.valid[i] = patch.valid[i] && c.x() >= 0.0 && c.y() >= 0.0 && c.x() <= width - 1 && c.y() <= height - 1;
  }
  return out;
}

/// Bilinear lookup; (x, y) must lie in [0, w-1] x [0, h-1].
inline double bilinear(const Image& img, double x, double y, int channel = 0) {
  const int x0 = std::min(static_cast<int>(x), img.width - 2);
  const int y0 = std::min(static_cast<int>(y), img.height - 2);
  const double fx = x - x0, fy = y - y0;
  const double a = img.at(x0, y0, channel), b = img.at(x0 + 1, y0, channel);
  const double c = img.at(x0, y0 + 1, channel), d = img.at(x0 + 1, y0 + 1, channel);
  return (a + fx * (b - a)) + fy * ((c + fx * (d - c)) - (a + fx * (b - a)));
}

struct PatchSample {
  std::vector<double> values;  // invalid coordinates hold 0
  double valid_fraction = 0.0;
};

inline PatchSample sample_patch(const Image& gray, const PatchGrid& patch) {
  PatchSample s;
  s.values.assign(patch.coords.size(), 0.0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < patch.coords.size(); ++i) {
    if (!patch.valid[i]) continue;
    s.values[i] = bilinear(gray, patch.coords[i].x(), patch.coords[i].y());
    ++valid;
  }
  s.valid_fraction = patch.coords.empty() ? 0.0 : static_cast<double>(valid) / patch.coords.size();
  return s;
}

/// Single-window SSIM with unbiased (co)variances. A 1-sample window has zero variance.
inline double ssim(std::span<const double> a, std::span<const double> b, double dynamic_range = 1.0) {
  require(a.size() == b.size() && !a.empty(), "ssim needs two equal-size non-empty patches");
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  if (a.size() > 1) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double da = a[i] - ma, db = b[i] - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
    va /= n - 1.0;
    vb /= n - 1.0;
    cov /= n - 1.0;
  }
  return ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

// ---------------------------------------------------------------------------
// Pair scores and aggregation

struct PairScore {
  int ref_id = 0;
  int src_id = 0;
  double score = 0.0;  // 1 - SSIM, in [0, 2]
  bool valid = false;
};

struct AggregateScore {
  double score = 0.0;
  int count = 0;
  bool valid = false;
};

/// Mean of the min(k_best, n) lowest valid scores; order-independent.
inline AggregateScore aggregate(std::span<const PairScore> scores, int k_best = 4) {
  require(k_best >= 1, "k_best must be >= 1");
  std::vector<double> v;
  for (const auto& s : scores)
    if (s.valid) v.push_back(s.score);
  if (v.empty()) return {};
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_best), v.size());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += v[i];
  return {sum / static_cast<double>(k), static_cast<int>(k), true};
}

inline AggregateScore aggregate(std::span<const double> scores, int k_best = 4) {
  std::vector<PairScore> ps;
  for (double s : scores) ps.push_back({0, 0, s, true});
  return aggregate(ps, k_best);
}

enum class IntersectMode { zero_crossing, sphere_trace };

struct ConsistencyParams {
  int patch_size = 11;
  int k_best = 4;
  bool occlusion_test = true;
  /// Start offset of the visibility ray, so it does not re-hit its own surface.
  double occlusion_offset = 0.03;
  double occlusion_epsilon = 1e-3;
  IntersectMode mode = IntersectMode::zero_crossing;
  int n_samples = 128;
  TraceParams trace{1e-4, 256, 1.0, false};

  void validate() const {
    require(patch_size >= 1 && patch_size % 2 == 1 && patch_size <= 63, "patch_size must be odd in [1, 63]");
    require(k_best >= 1, "k_best must be >= 1");
    require(n_samples >= 2, "n_samples must be >= 2");
    require(occlusion_offset > 0.0 && occlusion_epsilon > 0.0, "occlusion offset/epsilon must be positive");
  }
};

/// True if `field` has a surface between p and the camera center.
template <SdfField F>
bool occluded(const F& field, const Vec3& p, const Vec3& camera_center, const ConsistencyParams& params,
              const BoundingSphere* bounds = nullptr) {
  Ray r;
  r.origin = p;
  const Vec3 to_cam = camera_center - p;
  const double dist = to_cam.norm();
  r.dir = to_cam / dist;
  r.t_near = params.occlusion_offset;
  r.t_far = dist - params.occlusion_epsilon;
  if (bounds) {
    double t0 = 0.0, t1 = 0.0;
    if (bounds->clip(r.origin, r.dir, t0, t1)) r.t_far = std::min(r.t_far, t1);
  }
  if (r.t_far <= r.t_near) return false;
  TraceParams tp = params.trace;
  tp.epsilon = params.occlusion_epsilon;
  return sphere_trace(field, r, tp).hit.has_value();
}

/// Reference-side patch of one surface point, shared across all source views.
struct RefPatch {
  TangentPlane plane;
  PatchGrid grid;
  std::vector<double> values;
  bool valid = false;
};

inline RefPatch reference_patch(const SurfacePoint& sp, const CameraView& ref, const Image& ref_gray, int k) {
  RefPatch rp;
  rp.plane = tangent_plane(sp);
  if (rp.plane.degenerate) return rp;
  const auto c = ref.project(sp.position);
  if (!c || !ref.inside(*c, k / 2)) return rp;
  rp.grid = make_patch(*c, k, ref.width, ref.height);
  if (!rp.grid.all_valid()) return rp;
  rp.values = sample_patch(ref_gray, rp.grid).values;
  rp.valid = true;
  return rp;
}

/// 1 - SSIM of the homography-warped patch, without the visibility test.
inline PairScore photometric_score(const RefPatch& rp, const CameraView& ref, const CameraView& src,
                                   const Image& src_gray) {
  PairScore out{ref.id, src.id, 0.0, false};
  if (!rp.valid) return out;
  const Vec3 to_src = src.center() - rp.plane.point;
  if (rp.plane.normal.dot(to_src) <= 0.0) return out;  // back-facing in src
  const auto c = src.project(rp.plane.point);
  if (!c || !src.inside(*c)) return out;
  const Vec3 n_ref = ref.pose.R * rp.plane.normal;
  if (std::abs(n_ref.dot(ref.to_camera(rp.plane.point))) < 1e-9) return out;
  const Mat3 H = homography(rp.plane, ref, src);
  const PatchGrid warped = warp_patch(H, rp.grid, src.width, src.height);
  if (!warped.all_valid()) return out;
  const PatchSample s = sample_patch(src_gray, warped);
  out.score = std::clamp(1.0 - ssim(rp.values, s.values), 0.0, 2.0);
  out.valid = true;
  return out;
}

/// Full pair score: patch warp, SSIM and (optionally) the src visibility test.
template <SdfField F>
PairScore pair_consistency(const SurfacePoint& sp, const CameraView& ref, const Image& ref_gray,
                           const CameraView& src, const Image& src_gray, const ConsistencyParams& params,
                           const F* occluder = nullptr, const BoundingSphere* bounds = nullptr) {
  const RefPatch rp = reference_patch(sp, ref, ref_gray, params.patch_size);
  PairScore s = photometric_score(rp, ref, src, src_gray);
  if (s.valid && params.occlusion_test && occluder && src.id != ref.id &&
      occluded(*occluder, sp.position, src.center(), params, bounds))
    s.valid = false;
  return s;
}

// ---------------------------------------------------------------------------
// Batch pseudo labels

/// Views plus the grayscale images used for scoring (raw or processed).
class ConsistencyContext {
 public:
  ConsistencyContext(const std::vector<CameraView>& views, BoundingSphere bounds,
                     const std::vector<Image>* rgb_override = nullptr)
      : bounds_(bounds) {
    require(!rgb_override || rgb_override->size() == views.size(), "override image count must match views");
    for (std::size_t i = 0; i < views.size(); ++i) {
      views_.push_back(&views[i]);
      gray_.push_back(to_gray(rgb_override ? (*rgb_override)[i] : views[i].image));
    }
  }

  /// Restricts scoring to a subset of views (e.g. the current training set).
  ConsistencyContext(const std::vector<const CameraView*>& views, BoundingSphere bounds) : bounds_(bounds) {
    for (const CameraView* v : views) {
      views_.push_back(v);
      gray_.push_back(to_gray(v->image));
    }
  }

  std::size_t size() const { return views_.size(); }
  const CameraView& view(std::size_t i) const { return *views_[i]; }
  const Image& gray(std::size_t i) const { return gray_[i]; }
  const BoundingSphere& bounds() const { return bounds_; }

 private:
  std::vector<const CameraView*> views_;
  std::vector<Image> gray_;
  BoundingSphere bounds_;
};

/// A pixel of one context view.
struct RaySample {
  std::size_t view = 0;  // index into the context
  int x = 0;
  int y = 0;

  auto operator<=>(const RaySample&) const = default;
};

struct PseudoLabel {
  SurfacePoint point;
  double score = 0.0;  // G in [0, 2]
  int count = 0;
  int ref_view_id = 0;
  int pixel_x = 0;
  int pixel_y = 0;
};

struct LabelBatch {
  std::vector<PseudoLabel> labels;
  std::size_t misses = 0;
  std::size_t no_valid_pairs = 0;
};

/// Uniform pixels with a border margin, sorted by (view, row, column).
inline std::vector<RaySample> sample_rays(const ConsistencyContext& ctx, std::size_t n, Rng& rng, int margin) {
  std::vector<RaySample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RaySample s;
    s.view = rng.index(ctx.size());
    const CameraView& v = ctx.view(s.view);
    const int w = std::max(1, v.width - 2 * margin), h = std::max(1, v.height - 2 * margin);
    s.x = margin + static_cast<int>(rng.index(static_cast<std::size_t>(w)));
    s.y = margin + static_cast<int>(rng.index(static_cast<std::size_t>(h)));
    out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const RaySample& a, const RaySample& b) {
    return std::tie(a.view, a.y, a.x) < std::tie(b.view, b.y, b.x);
  });
  return out;
}

template <SdfField F>
std::optional<SurfacePoint> intersect(const F& field, const Ray& ray, const ConsistencyParams& params) {
  if (params.mode == IntersectMode::zero_crossing) return find_zero_crossing(field, ray, params.n_samples);
  return sphere_trace(field, ray, params.trace).hit;
}

/// Scores one surface point seen from context view `ref` against all others.
template <SdfField F>
AggregateScore score_point(const ConsistencyContext& ctx, const F& field, std::size_t ref, const SurfacePoint& sp,
                           const ConsistencyParams& params) {
  const CameraView& rv = ctx.view(ref);
  const RefPatch rp = reference_patch(sp, rv, ctx.gray(ref), params.patch_size);
  if (!rp.valid) return {};
  std::vector<std::pair<PairScore, std::size_t>> scored;
  for (std::size_t j = 0; j < ctx.size(); ++j) {
    if (j == ref) continue;
    PairScore s = photometric_score(rp, rv, ctx.view(j), ctx.gray(j));
    if (s.valid) scored.emplace_back(s, j);
  }
  std::vector<PairScore> kept;
  if (params.occlusion_test) {
    // Visibility is only needed for the pairs that can enter the best-k set.
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first.score < b.first.score; });
    for (const auto& [s, j] : scored) {
      if (static_cast<int>(kept.size()) >= params.k_best) break;
      if (!occluded(field, sp.position, ctx.view(j).center(), params, &ctx.bounds())) kept.push_back(s);
    }
  } else {
    for (const auto& e : scored) kept.push_back(e.first);
  }
  return aggregate(kept, params.k_best);
}

/// Intersects each ray with `field`, scores the hit against all other views and
/// keeps points with at least one valid pair. Output follows input order.
template <SdfField F>
LabelBatch generate_pseudo_labels(const ConsistencyContext& ctx, const F& field, std::span<const RaySample> rays,
                                  const ConsistencyParams& params) {
  params.validate();
  std::vector<std::optional<PseudoLabel>> slots(rays.size());
  std::vector<std::uint8_t> missed(rays.size(), 0);
  parallel_for(rays.size(), [&](std::size_t i) {
    const RaySample& rs = rays[i];
    const CameraView& v = ctx.view(rs.view);
    const auto ray = pixel_ray(v, rs.x, rs.y, ctx.bounds());
    if (!ray) {
      missed[i] = 1;
      return;
    }
    auto sp = intersect(field, *ray, params);
    if (!sp) {
      missed[i] = 1;
      return;
    }
    sp->view_id = v.id;
    const AggregateScore agg = score_point(ctx, field, rs.view, *sp, params);
    if (!agg.valid) return;
    slots[i] = PseudoLabel{*sp, agg.score, agg.count, v.id, rs.x, rs.y};
  });
  LabelBatch batch;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    if (slots[i])
      batch.labels.push_back(*slots[i]);
    else if (missed[i])
      ++batch.misses;
    else
      ++batch.no_valid_pairs;
  }
  return batch;
}

inline std::string labels_csv(std::span<const PseudoLabel> labels) {
  std::ostringstream os;
  os.precision(9);
  os << "x,y,z,G,count\n";
  for (const auto& l : labels)
    os << l.point.position.x() << ',' << l.point.position.y() << ',' << l.point.position.z() << ',' << l.score << ','
       << l.count << '\n';
  return os.str();
}

}  // namespace geounc
