#pragma once

#include "geounc/camera.hpp"
#include "geounc/sdf.hpp"

#include <optional>

namespace geounc {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * dir; }
};

struct SurfacePoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double t = 0.0;
  std::optional<int> view_id;
  double residual = 0.0;
  /// Set when |grad f| < 1e-6 and the normal fell back to -dir.
  bool degenerate_normal = false;
};

/// Unit normal at p; falls back to -dir (flagged) when the gradient vanishes.
template <SdfField F>
Vec3 surface_normal(const F& field, const Vec3& p, const Vec3& dir, bool& degenerate) {
  const Vec3 g = sdf_gradient(field, p);
  const double n = g.norm();
  degenerate = n < 1e-6;
  return degenerate ? Vec3(-dir) : Vec3(g / n);
}

template <SdfField F>
SurfacePoint make_surface_point(const F& field, const Ray& ray, double t, double value) {
  SurfacePoint sp;
  sp.t = t;
  sp.position = ray.at(t);
  sp.residual = std::abs(value);
  sp.normal = surface_normal(field, sp.position, ray.dir, sp.degenerate_normal);
  return sp;
}

/// Samples f at n_samples uniform parameters over [t_near, t_far] and linearly
/// interpolates the first outside-to-inside sign change.
template <SdfField F>
std::optional<SurfacePoint> find_zero_crossing(const F& field, const Ray& ray, int n_samples) {
  require(n_samples >= 2, "find_zero_crossing needs at least 2 samples");
  const double step = (ray.t_far - ray.t_near) / (n_samples - 1);
  double t_prev = ray.t_near;
  double s_prev = field(ray.at(t_prev));
  for (int i = 1; i < n_samples; ++i) {
    const double t = i == n_samples - 1 ? ray.t_far : ray.t_near + i * step;
    const double s = field(ray.at(t));
    if (s_prev > 0.0 && s <= 0.0) {
      const double t_star = (s_prev * t - s * t_prev) / (s_prev - s);
      return make_surface_point(field, ray, t_star, field(ray.at(t_star)));
    }
    t_prev = t;
    s_prev = s;
  }
  return std::nullopt;
}

struct TraceParams {
  double epsilon = 1e-4;
  int max_steps = 256;
  double omega = 1.0;
  /// Permit omega > 1 on non-metric fields (grids); clamped to 1 otherwise.
  bool allow_overrelax_on_grids = false;
};

struct TraceResult {
  std::optional<SurfacePoint> hit;
  /// The march ran out of steps before hitting or leaving the interval.
  bool step_limit = false;

  explicit operator bool() const { return hit.has_value(); }
};

/// Sphere tracing t <- t + omega f(p(t)). Negative samples step backwards at
/// omega = 1, which also recovers from over-relaxed overshoot.
template <SdfField F>
TraceResult sphere_trace(const F& field, const Ray& ray, const TraceParams& params = {}) {
  require(params.epsilon > 0.0 && params.max_steps >= 1, "sphere_trace needs epsilon > 0 and max_steps >= 1");
  require(params.omega >= 1.0 && params.omega <= 1.6, "sphere_trace omega must lie in [1, 1.6]");
  double omega = params.omega;
  if (!is_metric_field_v<F> && !params.allow_overrelax_on_grids) omega = 1.0;

  double t = ray.t_near;
  for (int step = 0; step < params.max_steps; ++step) {
    if (t > ray.t_far) return {};
    const double d = field(ray.at(t));
    if (std::abs(d) < params.epsilon) return {make_surface_point(field, ray, t, d), false};
    if (d > 0.0) {
      t += omega * d;
    } else {
      omega = 1.0;
      t += d;
      if (t < ray.t_near) return {};
    }
  }
  return {std::nullopt, true};
}

/// Ray through pixel (u, v) clipped to a bounding sphere; empty when it misses.
inline std::optional<Ray> pixel_ray(const CameraView& cam, double u, double v, const BoundingSphere& bounds) {
  Ray r;
  r.origin = cam.center();
  r.dir = cam.pixel_direction(u, v);
  if (!bounds.clip(r.origin, r.dir, r.t_near, r.t_far)) return std::nullopt;
  return r;
}

}  // namespace geounc
