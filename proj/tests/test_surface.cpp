#include "geounc/surface.hpp"

#include <gtest/gtest.h>

using namespace geounc;

namespace {

double bisect(const auto& f, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Ray ray_to(const Vec3& origin, const Vec3& target, double t_near, double t_far) {
  Ray r;
  r.origin = origin;
  r.dir = (target - origin).normalized();
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

}  // namespace

TEST(ZeroCrossing, LinearFieldIsExact) {
  const auto plane = [](const Vec3& x) { return x.z() - 0.3; };
  const Ray r = ray_to(Vec3(0.1, 0.2, 2.0), Vec3(0.4, -0.3, -1.0), 0.0, 4.0);
  const auto sp = find_zero_crossing(plane, r, 17);
  ASSERT_TRUE(sp);
  EXPECT_NEAR(sp->position.z(), 0.3, 1e-12);
  EXPECT_LT(sp->residual, 1e-12);
  EXPECT_LT((sp->normal - Vec3::UnitZ()).norm(), 1e-6);
}

TEST(ZeroCrossing, MatchesBracketInterpolationAndBisection) {
  const auto s = AnalyticSdf::sphere(Vec3::Zero(), 1.0);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const Vec3 o = 3.0 * rng.unit_vector();
    const Vec3 target = 0.5 * rng.unit_vector();
    const Ray r = ray_to(o, target, 0.5, 5.0);
    const int n = 64;
    const auto sp = find_zero_crossing(s, r, n);
    ASSERT_TRUE(sp);
    // Independent bracket search.
    const double step = (r.t_far - r.t_near) / (n - 1);
    double expect = -1;
    for (int k = 1; k < n; ++k) {
      const double t0 = r.t_near + (k - 1) * step, t1 = r.t_near + k * step;
      const double f0 = s(r.at(t0)), f1 = s(r.at(t1));
      if (f0 > 0 && f1 <= 0) {
        expect = t0 + (t1 - t0) * f0 / (f0 - f1);
        break;
      }
    }
    EXPECT_NEAR(sp->t, expect, 1e-12);
    const double root = bisect([&](double t) { return s(r.at(t)); }, r.t_near, expect + step);
    EXPECT_NEAR(sp->t, root, step * step);
  }
}

TEST(ZeroCrossing, InsideStartAndMiss) {
  const auto s = AnalyticSdf::sphere(Vec3::Zero(), 1.0);
  EXPECT_FALSE(find_zero_crossing(s, ray_to(Vec3::Zero(), Vec3(1, 0, 0), 0.0, 0.9), 32));
  EXPECT_FALSE(find_zero_crossing(s, ray_to(Vec3(3, 3, 0), Vec3(3, 4, 0), 0.0, 5.0), 32));
  EXPECT_THROW(find_zero_crossing(s, ray_to(Vec3(3, 0, 0), Vec3::Zero(), 0, 4), 1), Error);
}

TEST(ZeroCrossing, VanishingGradientFallsBack) {
  const auto cubic = [](const Vec3& x) { return x.z() * x.z() * x.z(); };
  const Ray r = ray_to(Vec3(0, 0, 1), Vec3(0, 0, -1), 0.0, 2.0);
  const auto sp = find_zero_crossing(cubic, r, 5);  // a sample lands exactly on z = 0
  ASSERT_TRUE(sp);
  EXPECT_TRUE(sp->degenerate_normal);
  EXPECT_EQ(sp->normal, Vec3(-r.dir));
}

TEST(SphereTrace, HitsWithinEpsilon) {
  const auto s = AnalyticSdf::sphere(Vec3(0.1, 0, 0), 0.8);
  Rng rng(21);
  for (double omega : {1.0, 1.5}) {
    for (int i = 0; i < 50; ++i) {
      const Vec3 o = 3.0 * rng.unit_vector();
      const Ray r = ray_to(o, 0.4 * rng.unit_vector(), 0.0, 6.0);
      const TraceResult tr = sphere_trace(s, r, {1e-6, 256, omega, false});
      ASSERT_TRUE(tr);
      EXPECT_LT(tr.hit->residual, 1e-6);
      const double root = bisect([&](double t) { return s(r.at(t)); }, 0.0, (Vec3(0.1, 0, 0) - o).dot(r.dir));
      EXPECT_NEAR(tr.hit->t, root, 1e-5);
    }
  }
}

TEST(SphereTrace, MissAndStepLimit) {
  const auto s = AnalyticSdf::sphere(Vec3::Zero(), 1.0);
  const TraceResult miss = sphere_trace(s, ray_to(Vec3(3, 3, 0), Vec3(3, 4, 0), 0.0, 5.0));
  EXPECT_FALSE(miss);
  EXPECT_FALSE(miss.step_limit);
  // Grazing ray: tiny steps exhaust the budget.
  const TraceResult lim = sphere_trace(s, ray_to(Vec3(-3, 1.0 + 1e-3, 0), Vec3(3, 1.0 + 1e-3, 0), 0.0, 6.0), {1e-6, 4, 1.0, false});
  EXPECT_FALSE(lim);
  EXPECT_TRUE(lim.step_limit);
  EXPECT_THROW(sphere_trace(s, ray_to(Vec3(3, 0, 0), Vec3::Zero(), 0, 4), {1e-6, 8, 2.0, false}), Error);
}

TEST(PixelRay, ClipsToBoundingSphere) {
  const CameraView cam = look_at(0, Vec3(0, 0, 4), Vec3::Zero(), Vec3::UnitY(), 40.0, 31, 31);
  const BoundingSphere b{Vec3::Zero(), 1.5};
  const auto r = pixel_ray(cam, 15, 15, b);
  ASSERT_TRUE(r);
  EXPECT_NEAR(r->t_near, 2.5, 1e-12);
  EXPECT_NEAR(r->t_far, 5.5, 1e-12);
  EXPECT_FALSE(pixel_ray(cam, 0, 0, b));
  const auto off = pixel_ray(cam, 20, 12, b);
  ASSERT_TRUE(off);
  EXPECT_NEAR((off->at(off->t_near)).norm(), 1.5, 1e-12);
  EXPECT_NEAR((off->at(off->t_far)).norm(), 1.5, 1e-12);
}
