#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace geounc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class ErrorKind { validation, io, degenerate, runtime };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::validation, what);
}

/// Axis-aligned box in scene units.
struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Vec3 clamp(const Vec3& p) const { return p.cwiseMax(min).cwiseMin(max); }
};

struct BoundingSphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;

  /// Parametric interval [t0, t1] where o + t v lies inside the sphere; empty when missed.
  bool clip(const Vec3& origin, const Vec3& dir, double& t0, double& t1) const {
    const Vec3 oc = origin - center;
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - radius * radius;
    const double disc = b * b - c;
    if (disc <= 0.0) return false;
    const double s = std::sqrt(disc);
    t0 = std::max(0.0, -b - s);
    t1 = -b + s;
    return t1 > t0;
  }
};

/// Seeded generator with portable uniform/normal draws (std distributions are
/// implementation-defined, which breaks cross-toolchain reproducibility).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    state_ = seed + 0x9E3779B97F4A7C15ull;
    have_spare_ = false;
  }

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  Vec3 unit_vector() {
    const double z = uniform(-1.0, 1.0);
    const double phi = uniform(0.0, 2.0 * std::numbers::pi);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
  }

 private:
  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
  Rng r(base ^ (tag * 0xD1B54A32D192ED03ull));
  return r.next_u64();
}

// ---------------------------------------------------------------------------
// Execution settings

struct ExecutionSettings {
  unsigned threads = 1;
  bool deterministic = true;
};

inline ExecutionSettings& execution() {
  static ExecutionSettings settings = [] {
    ExecutionSettings s;
    if (const char* env = std::getenv("GEOUNC_THREADS")) {
      const int n = std::atoi(env);
      if (n > 0) s.threads = static_cast<unsigned>(n);
    }
    return s;
  }();
  return settings;
}

/// Runs body(i) for i in [0, n). Each index must only write its own outputs.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers = std::min<std::size_t>(execution().threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  constexpr std::size_t chunk = 64;
  auto run = [&] {
    for (;;) {
      const std::size_t begin = next.fetch_add(chunk);
      if (begin >= n) break;
      const std::size_t end = std::min(n, begin + chunk);
      for (std::size_t i = begin; i < end; ++i) body(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

/// Sum of term(i) over [0, n). In deterministic mode the terms are added in
/// index order; otherwise per-thread partials are combined in completion order.
template <class Term>
double parallel_sum(std::size_t n, Term&& term) {
  if (execution().deterministic || execution().threads <= 1) {
    std::vector<double> parts(n);
    parallel_for(n, [&](std::size_t i) { parts[i] = term(i); });
    double acc = 0.0;
    for (double v : parts) acc += v;
    return acc;
  }
  std::atomic<std::size_t> next{0};
  std::vector<double> partials(execution().threads, 0.0);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < execution().threads; ++w) {
    pool.emplace_back([&, w] {
      double acc = 0.0;
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) acc += term(i);
      partials[w] = acc;
    });
  }
  for (auto& t : pool) t.join();
  double acc = 0.0;
  for (double v : partials) acc += v;
  return acc;
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace geounc
