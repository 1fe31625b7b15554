#pragma once

#include "geounc/core.hpp"

#include <array>
#include <string>
#include <vector>

namespace geounc {

using Dims = std::array<int, 3>;

/// The eight corner indices and trilinear weights for one query.
struct TrilinearStencil {
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
};

/// Dense scalar lattice over an axis-aligned box, x fastest. Nodes sit on the
/// box corners, so node (i,j,k) is at min + (i,j,k) * spacing.
template <class T>
class Grid3 {
 public:
  Grid3() = default;

  Grid3(const Dims& dims, const Aabb& box, T fill = T{}) : dims_(dims), box_(box) {
    for (int d : dims) require(d >= 2, "grid dims must be >= 2 per axis");
    require((box.min.array() < box.max.array()).all(), "grid bbox min must be < max componentwise");
    values_.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], fill);
    spacing_ = box.extent().cwiseQuotient(Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1));
  }

  const Dims& dims() const { return dims_; }
  const Aabb& bbox() const { return box_; }
  const Vec3& spacing() const { return spacing_; }
  std::size_t size() const { return values_.size(); }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
  }

  std::array<int, 3> coords(std::size_t idx) const {
    const int i = static_cast<int>(idx % dims_[0]);
    const int j = static_cast<int>((idx / dims_[0]) % dims_[1]);
    const int k = static_cast<int>(idx / (static_cast<std::size_t>(dims_[0]) * dims_[1]));
    return {i, j, k};
  }

  Vec3 node_position(int i, int j, int k) const {
    return box_.min + Vec3(i * spacing_.x(), j * spacing_.y(), k * spacing_.z());
  }
  Vec3 node_position(std::size_t idx) const {
    const auto c = coords(idx);
    return node_position(c[0], c[1], c[2]);
  }

  T& at(int i, int j, int k) { return values_[index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return values_[index(i, j, k)]; }

  /// Trilinear stencil of x clamped into the box.
  TrilinearStencil stencil(const Vec3& x) const {
    std::array<int, 3> base{};
    std::array<double, 3> frac{};
    locate(x, base, frac);
    TrilinearStencil s;
    int n = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx, ++n) {
          s.index[n] = index(base[0] + dx, base[1] + dy, base[2] + dz);
          s.weight[n] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                        (dz ? frac[2] : 1.0 - frac[2]);
        }
    return s;
  }

  double sample(const Vec3& x) const {
    std::array<int, 3> b{};
    std::array<double, 3> f{};
    locate(x, b, f);
    const std::size_t i000 = index(b[0], b[1], b[2]);
    const std::size_t sy = static_cast<std::size_t>(dims_[0]);
    const std::size_t sz = sy * dims_[1];
    const double c000 = values_[i000], c100 = values_[i000 + 1];
    const double c010 = values_[i000 + sy], c110 = values_[i000 + sy + 1];
    const double c001 = values_[i000 + sz], c101 = values_[i000 + sz + 1];
    const double c011 = values_[i000 + sz + sy], c111 = values_[i000 + sz + sy + 1];
    const double c00 = c000 + f[0] * (c100 - c000);
    const double c10 = c010 + f[0] * (c110 - c010);
    const double c01 = c001 + f[0] * (c101 - c001);
    const double c11 = c011 + f[0] * (c111 - c011);
    const double c0 = c00 + f[1] * (c10 - c00);
    const double c1 = c01 + f[1] * (c11 - c01);
    return c0 + f[2] * (c1 - c0);
  }

  /// Analytic gradient of the trilinear interpolant (one-sided at cell faces).
  Vec3 gradient(const Vec3& x) const {
    std::array<int, 3> b{};
    std::array<double, 3> f{};
    locate(x, b, f);
    auto v = [&](int dx, int dy, int dz) { return static_cast<double>(at(b[0] + dx, b[1] + dy, b[2] + dz)); };
    Vec3 g = Vec3::Zero();
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double wx = dx ? f[0] : 1.0 - f[0];
          const double wy = dy ? f[1] : 1.0 - f[1];
          const double wz = dz ? f[2] : 1.0 - f[2];
          const double c = v(dx, dy, dz);
          g.x() += c * (dx ? 1.0 : -1.0) * wy * wz;
          g.y() += c * wx * (dy ? 1.0 : -1.0) * wz;
          g.z() += c * wx * wy * (dz ? 1.0 : -1.0);
        }
    return g.cwiseQuotient(spacing_);
  }

  bool same_layout(const Grid3& o) const {
    return dims_ == o.dims_ && box_.min == o.box_.min && box_.max == o.box_.max;
  }

 private:
  void locate(const Vec3& x, std::array<int, 3>& base, std::array<double, 3>& frac) const {
    for (int a = 0; a < 3; ++a) {
      double g = (x[a] - box_.min[a]) / spacing_[a];
      g = std::clamp(g, 0.0, static_cast<double>(dims_[a] - 1));
      int i = static_cast<int>(std::floor(g));
      i = std::min(i, dims_[a] - 2);
      base[a] = i;
      frac[a] = g - i;
    }
  }

  Dims dims_{0, 0, 0};
  Aabb box_;
  Vec3 spacing_ = Vec3::Zero();
  std::vector<T> values_;
};

}  // namespace geounc
