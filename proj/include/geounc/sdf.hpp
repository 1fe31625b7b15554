#pragma once

#include "geounc/core.hpp"
#include "geounc/grid.hpp"

#include "json.hpp"

#include <concepts>
#include <memory>
#include <variant>

namespace geounc {

/// A value and its spatial gradient.
struct SdfSample {
  double value = 0.0;
  Vec3 grad = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// AnalyticSdf: a CSG tree of primitives. Nodes are stored flat; children always
// precede their parent, and the root is the last node.

namespace csg {
struct Sphere {
  Vec3 center;
  double radius;
};
struct Box {
  Vec3 center;
  Vec3 half;
};
/// Torus around the z axis through `center`.
struct Torus {
  Vec3 center;
  double major;
  double minor;
};
struct Union {
  int a, b;
};
struct Intersection {
  int a, b;
};
struct Difference {
  int a, b;
};
struct SmoothUnion {
  int a, b;
  double k;
};
using Node = std::variant<Sphere, Box, Torus, Union, Intersection, Difference, SmoothUnion>;
}  // namespace csg

class AnalyticSdf {
 public:
  AnalyticSdf() = default;

  static AnalyticSdf sphere(const Vec3& center, double radius) {
    require(radius > 0.0, "sphere radius must be positive");
    return leaf(csg::Sphere{center, radius});
  }
  static AnalyticSdf box(const Vec3& center, const Vec3& half) {
    require((half.array() > 0.0).all(), "box half-extents must be positive");
    return leaf(csg::Box{center, half});
  }
  static AnalyticSdf torus(const Vec3& center, double major, double minor) {
    require(major > 0.0 && minor > 0.0 && minor < major, "torus radii must satisfy 0 < minor < major");
    return leaf(csg::Torus{center, major, minor});
  }

  friend AnalyticSdf unite(const AnalyticSdf& a, const AnalyticSdf& b) {
    return combine(a, b, [](int x, int y) { return csg::Node{csg::Union{x, y}}; });
  }
  friend AnalyticSdf intersect(const AnalyticSdf& a, const AnalyticSdf& b) {
    return combine(a, b, [](int x, int y) { return csg::Node{csg::Intersection{x, y}}; });
  }
  friend AnalyticSdf subtract(const AnalyticSdf& a, const AnalyticSdf& b) {
    return combine(a, b, [](int x, int y) { return csg::Node{csg::Difference{x, y}}; });
  }
  friend AnalyticSdf smooth_unite(const AnalyticSdf& a, const AnalyticSdf& b, double k) {
    require(k > 0.0, "smooth union blend must be positive");
    return combine(a, b, [k](int x, int y) { return csg::Node{csg::SmoothUnion{x, y, k}}; });
  }

  bool empty() const { return nodes_.empty(); }
  const std::vector<csg::Node>& nodes() const { return nodes_; }

  double operator()(const Vec3& x) const { return eval(x).value; }

  /// Value and exact gradient (subgradient at CSG creases).
  SdfSample eval(const Vec3& x) const {
    if (nodes_.empty()) return {std::numeric_limits<double>::max(), Vec3::Zero()};
    return eval_node(static_cast<int>(nodes_.size()) - 1, x);
  }

  nlohmann::json to_json() const {
    if (nodes_.empty()) return nullptr;
    return node_json(static_cast<int>(nodes_.size()) - 1);
  }

  static AnalyticSdf from_json(const nlohmann::json& j) {
    require(j.is_object() && j.contains("type"), "sdf node must be an object with a \"type\"");
    const std::string type = j.at("type").get<std::string>();
    auto vec = [&](const char* key) {
      const auto& a = j.at(key);
      require(a.is_array() && a.size() == 3, std::string("sdf field \"") + key + "\" must be a 3-vector");
      return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    };
    auto check_keys = [&](std::initializer_list<const char*> allowed) {
      for (const auto& [k, _] : j.items()) {
        bool ok = k == "type";
        for (const char* a : allowed) ok = ok || k == a;
        require(ok, "unknown key \"" + k + "\" in sdf node of type " + type);
      }
    };
    if (type == "sphere") {
      check_keys({"center", "radius"});
      return sphere(vec("center"), j.at("radius").get<double>());
    }
    if (type == "box") {
      check_keys({"center", "half_extents"});
      return box(vec("center"), vec("half_extents"));
    }
    if (type == "torus") {
      check_keys({"center", "major", "minor"});
      return torus(vec("center"), j.at("major").get<double>(), j.at("minor").get<double>());
    }
    if (type == "union" || type == "intersection" || type == "difference" || type == "smooth_union") {
      if (type == "smooth_union")
        check_keys({"a", "b", "k"});
      else
        check_keys({"a", "b"});
      const AnalyticSdf a = from_json(j.at("a"));
      const AnalyticSdf b = from_json(j.at("b"));
      if (type == "union") return unite(a, b);
      if (type == "intersection") return intersect(a, b);
      if (type == "difference") return subtract(a, b);
      return smooth_unite(a, b, j.at("k").get<double>());
    }
    fail(ErrorKind::validation, "unknown sdf node type \"" + type + "\"");
  }

 private:
  static AnalyticSdf leaf(csg::Node n) {
    AnalyticSdf s;
    s.nodes_.push_back(std::move(n));
    return s;
  }

  template <class Make>
  static AnalyticSdf combine(const AnalyticSdf& a, const AnalyticSdf& b, Make make) {
    require(!a.empty() && !b.empty(), "cannot combine an empty sdf");
    AnalyticSdf out;
    out.nodes_ = a.nodes_;
    const int offset = static_cast<int>(a.nodes_.size());
    for (csg::Node n : b.nodes_) {
      std::visit(
          [offset](auto& v) {
            if constexpr (requires { v.a; }) {
              v.a += offset;
              v.b += offset;
            }
          },
          n);
      out.nodes_.push_back(n);
    }
    out.nodes_.push_back(make(offset - 1, static_cast<int>(out.nodes_.size()) - 1));
    return out;
  }

  SdfSample eval_node(int id, const Vec3& x) const {
    return std::visit([&](const auto& n) { return eval_one(n, x); }, nodes_[id]);
  }

  SdfSample eval_one(const csg::Sphere& s, const Vec3& x) const {
    const Vec3 d = x - s.center;
    const double r = d.norm();
    return {r - s.radius, r > 0.0 ? Vec3(d / r) : Vec3::Zero()};
  }

  SdfSample eval_one(const csg::Box& b, const Vec3& x) const {
    const Vec3 p = x - b.center;
    const Vec3 q = p.cwiseAbs() - b.half;
    const Vec3 sign = p.unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
    const Vec3 outside = q.cwiseMax(0.0);
    const double out_len = outside.norm();
    if (out_len > 0.0) return {out_len, outside.cwiseProduct(sign) / out_len};
    Eigen::Index axis = 0;
    const double inside = q.maxCoeff(&axis);
    Vec3 g = Vec3::Zero();
    g[axis] = sign[axis];
    return {inside, g};
  }

  SdfSample eval_one(const csg::Torus& t, const Vec3& x) const {
    const Vec3 p = x - t.center;
    const double rho = std::hypot(p.x(), p.y());
    const double qx = rho - t.major;
    const double qz = p.z();
    const double len = std::hypot(qx, qz);
    if (len == 0.0) return {-t.minor, Vec3::Zero()};
    Vec3 radial = rho > 0.0 ? Vec3(p.x() / rho, p.y() / rho, 0.0) : Vec3::Zero();
    return {len - t.minor, (qx / len) * radial + Vec3(0.0, 0.0, qz / len)};
  }

  SdfSample eval_one(const csg::Union& u, const Vec3& x) const {
    const SdfSample a = eval_node(u.a, x), b = eval_node(u.b, x);
    return a.value <= b.value ? a : b;
  }

  SdfSample eval_one(const csg::Intersection& u, const Vec3& x) const {
    const SdfSample a = eval_node(u.a, x), b = eval_node(u.b, x);
    return a.value >= b.value ? a : b;
  }

  SdfSample eval_one(const csg::Difference& u, const Vec3& x) const {
    const SdfSample a = eval_node(u.a, x);
    SdfSample b = eval_node(u.b, x);
    b.value = -b.value;
    b.grad = -b.grad;
    return a.value >= b.value ? a : b;
  }

  SdfSample eval_one(const csg::SmoothUnion& u, const Vec3& x) const {
    // Polynomial smooth minimum; d/dx reduces to h*ga + (1-h)*gb.
    const SdfSample a = eval_node(u.a, x), b = eval_node(u.b, x);
    const double h = std::clamp(0.5 + 0.5 * (b.value - a.value) / u.k, 0.0, 1.0);
    return {b.value + h * (a.value - b.value) - u.k * h * (1.0 - h), h * a.grad + (1.0 - h) * b.grad};
  }

  nlohmann::json node_json(int id) const {
    auto arr = [](const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
    return std::visit(
        [&](const auto& n) -> nlohmann::json {
          using N = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<N, csg::Sphere>)
            return {{"type", "sphere"}, {"center", arr(n.center)}, {"radius", n.radius}};
          else if constexpr (std::is_same_v<N, csg::Box>)
            return {{"type", "box"}, {"center", arr(n.center)}, {"half_extents", arr(n.half)}};
          else if constexpr (std::is_same_v<N, csg::Torus>)
            return {{"type", "torus"}, {"center", arr(n.center)}, {"major", n.major}, {"minor", n.minor}};
          else if constexpr (std::is_same_v<N, csg::Union>)
            return {{"type", "union"}, {"a", node_json(n.a)}, {"b", node_json(n.b)}};
          else if constexpr (std::is_same_v<N, csg::Intersection>)
            return {{"type", "intersection"}, {"a", node_json(n.a)}, {"b", node_json(n.b)}};
          else if constexpr (std::is_same_v<N, csg::Difference>)
            return {{"type", "difference"}, {"a", node_json(n.a)}, {"b", node_json(n.b)}};
          else
            return {{"type", "smooth_union"}, {"a", node_json(n.a)}, {"b", node_json(n.b)}, {"k", n.k}};
        },
        nodes_[id]);
  }

  std::vector<csg::Node> nodes_;
};

// ---------------------------------------------------------------------------
// VoxelSdf: trilinear signed distance lattice.

class VoxelSdf {
 public:
  VoxelSdf() = default;
  VoxelSdf(const Dims& dims, const Aabb& box, float fill = 0.0f) : grid_(dims, box, fill) {}
  explicit VoxelSdf(Grid3<float> grid) : grid_(std::move(grid)) {}

  const Grid3<float>& grid() const { return grid_; }
  Grid3<float>& grid() { return grid_; }
  const Dims& dims() const { return grid_.dims(); }
  const Aabb& bbox() const { return grid_.bbox(); }

  /// Outside the box: boundary value at the clamped point plus the distance to it.
  double operator()(const Vec3& x) const {
    const Vec3 c = grid_.bbox().clamp(x);
    const double offset = (x - c).norm();
    return grid_.sample(c) + offset;
  }

  /// Half the smallest voxel spacing; the default finite-difference step.
  double gradient_step() const { return 0.5 * grid_.spacing().minCoeff(); }

 private:
  Grid3<float> grid_;
};

/// Anything evaluable as a signed distance.
template <class F>
concept SdfField = requires(const F& f, const Vec3& x) {
  { f(x) } -> std::convertible_to<double>;
};

/// True when the field is guaranteed 1-Lipschitz (safe for over-relaxed tracing).
template <class F>
inline constexpr bool is_metric_field_v = true;
template <>
inline constexpr bool is_metric_field_v<VoxelSdf> = false;

template <SdfField F>
double default_gradient_step(const F& field) {
  if constexpr (requires { field.gradient_step(); })
    return field.gradient_step();
  else
    return 1e-5;
}

/// Central-difference gradient for fields without exact derivatives.
template <SdfField F>
Vec3 central_difference_gradient(const F& field, const Vec3& x, double h) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    g[a] = (field(x + e) - field(x - e)) / (2.0 * h);
  }
  return g;
}

/// Spatial gradient: exact for analytic fields, central differences with step h otherwise.
template <SdfField F>
Vec3 sdf_gradient(const F& field, const Vec3& x, double h) {
  if constexpr (requires { field.eval(x).grad; })
    return field.eval(x).grad;
  else
    return central_difference_gradient(field, x, h);
}

template <SdfField F>
Vec3 sdf_gradient(const F& field, const Vec3& x) {
  return sdf_gradient(field, x, default_gradient_step(field));
}

/// Samples any field on the nodes of a fresh lattice.
template <SdfField F>
VoxelSdf sample_to_grid(const F& field, const Dims& dims, const Aabb& box) {
  VoxelSdf out(dims, box);
  auto& g = out.grid();
  parallel_for(g.size(), [&](std::size_t i) { g.values()[i] = static_cast<float>(field(g.node_position(i))); });
  return out;
}

}  // namespace geounc
