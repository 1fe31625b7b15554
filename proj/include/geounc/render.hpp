#pragma once

#include "geounc/camera.hpp"
#include "geounc/sdf.hpp"
#include "geounc/surface.hpp"

#include "json.hpp"

namespace geounc {

using Rgb = Eigen::Array3d;

enum class AlbedoKind { solid, checker, noise };

/// Procedural albedo over surface position.
struct Albedo {
  AlbedoKind kind = AlbedoKind::noise;
  Rgb color_a = Rgb(0.85, 0.7, 0.5);
  Rgb color_b = Rgb(0.2, 0.3, 0.45);
  double frequency = 30.0;  // radians per scene unit
  std::uint64_t seed = 1;

  Rgb operator()(const Vec3& p) const {
    switch (kind) {
      case AlbedoKind::solid:
        return color_a;
      case AlbedoKind::checker: {
        const double period = 2.0 * std::numbers::pi / frequency;
        const auto cell = (p / period).array().floor();
        const long parity = static_cast<long>(cell.x() + cell.y() + cell.z());
        return (parity % 2 == 0) ? color_a : color_b;
      }
      case AlbedoKind::noise:
      default: {
        const double n = noise(p);
        return color_b + (0.5 + 0.5 * n) * (color_a - color_b);
      }
    }
  }

  /// Sum of four seeded plane waves, in [-1, 1].
  double noise(const Vec3& p) const {
    Rng rng(seed);
    double s = 0.0;
    for (int i = 0; i < 4; ++i) {
      const Vec3 dir = rng.unit_vector() * rng.uniform(0.7, 1.3);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      s += std::sin(frequency * dir.dot(p) + phase);
    }
    return 0.25 * s;
  }
};

struct Light {
  Vec3 direction = Vec3::UnitZ();  // unit, pointing from the surface toward the light
  Rgb intensity = Rgb::Constant(0.7);
};

struct Specular {
  double ks = 0.0;
  double shininess = 1.0;
};

/// Ambient + Lambert + Phong lobe on the reflected view direction, clamped to [0,1].
struct ShadingModel {
  Albedo albedo;
  std::vector<Light> lights{Light{Vec3(0.3, -0.4, 0.866).normalized(), Rgb::Constant(0.65)}};
  Rgb ambient = Rgb::Constant(0.35);
  Specular specular;
  Rgb background = Rgb::Constant(0.5);

  /// `to_camera` is the unit vector from the point toward the viewer.
  Rgb view_independent(const Vec3& p, const Vec3& n) const {
    Rgb irradiance = ambient;
    for (const auto& l : lights) irradiance += l.intensity * std::max(0.0, n.dot(l.direction));
    return albedo(p) * irradiance;
  }

  Rgb view_dependent(const Vec3& n, const Vec3& to_camera) const {
    if (specular.ks <= 0.0) return Rgb::Zero();
    const Vec3 wr = 2.0 * n.dot(to_camera) * n - to_camera;
    Rgb s = Rgb::Zero();
    for (const auto& l : lights) s += l.intensity * std::pow(std::max(0.0, wr.dot(l.direction)), specular.shininess);
    return specular.ks * s;
  }

  Rgb shade(const Vec3& p, const Vec3& n, const Vec3& to_camera) const {
    return (view_independent(p, n) + view_dependent(n, to_camera)).cwiseMax(0.0).cwiseMin(1.0);
  }

  void validate() const {
    require(specular.ks >= 0.0, "specular ks must be >= 0");
    require(specular.shininess >= 1.0, "specular shininess must be >= 1");
    require(albedo.frequency > 0.0, "albedo frequency must be positive");
    for (const auto& l : lights) require(std::abs(l.direction.norm() - 1.0) < 1e-6, "light directions must be unit");
  }
};

struct RenderOptions {
  BoundingSphere bounds;
  TraceParams trace{1e-6, 512, 1.0, false};
};

/// Sphere-traces every pixel against `sdf` and fills image and depth in place.
template <SdfField F>
void render_into(const F& sdf, const ShadingModel& shading, CameraView& cam, const RenderOptions& opts) {
  cam.validate();
  cam.image = Image(cam.width, cam.height, 3);
  cam.depth.assign(cam.image.pixel_count(), 0.0f);
  parallel_for(cam.image.pixel_count(), [&](std::size_t idx) {
    const int x = static_cast<int>(idx % cam.width);
    const int y = static_cast<int>(idx / cam.width);
    Rgb c = shading.background;
    if (auto ray = pixel_ray(cam, x, y, opts.bounds)) {
      if (auto tr = sphere_trace(sdf, *ray, opts.trace)) {
        const SurfacePoint& sp = *tr.hit;
        c = shading.shade(sp.position, sp.normal, -ray->dir);
        cam.depth[idx] = static_cast<float>(sp.t);
      }
    }
    for (int ch = 0; ch < 3; ++ch) cam.image.at(x, y, ch) = static_cast<float>(c[ch]);
  });
}

template <SdfField F>
CameraView render_view(const F& sdf, const ShadingModel& shading, CameraView cam, const RenderOptions& opts = {}) {
  render_into(sdf, shading, cam, opts);
  return cam;
}

// ---------------------------------------------------------------------------
// JSON for shading descriptions

inline nlohmann::json rgb_json(const Rgb& c) { return nlohmann::json::array({c[0], c[1], c[2]}); }

inline Rgb rgb_from_json(const nlohmann::json& j, const std::string& what) {
  if (j.is_number()) return Rgb::Constant(j.get<double>());
  require(j.is_array() && j.size() == 3, what + " must be a number or an RGB triple");
  return Rgb(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json shading_to_json(const ShadingModel& s) {
  nlohmann::json lights = nlohmann::json::array();
  for (const auto& l : s.lights)
    lights.push_back({{"direction", {l.direction.x(), l.direction.y(), l.direction.z()}},
                      {"intensity", rgb_json(l.intensity)}});
  const char* kind = s.albedo.kind == AlbedoKind::solid ? "solid" : s.albedo.kind == AlbedoKind::checker ? "checker" : "noise";
  return {{"albedo",
           {{"kind", kind},
            {"color_a", rgb_json(s.albedo.color_a)},
            {"color_b", rgb_json(s.albedo.color_b)},
            {"frequency", s.albedo.frequency},
            {"seed", s.albedo.seed}}},
          {"lights", lights},
          {"ambient", rgb_json(s.ambient)},
          {"specular", {{"ks", s.specular.ks}, {"shininess", s.specular.shininess}}},
          {"background", rgb_json(s.background)}};
}

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  require(j.is_object(), where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    require(ok, "unknown key \"" + k + "\" in " + where);
  }
}

inline ShadingModel shading_from_json(const nlohmann::json& j) {
  ShadingModel s;
  reject_unknown_keys(j, {"albedo", "lights", "ambient", "specular", "background"}, "shading");
  if (j.contains("albedo")) {
    const auto& a = j["albedo"];
    reject_unknown_keys(a, {"kind", "color_a", "color_b", "frequency", "seed"}, "shading.albedo");
    if (a.contains("kind")) {
      const std::string k = a["kind"].get<std::string>();
      require(k == "solid" || k == "checker" || k == "noise", "shading.albedo.kind must be solid|checker|noise");
      s.albedo.kind = k == "solid" ? AlbedoKind::solid : k == "checker" ? AlbedoKind::checker : AlbedoKind::noise;
    }
    if (a.contains("color_a")) s.albedo.color_a = rgb_from_json(a["color_a"], "albedo.color_a");
    if (a.contains("color_b")) s.albedo.color_b = rgb_from_json(a["color_b"], "albedo.color_b");
    if (a.contains("frequency")) s.albedo.frequency = a["frequency"].get<double>();
    if (a.contains("seed")) s.albedo.seed = a["seed"].get<std::uint64_t>();
  }
  if (j.contains("lights")) {
    s.lights.clear();
    for (const auto& l : j["lights"]) {
      reject_unknown_keys(l, {"direction", "intensity"}, "shading.lights[]");
      const auto& d = l.at("direction");
      require(d.is_array() && d.size() == 3, "light direction must be a 3-vector");
      Vec3 dir(d[0].get<double>(), d[1].get<double>(), d[2].get<double>());
      require(dir.norm() > 0.0, "light direction must be non-zero");
      s.lights.push_back({dir.normalized(), l.contains("intensity") ? rgb_from_json(l["intensity"], "light intensity")
                                                                     : Rgb::Constant(0.7)});
    }
  }
  if (j.contains("ambient")) s.ambient = rgb_from_json(j["ambient"], "shading.ambient");
  if (j.contains("specular")) {
    reject_unknown_keys(j["specular"], {"ks", "shininess"}, "shading.specular");
    s.specular.ks = j["specular"].value("ks", 0.0);
    s.specular.shininess = j["specular"].value("shininess", 1.0);
  }
  if (j.contains("background")) s.background = rgb_from_json(j["background"], "shading.background");
  s.validate();
  return s;
}

}  // namespace geounc
