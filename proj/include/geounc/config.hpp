#pragma once

#include "geounc/decouple.hpp"
#include "geounc/io.hpp"
#include "geounc/nbv.hpp"
#include "geounc/render.hpp"
#include "geounc/scene.hpp"
#include "geounc/sdf.hpp"
#include "geounc/uncertainty.hpp"

#include "json.hpp"

#include <cstdio>
#include <optional>

namespace geounc {

enum class ReconKind { perturb, tsdf };

struct SceneSpec {
  AnalyticSdf sdf = AnalyticSdf::sphere(Vec3::Zero(), 1.0);
  ShadingModel shading;
  std::vector<PerturbRegion> perturb;
  ReconKind recon = ReconKind::perturb;
  Dims grid_dims{64, 64, 64};
  Aabb bbox{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  BoundingSphere bounds{Vec3::Zero(), 1.5};
  double truncation = 0.1;
  double depth_noise = 0.0;
};

struct RigSpec {
  int count = 20;
  RigLayout layout = RigLayout::sphere;
  Vec3 target = Vec3::Zero();
  double radius = 3.5;
  double fov_deg = 40.0;
  int width = 128;
  int height = 128;
};

struct EvalSpec {
  bool penalize_one_sided_miss = true;
  Dims gt_sample_dims{96, 96, 96};
};

struct AblateSpec {
  std::vector<int> patch_sizes{1, 7, 11, 15};
  std::vector<bool> decouple{true, false};
};

struct RunConfig {
  std::optional<SceneSpec> scene;
  RigSpec rig;
  ConsistencyParams consistency;
  TrainConfig train;
  Dims uncertainty_dims{64, 64, 64};
  DecoupleParams decouple;
  EvalSpec eval;
  int label_rays = 1024;
  NbvConfig nbv;
  bool nbv_heat_maps = false;
  AblateSpec ablate;
  std::uint64_t seed = 0;
  std::string output = "out";
  unsigned threads = 1;
  bool deterministic = true;
  /// Canonical JSON of the compute-relevant settings (no output/threads).
  nlohmann::json canonical = nlohmann::json::object();

  const SceneSpec& require_scene() const {
    if (!scene) fail(ErrorKind::validation, "config has no \"scene\" section");
    return *scene;
  }
};

namespace detail {
inline Vec3 vec3_from(const nlohmann::json& j, const std::string& what) {
  require(j.is_array() && j.size() == 3, what + " must be a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Dims dims_from(const nlohmann::json& j, const std::string& what) {
  if (j.is_number_integer()) {
    const int n = j.get<int>();
    return {n, n, n};
  }
  require(j.is_array() && j.size() == 3, what + " must be an integer or 3 integers");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

inline void require_dims(const Dims& d, int lo, int hi, const std::string& what) {
  for (int v : d) require(v >= lo && v <= hi, what + " entries must lie in [" + std::to_string(lo) + ", " +
                                                   std::to_string(hi) + "]");
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"sdf", "shading", "perturb", "recon", "grid_dims", "bbox", "bounds", "truncation", "depth_noise"},
                      "scene");
  SceneSpec s;
  require(j.contains("sdf"), "scene.sdf is required");
  s.sdf = AnalyticSdf::from_json(j["sdf"]);
  if (j.contains("shading")) s.shading = shading_from_json(j["shading"]);
  if (j.contains("perturb")) {
    require(j["perturb"].is_array(), "scene.perturb must be an array");
    for (const auto& r : j["perturb"]) {
      reject_unknown_keys(r, {"center", "radius", "amplitude", "seed"}, "scene.perturb[]");
      PerturbRegion p;
      p.center = vec3_from(r.at("center"), "perturb center");
      p.radius = r.value("radius", p.radius);
      p.amplitude = r.value("amplitude", p.amplitude);
      p.seed = r.value("seed", p.seed);
      require(p.radius > 0.0, "perturb radius must be > 0");
      require(p.amplitude >= 0.0, "perturb amplitude must be >= 0");
      s.perturb.push_back(p);
    }
  }
  if (j.contains("recon")) {
    const std::string r = j["recon"].get<std::string>();
    require(r == "perturb" || r == "tsdf", "scene.recon must be perturb|tsdf");
    s.recon = r == "perturb" ? ReconKind::perturb : ReconKind::tsdf;
  }
  if (j.contains("grid_dims")) s.grid_dims = dims_from(j["grid_dims"], "scene.grid_dims");
  require_dims(s.grid_dims, 2, 512, "scene.grid_dims");
  if (j.contains("bbox")) {
    reject_unknown_keys(j["bbox"], {"min", "max"}, "scene.bbox");
    s.bbox = {vec3_from(j["bbox"].at("min"), "bbox.min"), vec3_from(j["bbox"].at("max"), "bbox.max")};
  }
  require((s.bbox.min.array() < s.bbox.max.array()).all(), "scene.bbox min must be < max");
  if (j.contains("bounds")) {
    reject_unknown_keys(j["bounds"], {"center", "radius"}, "scene.bounds");
    s.bounds.center = vec3_from(j["bounds"].at("center"), "bounds.center");
    s.bounds.radius = j["bounds"].at("radius").get<double>();
  }
  require(s.bounds.radius > 0.0, "scene.bounds.radius must be > 0");
  s.truncation = j.value("truncation", s.truncation);
  s.depth_noise = j.value("depth_noise", s.depth_noise);
  require(s.truncation > 0.0, "scene.truncation must be > 0");
  require(s.depth_noise >= 0.0, "scene.depth_noise must be >= 0");
  return s;
}

inline void parse_config(const nlohmann::json& j, RunConfig& c) {
  reject_unknown_keys(j, {"scene", "rig", "consistency", "train", "decouple", "eval", "labels", "nbv", "ablate", "seed",
                          "output", "threads", "deterministic"},
                      "config");
  if (j.contains("scene")) c.scene = scene_from_json(j["scene"]);

  if (j.contains("rig")) {
    const auto& r = j["rig"];
    reject_unknown_keys(r, {"count", "layout", "target", "radius", "fov_deg", "width", "height"}, "rig");
    c.rig.count = r.value("count", c.rig.count);
    if (r.contains("layout")) {
      const std::string l = r["layout"].get<std::string>();
      require(l == "sphere" || l == "hemisphere" || l == "ring", "rig.layout must be sphere|hemisphere|ring");
      c.rig.layout = l == "sphere" ? RigLayout::sphere : l == "hemisphere" ? RigLayout::hemisphere : RigLayout::ring;
    }
    if (r.contains("target")) c.rig.target = vec3_from(r["target"], "rig.target");
    c.rig.radius = r.value("radius", c.rig.radius);
    c.rig.fov_deg = r.value("fov_deg", c.rig.fov_deg);
    c.rig.width = r.value("width", c.rig.width);
    c.rig.height = r.value("height", c.rig.height);
  }
  require(c.rig.count >= 1 && c.rig.count <= 10000, "rig.count must lie in [1, 10000]");
  require(c.rig.radius > 0.0, "rig.radius must be > 0");
  require(c.rig.fov_deg > 0.0 && c.rig.fov_deg < 180.0, "rig.fov_deg must lie in (0, 180)");
  require(c.rig.width >= 1 && c.rig.width <= 8192 && c.rig.height >= 1 && c.rig.height <= 8192,
          "rig width/height must lie in [1, 8192]");

  if (j.contains("consistency")) {
    const auto& k = j["consistency"];
    reject_unknown_keys(k, {"patch_size", "k_best", "occlusion_test", "occlusion_offset", "n_samples", "mode"},
                        "consistency");
    c.consistency.patch_size = k.value("patch_size", c.consistency.patch_size);
    c.consistency.k_best = k.value("k_best", c.consistency.k_best);
    c.consistency.occlusion_test = k.value("occlusion_test", c.consistency.occlusion_test);
    c.consistency.occlusion_offset = k.value("occlusion_offset", c.consistency.occlusion_offset);
    c.consistency.n_samples = k.value("n_samples", c.consistency.n_samples);
    if (k.contains("mode")) {
      const std::string m = k["mode"].get<std::string>();
      require(m == "zero_crossing" || m == "sphere_trace", "consistency.mode must be zero_crossing|sphere_trace");
      c.consistency.mode = m == "zero_crossing" ? IntersectMode::zero_crossing : IntersectMode::sphere_trace;
    }
  }
  c.consistency.validate();

  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown_keys(t, {"batch_rays", "steps_stage1", "steps_finetune", "lr", "beta1", "beta2", "eps", "refresh",
                            "init_value", "grid_dims"},
                        "train");
    c.train.batch_rays = t.value("batch_rays", c.train.batch_rays);
    c.train.steps_stage1 = t.value("steps_stage1", c.train.steps_stage1);
    c.train.steps_finetune = t.value("steps_finetune", c.train.steps_finetune);
    c.train.adam.lr = t.value("lr", c.train.adam.lr);
    c.train.adam.beta1 = t.value("beta1", c.train.adam.beta1);
    c.train.adam.beta2 = t.value("beta2", c.train.adam.beta2);
    c.train.adam.eps = t.value("eps", c.train.adam.eps);
    c.train.init_value = t.value("init_value", c.train.init_value);
    if (t.contains("refresh")) {
      const std::string r = t["refresh"].get<std::string>();
      require(r == "every_step" || r == "cached", "train.refresh must be every_step|cached");
      c.train.refresh = r == "cached" ? LabelRefresh::cached : LabelRefresh::every_step;
    }
    if (t.contains("grid_dims")) c.uncertainty_dims = dims_from(t["grid_dims"], "train.grid_dims");
  }
  c.train.validate();
  require_dims(c.uncertainty_dims, 2, 512, "train.grid_dims");

  if (j.contains("decouple")) {
    const auto& d = j["decouple"];
    reject_unknown_keys(d, {"samples_per_view", "lambda", "cells", "occlusion_test"}, "decouple");
    c.decouple.samples_per_view = d.value("samples_per_view", c.decouple.samples_per_view);
    c.decouple.lambda = d.value("lambda", c.decouple.lambda);
    c.decouple.occlusion_test = d.value("occlusion_test", c.decouple.occlusion_test);
    if (d.contains("cells")) c.decouple.cells = dims_from(d["cells"], "decouple.cells");
  } else if (c.scene) {
    c.decouple.cells = c.scene->grid_dims;
  }
  c.decouple.validate();
  require_dims(c.decouple.cells, 1, 512, "decouple.cells");

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown_keys(e, {"penalize_one_sided_miss", "gt_sample_dims"}, "eval");
    c.eval.penalize_one_sided_miss = e.value("penalize_one_sided_miss", c.eval.penalize_one_sided_miss);
    if (e.contains("gt_sample_dims")) c.eval.gt_sample_dims = dims_from(e["gt_sample_dims"], "eval.gt_sample_dims");
  }
  require_dims(c.eval.gt_sample_dims, 4, 1024, "eval.gt_sample_dims");

  if (j.contains("labels")) {
    reject_unknown_keys(j["labels"], {"rays"}, "labels");
    c.label_rays = j["labels"].value("rays", c.label_rays);
  }
  require(c.label_rays >= 0, "labels.rays must be >= 0");

  if (j.contains("nbv")) {
    const auto& n = j["nbv"];
    reject_unknown_keys(n, {"rounds", "n_regions", "policy", "score", "map_stride", "psnr_cap", "finetune",
                            "heat_maps", "steps", "batch_rays", "lr"},
                        "nbv");
    c.nbv.rounds = n.value("rounds", c.nbv.rounds);
    c.nbv.n_regions = n.value("n_regions", c.nbv.n_regions);
    if (n.contains("policy")) {
      const std::string p = n["policy"].get<std::string>();
      require(p == "uncertainty" || p == "random", "nbv.policy must be uncertainty|random");
      c.nbv.policy = p == "random" ? NbvPolicy::random : NbvPolicy::uncertainty;
    }
    if (n.contains("score")) {
      const std::string s = n["score"].get<std::string>();
      require(s == "mean" || s == "max", "nbv.score must be mean|max");
      c.nbv.score_mode = s == "max" ? ScoreMode::max : ScoreMode::mean;
    }
    c.nbv.map_stride = n.value("map_stride", c.nbv.map_stride);
    c.nbv.psnr_cap = n.value("psnr_cap", c.nbv.psnr_cap);
    c.nbv.finetune = n.value("finetune", c.nbv.finetune);
    c.nbv_heat_maps = n.value("heat_maps", c.nbv_heat_maps);
    c.nbv.train.steps_stage1 = n.value("steps", 200);
    c.nbv.train.batch_rays = n.value("batch_rays", 256);
    c.nbv.train.adam.lr = n.value("lr", c.train.adam.lr);
  } else {
    c.nbv.train.steps_stage1 = 200;
    c.nbv.train.batch_rays = 256;
    c.nbv.train.adam.lr = c.train.adam.lr;
  }
  c.nbv.train.steps_finetune = c.train.steps_finetune;
  c.nbv.train.init_value = c.train.init_value;
  c.nbv.consistency = c.consistency;
  c.nbv.decouple = c.decouple;
  c.nbv.uncertainty_dims = c.uncertainty_dims;
  c.nbv.gt_sample_dims = c.eval.gt_sample_dims;
  if (c.scene) {
    c.nbv.tsdf.dims = c.scene->grid_dims;
    c.nbv.tsdf.bbox = c.scene->bbox;
    c.nbv.tsdf.truncation = c.scene->truncation;
    c.nbv.tsdf.depth_noise = c.scene->depth_noise;
  }

  if (j.contains("ablate")) {
    const auto& a = j["ablate"];
    reject_unknown_keys(a, {"patch_sizes", "decouple"}, "ablate");
    if (a.contains("patch_sizes")) c.ablate.patch_sizes = a["patch_sizes"].get<std::vector<int>>();
    if (a.contains("decouple")) c.ablate.decouple = a["decouple"].get<std::vector<bool>>();
  }
  for (int k : c.ablate.patch_sizes) require(k >= 1 && k % 2 == 1 && k <= 63, "ablate.patch_sizes must be odd in [1, 63]");
  require(!c.ablate.patch_sizes.empty() && !c.ablate.decouple.empty(), "ablate lists must be non-empty");

  c.seed = j.value("seed", c.seed);
  c.output = j.value("output", c.output);
  c.threads = j.value("threads", c.threads);
  c.deterministic = j.value("deterministic", c.deterministic);
  require(c.threads >= 1 && c.threads <= 256, "threads must lie in [1, 256]");
  c.nbv.seed = c.seed;
  c.train.seed = c.seed;
  c.decouple.seed = c.seed;
  c.nbv.validate();

  c.canonical = j;
  for (const char* k : {"output", "threads", "deterministic"}) c.canonical.erase(k);
}
}  // namespace detail

/// Parses and validates a configuration object; every failure is a validation error.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    detail::parse_config(j, c);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("invalid config value: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::validation) throw;
    fail(ErrorKind::validation, e.what());
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) io_fail(path, "missing config file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, path.string() + ": malformed JSON: " + e.what());
  }
  return config_from_json(j);
}

/// 16 hex digits identifying the compute-relevant configuration.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(detail::fnv1a(c.canonical.dump())));
  return buf;
}

}  // namespace geounc
