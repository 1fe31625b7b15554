#include "geounc/pipeline.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>

using namespace geounc;
using nlohmann::json;

namespace {

json tiny_config() {
  return json::parse(R"({
    "scene": {
      "sdf": {"type": "sphere", "center": [0, 0, 0], "radius": 1.0},
      "perturb": [{"center": [0.6, 0.6, 0.5], "radius": 0.5, "amplitude": 0.06, "seed": 3}],
      "grid_dims": 24
    },
    "rig": {"count": 8, "width": 32, "height": 32},
    "consistency": {"patch_size": 5},
    "train": {"batch_rays": 64, "steps_stage1": 4, "steps_finetune": 2, "grid_dims": 12},
    "decouple": {"samples_per_view": 256, "cells": 8},
    "eval": {"gt_sample_dims": 24},
    "labels": {"rays": 64},
    "nbv": {"rounds": 1, "n_regions": 2, "steps": 3, "batch_rays": 32, "map_stride": 4, "heat_maps": true},
    "ablate": {"patch_sizes": [1, 5], "decouple": [true, false]},
    "seed": 11
  })");
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("geounc_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(GEOUNC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_config(const fs::path& p, const json& j) { write_text(p, j.dump(2)); }

}  // namespace

TEST(Config, Defaults) {
  const RunConfig c = config_from_json(json::object());
  EXPECT_FALSE(c.scene.has_value());
  EXPECT_EQ(c.consistency.patch_size, 11);
  EXPECT_EQ(c.consistency.k_best, 4);
  EXPECT_EQ(c.train.batch_rays, 1024);
  EXPECT_THROW(c.require_scene(), Error);
  const RunConfig t = config_from_json(tiny_config());
  EXPECT_EQ(t.scene->perturb.size(), 1u);
  EXPECT_EQ(t.nbv.tsdf.dims, (Dims{24, 24, 24}));
  EXPECT_EQ(t.nbv.uncertainty_dims, (Dims{12, 12, 12}));
  EXPECT_EQ(t.nbv.train.steps_stage1, 3);
  EXPECT_EQ(t.train.seed, 11u);
}

TEST(Config, RejectsUnknownKeysAndBadRanges) {
  auto expect_invalid = [](const json& j) {
    try {
      config_from_json(j);
      ADD_FAILURE() << j.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::validation) << e.what();
    }
  };
  json j = tiny_config();
  j["colour"] = 1;
  expect_invalid(j);
  j = tiny_config();
  j["train"]["momentum"] = 0.9;
  expect_invalid(j);
  j = tiny_config();
  j["scene"]["perturb"][0]["sigma"] = 1;
  expect_invalid(j);
  j = tiny_config();
  j["consistency"]["patch_size"] = 4;
  expect_invalid(j);
  j = tiny_config();
  j["train"]["lr"] = -1;
  expect_invalid(j);
  j = tiny_config();
  j["train"]["init_value"] = 3;
  expect_invalid(j);
  j = tiny_config();
  j["rig"]["count"] = "many";
  expect_invalid(j);
  j = tiny_config();
  j["scene"]["sdf"]["type"] = "blob";
  expect_invalid(j);
  j = tiny_config();
  j["nbv"]["policy"] = "greedy";
  expect_invalid(j);
  j = tiny_config();
  j["threads"] = 0;
  expect_invalid(j);
}

TEST(Config, HashIgnoresOutputAndThreads) {
  json a = tiny_config(), b = tiny_config(), c = tiny_config();
  b["output"] = "elsewhere";
  b["threads"] = 4;
  b["deterministic"] = false;
  c["seed"] = 12;
  const std::string ha = config_hash(config_from_json(a));
  EXPECT_EQ(ha.size(), 16u);
  EXPECT_EQ(ha, config_hash(config_from_json(b)));
  EXPECT_NE(ha, config_hash(config_from_json(c)));
}

TEST(Config, FileErrors) {
  const fs::path dir = scratch("config");
  try {
    load_config(dir / "nope.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  write_text(dir / "bad.json", "{ \"seed\": ");
  try {
    load_config(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit");
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen"), 2);
  json bad = tiny_config();
  bad["scene"]["unknown"] = true;
  write_config(dir / "bad.json", bad);
  EXPECT_EQ(run("gen -c " + (dir / "bad.json").string() + " -o " + (dir / "x").string()), 2);
  write_config(dir / "noscene.json", json{{"seed", 1}});
  EXPECT_EQ(run("gen -c " + (dir / "noscene.json").string() + " -o " + (dir / "x").string()), 2);
  EXPECT_EQ(run("labels -d " + (dir / "missing").string() + " -o " + (dir / "x").string()), 3);
  EXPECT_EQ(run("--threads 0 gen -c " + (dir / "bad.json").string()), 2);
}

TEST(Cli, PipelineArtifacts) {
  const fs::path dir = scratch("pipeline");
  const std::string cfg = (dir / "cfg.json").string();
  write_config(cfg, tiny_config());
  const std::string ds = (dir / "ds").string();
  ASSERT_EQ(run("gen -c " + cfg + " -o " + ds), 0);
  EXPECT_TRUE(fs::exists(dir / "ds" / "cameras.json"));
  EXPECT_TRUE(fs::exists(dir / "ds" / "recon.sdfg"));
  EXPECT_TRUE(fs::exists(dir / "ds" / "images" / "view_0007.png"));
  EXPECT_TRUE(fs::exists(dir / "ds" / "depth" / "view_0000.pfm"));

  ASSERT_EQ(run("labels -c " + cfg + " -d " + ds + " -o " + (dir / "labels").string()), 0);
  const std::string labels = slurp(dir / "labels" / "labels.csv");
  EXPECT_EQ(labels.rfind("x,y,z,G,count\n", 0), 0u);

  ASSERT_EQ(run("distill -c " + cfg + " -d " + ds + " -o " + (dir / "s1").string()), 0);
  EXPECT_FALSE(fs::exists(dir / "s1" / "images_decoupled"));
  const std::string loss1 = slurp(dir / "s1" / "loss.csv");
  EXPECT_EQ(std::count(loss1.begin(), loss1.end(), '\n'), 1 + 4);
  ASSERT_EQ(run("distill --finetune -c " + cfg + " -d " + ds + " -o " + (dir / "s2").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "s2" / "images_decoupled" / "view_0000.png"));
  EXPECT_TRUE(fs::exists(dir / "s2" / "vd" / "view_0000.png"));
  const std::string loss2 = slurp(dir / "s2" / "loss.csv");
  EXPECT_EQ(std::count(loss2.begin(), loss2.end(), '\n'), 1 + 4 + 2);

  ASSERT_EQ(run("eval -c " + cfg + " -d " + ds + " -g " + (dir / "s1" / "uncertainty.uncg").string() + " -o " +
                (dir / "ev").string()),
            0);
  const json rep = json::parse(slurp(dir / "ev" / "report.json"));
  for (const char* k : {"ause_mse", "ause_mae", "ause_3d", "cd", "n_pixels", "n_points"}) EXPECT_TRUE(rep.contains(k));
  EXPECT_TRUE(fs::exists(dir / "ev" / "curves_3d.csv"));
  EXPECT_EQ(run("eval -c " + cfg + " -d " + ds + " -g " + (dir / "none.uncg").string() + " -o " +
                (dir / "ev2").string()),
            3);

  ASSERT_EQ(run("nbv -c " + cfg + " -d " + ds + " -o " + (dir / "nbv").string()), 0);
  const std::string traj = slurp(dir / "nbv" / "trajectory.csv");
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 1 + 2);
  EXPECT_FALSE(fs::is_empty(dir / "nbv" / "maps"));
  ASSERT_EQ(run("nbv --policy random --rounds 0 -c " + cfg + " -d " + ds + " -o " + (dir / "nbv0").string()), 0);
  const std::string traj0 = slurp(dir / "nbv0" / "trajectory.csv");
  EXPECT_EQ(std::count(traj0.begin(), traj0.end(), '\n'), 1 + 1);
  EXPECT_EQ(run("nbv --policy greedy -c " + cfg + " -d " + ds), 2);
}

TEST(Cli, AblationRowsCarryHash) {
  const fs::path dir = scratch("ablate");
  const std::string cfg = (dir / "cfg.json").string();
  write_config(cfg, tiny_config());
  ASSERT_EQ(run("ablate -c " + cfg + " -o " + (dir / "ab").string()), 0);
  const std::string csv = slurp(dir / "ab" / "ablation.csv");
  const std::string hash = config_hash(config_from_json(tiny_config()));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4);
  std::size_t pos = 0;
  int hits = 0;
  while ((pos = csv.find(hash, pos)) != std::string::npos) ++hits, ++pos;
  EXPECT_EQ(hits, 4);
  EXPECT_NE(csv.find("K5_dec,5,1,"), std::string::npos);
  EXPECT_NE(csv.find("K1_nodec,1,0,"), std::string::npos);
}
