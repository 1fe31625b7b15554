#include "geounc/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace geounc;

struct Common {
  std::string config;
  std::string out;
  int threads = 0;
  bool deterministic = false;
};

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? config_from_json(nlohmann::json::object()) : load_config(c.config);
  if (c.threads > 0) {
    cfg.threads = static_cast<unsigned>(c.threads);
  } else if (const char* env = std::getenv("GEOUNC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) cfg.threads = static_cast<unsigned>(n);
  }
  if (c.deterministic) cfg.deterministic = true;
  execution().threads = cfg.threads;
  execution().deterministic = cfg.deterministic;
  return cfg;
}

fs::path out_dir(const Common& c, const RunConfig& cfg) { return c.out.empty() ? fs::path(cfg.output) : fs::path(c.out); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric uncertainty for signed-distance surface reconstructions"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--threads", common.threads, "Worker threads (overrides GEOUNC_THREADS)")->check(CLI::Range(1, 256));
  app.add_flag("--deterministic", common.deterministic, "Fixed-order reductions");

  auto with_config = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("-c,--config", common.config, "Run configuration (JSON)");
    if (config_required) opt->required();
    sub->add_option("-o,--out", common.out, "Output directory (default: config output)");
  };

  std::string dataset, grid, policy;
  int rounds = -1;
  bool finetune = false;

  auto* gen = app.add_subcommand("gen", "Render a synthetic dataset and its reconstruction");
  with_config(gen, true);
  auto* labels = app.add_subcommand("labels", "Dump a batch of pseudo labels");
  with_config(labels, false);
  labels->add_option("-d,--dataset", dataset, "Dataset directory")->required();
  auto* distill = app.add_subcommand("distill", "Distill the uncertainty grid");
  with_config(distill, false);
  distill->add_option("-d,--dataset", dataset, "Dataset directory")->required();
  distill->add_flag("--finetune", finetune, "Decouple view dependence and run stage 2");
  auto* eval = app.add_subcommand("eval", "Evaluate an uncertainty grid");
  with_config(eval, false);
  eval->add_option("-d,--dataset", dataset, "Dataset directory")->required();
  eval->add_option("-g,--grid", grid, "Uncertainty grid (.uncg)")->required();
  auto* nbv = app.add_subcommand("nbv", "Simulate next-best-view reconstruction");
  with_config(nbv, false);
  nbv->add_option("-d,--dataset", dataset, "Dataset directory")->required();
  nbv->add_option("--policy", policy, "uncertainty | random")->check(CLI::IsMember({"uncertainty", "random"}));
  nbv->add_option("--rounds", rounds, "Rounds (overrides config)")->check(CLI::Range(0, 1000));
  auto* ablate = app.add_subcommand("ablate", "Patch size and decoupling sweep");
  with_config(ablate, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load(common);
    const fs::path out = out_dir(common, cfg);
    if (gen->parsed()) {
      const SceneDataset ds = cmd_gen(cfg, out);
      std::cout << "wrote " << ds.views.size() << " views to " << out.string() << "\n";
    } else if (labels->parsed()) {
      const LabelBatch b = cmd_labels(load_dataset(dataset), cfg, out);
      std::cout << b.labels.size() << " labels (" << b.misses << " misses, " << b.no_valid_pairs
                << " without valid pairs)\n";
    } else if (distill->parsed()) {
      const DistillResult r = cmd_distill(load_dataset(dataset), cfg, finetune, out);
      std::cout << r.trace.size() << " steps, final loss " << (r.trace.empty() ? 0.0 : r.trace.back().loss) << "\n";
    } else if (eval->parsed()) {
      const EvalResult r = cmd_eval(load_dataset(dataset), grid, cfg, out);
      std::cout << r.report.to_json().dump() << "\n";
    } else if (nbv->parsed()) {
      if (!policy.empty()) cfg.nbv.policy = policy == "random" ? NbvPolicy::random : NbvPolicy::uncertainty;
      if (rounds >= 0) cfg.nbv.rounds = rounds;
      const NbvState st = cmd_nbv(load_dataset(dataset), cfg, out);
      std::cout << trajectory_csv(st.trajectory);
    } else if (ablate->parsed()) {
      const auto rows = cmd_ablate(cfg, out);
      std::cout << ablation_csv(rows, config_hash(cfg));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::validation ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
