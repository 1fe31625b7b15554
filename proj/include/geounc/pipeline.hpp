#pragma once

#include "geounc/config.hpp"
#include "geounc/consistency.hpp"
#include "geounc/decouple.hpp"
#include "geounc/eval.hpp"
#include "geounc/io.hpp"
#include "geounc/nbv.hpp"
#include "geounc/scene.hpp"
#include "geounc/uncertainty.hpp"

#include <cstdio>

namespace geounc {

// ---------------------------------------------------------------------------
// gen

inline SceneDataset generate_dataset(const RunConfig& cfg) {
  const SceneSpec& s = cfg.require_scene();
  s.shading.validate();
  SceneDataset ds;
  ds.gt_sdf = s.sdf;
  ds.shading = s.shading;
  ds.bounds = s.bounds;
  const RenderOptions ro{s.bounds, {1e-6, 512, 1.0, false}};
  for (auto& cam : make_rig(cfg.rig.count, cfg.rig.layout, cfg.rig.target, cfg.rig.radius, cfg.rig.fov_deg,
                            cfg.rig.width, cfg.rig.height))
    ds.views.push_back(render_view(s.sdf, s.shading, std::move(cam), ro));
  if (s.recon == ReconKind::perturb) {
    ds.recon_sdf = perturb_sdf(s.sdf, s.perturb, s.grid_dims, s.bbox);
  } else {
    TsdfParams tp{s.grid_dims, s.bbox, s.truncation, s.depth_noise, cfg.seed};
    ds.recon_sdf = tsdf_fuse(ds.views, tp).sdf;
  }
  ds.validate();
  return ds;
}

inline SceneDataset cmd_gen(const RunConfig& cfg, const fs::path& out) {
  SceneDataset ds = generate_dataset(cfg);
  save_dataset(ds, out);
  return ds;
}

// ---------------------------------------------------------------------------
// labels

inline LabelBatch cmd_labels(const SceneDataset& ds, const RunConfig& cfg, const fs::path& out) {
  const ConsistencyContext ctx(ds.views, ds.bounds);
  Rng rng(mix_seed(cfg.seed, 0x6c61626c));
  const auto rays = sample_rays(ctx, static_cast<std::size_t>(cfg.label_rays), rng, cfg.consistency.patch_size / 2);
  LabelBatch batch = generate_pseudo_labels(ctx, ds.recon_sdf, rays, cfg.consistency);
  write_text(out / "labels.csv", labels_csv(batch.labels));
  return batch;
}

// ---------------------------------------------------------------------------
// distill

struct DistillResult {
  UncertaintyGrid grid;
  std::vector<LossRecord> trace;
  std::vector<Image> processed;
  std::vector<Image> vd;
};

/// Stage 1 on raw images, then optionally decouple + stage 2 on processed images.
inline DistillResult run_distill(const SceneDataset& ds, const RunConfig& cfg, bool finetune) {
  DistillResult r;
  r.grid = UncertaintyGrid(cfg.uncertainty_dims, ds.recon_sdf.grid().bbox(), cfg.train.init_value);
  const ConsistencyContext raw(ds.views, ds.bounds);
  r.trace = train_stage1(raw, ds.recon_sdf, r.grid, cfg.train, cfg.consistency);
  if (!finetune) return r;
  const DecoupledField dec = fit_decoupled(ds.views, ds.recon_sdf, ds.bounds, cfg.decouple);
  r.processed = decouple_images(ds.views, dec, ds.recon_sdf, ds.bounds, &r.vd);
  const ConsistencyContext proc(ds.views, ds.bounds, &r.processed);
  const auto ft = finetune_stage2(proc, ds.recon_sdf, r.grid, cfg.train, cfg.consistency);
  r.trace.insert(r.trace.end(), ft.begin(), ft.end());
  return r;
}

inline DistillResult cmd_distill(const SceneDataset& ds, const RunConfig& cfg, bool finetune, const fs::path& out) {
  DistillResult r = run_distill(ds, cfg, finetune);
  save_uncg(r.grid, out / "uncertainty.uncg");
  write_text(out / "loss.csv", loss_trace_csv(r.trace));
  for (std::size_t i = 0; i < r.processed.size(); ++i) {
    write_png(out / "images_decoupled" / view_file(ds.views[i].id, "png"), r.processed[i]);
    write_png(out / "vd" / view_file(ds.views[i].id, "png"), r.vd[i]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// eval

struct EvalResult {
  AuseReport report;
  SparsificationCurve mae, mse, err3d;
  std::vector<Vec3> points;
};

/// Depth AUSE over all views (pixels without a predicted surface get the
/// maximum uncertainty), 3D AUSE over the recon surface points, and chamfer
/// distance after unit-sphere normalization.
template <class Unc>
EvalResult evaluate(const SceneDataset& ds, const Unc& uncertainty, const RunConfig& cfg) {
  EvalResult r;
  DepthErrorParams dp;
  dp.bounds = ds.bounds;
  dp.penalize_one_sided_miss = cfg.eval.penalize_one_sided_miss;
  std::vector<double> abs_e, sq_e, pix_u;
  for (const auto& v : ds.views) {
    const DepthErrorMap m = depth_error_map(ds.recon_sdf, v, dp);
    for (std::size_t i = 0; i < m.size(); ++i) {
      abs_e.push_back(m.abs_error[i]);
      sq_e.push_back(m.sq_error[i]);
      pix_u.push_back(m.predicted_point[i] ? uncertainty(*m.predicted_point[i]) : UncertaintyGrid::kMax);
    }
  }
  r.points = extract_surface_points(ds.recon_sdf);
  require(!r.points.empty(), "reconstruction has no surface points");
  std::vector<double> e3, u3;
  for (const Vec3& p : r.points) {
    e3.push_back(point_3d_error(p, ds.gt_sdf));
    u3.push_back(uncertainty(p));
  }
  if (!abs_e.empty()) {
    r.mae = sparsification(abs_e, pix_u);
    r.mse = sparsification(sq_e, pix_u);
    r.report.ause_mae = ause(r.mae);
    r.report.ause_mse = ause(r.mse);
  }
  r.err3d = sparsification(e3, u3);
  r.report.ause_3d = ause(r.err3d);
  const auto gt_pts = sample_surface(ds.gt_sdf, cfg.eval.gt_sample_dims, ds.recon_sdf.grid().bbox());
  const Similarity norm = unit_sphere_transform(gt_pts);
  r.report.cd = chamfer(transform_points(norm, r.points), transform_points(norm, gt_pts));
  r.report.n_pixels = abs_e.size();
  r.report.n_points = r.points.size();
  return r;
}

inline EvalResult cmd_eval(const SceneDataset& ds, const fs::path& grid_path, const RunConfig& cfg,
                           const fs::path& out) {
  const UncertaintyGrid grid = load_uncg(grid_path);
  EvalResult r = evaluate(ds, grid, cfg);
  write_text(out / "report.json", r.report.to_json().dump(2) + "\n");
  if (!r.mae.fractions.empty()) {
    write_text(out / "curves_mae.csv", curve_csv(r.mae));
    write_text(out / "curves_mse.csv", curve_csv(r.mse));
  }
  write_text(out / "curves_3d.csv", curve_csv(r.err3d));
  write_text(out / "points.ply", ascii_ply(r.points));
  return r;
}

// ---------------------------------------------------------------------------
// nbv

inline NbvState cmd_nbv(const SceneDataset& ds, const RunConfig& cfg, const fs::path& out) {
  const ViewPool pool = init_pool(ds.views, ds.bounds.center, cfg.nbv.n_regions, cfg.seed);
  NbvConfig nc = cfg.nbv;
  nc.tsdf.dims = ds.recon_sdf.grid().dims();
  nc.tsdf.bbox = ds.recon_sdf.grid().bbox();
  MapSink sink;
  if (cfg.nbv_heat_maps)
    sink = [&](int round, std::size_t i, const UncertaintyMap& m) {
      char name[64];
      std::snprintf(name, sizeof(name), "round_%02d_view_%04d.png", round, ds.views[i].id);
      write_png(out / "maps" / name, heat_map(m));
    };
  NbvState st = run_incremental({ds.views, ds.gt_sdf, ds.shading, ds.bounds}, pool, nc, sink);
  write_text(out / "trajectory.csv", trajectory_csv(st.trajectory));
  if (!st.error.empty()) fail(ErrorKind::runtime, "nbv aborted at " + st.error);
  return st;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  int patch_size = 11;
  bool decouple = true;
  AuseReport report;
};

/// One evaluation per (patch size, decouple) variant; decouple off means stage 1 only.
inline std::vector<AblationRow> run_ablation(const SceneDataset& ds, const RunConfig& cfg) {
  std::vector<AblationRow> rows;
  for (int k : cfg.ablate.patch_sizes)
    for (bool dec : cfg.ablate.decouple) {
      RunConfig v = cfg;
      v.consistency.patch_size = k;
      const DistillResult d = run_distill(ds, v, dec);
      rows.push_back({k, dec, evaluate(ds, d.grid, v).report});
    }
  return rows;
}

inline std::string ablation_csv(std::span<const AblationRow> rows, const std::string& hash) {
  std::ostringstream os;
  os.precision(9);
  os << "variant,patch_size,decouple,ause_3d,ause_mae,ause_mse,cd,config_hash\n";
  for (const auto& r : rows)
    os << 'K' << r.patch_size << (r.decouple ? "_dec" : "_nodec") << ',' << r.patch_size << ','
       << (r.decouple ? 1 : 0) << ',' << r.report.ause_3d << ',' << r.report.ause_mae << ',' << r.report.ause_mse
       << ',' << r.report.cd << ',' << hash << '\n';
  return os.str();
}

inline std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const fs::path& out) {
  const SceneDataset ds = generate_dataset(cfg);
  auto rows = run_ablation(ds, cfg);
  write_text(out / "ablation.csv", ablation_csv(rows, config_hash(cfg)));
  return rows;
}

}  // namespace geounc
