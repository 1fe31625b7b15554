#pragma once

#include "geounc/decouple.hpp"
#include "geounc/eval.hpp"
#include "geounc/io.hpp"
#include "geounc/scene.hpp"
#include "geounc/uncertainty.hpp"

#include <sstream>

namespace geounc {

// ---------------------------------------------------------------------------
// Candidate pool

/// Latitude bands (equal area in z) times longitude sectors.
struct RegionGrid {
  int n_lat = 1;
  int n_lon = 1;

  explicit RegionGrid(int n_regions) {
    require(n_regions >= 1, "n_regions must be >= 1");
    for (int d = 1; d * d <= n_regions; ++d)
      if (n_regions % d == 0) n_lat = d;
    n_lon = n_regions / n_lat;
  }

  int count() const { return n_lat * n_lon; }

  int region_of(const Vec3& dir) const {
    const Vec3 d = dir.normalized();
    const int band = std::clamp(static_cast<int>(std::floor(0.5 * (d.z() + 1.0) * n_lat)), 0, n_lat - 1);
    double lon = std::atan2(d.y(), d.x());
    if (lon < 0.0) lon += 2.0 * std::numbers::pi;
    const int sector = std::clamp(static_cast<int>(std::floor(lon / (2.0 * std::numbers::pi) * n_lon)), 0, n_lon - 1);
    return band * n_lon + sector;
  }
};

enum class ViewStatus { unused, training, test };

struct ViewPool {
  std::vector<int> ids;  // view ids, parallel to the dataset's view list
  std::vector<int> region;
  std::vector<ViewStatus> status;
  int n_regions = 0;

  std::vector<std::size_t> with(ViewStatus s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < status.size(); ++i)
      if (status[i] == s) out.push_back(i);
    return out;
  }
};

/// Buckets views by viewing direction around `center` and draws one training
/// and one test view per region.
inline ViewPool init_pool(const std::vector<CameraView>& views, const Vec3& center, int n_regions, std::uint64_t seed) {
  const RegionGrid grid(n_regions);
  require(views.size() >= 2 * static_cast<std::size_t>(n_regions), "view pool needs >= 2 candidates per region");
  ViewPool pool;
  pool.n_regions = n_regions;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_regions));
  for (std::size_t i = 0; i < views.size(); ++i) {
    pool.ids.push_back(views[i].id);
    pool.region.push_back(grid.region_of(views[i].center() - center));
    pool.status.push_back(ViewStatus::unused);
    members[static_cast<std::size_t>(pool.region.back())].push_back(i);
  }
  std::string sparse;
  for (int r = 0; r < n_regions; ++r)
    if (members[static_cast<std::size_t>(r)].size() < 2)
      sparse += (sparse.empty() ? "" : ", ") + std::to_string(r) + " (" +
                std::to_string(members[static_cast<std::size_t>(r)].size()) + " views)";
  if (!sparse.empty()) fail(ErrorKind::validation, "regions with fewer than 2 candidate views: " + sparse);
  Rng rng(mix_seed(seed, 0x706f6f6c));
  for (auto& m : members) {
    for (std::size_t i = m.size(); i > 1; --i) std::swap(m[i - 1], m[rng.index(i)]);
    pool.status[m[0]] = ViewStatus::training;
    pool.status[m[1]] = ViewStatus::test;
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Scoring and selection

struct UncertaintyMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;
};

/// Sphere-traces every `stride`-th pixel against `field`; hits read U(p).
template <SdfField F>
UncertaintyMap render_uncertainty_map(const CameraView& view, const UncertaintyGrid& grid, const F& field,
                                      const BoundingSphere& bounds, int stride = 1,
                                      const TraceParams& trace = {1e-4, 256, 1.0, false}) {
  require(stride >= 1, "uncertainty map stride must be >= 1");
  UncertaintyMap m;
  m.width = (view.width + stride - 1) / stride;
  m.height = (view.height + stride - 1) / stride;
  const std::size_t n = static_cast<std::size_t>(m.width) * m.height;
  m.values.assign(n, 0.0);
  m.valid.assign(n, 0);
  parallel_for(n, [&](std::size_t idx) {
    const int x = static_cast<int>(idx % m.width) * stride, y = static_cast<int>(idx / m.width) * stride;
    const auto ray = pixel_ray(view, x, y, bounds);
    if (!ray) return;
    if (const auto tr = sphere_trace(field, *ray, trace)) {
      m.values[idx] = grid(tr.hit->position);
      m.valid[idx] = 1;
    }
  });
  return m;
}

enum class ScoreMode { mean, max };

inline double score_view(const UncertaintyMap& m, ScoreMode mode = ScoreMode::mean) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    if (!m.valid[i]) continue;
    acc = mode == ScoreMode::mean ? acc + m.values[i] : std::max(acc, m.values[i]);
    ++n;
  }
  if (n == 0) return 0.0;
  return mode == ScoreMode::mean ? acc / static_cast<double>(n) : acc;
}

struct Selection {
  std::size_t index = 0;  // into the pool
  double score = 0.0;
};

/// Global argmax over unused candidates; ties go to the lowest view id.
template <class ScoreFn>
Selection select_nbv(const ViewPool& pool, ScoreFn&& score) {
  const auto cand = pool.with(ViewStatus::unused);
  require(!cand.empty(), "select_nbv: no unused candidate views");
  std::vector<double> s(cand.size());
  for (std::size_t i = 0; i < cand.size(); ++i) s[i] = score(cand[i]);
  std::size_t best = 0;
  for (std::size_t i = 1; i < cand.size(); ++i)
    if (s[i] > s[best] || (s[i] == s[best] && pool.ids[cand[i]] < pool.ids[cand[best]])) best = i;
  return {cand[best], s[best]};
}

/// Peak signal-to-noise ratio for [0,1] images, capped for identical inputs.
inline double psnr(const Image& a, const Image& b, double cap = 100.0) {
  require(a.width == b.width && a.height == b.height && a.channels == b.channels, "psnr: image shapes differ");
  require(!a.empty(), "psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse <= 0.0) return cap;
  return std::min(cap, -10.0 * std::log10(mse));
}

/// Rank-colored heat map (blue = lowest, red = highest); invalid pixels black.
inline Image heat_map(const UncertaintyMap& m) {
  Image img(m.width, m.height, 3, 0.0f);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.values.size(); ++i)
    if (m.valid[i]) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m.values[a] < m.values[b]; });
  const double denom = idx.size() > 1 ? static_cast<double>(idx.size() - 1) : 1.0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double t = static_cast<double>(r) / denom;
    const int x = static_cast<int>(idx[r] % m.width), y = static_cast<int>(idx[r] / m.width);
    img.at(x, y, 0) = static_cast<float>(clamp01(1.5 * t - 0.25));
    img.at(x, y, 1) = static_cast<float>(clamp01(1.0 - std::abs(2.0 * t - 1.0) * 1.2));
    img.at(x, y, 2) = static_cast<float>(clamp01(1.25 - 1.5 * t));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Incremental reconstruction

enum class NbvPolicy { uncertainty, random };

struct NbvConfig {
  int rounds = 10;
  int n_regions = 8;
  NbvPolicy policy = NbvPolicy::uncertainty;
  ScoreMode score_mode = ScoreMode::mean;
  int map_stride = 1;
  double psnr_cap = 100.0;
  Dims gt_sample_dims{96, 96, 96};
  bool finetune = false;
  TsdfParams tsdf;
  Dims uncertainty_dims{64, 64, 64};
  TrainConfig train;
  ConsistencyParams consistency;
  DecoupleParams decouple;
  std::uint64_t seed = 0;

  void validate() const {
    require(rounds >= 0, "nbv.rounds must be >= 0");
    require(n_regions >= 1, "nbv.n_regions must be >= 1");
    require(map_stride >= 1, "nbv.map_stride must be >= 1");
    require(psnr_cap > 0.0, "nbv.psnr_cap must be > 0");
    train.validate();
    consistency.validate();
  }
};

struct NbvRound {
  int round = 0;
  int chosen_view = -1;  // -1 on the last round
  double cd = 0.0;
  double psnr = 0.0;
  double mean_uncertainty = std::numeric_limits<double>::quiet_NaN();
};

struct NbvState {
  int round = 0;
  std::vector<int> training_ids;
  VoxelSdf recon;
  UncertaintyGrid grid;
  std::vector<NbvRound> trajectory;
  std::string error;  // non-empty if a round failed
};

struct NbvScene {
  const std::vector<CameraView>& views;
  const AnalyticSdf& gt;
  const ShadingModel& shading;
  BoundingSphere bounds;
};

/// Called with (round, pool index, map) for every scored candidate if set.
using MapSink = std::function<void(int, std::size_t, const UncertaintyMap&)>;

/// Fuse, distill, select, record; repeated for cfg.rounds rounds plus a final
/// measurement. A failing round stops the loop and keeps the trajectory so far.
inline NbvState run_incremental(const NbvScene& scene, ViewPool pool, const NbvConfig& cfg, const MapSink& sink = {}) {
  cfg.validate();
  NbvState st;
  const auto gt_pts = sample_surface(scene.gt, cfg.gt_sample_dims, cfg.tsdf.bbox);
  const Similarity norm = unit_sphere_transform(gt_pts);
  const auto gt_norm = transform_points(norm, gt_pts);
  const TraceParams trace{1e-4, 256, 1.0, false};

  for (int r = 0; r <= cfg.rounds; ++r) {
    st.round = r;
    try {
      std::vector<const CameraView*> train;
      st.training_ids.clear();
      for (std::size_t i : pool.with(ViewStatus::training)) {
        train.push_back(&scene.views[i]);
        st.training_ids.push_back(pool.ids[i]);
      }
      TsdfParams tp = cfg.tsdf;
      tp.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(r));
      const TsdfVolume vol = tsdf_fuse(train, tp);
      st.recon = vol.sdf;

      NbvRound rec;
      rec.round = r;
      const auto pts = extract_surface_points(vol.sdf, &vol.weight);
      rec.cd = pts.empty() ? std::numeric_limits<double>::infinity() : chamfer(transform_points(norm, pts), gt_norm);
      double ps = 0.0;
      const auto tests = pool.with(ViewStatus::test);
      for (std::size_t i : tests) {
        CameraView cam = scene.views[i];
        render_into(vol.sdf, scene.shading, cam, RenderOptions{scene.bounds, trace});
        ps += psnr(cam.image, scene.views[i].image, cfg.psnr_cap);
      }
      rec.psnr = tests.empty() ? 0.0 : ps / static_cast<double>(tests.size());

      if (r < cfg.rounds) {
        Selection sel;
        if (cfg.policy == NbvPolicy::random) {
          const auto cand = pool.with(ViewStatus::unused);
          require(!cand.empty(), "select_nbv: no unused candidate views");
          Rng rng(mix_seed(mix_seed(cfg.seed, 0x72616e64), static_cast<std::uint64_t>(r)));
          sel.index = cand[rng.index(cand.size())];
        } else {
          st.grid = UncertaintyGrid(cfg.uncertainty_dims, cfg.tsdf.bbox, cfg.train.init_value);
          TrainConfig tc = cfg.train;
          tc.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(r));
          const ConsistencyContext raw(train, scene.bounds);
          train_stage1(raw, st.recon, st.grid, tc, cfg.consistency);
          if (cfg.finetune) {
            std::vector<CameraView> tv;
            for (const CameraView* v : train) tv.push_back(*v);
            DecoupleParams dp = cfg.decouple;
            dp.seed = tc.seed;
            const DecoupledField dec = fit_decoupled(tv, st.recon, scene.bounds, dp);
            const auto processed = decouple_images(tv, dec, st.recon, scene.bounds);
            const ConsistencyContext proc(tv, scene.bounds, &processed);
            finetune_stage2(proc, st.recon, st.grid, tc, cfg.consistency);
          }
          sel = select_nbv(pool, [&](std::size_t i) {
            const UncertaintyMap m =
                render_uncertainty_map(scene.views[i], st.grid, st.recon, scene.bounds, cfg.map_stride, trace);
            if (sink) sink(r, i, m);
            return score_view(m, cfg.score_mode);
          });
          rec.mean_uncertainty = sel.score;
        }
        rec.chosen_view = pool.ids[sel.index];
        pool.status[sel.index] = ViewStatus::training;
      }
      st.trajectory.push_back(rec);
    } catch (const Error& e) {
      st.error = "round " + std::to_string(r) + ": " + e.what();
      break;
    }
  }
  return st;
}

inline std::string trajectory_csv(std::span<const NbvRound> t) {
  std::ostringstream os;
  os.precision(9);
  os << "round,chosen_view,cd,psnr,mean_uncertainty\n";
  for (const auto& r : t) {
    os << r.round << ',' << r.chosen_view << ',' << r.cd << ',' << r.psnr << ',';
    if (std::isnan(r.mean_uncertainty)) os << "nan";
    else os << r.mean_uncertainty;
    os << '\n';
  }
  return os.str();
}

/// First round whose CD is at or below `target`, or -1.
inline int rounds_to_reach(std::span<const NbvRound> t, double target) {
  for (const auto& r : t)
    if (r.cd <= target) return r.round;
  return -1;
}

}  // namespace geounc
