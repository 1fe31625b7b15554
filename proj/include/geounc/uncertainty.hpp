#pragma once

#include "geounc/consistency.hpp"
#include "geounc/grid.hpp"
#include "geounc/io.hpp"

#include <functional>
#include <sstream>

namespace geounc {

/// Trilinear scalar field U(x) with node values kept in [0, 2].
class UncertaintyGrid {
 public:
  static constexpr double kMin = 0.0;
  static constexpr double kMax = 2.0;

  UncertaintyGrid() = default;
  UncertaintyGrid(const Dims& dims, const Aabb& box, double init = 1.0) : grid_(dims, box, init) {
    require(init >= kMin && init <= kMax, "uncertainty init value must lie in [0, 2]");
  }
  explicit UncertaintyGrid(Grid3<double> g) : grid_(std::move(g)) { project(); }

  double operator()(const Vec3& x) const { return grid_.sample(x); }
  Vec3 gradient(const Vec3& x) const { return grid_.gradient(x); }

  Grid3<double>& grid() { return grid_; }
  const Grid3<double>& grid() const { return grid_; }
  std::vector<double>& values() { return grid_.values(); }
  const std::vector<double>& values() const { return grid_.values(); }

  void project() {
    for (double& v : grid_.values()) v = std::clamp(v, kMin, kMax);
  }

 private:
  Grid3<double> grid_;
};

inline double eval_uncertainty(const UncertaintyGrid& g, const Vec3& x) { return g(x); }

inline void save_uncg(const UncertaintyGrid& g, const fs::path& path) {
  write_text(path, encode_lattice(g.grid(), kUncertaintyMagic));
}

inline UncertaintyGrid load_uncg(const fs::path& path) {
  if (!fs::exists(path)) io_fail(path, "missing uncertainty grid");
  return UncertaintyGrid(decode_lattice<double>(read_text(path), kUncertaintyMagic, path));
}

/// A distillation target: position and pseudo-label value.
struct DistillTarget {
  Vec3 position;
  double value;
};

inline std::vector<DistillTarget> targets_from(std::span<const PseudoLabel> labels) {
  std::vector<DistillTarget> t;
  t.reserve(labels.size());
  for (const auto& l : labels) t.push_back({l.point.position, l.score});
  return t;
}

/// Mean absolute distillation error; `grad` receives d loss / d node values
/// (resized and zeroed). The subgradient of |r| at r = 0 is taken as 0.
inline double distill_loss(const UncertaintyGrid& grid, std::span<const DistillTarget> batch, std::vector<double>& grad) {
  require(!batch.empty(), "distill_loss: empty batch");
  grad.assign(grid.values().size(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& t : batch) {
    const TrilinearStencil s = grid.grid().stencil(t.position);
    double u = 0.0;
    for (int i = 0; i < 8; ++i) u += s.weight[i] * grid.values()[s.index[i]];
    const double r = u - t.value;
    loss += std::abs(r);
    const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    if (sign == 0.0) continue;
    for (int i = 0; i < 8; ++i) grad[s.index[i]] += sign * s.weight[i] * inv;
  }
  return loss * inv;
}

struct AdamParams {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment update over a flat parameter vector.
class Adam {
 public:
  explicit Adam(AdamParams p = {}) : p_(p) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(p_.beta1, t_);
    const double c2 = 1.0 - std::pow(p_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = p_.beta1 * m_[i] + (1.0 - p_.beta1) * g;
      v_[i] = p_.beta2 * v_[i] + (1.0 - p_.beta2) * g * g;
      if (m_[i] == 0.0) continue;
      params[i] -= p_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + p_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamParams p_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

enum class LabelRefresh { every_step, cached };

struct TrainConfig {
  int batch_rays = 1024;
  int steps_stage1 = 5000;
  int steps_finetune = 1000;
  AdamParams adam;
  std::uint64_t seed = 0;
  LabelRefresh refresh = LabelRefresh::every_step;
  /// Initial node value of a fresh grid.
  double init_value = 1.0;

  void validate() const {
    require(batch_rays > 0, "train.batch_rays must be > 0");
    require(steps_stage1 >= 0 && steps_finetune >= 0, "train step counts must be >= 0");
    require(adam.lr > 0.0, "train.lr must be > 0");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
            "train betas must lie in [0, 1)");
    require(adam.eps > 0.0, "train.eps must be > 0");
    require(init_value >= 0.0 && init_value <= 2.0, "train.init_value must lie in [0, 2]");
  }
};

struct LossRecord {
  int step = 0;
  double loss = 0.0;
  std::size_t valid_labels = 0;
};

/// Produces the distillation batch for a given step.
using TargetSource = std::function<std::vector<DistillTarget>(int step)>;

/// Runs `steps` Adam updates of the L1 distillation objective, projecting the
/// node values into [0, 2] after each. Empty batches are skipped and recorded
/// with valid_labels = 0.
inline std::vector<LossRecord> distill(UncertaintyGrid& grid, const TargetSource& source, int steps,
                                       const AdamParams& adam, int step_offset = 0) {
  Adam opt(adam);
  std::vector<LossRecord> trace;
  trace.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  std::vector<double> grad;
  for (int s = 0; s < steps; ++s) {
    const std::vector<DistillTarget> batch = source(s);
    if (batch.empty()) {
      trace.push_back({step_offset + s, 0.0, 0});
      continue;
    }
    const double loss = distill_loss(grid, batch, grad);
    opt.step(grid.values(), grad);
    grid.project();
    trace.push_back({step_offset + s, loss, batch.size()});
  }
  return trace;
}

/// Optional adjustment of labels before distillation.
using LabelHook = std::function<double(const PseudoLabel&)>;

/// Online pseudo labels: each step draws a fresh seeded ray batch from the
/// context, or reuses the step-0 batch in cached mode.
template <SdfField F>
TargetSource pseudo_label_source(const ConsistencyContext& ctx, const F& field, const ConsistencyParams& cp,
                                 const TrainConfig& cfg, std::uint64_t stream, LabelHook hook = {}) {
  auto cache = std::make_shared<std::optional<std::vector<DistillTarget>>>();
  return [&ctx, &field, cp, cfg, stream, hook, cache](int step) {
    if (cfg.refresh == LabelRefresh::cached && cache->has_value()) return **cache;
    Rng rng(mix_seed(mix_seed(cfg.seed, stream), static_cast<std::uint64_t>(step)));
    const auto rays = sample_rays(ctx, static_cast<std::size_t>(cfg.batch_rays), rng, cp.patch_size / 2);
    const LabelBatch batch = generate_pseudo_labels(ctx, field, rays, cp);
    std::vector<DistillTarget> targets;
    targets.reserve(batch.labels.size());
    for (const auto& l : batch.labels) targets.push_back({l.point.position, hook ? hook(l) : l.score});
    if (cfg.refresh == LabelRefresh::cached) *cache = targets;
    return targets;
  };
}

/// Stage 1: labels from raw images with sampled-ray root finding.
template <SdfField F>
std::vector<LossRecord> train_stage1(const ConsistencyContext& raw, const F& field, UncertaintyGrid& grid,
                                     const TrainConfig& cfg, ConsistencyParams cp, LabelHook hook = {}) {
  cfg.validate();
  cp.mode = IntersectMode::zero_crossing;
  return distill(grid, pseudo_label_source(raw, field, cp, cfg, 1, std::move(hook)), cfg.steps_stage1, cfg.adam);
}

/// Stage 2: continues from the stage-1 grid with labels from processed
/// (view-dependence removed) images and sphere-traced intersections.
template <SdfField F>
std::vector<LossRecord> finetune_stage2(const ConsistencyContext& processed, const F& field, UncertaintyGrid& grid,
                                        const TrainConfig& cfg, ConsistencyParams cp, LabelHook hook = {}) {
  cfg.validate();
  cp.mode = IntersectMode::sphere_trace;
  return distill(grid, pseudo_label_source(processed, field, cp, cfg, 2, std::move(hook)), cfg.steps_finetune,
                 cfg.adam, cfg.steps_stage1);
}

inline std::string loss_trace_csv(std::span<const LossRecord> trace) {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss,valid_labels\n";
  for (const auto& r : trace) os << r.step << ',' << r.loss << ',' << r.valid_labels << '\n';
  return os.str();
}

}  // namespace geounc
