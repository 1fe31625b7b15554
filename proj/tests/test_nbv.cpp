#include "geounc/nbv.hpp"

#include <gtest/gtest.h>

using namespace geounc;

namespace {

const BoundingSphere kBounds{Vec3::Zero(), 1.5};
const AnalyticSdf kUnit = AnalyticSdf::sphere(Vec3::Zero(), 1.0);
const Aabb kBox{Vec3::Constant(-1.5), Vec3::Constant(1.5)};

std::vector<CameraView> rig(int n, int size) {
  std::vector<CameraView> v;
  for (auto& c : make_rig(n, RigLayout::sphere, Vec3::Zero(), 3.5, 40.0, size, size))
    v.push_back(render_view(kUnit, ShadingModel{}, c, {kBounds}));
  return v;
}

NbvConfig small_config() {
  NbvConfig c;
  c.rounds = 2;
  c.n_regions = 2;
  c.map_stride = 2;
  c.gt_sample_dims = {32, 32, 32};
  c.tsdf = {{32, 32, 32}, kBox, 0.15, 0.0, 0};
  c.uncertainty_dims = {12, 12, 12};
  c.train.batch_rays = 64;
  c.train.steps_stage1 = 4;
  c.consistency.patch_size = 5;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(RegionGrid, Layout) {
  const RegionGrid g8(8);
  EXPECT_EQ(g8.n_lat, 2);
  EXPECT_EQ(g8.n_lon, 4);
  EXPECT_EQ(RegionGrid(7).n_lat, 1);
  EXPECT_EQ(RegionGrid(9).n_lat, 3);
  EXPECT_EQ(RegionGrid(1).count(), 1);
  EXPECT_EQ(g8.region_of(Vec3(1, 0.1, 0.5)), 4);
  EXPECT_EQ(g8.region_of(Vec3(-1, -0.1, -0.5)), 2);
  EXPECT_EQ(g8.region_of(Vec3(0.1, -1, 0.2)), 7);
  EXPECT_THROW(RegionGrid(0), Error);
}

TEST(Pool, OneTrainingAndTestViewPerRegion) {
  std::vector<CameraView> views;
  for (auto& c : make_rig(40, RigLayout::sphere, Vec3::Zero(), 3.5, 40.0, 8, 8)) views.push_back(c);
  const ViewPool p = init_pool(views, Vec3::Zero(), 8, 5);
  EXPECT_EQ(p.with(ViewStatus::training).size(), 8u);
  EXPECT_EQ(p.with(ViewStatus::test).size(), 8u);
  std::vector<int> train_per(8, 0), test_per(8, 0);
  for (std::size_t i : p.with(ViewStatus::training)) train_per[p.region[i]]++;
  for (std::size_t i : p.with(ViewStatus::test)) test_per[p.region[i]]++;
  EXPECT_EQ(train_per, std::vector<int>(8, 1));
  EXPECT_EQ(test_per, std::vector<int>(8, 1));
  EXPECT_EQ(init_pool(views, Vec3::Zero(), 8, 5).status, p.status);
  const ViewPool one = init_pool(views, Vec3::Zero(), 1, 5);
  EXPECT_EQ(one.with(ViewStatus::training).size(), 1u);
  EXPECT_EQ(one.with(ViewStatus::test).size(), 1u);
}

TEST(Pool, SparseRegionIsReported) {
  std::vector<CameraView> views;
  for (auto& c : make_rig(16, RigLayout::ring, Vec3::Zero(), 3.5, 40.0, 8, 8)) views.push_back(c);
  try {
    init_pool(views, Vec3::Zero(), 8, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
    const std::string msg = e.what();
    for (const char* r : {"0 (0 views)", "1 (0 views)", "2 (0 views)", "3 (0 views)"})
      EXPECT_NE(msg.find(r), std::string::npos) << msg;
  }
  EXPECT_THROW(init_pool(views, Vec3::Zero(), 9, 0), Error);
}

TEST(UncertaintyMapRender, ConstantFieldAndFacingAway) {
  const UncertaintyGrid g({4, 4, 4}, kBox, 0.7);
  const CameraView v = look_at(0, Vec3(0, 0, 3), Vec3::Zero(), Vec3::UnitY(), 40, 20, 20);
  const auto m = render_uncertainty_map(v, g, kUnit, kBounds);
  int valid = 0;
  for (std::size_t i = 0; i < m.values.size(); ++i)
    if (m.valid[i]) {
      ++valid;
      EXPECT_NEAR(m.values[i], 0.7, 1e-12);
    }
  EXPECT_GT(valid, 50);
  EXPECT_NEAR(score_view(m), 0.7, 1e-12);
  const auto strided = render_uncertainty_map(v, g, kUnit, kBounds, 3);
  EXPECT_EQ(strided.width, 7);
  const CameraView away = look_at(1, Vec3(0, 0, 3), Vec3(0, 0, 6), Vec3::UnitY(), 40, 20, 20);
  const auto none = render_uncertainty_map(away, g, kUnit, kBounds);
  EXPECT_TRUE(std::all_of(none.valid.begin(), none.valid.end(), [](auto x) { return x == 0; }));
  EXPECT_EQ(score_view(none), 0.0);
}

TEST(ScoreView, MeanAndMax) {
  UncertaintyMap m{2, 2, {0.5, 1.5, 9.0, 1.0}, {1, 1, 0, 1}};
  EXPECT_DOUBLE_EQ(score_view(m), 1.0);
  EXPECT_DOUBLE_EQ(score_view(m, ScoreMode::max), 1.5);
}

TEST(SelectNbv, ArgmaxTiesAndErrors) {
  ViewPool p;
  p.ids = {7, 3, 5, 9};
  p.region = {0, 0, 0, 0};
  p.status = {ViewStatus::unused, ViewStatus::unused, ViewStatus::training, ViewStatus::unused};
  const std::vector<double> s{0.4, 0.4, 9.0, 0.1};
  const Selection sel = select_nbv(p, [&](std::size_t i) { return s[i]; });
  EXPECT_EQ(sel.index, 1u);  // tie between ids 7 and 3 -> 3
  EXPECT_DOUBLE_EQ(sel.score, 0.4);
  p.status = {ViewStatus::training, ViewStatus::test, ViewStatus::training, ViewStatus::unused};
  EXPECT_EQ(select_nbv(p, [&](std::size_t i) { return s[i]; }).index, 3u);
  p.status[3] = ViewStatus::training;
  EXPECT_THROW(select_nbv(p, [&](std::size_t i) { return s[i]; }), Error);
}

TEST(SelectNbv, PrefersViewsOfTheUncertainRegionAndIsScaleInvariant) {
  std::vector<CameraView> views;
  for (auto& c : make_rig(24, RigLayout::sphere, Vec3::Zero(), 3.5, 40.0, 24, 24)) views.push_back(c);
  ViewPool p;
  for (const auto& v : views) {
    p.ids.push_back(v.id);
    p.region.push_back(0);
    p.status.push_back(ViewStatus::unused);
  }
  const Vec3 hot = Vec3(0.2, -0.5, 0.8).normalized();
  UncertaintyGrid g({24, 24, 24}, kBox, 0.0);
  for (std::size_t i = 0; i < g.values().size(); ++i)
    g.values()[i] = 0.1 + 0.8 * std::exp(-(g.grid().node_position(i) - hot).squaredNorm() / 0.05);
  auto pick = [&](const UncertaintyGrid& grid) {
    return select_nbv(p, [&](std::size_t i) { return score_view(render_uncertainty_map(views[i], grid, kUnit, kBounds)); });
  };
  const Selection a = pick(g);
  const CameraView& chosen = views[a.index];
  const auto px = chosen.project(hot);
  ASSERT_TRUE(px);
  EXPECT_TRUE(chosen.inside(*px));
  EXPECT_GT((chosen.center() - hot).normalized().dot(hot), 0.5);
  UncertaintyGrid doubled = g;
  for (double& v : doubled.values()) v *= 2.0;  // test hook: no projection
  const Selection b = pick(doubled);
  EXPECT_EQ(a.index, b.index);
  EXPECT_NEAR(b.score, 2 * a.score, 1e-12);
}

TEST(Psnr, ClosedFormAndCap) {
  Image a(4, 4, 3, 0.25f), b(4, 4, 3, 0.75f);
  EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(4.0), 1e-9);
  EXPECT_EQ(psnr(a, a), 100.0);
  EXPECT_EQ(psnr(a, a, 60.0), 60.0);
  EXPECT_THROW(psnr(a, Image(3, 4, 3)), Error);
}

TEST(HeatMap, RankColors) {
  UncertaintyMap m{3, 1, {0.2, 5.0, 1.0}, {1, 0, 1}};
  const Image img = heat_map(m);
  EXPECT_EQ(img.at(1, 0, 0), 0.0f);
  EXPECT_EQ(img.at(1, 0, 1), 0.0f);
  EXPECT_EQ(img.at(1, 0, 2), 0.0f);
  EXPECT_GT(img.at(0, 0, 2), img.at(0, 0, 0));  // lowest: blue
  EXPECT_GT(img.at(2, 0, 0), img.at(2, 0, 2));  // highest: red
}

TEST(Incremental, BudgetZeroRecordsInitialRoundOnly) {
  const auto views = rig(24, 32);
  NbvConfig c = small_config();
  c.rounds = 0;
  const ViewPool pool = init_pool(views, Vec3::Zero(), c.n_regions, c.seed);
  const NbvState st = run_incremental({views, kUnit, ShadingModel{}, kBounds}, pool, c);
  ASSERT_TRUE(st.error.empty()) << st.error;
  ASSERT_EQ(st.trajectory.size(), 1u);
  EXPECT_EQ(st.trajectory[0].chosen_view, -1);
  EXPECT_TRUE(std::isfinite(st.trajectory[0].cd));
  EXPECT_GT(st.trajectory[0].psnr, 5.0);
  EXPECT_EQ(st.training_ids.size(), 2u);
}

TEST(Incremental, DeterministicAndPoliciesRun) {
  const auto views = rig(24, 32);
  NbvConfig c = small_config();
  const ViewPool pool = init_pool(views, Vec3::Zero(), c.n_regions, c.seed);
  const NbvScene scene{views, kUnit, ShadingModel{}, kBounds};
  int maps = 0;
  const NbvState a = run_incremental(scene, pool, c, [&](int, std::size_t, const UncertaintyMap&) { ++maps; });
  const NbvState b = run_incremental(scene, pool, c);
  ASSERT_TRUE(a.error.empty()) << a.error;
  ASSERT_EQ(a.trajectory.size(), 3u);
  EXPECT_EQ(trajectory_csv(a.trajectory), trajectory_csv(b.trajectory));
  EXPECT_EQ(maps, 20 + 19);
  std::vector<int> chosen;
  for (const auto& r : a.trajectory) {
    if (r.round < 2) {
      EXPECT_GE(r.chosen_view, 0);
      EXPECT_GE(r.mean_uncertainty, 0.0);
      EXPECT_LE(r.mean_uncertainty, 2.0);
      chosen.push_back(r.chosen_view);
    }
  }
  EXPECT_NE(chosen[0], chosen[1]);
  EXPECT_EQ(a.training_ids.size(), 4u);

  c.policy = NbvPolicy::random;
  const NbvState r = run_incremental(scene, pool, c);
  ASSERT_TRUE(r.error.empty());
  EXPECT_TRUE(std::isnan(r.trajectory[0].mean_uncertainty));
  EXPECT_EQ(trajectory_csv(r.trajectory), trajectory_csv(run_incremental(scene, pool, c).trajectory));
  EXPECT_NE(trajectory_csv(r.trajectory).find(",nan\n"), std::string::npos);
}

TEST(Incremental, ExhaustedPoolStopsWithError) {
  const auto views = rig(24, 24);
  NbvConfig c = small_config();
  c.rounds = 3;
  c.policy = NbvPolicy::random;
  ViewPool pool = init_pool(views, Vec3::Zero(), 2, 0);
  const auto unused = pool.with(ViewStatus::unused);
  for (std::size_t k = 1; k < unused.size(); ++k) pool.status[unused[k]] = ViewStatus::training;
  const NbvState st = run_incremental({views, kUnit, ShadingModel{}, kBounds}, pool, c);
  EXPECT_NE(st.error.find("round 1"), std::string::npos) << st.error;
  ASSERT_EQ(st.trajectory.size(), 1u);
  EXPECT_EQ(st.trajectory[0].chosen_view, pool.ids[unused[0]]);
}

TEST(Trajectory, CsvAndRoundsToReach) {
  const std::vector<NbvRound> t{{0, 4, 0.5, 20, 0.3}, {1, 2, 0.2, 22, 0.25}, {2, -1, 0.1, 25}};
  EXPECT_EQ(trajectory_csv(t),
            "round,chosen_view,cd,psnr,mean_uncertainty\n0,4,0.5,20,0.3\n1,2,0.2,22,0.25\n2,-1,0.1,25,nan\n");
  EXPECT_EQ(rounds_to_reach(t, 0.2), 1);
  EXPECT_EQ(rounds_to_reach(t, 0.05), -1);
}
