#include "semflow/inference.hpp"
#include "semflow/initialization.hpp"
#include "semflow/testkit.hpp"

#include <gtest/gtest.h>

using namespace semflow;
using namespace semflow::testkit;

namespace {

EnergyConfig small_config() {
  EnergyConfig cfg;
  cfg.maxDisp = 8;
  cfg.outerIters = 3;
  return cfg;
}

double max_reprojection(const Homography& a, const Homography& b, const SuperpixelSegmentation& seg) {
  double worst = 0.0;
  for (std::size_t p = 0; p < seg.pixel_count(); ++p) {
    auto qa = a.map(p % seg.width(), p / seg.width());
    auto qb = b.map(p % seg.width(), p / seg.width());
    worst = std::max(worst, std::hypot(qa->x - qb->x, qa->y - qb->y));
  }
  return worst;
}

// Scene with only the camera-moved background plane.
SyntheticScene background_scene(int size, double dx, double dy, std::uint64_t seed) {
  SceneSpec s;
  s.width = s.height = size;
  s.camera = lateral_camera(size, size, dx, dy);
  s.background.depth = 10.0;
  return make_scene(s, seed);
}

struct Fixture {
  SyntheticScene sc;
  Problem pr;
};

Fixture scene_problem(SceneTemplate kind, std::uint64_t seed, int size, int cell) {
  auto sc = make_template_scene(kind, seed, size);
  auto seg = region_grid_segmentation(sc, cell);
  auto l0 = one_hot_labels(sc, sc.gtLabels0);
  auto l1 = one_hot_labels(sc, sc.gtLabels1);
  auto pr = make_problem(sc, std::move(seg), l0, l1);
  return {std::move(sc), std::move(pr)};
}

double total(const Problem& pr, const SolverState& st, const EnergyConfig& cfg) {
  return total_energy(pr, st.mf, st.occ, st.lNext, cfg).total;
}

} // namespace

TEST(InitState, FitsInitialFlow) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 1, 48, 8);
  Eigen::Matrix3d m;
  m << 1.02, 0.01, 1.5, -0.02, 0.99, -0.7, 1e-4, -2e-4, 1.0;
  Homography h(m);
  auto flow = dense_flow(MotionField(f.pr.seg.count(), h), f.pr.seg);
  auto cfg = small_config();
  auto st = init_state(f.pr, flow, cfg);
  for (int s = 0; s < f.pr.seg.count(); ++s) {
    EXPECT_LT(max_reprojection(st.particles.perSuperpixel[s][0].h, h, f.pr.seg), 1e-6);
    EXPECT_EQ(static_cast<int>(st.particles.perSuperpixel[s].size()), cfg.particleCount);
  }
}

TEST(InitState, DefaultsWithoutFlow) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 2, 48, 8);
  auto cfg = small_config();
  cfg.alpha = 0.4;
  auto st = init_state(f.pr, std::nullopt, cfg);
  EXPECT_TRUE(st.energyTrace.empty());
  const auto& seg = f.pr.seg;
  for (int s = 0; s < seg.count(); ++s) {
    EXPECT_EQ(st.mf[s], Homography::identity());
    EXPECT_EQ(st.particles.perSuperpixel[s][0].h, Homography::identity());
  }
  for (auto m : st.occ.mask)
    EXPECT_EQ(m, 0);
  for (std::size_t e = 0; e < seg.edges().size(); ++e) {
    const Edge& ed = seg.edges()[e];
    bool same = representative_label(seg.members(ed.i), f.pr.lPrev) == representative_label(seg.members(ed.j), f.pr.lPrev);
    EXPECT_EQ(st.occ.edgeLabels[e], same ? BoundaryLabel::CoPlanar : BoundaryLabel::Hinge);
  }
  // Identity motion: every target has exactly its own pixel as source.
  for (std::size_t p = 0; p < seg.pixel_count(); ++p)
    for (int c = 0; c < 2; ++c)
      EXPECT_NEAR(st.lNext(p, c), 0.4 * f.pr.lHatNext(p, c) + 0.6 * f.pr.lPrev(p, c), 1e-12);
}

TEST(InitState, RejectsBadInputs) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 3, 32, 8);
  auto cfg = small_config();
  cfg.lambdaCo = -1.0;
  EXPECT_THROW(init_state(f.pr, std::nullopt, cfg), InputError);
  EXPECT_THROW(init_state(f.pr, FlowField(10, 10), small_config()), InputError);
  Problem bad = f.pr;
  bad.lHatNext = LabelProbMap::uniform(16, 16, 2);
  EXPECT_THROW(init_state(bad, std::nullopt, small_config()), InputError);
}

TEST(Proposals, NeighbourStrategyOffersGroundTruth) {
  auto sc = background_scene(32, 3, 0, 4);
  std::vector<int> ids(32 * 32);
  for (int p = 0; p < 32 * 32; ++p)
    ids[p] = (p % 32) >= 16;
  auto seg = SuperpixelSegmentation::from_id_map(32, 32, ids);
  auto pr = make_problem(sc, seg, one_hot_labels(sc, sc.gtLabels0), one_hot_labels(sc, sc.gtLabels1));
  auto cfg = small_config();
  auto st = init_state(pr, std::nullopt, cfg);
  st.mf[1] = sc.gtHomographies[0];
  Rng rng(1);
  auto props = propose_particles(0, st, pr, rng, cfg, 0);
  ASSERT_FALSE(props.empty());
  EXPECT_EQ(props.back(), sc.gtHomographies[0]);
}

TEST(Proposals, ZeroSigmaCornerProposalIsCurrent) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 5, 32, 8);
  auto cfg = small_config();
  cfg.lkMaxIters = 0;
  cfg.sigma0 = 0.0;
  auto st = init_state(f.pr, std::nullopt, cfg);
  Eigen::Matrix3d m;
  m << 1.01, 0.02, 2.0, 0.0, 0.98, 1.0, 1e-4, 0.0, 1.0;
  const int s = 3;
  st.mf[s] = Homography(m);
  Rng rng(2);
  auto props = propose_particles(s, st, f.pr, rng, cfg, 0);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : props)
    best = std::min(best, max_reprojection(h, st.mf[s], f.pr.seg));
  EXPECT_LT(best, 1e-6);
}

TEST(Proposals, LucasKanadeKeepsConvergedMotion) {
  auto sc = background_scene(40, 2, 1, 6);
  std::vector<int> ids(40 * 40);
  for (int p = 0; p < 40 * 40; ++p)
    ids[p] = (p % 40) >= 20;
  auto seg = SuperpixelSegmentation::from_id_map(40, 40, ids);
  auto pr = make_problem(sc, seg, one_hot_labels(sc, sc.gtLabels0), one_hot_labels(sc, sc.gtLabels1));
  auto cfg = small_config();
  auto st = init_state(pr, std::nullopt, cfg);
  st.mf = {sc.gtHomographies[0], sc.gtHomographies[0]};
  Rng rng(3);
  auto props = propose_particles(0, st, pr, rng, cfg, 0);
  EXPECT_LT(max_reprojection(props.front(), sc.gtHomographies[0], pr.seg), 1e-3);
}

TEST(Proposals, EpipolarStrategyIsCompatible) {
  auto f = scene_problem(SceneTemplate::StaticOnly, 7, 32, 8);
  auto cfg = small_config();
  cfg.lkMaxIters = 0;
  auto st = init_state(f.pr, std::nullopt, cfg);
  st.mf[2] = Homography::translation(2.0, 0.5);  // within the 5 px gate of a horizontal epipolar geometry
  Rng rng(4);
  auto props = propose_particles(2, st, f.pr, rng, cfg, 0);
  const auto& F = f.pr.fundamental.matrix();
  bool found = false;
  for (const auto& h : props) {
    Eigen::Matrix3d sym = h.matrix().transpose() * F;
    found |= (sym + sym.transpose()).norm() / h.matrix().norm() < 1e-8;
  }
  EXPECT_TRUE(found);
}

TEST(Sweep, SingleParticleWithoutProposalsIsAFixedPoint) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 8, 32, 8);
  auto cfg = small_config();
  cfg.particleCount = 1;
  auto st = init_state(f.pr, std::nullopt, cfg);
  EnergyModel model(f.pr, cfg);
  SweepContext ctx(model, st);
  refresh_unaries(st, ctx, 1);
  auto mf0 = st.mf;
  pmbp_sweep(st, ctx, f.pr, cfg, {false, 0, 0, 1});
  auto msg1 = st.messages.values;
  pmbp_sweep(st, ctx, f.pr, cfg, {false, 0, 1, 1});
  EXPECT_EQ(st.mf, mf0);
  EXPECT_EQ(st.messages.values, msg1);
}

TEST(Sweep, SelectsInjectedGroundTruth) {
  auto sc = background_scene(40, -3, 1, 9);
  std::vector<int> ids(40 * 40);
  for (int p = 0; p < 40 * 40; ++p)
    ids[p] = (p % 40) / 10 + 4 * ((p / 40) / 20);
  auto seg = SuperpixelSegmentation::from_id_map(40, 40, ids);
  auto pr = make_problem(sc, seg, one_hot_labels(sc, sc.gtLabels0), one_hot_labels(sc, sc.gtLabels1));
  auto cfg = small_config();
  auto st = init_state(pr, std::nullopt, cfg);
  for (auto& ps : st.particles.perSuperpixel)
    ps[2].h = sc.gtHomographies[0];
  EnergyModel model(pr, cfg);
  SweepContext ctx(model, st);
  refresh_unaries(st, ctx, 1);
  pmbp_sweep(st, ctx, pr, cfg, {false, 0, 0, 1});
  for (int s = 0; s < seg.count(); ++s)
    EXPECT_EQ(st.mf[s], sc.gtHomographies[0]) << s;
}

TEST(Sweep, NeverIncreasesEnergy) {
  for (auto kind : {SceneTemplate::TwoPlane, SceneTemplate::StaticOnly, SceneTemplate::TwoObjects}) {
    auto f = scene_problem(kind, 11, 32, 8);
    auto cfg = small_config();
    auto flow = census_translation_flow(f.pr.frame0, f.pr.frame1, f.pr.seg, cfg, 1);
    auto st = init_state(f.pr, flow, cfg);
    EnergyModel model(f.pr, cfg);
    SweepContext ctx(model, st);
    refresh_unaries(st, ctx, 1);
    double prev = total(f.pr, st, cfg);
    for (int n = 0; n < 3; ++n) {
      pmbp_sweep(st, ctx, f.pr, cfg, {true, 0, n, 1});
      double now = total(f.pr, st, cfg);
      EXPECT_LE(now, prev + 1e-9) << to_string(kind) << " sweep " << n;
      prev = now;
    }
  }
}

TEST(Occlusion, IdenticalMotionPrefersCoplanar) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 12, 32, 8);
  auto cfg = small_config();
  auto st = init_state(f.pr, std::nullopt, cfg);
  EnergyModel model(f.pr, cfg);
  const auto& seg = f.pr.seg;
  for (int e = 0; e < static_cast<int>(seg.edges().size()); ++e) {
    const Edge& ed = seg.edges()[e];
    if (model.representative(ed.i) != model.representative(ed.j))
      continue;
    auto d = update_occlusion(e, st, model);
    EXPECT_EQ(d.label, BoundaryLabel::CoPlanar);
    EXPECT_TRUE(d.occluded.empty());
  }
}

TEST(Occlusion, MatchesDirectFourCaseEvaluation) {
  for (std::uint64_t seed = 20; seed < 24; ++seed) {
    auto f = scene_problem(SceneTemplate::TwoPlane, seed, 32, 8);
    auto cfg = small_config();
    auto st = init_state(f.pr, std::nullopt, cfg);
    st.mf = gt_motion_field(f.sc, f.pr.seg);
    EnergyModel model(f.pr, cfg);
    const auto& seg = f.pr.seg;
    for (int e = 0; e < static_cast<int>(seg.edges().size()); ++e) {
      const Edge& ed = seg.edges()[e];
      double bestE = std::numeric_limits<double>::infinity();
      BoundaryLabel bestB = BoundaryLabel::CoPlanar;
      std::vector<int> bestOmega;
      for (BoundaryLabel b : kBoundaryCases) {
        std::vector<int> omega;
        if (b == BoundaryLabel::LeftOcc)
          omega = occluded_set(ed.i, ed.j, st.mf[ed.i], st.mf[ed.j], seg);
        if (b == BoundaryLabel::RightOcc)
          omega = occluded_set(ed.j, ed.i, st.mf[ed.j], st.mf[ed.i], seg);
        std::vector<std::uint8_t> mask(seg.pixel_count(), 0);
        for (int p : omega)
          mask[p] = 1;
        double v = 0.0;
        for (int s : {ed.i, ed.j})
          v += model.data(s, st.mf[s], mask) + cfg.lambdaL * model.label(s, st.mf[s], mask, st.lNext);
        v += model.pairwise(e, b, st.mf[ed.i], st.mf[ed.j], mask, true, true);
        if (v < bestE) {
          bestE = v;
          bestB = b;
          bestOmega = omega;
        }
      }
      auto d = update_occlusion(e, st, model);
      EXPECT_EQ(d.label, bestB) << "edge " << e;
      EXPECT_EQ(d.occluded, bestOmega);
    }
  }
}

TEST(Occlusion, SlidingForegroundProducesOcclusionEdge) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 30, 48, 8);
  auto cfg = small_config();
  auto st = init_state(f.pr, std::nullopt, cfg);
  st.mf = gt_motion_field(f.sc, f.pr.seg);
  EnergyModel model(f.pr, cfg);
  const auto& seg = f.pr.seg;
  int occlusionEdges = 0;
  for (int e = 0; e < static_cast<int>(seg.edges().size()); ++e) {
    auto d = update_occlusion(e, st, model);
    if (!is_occlusion(d.label))
      continue;
    const Edge& ed = seg.edges()[e];
    bool left = d.label == BoundaryLabel::LeftOcc;
    int front = left ? ed.i : ed.j, back = left ? ed.j : ed.i;
    std::vector<int> brute;
    for (int p : seg.members(back)) {
      auto qb = st.mf[back].map(p % seg.width(), p / seg.width());
      bool hit = false;
      for (int q : seg.members(front)) {
        auto qf = st.mf[front].map(q % seg.width(), q / seg.width());
        hit |= round_coord(qf->x) == round_coord(qb->x) && round_coord(qf->y) == round_coord(qb->y);
      }
      if (hit)
        brute.push_back(p);
    }
    EXPECT_EQ(d.occluded, brute);
    occlusionEdges += !brute.empty();
  }
  EXPECT_GT(occlusionEdges, 0);
}

TEST(ResolveMask, UnionRule) {
  std::vector<std::vector<int>> none;
  auto m0 = resolve_mask(6, none);
  EXPECT_EQ(m0, std::vector<std::uint8_t>(6, 0));
  std::vector<std::vector<int>> one = {{1, 4}};
  EXPECT_EQ(resolve_mask(6, one), (std::vector<std::uint8_t>{0, 1, 0, 0, 1, 0}));
  std::vector<std::vector<int>> two = {{1, 4}, {4, 5}};
  auto m2 = resolve_mask(6, two);
  EXPECT_EQ(m2, (std::vector<std::uint8_t>{0, 1, 0, 0, 1, 1}));
  auto m1 = resolve_mask(6, one);
  for (int p = 0; p < 6; ++p)
    EXPECT_GE(m2[p], m1[p]);
}

TEST(OcclusionBlock, NeverIncreasesEnergy) {
  for (std::uint64_t seed = 40; seed < 44; ++seed) {
    auto f = scene_problem(SceneTemplate::TwoObjects, seed, 48, 8);
    auto cfg = small_config();
    auto st = init_state(f.pr, std::nullopt, cfg);
    st.mf = gt_motion_field(f.sc, f.pr.seg);
    st.lNext = update_labels(st, f.pr, cfg);
    EnergyModel model(f.pr, cfg);
    double before = total(f.pr, st, cfg);
    update_occlusion_block(st, model, 1);
    EXPECT_LE(total(f.pr, st, cfg), before + 1e-9);
  }
}

TEST(Labels, AlphaZeroIdentityReturnsPrevious) {
  Rng rng(5);
  std::vector<double> a(8 * 6 * 3), b(8 * 6 * 3);
  for (auto& x : a)
    x = rng.uniform(0, 1);
  for (auto& x : b)
    x = rng.uniform(0, 1);
  auto lPrev = LabelProbMap::renormalized(8, 6, 3, a);
  auto lHat = LabelProbMap::renormalized(8, 6, 3, b);
  std::vector<int> ids(48);
  for (int p = 0; p < 48; ++p)
    ids[p] = (p % 8) / 3;
  auto seg = SuperpixelSegmentation::from_id_map(8, 6, ids);
  auto occ = OcclusionState::clear(seg);
  auto l0 = update_labels(MotionField(seg.count()), occ, seg, lPrev, lHat, 0.0);
  auto l1 = update_labels(MotionField(seg.count(), Homography::translation(1.3, -0.4)), occ, seg, lPrev, lHat, 1.0);
  for (std::size_t k = 0; k < l0.data().size(); ++k) {
    EXPECT_NEAR(l0.data()[k], lPrev.data()[k], 1e-12);
    EXPECT_NEAR(l1.data()[k], lHat.data()[k], 1e-12);
  }
}

TEST(Labels, TwoSourcesAverage) {
  // Row of four pixels; s0 = {0,1} shifts right by one, s1 = {2,3} stays.
  auto seg = SuperpixelSegmentation::from_id_map(4, 1, {0, 0, 1, 1});
  LabelProbMap lPrev(4, 1, 2, {0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.5, 0.5});
  LabelProbMap lHat(4, 1, 2, {0.6, 0.4, 0.6, 0.4, 0.6, 0.4, 0.6, 0.4});
  MotionField mf = {Homography::translation(1, 0), Homography::identity()};
  auto l = update_labels(mf, OcclusionState::clear(seg), seg, lPrev, lHat, 0.0);
  // Target 2 receives pixel 1 (0.8, 0.2) and pixel 2 (0.3, 0.7); the sum of
  // two equal-weight quadratics is minimized at their mean.
  EXPECT_NEAR(l(2, 0), 0.55, 1e-12);
  EXPECT_NEAR(l(2, 1), 0.45, 1e-12);
  EXPECT_NEAR(l(1, 0), 0.9, 1e-12);
  EXPECT_NEAR(l(3, 0), 0.5, 1e-12);
  // Target 0 has no source.
  EXPECT_NEAR(l(0, 0), 0.6, 1e-12);
}

TEST(Labels, UpdateMinimizesLabelTerm) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto inst = random_instance(seed);
    const auto& pr = inst.problem;
    auto l = update_labels(inst.mf, inst.occ, pr.seg, pr.lPrev, pr.lHatNext, inst.cfg.alpha);
    for (std::size_t p = 0; p < l.pixel_count(); ++p) {
      double sum = 0.0;
      for (int c = 0; c < l.classes(); ++c) {
        EXPECT_GE(l(p, c), 0.0);
        sum += l(p, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    double best = label_data_term(inst.mf, pr.seg, inst.occ, l, pr.lHatNext, pr.lPrev, inst.cfg);
    EXPECT_LE(best, label_data_term(inst.mf, pr.seg, inst.occ, inst.lNext, pr.lHatNext, pr.lPrev, inst.cfg) + 1e-12);
  }
}

TEST(Joint, IdenticalFramesStayStill) {
  auto sc = background_scene(32, 1, 0, 13);
  auto seg = region_grid_segmentation(sc, 8);
  auto l = one_hot_labels(sc, sc.gtLabels0);
  auto pr = make_problem(sc, seg, l, l);
  pr.frame1 = pr.frame0;
  auto cfg = small_config();
  auto res = run_joint_estimation(pr, std::nullopt, cfg);
  for (std::size_t p = 0; p < res.flow.pixel_count(); ++p) {
    EXPECT_NEAR(res.flow.u[p], 0.0, 1e-9);
    EXPECT_NEAR(res.flow.v[p], 0.0, 1e-9);
  }
  ASSERT_EQ(static_cast<int>(res.trace.size()), cfg.outerIters);
  EXPECT_LT(res.trace.back().total, 1e-9);
}

TEST(Joint, RecoversTwoPlaneFlow) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 3, 48, 8);
  auto cfg = small_config();
  auto flow = census_translation_flow(f.pr.frame0, f.pr.frame1, f.pr.seg, cfg, 1);
  auto res = run_joint_estimation(f.pr, flow, cfg);
  std::size_t good = 0, n = 0;
  for (std::size_t p = 0; p < res.flow.pixel_count(); ++p) {
    if (f.sc.gtOcclusion[p])
      continue;
    ++n;
    good += std::hypot(res.flow.u[p] - f.sc.gtFlow.u[p], res.flow.v[p] - f.sc.gtFlow.v[p]) < 0.5;
  }
  EXPECT_GE(static_cast<double>(good) / n, 0.95);
  for (std::size_t k = 1; k < res.trace.size(); ++k)
    EXPECT_LE(res.trace[k].total, res.trace[k - 1].total + 1e-9);
}

TEST(Joint, EpipolarMachineryGatedByWeights) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 14, 32, 8);
  auto cfg = small_config();
  cfg.lambdaP = 0.0;
  cfg.lambdaL = 0.0;
  auto a = run_joint_estimation(f.pr, std::nullopt, cfg);
  Problem other = f.pr;
  other.fundamental = FundamentalMatrix(cross_matrix(Eigen::Vector3d(0.2, 1.0, -0.3)));
  auto b = run_joint_estimation(other, std::nullopt, cfg);
  EXPECT_EQ(a.mf, b.mf);
}

TEST(Joint, ThreadCountDoesNotChangeResult) {
  auto f = scene_problem(SceneTemplate::TwoObjects, 15, 32, 8);
  auto cfg = small_config();
  cfg.outerIters = 2;
  auto flow = census_translation_flow(f.pr.frame0, f.pr.frame1, f.pr.seg, cfg, 1);
  auto a = run_joint_estimation(f.pr, flow, cfg, {1, {}});
  auto b = run_joint_estimation(f.pr, flow, cfg, {3, {}});
  EXPECT_EQ(a.mf, b.mf);
  EXPECT_EQ(a.occlusion.mask, b.occlusion.mask);
  EXPECT_EQ(a.occlusion.edgeLabels, b.occlusion.edgeLabels);
  EXPECT_EQ(a.labels.data(), b.labels.data());
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k)
    EXPECT_EQ(a.trace[k].total, b.trace[k].total);
}

TEST(Joint, ProgressCallbackSeesEveryIteration) {
  auto f = scene_problem(SceneTemplate::TwoPlane, 16, 32, 8);
  auto cfg = small_config();
  cfg.outerIters = 2;
  std::vector<int> seen;
  SolverOptions opt;
  opt.progress = [&](int m, const EnergyBreakdown&) { seen.push_back(m); };
  run_joint_estimation(f.pr, std::nullopt, cfg, opt);
  EXPECT_EQ(seen, (std::vector<int>{0, 1}));
}
