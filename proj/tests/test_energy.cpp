#include "semflow/energy.hpp"
#include "semflow/testkit.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace semflow;

namespace {

GrayImage random_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(w * h);
  for (double& x : v)
    x = rng.uniform(0, 1);
  return GrayImage(w, h, std::move(v));
}

GrayImage shifted(const GrayImage& src, int dx, int dy) {
  std::vector<double> v(src.size());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      int sx = std::clamp(x - dx, 0, src.width() - 1), sy = std::clamp(y - dy, 0, src.height() - 1);
      v[y * src.width() + x] = src(sx, sy);
    }
  return GrayImage(src.width(), src.height(), std::move(v));
}

// Left half id 0, right half id 1.
SuperpixelSegmentation halves(int w, int h) {
  std::vector<int> ids(w * h);
  for (int p = 0; p < w * h; ++p)
    ids[p] = (p % w) >= w / 2;
  return SuperpixelSegmentation::from_id_map(w, h, ids);
}

// Top half id 0, bottom half id 1.
SuperpixelSegmentation stacked(int w, int h) {
  std::vector<int> ids(w * h);
  for (int p = 0; p < w * h; ++p)
    ids[p] = (p / w) >= h / 2;
  return SuperpixelSegmentation::from_id_map(w, h, ids);
}

FundamentalMatrix lateral_f() { return FundamentalMatrix(cross_matrix(Eigen::Vector3d(1, 0, 0))); }

Problem simple_problem(GrayImage f0, GrayImage f1, SuperpixelSegmentation seg, int classes = 2) {
  std::vector<int> zeros(seg.pixel_count(), 0);
  auto l = LabelProbMap::one_hot(seg.width(), seg.height(), classes, zeros);
  SemanticClassTable table = SemanticClassTable::two_class();
  if (classes == 3)
    table = {{{0, "a", true}, {1, "b", false}, {2, "c", false}}};
  return Problem{std::move(f0), std::move(f1), std::move(seg), l, l, lateral_f(), table};
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

} // namespace

TEST(Ternary, ConstantImageAllEqual) {
  GrayImage g(9, 9, std::vector<double>(81, 0.3));
  auto sig = ternary_signature(g, {4, 4}, 3, 0.0078);
  EXPECT_EQ(sig.bit_length(), 96u);
  for (int k = 0; k < sig.neighbors(); ++k)
    EXPECT_EQ(sig.state(k), TernarySignature::State::Equal);
}

TEST(Ternary, HorizontalRamp) {
  std::vector<double> v(25);
  for (int p = 0; p < 25; ++p)
    v[p] = 0.1 * (p % 5);
  GrayImage g(5, 5, v);
  auto sig = ternary_signature(g, {2, 2}, 1, 0.0078);
  int k = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (!dx && !dy)
        continue;
      auto expect = dx < 0 ? TernarySignature::State::Less
                           : dx > 0 ? TernarySignature::State::Greater : TernarySignature::State::Equal;
      EXPECT_EQ(sig.state(k), expect) << dx << "," << dy;
      ++k;
    }
}

TEST(Ternary, MatchesNaiveComparison) {
  auto img = random_image(11, 9, 4);
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    double x = trial < 20 ? static_cast<int>(rng.index(11)) : rng.uniform(-1, 11);
    double y = trial < 20 ? static_cast<int>(rng.index(9)) : rng.uniform(-1, 9);
    auto sig = ternary_signature(img, {x, y}, 2, 0.02);
    auto ref = testkit::oracle::ternary(img, x, y, 2, 0.02);
    ASSERT_EQ(static_cast<int>(ref.size()), sig.neighbors());
    for (int k = 0; k < sig.neighbors(); ++k) {
      auto s = sig.state(k);
      int as = s == TernarySignature::State::Less ? -1 : s == TernarySignature::State::Greater ? 1 : 0;
      EXPECT_EQ(as, ref[k]);
    }
  }
}

TEST(RhoD, IdenticalIsZero) {
  auto img = random_image(12, 12, 1);
  EnergyConfig cfg;
  EXPECT_EQ(rho_D(img, img, 5, 6, {5, 6}, cfg), 0.0);
}

TEST(RhoD, InvertedSaturates) {
  auto img = random_image(15, 15, 8);
  std::vector<double> inv(img.size());
  for (std::size_t p = 0; p < img.size(); ++p)
    inv[p] = 1.0 - img[p];
  GrayImage it1(15, 15, inv);
  EnergyConfig cfg;
  auto a = testkit::oracle::ternary(img, 7, 7, cfg.censusRadius, cfg.censusEpsilon);
  auto b = testkit::oracle::ternary(it1, 7, 7, cfg.censusRadius, cfg.censusEpsilon);
  int diff = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    diff += a[k] != b[k];
  ASSERT_GE(diff, cfg.tauD);
  EXPECT_EQ(rho_D(img, it1, 7, 7, {7, 7}, cfg), cfg.tauD);
}

TEST(RhoD, TrueFlowBeatsWrongFlow) {
  auto img = random_image(24, 24, 3);
  auto it1 = shifted(img, 2, 1);
  EnergyConfig cfg;
  for (int y = 8; y < 14; ++y)
    for (int x = 6; x < 12; ++x)
      EXPECT_LT(rho_D(img, it1, x, y, {x + 2.0, y + 1.0}, cfg), rho_D(img, it1, x, y, {x + 7.0, y + 1.0}, cfg));
}

TEST(ImageData, ZeroForIdenticalFrames) {
  auto img = random_image(10, 8, 5);
  auto seg = halves(10, 8);
  EXPECT_EQ(image_data_term(MotionField(2), seg, OcclusionState::clear(seg), img, img, EnergyConfig{}), 0.0);
}

TEST(ImageData, AllOccludedIsCountTimesLambdaO) {
  auto img = random_image(10, 8, 5);
  auto seg = halves(10, 8);
  auto occ = OcclusionState::clear(seg);
  std::fill(occ.mask.begin(), occ.mask.end(), 1);
  EnergyConfig cfg;
  EXPECT_NEAR(image_data_term(MotionField(2), seg, occ, img, img, cfg), 2 * cfg.lambdaO, 1e-12);
}

TEST(ImageData, OutOfImageCostsTau) {
  auto img = random_image(10, 8, 5);
  auto seg = halves(10, 8);
  EnergyConfig cfg;
  MotionField mf = {Homography::translation(100, 0), Homography::translation(100, 0)};
  EXPECT_NEAR(image_data_term(mf, seg, OcclusionState::clear(seg), img, img, cfg), 2 * cfg.tauD, 1e-12);
}

TEST(ImageData, PermutationInvariant) {
  auto img = random_image(10, 8, 6);
  auto it1 = shifted(img, 1, 0);
  std::vector<int> ids(80), swapped(80);
  for (int p = 0; p < 80; ++p) {
    ids[p] = (p % 10) / 4 + 3 * ((p / 10) >= 4);  // 0..2 top row of blocks, 3..5 bottom
    swapped[p] = 5 - ids[p];
  }
  auto a = SuperpixelSegmentation::from_id_map(10, 8, ids);
  auto b = SuperpixelSegmentation::from_id_map(10, 8, swapped);
  MotionField ma(6), mb(6);
  for (int s = 0; s < 6; ++s) {
    ma[s] = Homography::translation(0.3 * s, -0.2 * s);
    mb[5 - s] = ma[s];
  }
  EnergyConfig cfg;
  auto occA = OcclusionState::clear(a);
  auto occB = OcclusionState::clear(b);
  occA.mask[13] = occB.mask[13] = 1;
  EXPECT_NEAR(image_data_term(ma, a, occA, img, it1, cfg), image_data_term(mb, b, occB, img, it1, cfg), 1e-12);
}

TEST(LabelData, VanishesAtItsMinimizers) {
  auto seg = halves(6, 6);
  Rng rng(1);
  std::vector<double> a(36 * 3), b(36 * 3);
  for (auto& x : a)
    x = rng.uniform(0, 1);
  for (auto& x : b)
    x = rng.uniform(0, 1);
  auto lPrev = LabelProbMap::renormalized(6, 6, 3, a);
  auto lHat = LabelProbMap::renormalized(6, 6, 3, b);
  auto occ = OcclusionState::clear(seg);
  EnergyConfig cfg;
  cfg.alpha = 1.0;
  MotionField moving = {Homography::translation(1.4, -0.6), Homography::translation(-2, 1)};
  EXPECT_NEAR(label_data_term(moving, seg, occ, lHat, lHat, lPrev, cfg), 0.0, 1e-15);
  cfg.alpha = 0.0;
  EXPECT_NEAR(label_data_term(MotionField(2), seg, occ, lPrev, lHat, lPrev, cfg), 0.0, 1e-15);
  EXPECT_GT(label_data_term(MotionField(2), seg, occ, lHat, lHat, lPrev, cfg), 0.0);
}

TEST(LabelData, MatchesNestedLoop) {
  Rng rng(12);
  const int W = 6, H = 6, L = 3;
  auto seg = halves(W, H);
  auto draw = [&] {
    std::vector<double> v(W * H * L);
    for (auto& x : v)
      x = rng.uniform(0, 1);
    return LabelProbMap::renormalized(W, H, L, v);
  };
  for (int trial = 0; trial < 20; ++trial) {
    auto lPrev = draw(), lHat = draw(), lNext = draw();
    auto occ = OcclusionState::clear(seg);
    for (auto& m : occ.mask)
      m = rng.uniform(0, 1) < 0.2;
    MotionField mf = {Homography::translation(rng.uniform(-3, 3), rng.uniform(-3, 3)),
                      Homography::translation(rng.uniform(-3, 3), rng.uniform(-3, 3))};
    double alpha = rng.uniform(0, 1);
    EnergyConfig cfg;
    cfg.alpha = alpha;
    double ref = 0.0;
    for (int s = 0; s < 2; ++s) {
      double acc = 0.0;
      int n = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (seg.id(x, y) != s)
            continue;
          ++n;
          int p = y * W + x;
          if (occ.mask[p])
            continue;
          auto q = mf[s].map(x, y);
          long tx = std::lround(q->x), ty = std::lround(q->y);
          if (tx < 0 || ty < 0 || tx >= W || ty >= H)
            continue;
          int t = static_cast<int>(ty * W + tx);
          for (int c = 0; c < L; ++c) {
            double d = lNext(t, c) - (alpha * lHat(t, c) + (1 - alpha) * lPrev(p, c));
            acc += 0.5 * d * d;
          }
        }
      ref += acc / n;
    }
    EXPECT_NEAR(label_data_term(mf, seg, occ, lNext, lHat, lPrev, cfg), ref, 1e-12);
  }
}

TEST(RepresentativeLabel, Cases) {
  auto oh = LabelProbMap::one_hot(3, 1, 3, {2, 2, 2});
  std::vector<int> all = {0, 1, 2};
  EXPECT_EQ(representative_label(all, oh), 2);
  LabelProbMap two(2, 1, 2, {0.6, 0.4, 0.1, 0.9});
  std::vector<int> both = {0, 1};
  EXPECT_EQ(representative_label(both, two), 1);
  LabelProbMap tie(2, 1, 2, {0.5, 0.5, 0.5, 0.5});
  EXPECT_EQ(representative_label(both, tie), 0);
}

TEST(Physical, CompatibleHomographyIsFree) {
  testkit::CameraMotion cam = testkit::lateral_camera(16, 16, 0.5, 0.0);
  auto f = testkit::camera_fundamental(cam);
  auto seg = halves(16, 16);
  MotionField mf = {testkit::plane_homography(cam, {0, 0, 1}, 10), testkit::plane_homography(cam, {0, 0, 1}, 5)};
  auto l = LabelProbMap::one_hot(16, 16, 2, std::vector<int>(256, 0));
  EXPECT_LT(physical_term(mf, seg, f, l, SemanticClassTable::two_class(), EnergyConfig{}), 1e-9);
}

TEST(Physical, ViolationHitsCeiling) {
  auto f = lateral_f();
  auto seg = halves(16, 16);
  EnergyConfig cfg;
  MotionField mf = {Homography::translation(0, 40), Homography::translation(0, 40)};
  auto staticL = LabelProbMap::one_hot(16, 16, 2, std::vector<int>(256, 0));
  auto dynL = LabelProbMap::one_hot(16, 16, 2, std::vector<int>(256, 1));
  auto table = SemanticClassTable::two_class();
  EXPECT_DOUBLE_EQ(physical_term(mf, seg, f, staticL, table, cfg), 2 * (cfg.lambdaNonStatic + cfg.beta));
  EXPECT_DOUBLE_EQ(physical_term(mf, seg, f, dynL, table, cfg), 2 * cfg.lambdaNonStatic);
}

TEST(Physical, BoundedByCeilingOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto inst = testkit::random_instance(seed);
    const auto& pr = inst.problem;
    double v = physical_term(inst.mf, pr.seg, pr.fundamental, pr.lPrev, pr.table, inst.cfg);
    EXPECT_LE(v, pr.seg.count() * (inst.cfg.lambdaNonStatic + inst.cfg.beta) + 1e-12);
  }
}

TEST(OccludedSet, IdentityGivesEmpty) {
  auto seg = halves(8, 4);
  EXPECT_TRUE(occluded_set(0, 1, Homography::identity(), Homography::identity(), seg).empty());
}

TEST(OccludedSet, FullCoverMatchesBruteForce) {
  auto seg = halves(8, 4);
  auto hf = Homography::translation(4, 0), hb = Homography::identity();
  auto omega = occluded_set(0, 1, hf, hb, seg);
  std::vector<int> ref;
  for (int p : seg.members(1)) {
    bool hit = false;
    for (int q : seg.members(0))
      hit |= (q % 8 + 4 == p % 8) && (q / 8 == p / 8);
    if (hit)
      ref.push_back(p);
  }
  EXPECT_EQ(omega, ref);
  EXPECT_EQ(omega.size(), seg.members(1).size());
  // Partial overlap with a sub-pixel shift rounds to the nearest pixel.
  auto part = occluded_set(0, 1, Homography::translation(1.6, 0), hb, seg);
  EXPECT_EQ(part, (std::vector<int>{4, 5, 12, 13, 20, 21, 28, 29}));
}

TEST(OccludedSet, MovingAwayGivesEmpty) {
  auto seg = halves(8, 4);
  EXPECT_TRUE(occluded_set(0, 1, Homography::translation(-3, 0), Homography::translation(1, 0), seg).empty());
}

TEST(Connectivity, IdenticalCoplanarIsZero) {
  auto seg = halves(8, 4);
  auto h = Homography::translation(1.5, 2);
  std::vector<std::uint8_t> mask(32, 0);
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::CoPlanar, h, h, mask, true, true, 1e9), 0.0);
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::Hinge, h, h, mask, true, true, 1e9), 0.0);
  mask[3] = 1;
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::CoPlanar, h, h, mask, true, true, 1e9), 1e9);
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::CoPlanar, h, h, mask, false, true, 1e9), 0.0);
}

TEST(Connectivity, HingeOnlyLooksAtBoundary) {
  // Shear about y = 1.5: boundary rows 1 and 2 move by k/2, rows 0 and 3 by 3k/2.
  auto seg = stacked(6, 4);
  double k = 0.4;
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 1) = k;
  m(0, 2) = -1.5 * k;
  Homography hj(m);
  std::vector<std::uint8_t> mask(24, 0);
  auto id = Homography::identity();
  EXPECT_NEAR(connectivity_potential(seg, 0, BoundaryLabel::Hinge, id, hj, mask, true, true, 1e9), 0.5 * k, 1e-12);
  EXPECT_NEAR(connectivity_potential(seg, 0, BoundaryLabel::CoPlanar, id, hj, mask, true, true, 1e9), k, 1e-12);
}

TEST(Connectivity, OcclusionCountsViolations) {
  auto seg = halves(8, 4);
  auto hf = Homography::translation(2, 0), hb = Homography::identity();
  auto omega = occluded_set(0, 1, hf, hb, seg);
  ASSERT_EQ(omega.size(), 8u);  // columns 4 and 5
  std::vector<std::uint8_t> mask(32, 0);
  for (int p : omega)
    mask[p] = 1;
  const double imp = 1e9;
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::LeftOcc, hf, hb, mask, true, true, imp), 0.0);
  mask[omega[0]] = 0;
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::LeftOcc, hf, hb, mask, true, true, imp), imp);
  mask[omega[0]] = 1;
  mask[7] = 1;  // back pixel outside omega
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::LeftOcc, hf, hb, mask, true, true, imp), imp);
  mask[0] = 1;  // front pixel marked occluded
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::LeftOcc, hf, hb, mask, true, true, imp), 2 * imp);
  // Mirrored direction: the right superpixel in front.
  std::vector<std::uint8_t> m2(32, 0);
  auto omega2 = occluded_set(1, 0, Homography::translation(-2, 0), hb, seg);
  for (int p : omega2)
    m2[p] = 1;
  EXPECT_EQ(connectivity_potential(seg, 0, BoundaryLabel::RightOcc, hb, Homography::translation(-2, 0), m2, true,
                                   true, imp),
            0.0);
}

TEST(BoundaryPrior, Cases) {
  auto seg = halves(8, 4);
  auto same = LabelProbMap::one_hot(8, 4, 2, std::vector<int>(32, 0));
  std::vector<int> diffIds(32);
  for (int p = 0; p < 32; ++p)
    diffIds[p] = seg.id(p);
  auto diff = LabelProbMap::one_hot(8, 4, 2, diffIds);
  EnergyConfig cfg;
  auto occ = OcclusionState::clear(seg);
  EXPECT_EQ(boundary_prior(occ, seg, same, cfg), 0.0);
  EXPECT_EQ(boundary_prior(occ, seg, diff, cfg), cfg.lambdaCo);
  occ.edgeLabels[0] = BoundaryLabel::Hinge;
  EXPECT_EQ(boundary_prior(occ, seg, same, cfg), cfg.lambdaH);
  occ.edgeLabels[0] = BoundaryLabel::RightOcc;
  EXPECT_EQ(boundary_prior(occ, seg, same, cfg), cfg.lambdaOcc);
  std::fill(occ.mask.begin(), occ.mask.end(), 1);
  EXPECT_EQ(boundary_prior(occ, seg, same, cfg), cfg.lambdaOcc);
}

TEST(TotalEnergy, AllTermsVanish) {
  auto img = random_image(10, 10, 9);
  auto pr = simple_problem(img, img, halves(10, 10));
  EnergyConfig cfg;
  cfg.alpha = 1.0;
  auto e = total_energy(pr, MotionField(2), OcclusionState::clear(pr.seg), pr.lHatNext, cfg);
  EXPECT_EQ(e.eD, 0.0);
  EXPECT_EQ(e.eL, 0.0);
  EXPECT_LT(e.eP, 1e-15);
  EXPECT_EQ(e.eC, 0.0);
  EXPECT_EQ(e.eB, 0.0);
  EXPECT_LT(e.total, 1e-15);
}

TEST(TotalEnergy, WeightedSumInvariant) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto inst = testkit::random_instance(seed);
    auto e = total_energy(inst.problem, inst.mf, inst.occ, inst.lNext, inst.cfg);
    EXPECT_LE(rel_err(e.total, weighted_total(e, inst.cfg)), 1e-9);
  }
}

TEST(TotalEnergy, GridSearchFindsTrueTranslation) {
  auto img = random_image(24, 16, 17);
  auto it1 = shifted(img, 2, 0);
  auto pr = simple_problem(img, it1, halves(24, 16));
  EnergyConfig cfg;
  EnergyModel model(pr, cfg);
  std::vector<std::uint8_t> mask(pr.seg.pixel_count(), 0);
  for (int s = 0; s < 2; ++s) {
    double best = std::numeric_limits<double>::infinity();
    int bx = 99, by = 99;
    for (int dy = -3; dy <= 3; ++dy)
      for (int dx = -3; dx <= 3; ++dx) {
        auto h = Homography::translation(dx, dy);
        double v = model.data(s, h, mask) + cfg.lambdaP * model.epipolar(s, h);
        if (v < best) {
          best = v;
          bx = dx;
          by = dy;
        }
      }
    EXPECT_EQ(bx, 2);
    EXPECT_EQ(by, 0);
    // Perturbations of the optimum never go below it.
    Rng rng(s);
    for (int k = 0; k < 20; ++k) {
      auto h = Homography::translation(2 + rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
      EXPECT_GE(model.data(s, h, mask) + cfg.lambdaP * model.epipolar(s, h), best);
    }
  }
}

TEST(Oracle, EveryTermAgreesOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    auto inst = testkit::random_instance(seed);
    auto got = total_energy(inst.problem, inst.mf, inst.occ, inst.lNext, inst.cfg);
    auto ref = testkit::oracle_energy(inst);
    EXPECT_LE(rel_err(got.eD, ref.eD), 1e-9) << seed;
    EXPECT_LE(rel_err(got.eL, ref.eL), 1e-9) << seed;
    EXPECT_LE(rel_err(got.eP, ref.eP), 1e-9) << seed;
    EXPECT_LE(rel_err(got.eC, ref.eC), 1e-9) << seed;
    EXPECT_LE(rel_err(got.eB, ref.eB), 1e-9) << seed;
    EXPECT_LE(rel_err(got.total, ref.total), 1e-9) << seed;
  }
}

TEST(Oracle, StandaloneTermsAgreeWithModel) {
  for (std::uint64_t seed = 200; seed < 240; ++seed) {
    auto inst = testkit::random_instance(seed);
    const auto& pr = inst.problem;
    auto got = total_energy(pr, inst.mf, inst.occ, inst.lNext, inst.cfg);
    EXPECT_NEAR(image_data_term(inst.mf, pr.seg, inst.occ, pr.frame0, pr.frame1, inst.cfg), got.eD, 1e-9);
    EXPECT_NEAR(label_data_term(inst.mf, pr.seg, inst.occ, inst.lNext, pr.lHatNext, pr.lPrev, inst.cfg), got.eL,
                1e-9);
    EXPECT_NEAR(physical_term(inst.mf, pr.seg, pr.fundamental, pr.lPrev, pr.table, inst.cfg), got.eP, 1e-9);
    EXPECT_LE(rel_err(connectivity_term(inst.mf, pr.seg, inst.occ, inst.cfg), got.eC), 1e-12);
    EXPECT_NEAR(boundary_prior(inst.occ, pr.seg, pr.lPrev, inst.cfg), got.eB, 1e-12);
  }
}

TEST(Energy, MismatchedStateThrows) {
  auto img = random_image(6, 6, 1);
  auto pr = simple_problem(img, img, halves(6, 6));
  EXPECT_THROW(total_energy(pr, MotionField(3), OcclusionState::clear(pr.seg), pr.lHatNext, EnergyConfig{}),
               InputError);
}
