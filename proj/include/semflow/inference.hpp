#ifndef SEMFLOW_INFERENCE_HPP
#define SEMFLOW_INFERENCE_HPP

// Block coordinate descent over the joint energy: PatchMatch belief
// propagation over per-superpixel homographies, per-edge occlusion
// enumeration, and the closed-form temporal label update.

#include "semflow/core.hpp"
#include "semflow/energy.hpp"
#include "semflow/geometry.hpp"
#include "semflow/parallel.hpp"
#include "semflow/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace semflow {

struct Particle {
  Homography h;
  double unary = 0.0;      // weighted data + label + epipolar share
  double disbelief = 0.0;
};

struct ParticleSet {
  std::vector<std::vector<Particle>> perSuperpixel;
  std::vector<int> best;
};

/// Min-sum messages per directed edge, indexed by the particles of the
/// receiving superpixel. Each vector is normalized to minimum zero.
struct MessageStore {
  // values[e][0]: s_i -> s_j, values[e][1]: s_j -> s_i
  std::vector<std::array<std::vector<double>, 2>> values;

  void reset(const SuperpixelSegmentation& seg, int particles) {
    values.assign(seg.edges().size(), {std::vector<double>(particles, 0.0), std::vector<double>(particles, 0.0)});
  }

  std::vector<double>& into(const SuperpixelSegmentation& seg, int e, int receiver) {
    return values[e][seg.edges()[e].j == receiver ? 0 : 1];
  }
  const std::vector<double>& into(const SuperpixelSegmentation& seg, int e, int receiver) const {
    return values[e][seg.edges()[e].j == receiver ? 0 : 1];
  }
};

struct SolverState {
  MotionField mf;
  OcclusionState occ;
  LabelProbMap lNext;
  ParticleSet particles;
  MessageStore messages;
  std::vector<EnergyBreakdown> energyTrace;
};

struct SolverOptions {
  int threads = 1;
  std::function<void(int, const EnergyBreakdown&)> progress;
};

// ---------------------------------------------------------------------------
// Label update

/// Minimizer of the label data term for fixed motion and mask. Each target
/// pixel q takes the average of alpha lHat(q) + (1-alpha) lPrev(p) over its
/// unoccluded sources p, weighted by 1/|S(p)| as in the per-superpixel
/// normalization of the term. Targets without a source take lHat(q).
inline LabelProbMap update_labels(const MotionField& mf, const OcclusionState& occ, const SuperpixelSegmentation& seg,
                                  const LabelProbMap& lPrev, const LabelProbMap& lHatNext, double alpha) {
  const int w = seg.width(), h = seg.height(), L = lPrev.classes();
  std::vector<double> acc(lPrev.pixel_count() * L, 0.0);
  std::vector<double> weight(lPrev.pixel_count(), 0.0);
  for (int s = 0; s < seg.count(); ++s) {
    double ws = 1.0 / static_cast<double>(seg.members(s).size());
    for (int p : seg.members(s)) {
      if (occ.mask[p])
        continue;
      int t = target_pixel(mf[s], p, w, h);
      if (t < 0)
        continue;
      weight[t] += ws;
      for (int c = 0; c < L; ++c)
        acc[static_cast<std::size_t>(t) * L + c] += ws * (alpha * lHatNext(t, c) + (1.0 - alpha) * lPrev(p, c));
    }
  }
  for (std::size_t q = 0; q < weight.size(); ++q)
    for (int c = 0; c < L; ++c)
      acc[q * L + c] = weight[q] > 0.0 ? acc[q * L + c] / weight[q] : lHatNext(q, c);
  return LabelProbMap::renormalized(w, h, L, std::move(acc));
}

/// With lambda_L = 0 every label map is a minimizer; the evidence passes through.
inline LabelProbMap update_labels(const SolverState& state, const Problem& problem, const EnergyConfig& cfg) {
  if (cfg.lambdaL == 0.0)
    return problem.lHatNext;
  return update_labels(state.mf, state.occ, problem.seg, problem.lPrev, problem.lHatNext, cfg.alpha);
}

// ---------------------------------------------------------------------------
// Initialization

/// Least-squares homography reproducing a flow field over the given pixels.
/// Falls back to the mean translation (or identity) when fewer than four
/// valid pixels or a degenerate layout make the fit impossible.
inline Homography fit_homography_to_flow(const FlowField& flow, std::span<const int> pixels) {
  std::vector<Point2> src, dst;
  for (int p : pixels) {
    if (!flow.valid[p])
      continue;
    double x = p % flow.width, y = p / flow.width;
    src.push_back({x, y});
    dst.push_back({x + flow.u[p], y + flow.v[p]});
  }
  if (src.size() >= 4) {
    try {
      return fit_homography(src, dst);
    } catch (const DegenerateError&) {
    }
  }
  if (src.empty())
    return Homography::identity();
  double tx = 0.0, ty = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) {
    tx += dst[k].x - src[k].x;
    ty += dst[k].y - src[k].y;
  }
  return Homography::translation(tx / static_cast<double>(src.size()), ty / static_cast<double>(src.size()));
}

inline SolverState init_state(const Problem& problem, const std::optional<FlowField>& initFlow,
                              const EnergyConfig& cfg) {
  problem.validate();
  const auto& seg = problem.seg;
  ValidationReport report = validate_for_instance(cfg, problem.table, seg);
  if (!report.ok())
    throw InputError("invalid configuration: " + report.summary());
  if (initFlow && (initFlow->width != seg.width() || initFlow->height != seg.height()))
    throw InputError("initial flow dimensions do not match the segmentation");

  SolverState st;
  const int K = cfg.particleCount;
  st.mf.reserve(seg.count());
  st.particles.perSuperpixel.resize(seg.count());
  st.particles.best.assign(seg.count(), 0);
  for (int s = 0; s < seg.count(); ++s) {
    Homography h0 = initFlow ? fit_homography_to_flow(*initFlow, seg.members(s)) : Homography::identity();
    st.mf.push_back(h0);
    auto& ps = st.particles.perSuperpixel[s];
    ps.push_back({h0});
    Rng rng(derive_seed(cfg.rngSeed, {static_cast<std::uint64_t>(s), 0x1a17ULL}));
    while (static_cast<int>(ps.size()) < K) {
      double dx = rng.uniform(-cfg.maxDisp, cfg.maxDisp);
      double dy = rng.uniform(-cfg.maxDisp, cfg.maxDisp);
      ps.push_back({Homography::translation(dx, dy).compose(h0)});
    }
  }
  st.occ = OcclusionState::clear(seg);
  std::vector<int> rep(seg.count());
  for (int s = 0; s < seg.count(); ++s)
    rep[s] = representative_label(seg.members(s), problem.lPrev);
  for (std::size_t e = 0; e < seg.edges().size(); ++e) {
    const Edge& ed = seg.edges()[e];
    st.occ.edgeLabels[e] = rep[ed.i] == rep[ed.j] ? BoundaryLabel::CoPlanar : BoundaryLabel::Hinge;
  }
  st.lNext = update_labels(st.mf, st.occ, seg, problem.lPrev, problem.lHatNext, cfg.alpha);
  st.messages.reset(seg, K);
  return st;
}

// ---------------------------------------------------------------------------
// Proposals

/// Candidate homographies for superpixel s, one per strategy: LK refinement
/// of the current best, an F-compatible homography through three mapped
/// member pixels, a DLT through the noisy mapped bounding-box corners, and a
/// random neighbour's current homography. Failing strategies are skipped.
inline std::vector<Homography> propose_particles(int s, const SolverState& state, const Problem& problem, Rng& rng,
                                                 const EnergyConfig& cfg, int outerIteration) {
  const auto& seg = problem.seg;
  const auto& members = seg.members(s);
  const int w = seg.width();
  const Homography& cur = state.mf[s];
  std::vector<Homography> out;

  // (i) Lucas-Kanade refinement.
  if (cfg.lkMaxIters > 0)
    out.push_back(lk_refine(cur, problem.frame0, problem.frame1, members, cfg.lkMaxIters));

  // (ii) three member pixels mapped by the current motion, snapped onto
  // their epipolar lines. Off when the epipolar term carries no weight.
  if (cfg.lambdaP > 0.0 && members.size() >= 3) {
    std::array<Correspondence, 3> m;
    bool ok = true;
    for (int k = 0; k < 3 && ok; ++k) {
      int p = members[rng.index(members.size())];
      Point2 src{static_cast<double>(p % w), static_cast<double>(p / w)};
      auto q = cur.map(src.x, src.y);
      if (!q) {
        ok = false;
        break;
      }
      Eigen::Vector3d l = problem.fundamental.matrix() * homogeneous(src);
      double n2 = l.head<2>().squaredNorm();
      if (!(n2 > 0.0)) {
        ok = false;
        break;
      }
      double r = (l(0) * q->x + l(1) * q->y + l(2)) / n2;
      if (std::abs(r) * std::sqrt(n2) > cfg.epipolarGate) {
        ok = false;
        break;
      }
      m[k] = {src, {q->x - r * l(0), q->y - r * l(1)}};
    }
    if (ok) {
      try {
        out.push_back(homography_from_3pts_and_F(problem.fundamental, m));
      } catch (const DegenerateError&) {
      }
    }
  }

  // (iii) bounding-box corners with Gaussian perturbation of their targets.
  {
    int x0 = w, y0 = seg.height(), x1 = -1, y1 = -1;
    for (int p : members) {
      x0 = std::min(x0, p % w);
      x1 = std::max(x1, p % w);
      y0 = std::min(y0, p / w);
      y1 = std::max(y1, p / w);
    }
    std::array<Point2, 4> src{Point2{double(x0), double(y0)}, Point2{double(x1), double(y0)},
                              Point2{double(x1), double(y1)}, Point2{double(x0), double(y1)}};
    double sigma = cfg.sigma0 * std::pow(cfg.gamma, outerIteration);
    std::array<Point2, 4> dst;
    bool ok = x1 > x0 && y1 > y0;
    for (int k = 0; k < 4 && ok; ++k) {
      auto q = cur.map(src[k].x, src[k].y);
      if (!q) {
        ok = false;
        break;
      }
      dst[k] = {q->x + rng.normal(0.0, sigma), q->y + rng.normal(0.0, sigma)};
    }
    if (ok) {
      try {
        out.push_back(homography_from_4pts(src, dst));
      } catch (const DegenerateError&) {
      }
    }
  }

  // (iv) a neighbour's current motion.
  const auto& nb = seg.neighbors(s);
  if (!nb.empty())
    out.push_back(state.mf[nb[rng.index(nb.size())].id]);
  else
    out.push_back(Homography::identity());
  return out;
}

// ---------------------------------------------------------------------------
// PMBP sweep

/// Fixed data of one block of sweeps: edge labels, mask and lNext are held
/// constant while the homographies move.
class SweepContext {
public:
  SweepContext(const EnergyModel& model, const SolverState& state) : model_(model) {
    const auto& seg = model.seg();
    visible_.resize(seg.edges().size());
    for (std::size_t e = 0; e < seg.edges().size(); ++e) {
      const Edge& ed = seg.edges()[e];
      visible_[e] = {mask_visible(seg, state.occ.edgeLabels, static_cast<int>(e), ed.i),
                     mask_visible(seg, state.occ.edgeLabels, static_cast<int>(e), ed.j)};
    }
    order_.resize(seg.count());
    std::vector<std::pair<double, double>> centroid(seg.count());
    for (int s = 0; s < seg.count(); ++s) {
      double cx = 0.0, cy = 0.0;
      for (int p : seg.members(s)) {
        cx += p % seg.width();
        cy += p / seg.width();
      }
      double n = static_cast<double>(seg.members(s).size());
      centroid[s] = {cy / n, cx / n};
    }
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) { return centroid[a] < centroid[b]; });
  }

  const EnergyModel& model() const { return model_; }
  const std::vector<int>& raster_order() const { return order_; }

  /// Pairwise energy of edge e with h on superpixel s and x on the other end.
  double pairwise(const SolverState& st, int e, int s, const Homography& h, const Homography& x) const {
    const Edge& ed = model_.seg().edges()[e];
    const auto& hi = ed.i == s ? h : x;
    const auto& hj = ed.i == s ? x : h;
    return model_.pairwise(e, st.occ.edgeLabels[e], hi, hj, st.occ.mask, visible_[e][0], visible_[e][1]);
  }

  double unary(const SolverState& st, int s, const Homography& h) const {
    return model_.unary(s, h, st.occ.mask, st.lNext);
  }

private:
  const EnergyModel& model_;
  std::vector<std::array<bool, 2>> visible_;
  std::vector<int> order_;
};

inline void refresh_unaries(SolverState& st, const SweepContext& ctx, int threads) {
  for (int s = 0; s < static_cast<int>(st.particles.perSuperpixel.size()); ++s) {
    auto& ps = st.particles.perSuperpixel[s];
    parallel_for(ps.size(), threads, [&](std::size_t k) { ps[k].unary = ctx.unary(st, s, ps[k].h); });
  }
}

struct SweepSettings {
  bool proposals = true;
  int outerIteration = 0;
  int sweepIndex = 0;
  int threads = 1;
};

/// Visits superpixel s: scores current particles plus proposals by
/// disbelief, keeps the K best, refreshes the messages into and out of s and
/// commits the kept particle of lowest conditional energy to mf[s].
inline void pmbp_update_superpixel(SolverState& st, const SweepContext& ctx, const Problem& problem,
                                   const EnergyConfig& cfg, int s, const SweepSettings& settings, int pass) {
  const auto& seg = problem.seg;
  const auto& nb = seg.neighbors(s);
  const int K = cfg.particleCount;

  std::vector<Particle> cand = st.particles.perSuperpixel[s];
  const std::size_t existing = cand.size();
  if (settings.proposals) {
    Rng rng(derive_seed(cfg.rngSeed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(settings.outerIteration),
                                      static_cast<std::uint64_t>(settings.sweepIndex), static_cast<std::uint64_t>(pass)}));
    for (auto& h : propose_particles(s, st, problem, rng, cfg, settings.outerIteration)) {
      bool dup = std::any_of(cand.begin(), cand.end(), [&](const Particle& c) { return c.h == h; });
      if (!dup)
        cand.push_back({h});
    }
  }

  // pre[n][x] = unary_n(x) + sum of messages into n except the one from s.
  std::vector<std::vector<double>> pre(nb.size());
  for (std::size_t a = 0; a < nb.size(); ++a) {
    const auto& pn = st.particles.perSuperpixel[nb[a].id];
    pre[a].resize(pn.size());
    for (std::size_t x = 0; x < pn.size(); ++x) {
      double v = pn[x].unary;
      for (const auto& k : seg.neighbors(nb[a].id))
        if (k.id != s)
          v += st.messages.into(seg, k.edge, nb[a].id)[x];
      pre[a][x] = v;
    }
  }

  // pair[c][a][x] = pairwise(candidate c, particle x of neighbour a).
  std::vector<std::vector<std::vector<double>>> pair(cand.size());
  std::vector<std::vector<double>> incoming(cand.size(), std::vector<double>(nb.size()));
  std::vector<double> conditional(cand.size());
  parallel_for(cand.size(), settings.threads, [&](std::size_t c) {
    if (c >= existing)
      cand[c].unary = ctx.unary(st, s, cand[c].h);
    pair[c].resize(nb.size());
    double cond = cand[c].unary;
    double dis = cand[c].unary;
    for (std::size_t a = 0; a < nb.size(); ++a) {
      const auto& pn = st.particles.perSuperpixel[nb[a].id];
      pair[c][a].resize(pn.size());
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t x = 0; x < pn.size(); ++x) {
        pair[c][a][x] = ctx.pairwise(st, nb[a].edge, s, cand[c].h, pn[x].h);
        best = std::min(best, pre[a][x] + pair[c][a][x]);
      }
      incoming[c][a] = best;
      dis += best;
      cond += ctx.pairwise(st, nb[a].edge, s, cand[c].h, st.mf[nb[a].id]);
    }
    cand[c].disbelief = dis;
    conditional[c] = cond;
  });

  // Keep the K lowest-disbelief candidates; the current motion always survives.
  std::vector<std::size_t> idx(cand.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return cand[a].disbelief < cand[b].disbelief; });
  idx.resize(std::min<std::size_t>(K, idx.size()));
  const std::size_t current = static_cast<std::size_t>(st.particles.best[s]);
  if (std::find(idx.begin(), idx.end(), current) == idx.end())
    idx.back() = current;

  std::vector<Particle> kept;
  std::size_t bestK = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    kept.push_back(cand[idx[k]]);
    if (conditional[idx[k]] < conditional[idx[bestK]])
      bestK = k;
  }

  // Messages into s, re-indexed by the kept particles.
  for (std::size_t a = 0; a < nb.size(); ++a) {
    auto& m = st.messages.into(seg, nb[a].edge, s);
    m.resize(kept.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      m[k] = incoming[idx[k]][a];
    double lo = *std::min_element(m.begin(), m.end());
    for (double& v : m)
      v -= lo;
  }
  // Messages out of s.
  for (std::size_t a = 0; a < nb.size(); ++a) {
    auto& m = st.messages.into(seg, nb[a].edge, nb[a].id);
    const std::size_t nx = st.particles.perSuperpixel[nb[a].id].size();
    m.assign(nx, std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      double base = kept[k].unary;
      for (std::size_t b = 0; b < nb.size(); ++b)
        if (b != a)
          base += st.messages.into(seg, nb[b].edge, s)[k];
      for (std::size_t x = 0; x < nx; ++x)
        m[x] = std::min(m[x], base + pair[idx[k]][a][x]);
    }
    double lo = *std::min_element(m.begin(), m.end());
    for (double& v : m)
      v -= lo;
  }

  st.particles.perSuperpixel[s] = std::move(kept);
  st.particles.best[s] = static_cast<int>(bestK);
  st.mf[s] = st.particles.perSuperpixel[s][bestK].h;
}

/// One forward and one backward pass over the superpixels in raster order of
/// their centroids.
inline void pmbp_sweep(SolverState& st, const SweepContext& ctx, const Problem& problem, const EnergyConfig& cfg,
                       const SweepSettings& settings) {
  const auto& order = ctx.raster_order();
  for (int s : order)
    pmbp_update_superpixel(st, ctx, problem, cfg, s, settings, 0);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    pmbp_update_superpixel(st, ctx, problem, cfg, *it, settings, 1);
}

// ---------------------------------------------------------------------------
// Occlusion

struct OcclusionDecision {
  BoundaryLabel label = BoundaryLabel::CoPlanar;
  std::vector<int> occluded;  // pixels of s_i u s_j to mark, ascending
};

/// Per-pixel costs and per-edge motion parts under fixed homographies, so
/// that mask-dependent energies can be re-evaluated cheaply.
class OcclusionCache {
public:
  OcclusionCache(const EnergyModel& model, const SolverState& st, int threads) : model_(model) {
    const auto& seg = model.seg();
    const auto& pr = model.problem();
    const auto& cfg = model.config();
    const int w = seg.width(), h = seg.height();
    rho_.assign(seg.pixel_count(), 0.0);
    label_.assign(seg.pixel_count(), 0.0);
    parallel_for(static_cast<std::size_t>(seg.count()), threads, [&](std::size_t s) {
      const Homography& hs = st.mf[s];
      for (int p : seg.members(static_cast<int>(s))) {
        rho_[p] = pixel_data_cost(model.census0()[p], pr.frame1, hs.map(p % w, p / w), cfg);
        int t = target_pixel(hs, p, w, h);
        label_[p] = t >= 0 ? pixel_label_cost(p, t, st.lNext, pr.lHatNext, pr.lPrev, cfg.alpha) : 0.0;
      }
    });
    const std::size_t E = seg.edges().size();
    coDiff_.resize(E);
    hingeDiff_.resize(E);
    omegaLeft_.resize(E);
    omegaRight_.resize(E);
    parallel_for(E, threads, [&](std::size_t e) {
      const Edge& ed = seg.edges()[e];
      int ei = static_cast<int>(e);
      coDiff_[e] = coplanar_difference(seg, ei, st.mf[ed.i], st.mf[ed.j]);
      hingeDiff_[e] = hinge_difference(seg, ei, st.mf[ed.i], st.mf[ed.j]);
      omegaLeft_[e] = occluded_set(ed.i, ed.j, st.mf[ed.i], st.mf[ed.j], seg);
      omegaRight_[e] = occluded_set(ed.j, ed.i, st.mf[ed.j], st.mf[ed.i], seg);
    });
  }

  /// Mask-dependent unary share of s: E_D + lambda_L E_L (same summation as the energy module).
  double masked_unary(int s, std::span<const std::uint8_t> mask) const {
    const auto& cfg = model_.config();
    const auto& members = model_.seg().members(s);
    double d = 0.0, l = 0.0;
    for (int p : members) {
      if (mask[p]) {
        d += cfg.lambdaO;
        continue;
      }
      d += rho_[p];
      l += label_[p];
    }
    double n = static_cast<double>(members.size());
    double u = d / n;
    if (cfg.lambdaL != 0.0)
      u += cfg.lambdaL * (l / n);
    return u;
  }

  const std::vector<int>& omega(int e, BoundaryLabel b) const {
    static const std::vector<int> none;
    if (b == BoundaryLabel::LeftOcc)
      return omegaLeft_[e];
    if (b == BoundaryLabel::RightOcc)
      return omegaRight_[e];
    return none;
  }

  double edge_energy(int e, BoundaryLabel b, std::span<const std::uint8_t> mask, bool visibleI, bool visibleJ) const {
    const auto& cfg = model_.config();
    double diff = b == BoundaryLabel::CoPlanar ? coDiff_[e] : b == BoundaryLabel::Hinge ? hingeDiff_[e] : 0.0;
    double c = assemble_connectivity(model_.seg(), e, b, diff, omega(e, b), mask, visibleI, visibleJ, cfg.lambdaImp);
    return cfg.lambdaC * c + cfg.lambdaB * model_.prior(e, b);
  }

private:
  const EnergyModel& model_;
  std::vector<double> rho_, label_;
  std::vector<double> coDiff_, hingeDiff_;
  std::vector<std::vector<int>> omegaLeft_, omegaRight_;
};

inline constexpr std::array<BoundaryLabel, 4> kBoundaryCases{BoundaryLabel::CoPlanar, BoundaryLabel::Hinge,
                                                             BoundaryLabel::LeftOcc, BoundaryLabel::RightOcc};

/// Evaluates the edge-local energy (mask-dependent data shares of s_i and
/// s_j, connectivity and prior of the edge) for the four boundary cases,
/// each with the union mask it implies, and returns the minimizer. Ties go
/// to the earlier case in CoPlanar, Hinge, LeftOcc, RightOcc order.
inline OcclusionDecision update_occlusion(int e, const OcclusionCache& cache, const SuperpixelSegmentation& seg) {
  const Edge& ed = seg.edges()[e];
  std::vector<std::uint8_t> mask(seg.pixel_count(), 0);
  double bestE = std::numeric_limits<double>::infinity();
  OcclusionDecision best;
  for (BoundaryLabel b : kBoundaryCases) {
    const auto& om = cache.omega(e, b);
    for (int p : om)
      mask[p] = 1;
    double energy = cache.masked_unary(ed.i, mask) + cache.masked_unary(ed.j, mask) +
                    cache.edge_energy(e, b, mask, true, true);
    for (int p : om)
      mask[p] = 0;
    if (energy < bestE) {
      bestE = energy;
      best = {b, om};
    }
  }
  return best;
}

inline OcclusionDecision update_occlusion(int e, const SolverState& st, const EnergyModel& model) {
  return update_occlusion(e, OcclusionCache(model, st, 1), model.seg());
}

/// o_p = 1 iff some edge's committed case marks p.
inline std::vector<std::uint8_t> resolve_mask(std::size_t pixels, std::span<const std::vector<int>> marks) {
  std::vector<std::uint8_t> mask(pixels, 0);
  for (const auto& m : marks)
    for (int p : m)
      mask[p] = 1;
  return mask;
}

/// Occlusion block of the coordinate descent. Independent per-edge case
/// selection, union of the implied marks, then sequential exact descent over
/// edges on the coupled energy. The previous labels and mask are kept when
/// the result would not lower the total energy.
inline void update_occlusion_block(SolverState& st, const EnergyModel& model, int threads) {
  const auto& seg = model.seg();
  const int E = static_cast<int>(seg.edges().size());
  OcclusionCache cache(model, st, threads);

  std::vector<OcclusionDecision> dec(E);
  parallel_for(static_cast<std::size_t>(E), threads, [&](std::size_t e) {
    dec[e] = update_occlusion(static_cast<int>(e), cache, seg);
  });
  OcclusionState next;
  next.edgeLabels.resize(E);
  std::vector<std::vector<int>> marks(E);
  std::vector<int> cover(seg.pixel_count(), 0);
  for (int e = 0; e < E; ++e) {
    next.edgeLabels[e] = dec[e].label;
    marks[e] = std::move(dec[e].occluded);
    for (int p : marks[e])
      ++cover[p];
  }
  next.mask = resolve_mask(seg.pixel_count(), marks);

  // Exact coordinate descent: the energy terms touched by edge (i, j) are the
  // mask-dependent shares of s_i, s_j and every edge incident to either.
  auto local = [&](int e) {
    const Edge& ed = seg.edges()[e];
    double v = cache.masked_unary(ed.i, next.mask) + cache.masked_unary(ed.j, next.mask);
    for (int s : {ed.i, ed.j})
      for (const auto& n : seg.neighbors(s)) {
        if (s == ed.j && n.id == ed.i)
          continue;
        const Edge& en = seg.edges()[n.edge];
        v += cache.edge_energy(n.edge, next.edgeLabels[n.edge], next.mask,
                               mask_visible(seg, next.edgeLabels, n.edge, en.i),
                               mask_visible(seg, next.edgeLabels, n.edge, en.j));
      }
    return v;
  };
  auto apply = [&](int e, BoundaryLabel b) {
    for (int p : marks[e])
      if (--cover[p] == 0)
        next.mask[p] = 0;
    next.edgeLabels[e] = b;
    marks[e] = cache.omega(e, b);
    for (int p : marks[e])
      if (cover[p]++ == 0)
        next.mask[p] = 1;
  };
  for (int passIdx = 0; passIdx < 4; ++passIdx) {
    bool changed = false;
    for (int e = 0; e < E; ++e) {
      BoundaryLabel start = next.edgeLabels[e];
      BoundaryLabel bestB = start;
      double bestE = local(e);
      for (BoundaryLabel b : kBoundaryCases) {
        if (b == start)
          continue;
        apply(e, b);
        double v = local(e);
        if (v < bestE) {
          bestE = v;
          bestB = b;
        }
      }
      apply(e, bestB);
      changed |= bestB != start;
    }
    if (!changed)
      break;
  }

  double before = model.evaluate(st.mf, st.occ, st.lNext).total;
  double after = model.evaluate(st.mf, next, st.lNext).total;
  if (after <= before)
    st.occ = std::move(next);
}

// ---------------------------------------------------------------------------
// Outer loop

struct EstimationResult {
  MotionField mf;
  FlowField flow;
  LabelProbMap labels;
  OcclusionState occlusion;
  std::vector<EnergyBreakdown> trace;
};

inline EstimationResult run_joint_estimation(const Problem& problem, const std::optional<FlowField>& initFlow,
                                             const EnergyConfig& cfg, const SolverOptions& options = {}) {
  SolverState st = init_state(problem, initFlow, cfg);
  EnergyModel model(problem, cfg);
  for (int m = 0; m < cfg.outerIters; ++m) {
    {
      SweepContext ctx(model, st);
      st.messages.reset(problem.seg, cfg.particleCount);
      refresh_unaries(st, ctx, options.threads);
      for (int n = 0; n < cfg.innerIters; ++n)
        pmbp_sweep(st, ctx, problem, cfg, {true, m, n, options.threads});
    }
    update_occlusion_block(st, model, options.threads);
    st.lNext = update_labels(st, problem, cfg);
    st.energyTrace.push_back(model.evaluate(st.mf, st.occ, st.lNext));
    if (options.progress)
      options.progress(m, st.energyTrace.back());
  }
  return {st.mf, dense_flow(st.mf, problem.seg), st.lNext, st.occ, st.energyTrace};
}

} // namespace semflow

#endif // SEMFLOW_INFERENCE_HPP
