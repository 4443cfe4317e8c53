#ifndef SEMFLOW_ENERGY_HPP
#define SEMFLOW_ENERGY_HPP

// Terms of the joint flow/label energy:
//   E = E_D + lambda_L E_L + lambda_P E_P + lambda_C E_C + lambda_B E_B
// evaluated per superpixel (data, label, epipolar) and per adjacency edge
// (connectivity, boundary prior).

#include "semflow/core.hpp"
#include "semflow/geometry.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <vector>

namespace semflow {

struct EnergyBreakdown {
  double eD = 0.0;
  double eL = 0.0;
  double eP = 0.0;
  double eC = 0.0;
  double eB = 0.0;
  double total = 0.0;
};

inline double weighted_total(const EnergyBreakdown& e, const EnergyConfig& cfg) {
  return e.eD + cfg.lambdaL * e.eL + cfg.lambdaP * e.eP + cfg.lambdaC * e.eC + cfg.lambdaB * e.eB;
}

// ---------------------------------------------------------------------------
// Ternary (census) signatures

/// Two bits per window neighbour: 00 equal, 01 less, 10 greater.
class TernarySignature {
public:
  static constexpr int kMaxRadius = 7;

  explicit TernarySignature(int radius = 1) : radius_(radius) {}

  int radius() const { return radius_; }
  int neighbors() const { return (2 * radius_ + 1) * (2 * radius_ + 1) - 1; }
  std::size_t bit_length() const { return 2 * static_cast<std::size_t>(neighbors()); }

  enum class State : std::uint8_t { Equal = 0, Less = 1, Greater = 2 };

  State state(int k) const { return static_cast<State>((words_[k / 32] >> (2 * (k % 32))) & 3u); }
  void set(int k, State s) { words_[k / 32] |= static_cast<std::uint64_t>(s) << (2 * (k % 32)); }

  /// Number of neighbours whose states differ.
  friend int differing_states(const TernarySignature& a, const TernarySignature& b) {
    int n = 0;
    for (std::size_t w = 0; w < a.words_.size(); ++w) {
      std::uint64_t x = a.words_[w] ^ b.words_[w];
      n += std::popcount((x | (x >> 1)) & 0x5555555555555555ULL);
    }
    return n;
  }

private:
  int radius_;
  std::array<std::uint64_t, 8> words_{};
};

/// Census signature at a (sub)pixel position; samples are bilinear and clamped to the image.
inline TernarySignature ternary_signature(const GrayImage& img, Point2 p, int radius, double eps) {
  if (radius < 1 || radius > TernarySignature::kMaxRadius)
    throw InputError("ternary_signature: radius must lie in [1,7]");
  TernarySignature sig(radius);
  double center = sample_bilinear(img, p.x, p.y);
  int k = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx == 0 && dy == 0)
        continue;
      double d = sample_bilinear(img, p.x + dx, p.y + dy) - center;
      if (d < -eps)
        sig.set(k, TernarySignature::State::Less);
      else if (d > eps)
        sig.set(k, TernarySignature::State::Greater);
      ++k;
    }
  return sig;
}

/// Truncated census distance between It at integer p and It1 at q.
inline double rho_D(const GrayImage& it, const GrayImage& it1, int px, int py, Point2 q, const EnergyConfig& cfg) {
  TernarySignature a = ternary_signature(it, {static_cast<double>(px), static_cast<double>(py)},
                                         cfg.censusRadius, cfg.censusEpsilon);
  TernarySignature b = ternary_signature(it1, q, cfg.censusRadius, cfg.censusEpsilon);
  return std::min(static_cast<double>(differing_states(a, b)), cfg.tauD);
}

inline std::vector<TernarySignature> census_transform(const GrayImage& img, const EnergyConfig& cfg) {
  std::vector<TernarySignature> out;
  out.reserve(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.push_back(ternary_signature(img, {static_cast<double>(x), static_cast<double>(y)}, cfg.censusRadius,
                                      cfg.censusEpsilon));
  return out;
}

// ---------------------------------------------------------------------------
// Per-superpixel pieces

/// Cost of an unoccluded pixel: census distance at the warped position, or
/// tau_D when the warp leaves the image or degenerates.
inline double pixel_data_cost(const TernarySignature& sig0, const GrayImage& it1, std::optional<Point2> q,
                              const EnergyConfig& cfg) {
  if (!q || !it1.contains(q->x, q->y))
    return cfg.tauD;
  TernarySignature b = ternary_signature(it1, *q, cfg.censusRadius, cfg.censusEpsilon);
  return std::min(static_cast<double>(differing_states(sig0, b)), cfg.tauD);
}

/// (1/|s|) sum over s of (1-o_p) rho_D + o_p lambda_o.
inline double superpixel_data_cost(std::span<const int> members, const Homography& h,
                                   std::span<const std::uint8_t> mask, std::span<const TernarySignature> census0,
                                   const GrayImage& it1, const EnergyConfig& cfg) {
  const int w = it1.width();
  double sum = 0.0;
  for (int p : members) {
    if (mask[p]) {
      sum += cfg.lambdaO;
      continue;
    }
    sum += pixel_data_cost(census0[p], it1, h.map(p % w, p / w), cfg);
  }
  return sum / static_cast<double>(members.size());
}

/// Target pixel of p under h (nearest rounding), or -1 when outside the image.
inline int target_pixel(const Homography& h, int p, int width, int height) {
  auto q = h.map(p % width, p / width);
  if (!q)
    return -1;
  long x = round_coord(q->x), y = round_coord(q->y);
  if (x < 0 || y < 0 || x >= width || y >= height)
    return -1;
  return static_cast<int>(y * width + x);
}

/// Label consistency of one pixel: 1/2 sum_i (lNext(p') - (alpha lHat(p') + (1-alpha) lPrev(p)))^2.
inline double pixel_label_cost(int p, int target, const LabelProbMap& lNext, const LabelProbMap& lHatNext,
                               const LabelProbMap& lPrev, double alpha) {
  double sum = 0.0;
  for (int c = 0; c < lNext.classes(); ++c) {
    double d = lNext(target, c) - (alpha * lHatNext(target, c) + (1.0 - alpha) * lPrev(p, c));
    sum += d * d;
  }
  return 0.5 * sum;
}

inline double superpixel_label_cost(std::span<const int> members, const Homography& h,
                                    std::span<const std::uint8_t> mask, const LabelProbMap& lNext,
                                    const LabelProbMap& lHatNext, const LabelProbMap& lPrev, double alpha) {
  double sum = 0.0;
  for (int p : members) {
    if (mask[p])
      continue;
    int t = target_pixel(h, p, lNext.width(), lNext.height());
    if (t >= 0)
      sum += pixel_label_cost(p, t, lNext, lHatNext, lPrev, alpha);
  }
  return sum / static_cast<double>(members.size());
}

/// argmax_c sum_{p in s} lPrev(p, c); ties go to the smallest class id.
inline int representative_label(std::span<const int> members, const LabelProbMap& lPrev) {
  std::vector<double> acc(lPrev.classes(), 0.0);
  for (int p : members)
    for (int c = 0; c < lPrev.classes(); ++c)
      acc[c] += lPrev(p, c);
  int best = 0;
  for (int c = 1; c < lPrev.classes(); ++c)
    if (acc[c] > acc[best])
      best = c;
  return best;
}

/// Mean algebraic epipolar residual of the superpixel's pixels under h; infinite if any projection degenerates.
inline double epipolar_cost(std::span<const int> members, int width, const Homography& h, const FundamentalMatrix& f) {
  double sum = 0.0;
  for (int p : members) {
    Point2 src{static_cast<double>(p % width), static_cast<double>(p / width)};
    auto q = h.map(src.x, src.y);
    if (!q)
      return std::numeric_limits<double>::infinity();
    sum += epipolar_residual(f, src, *q);
  }
  return sum / static_cast<double>(members.size());
}

inline double epipolar_ceiling(bool isStatic, const EnergyConfig& cfg) {
  return cfg.lambdaNonStatic + (isStatic ? cfg.beta : 0.0);
}

// ---------------------------------------------------------------------------
// Occlusion geometry and pairwise terms

/// Pixels of the back superpixel whose rounded target coincides with the
/// rounded target of some pixel of the front superpixel. Sorted ascending.
inline std::vector<int> occluded_set(std::span<const int> front, std::span<const int> back, const Homography& hf,
                                     const Homography& hb, int width) {
  std::vector<std::int64_t> claimed;
  claimed.reserve(front.size());
  auto key = [](long x, long y) { return (static_cast<std::int64_t>(y) << 32) ^ static_cast<std::uint32_t>(x); };
  for (int p : front)
    if (auto q = hf.map(p % width, p / width))
      claimed.push_back(key(round_coord(q->x), round_coord(q->y)));
  std::sort(claimed.begin(), claimed.end());
  std::vector<int> omega;
  for (int p : back)
    if (auto q = hb.map(p % width, p / width))
      if (std::binary_search(claimed.begin(), claimed.end(), key(round_coord(q->x), round_coord(q->y))))
        omega.push_back(p);
  return omega;
}

inline std::vector<int> occluded_set(int front, int back, const Homography& hf, const Homography& hb,
                                     const SuperpixelSegmentation& seg) {
  return occluded_set(seg.members(front), seg.members(back), hf, hb, seg.width());
}

/// L1 distance of the two mapped positions; a degenerate projection counts as
/// width + height.
inline double motion_difference(const Homography& a, const Homography& b, int p, int width, int height) {
  auto qa = a.map(p % width, p / width);
  auto qb = b.map(p % width, p / width);
  if (!qa || !qb)
    return static_cast<double>(width + height);
  return std::abs(qa->x - qb->x) + std::abs(qa->y - qb->y);
}

/// True when superpixel s is the occluded (back) side of edge e under label b.
inline bool is_back_of(const SuperpixelSegmentation& seg, int e, BoundaryLabel b, int s) {
  const Edge& ed = seg.edges()[e];
  return (b == BoundaryLabel::LeftOcc && ed.j == s) || (b == BoundaryLabel::RightOcc && ed.i == s);
}

/// Whether the mask bits of superpixel s are attributed to edge e: false when
/// another edge incident to s already explains them by holding s as its back
/// superpixel.
inline bool mask_visible(const SuperpixelSegmentation& seg, std::span<const BoundaryLabel> labels, int e, int s) {
  for (const auto& n : seg.neighbors(s))
    if (n.edge != e && is_back_of(seg, n.edge, labels[n.edge], s))
      return false;
  return true;
}

/// Mean motion difference of the two homographies over s_i and s_j.
inline double coplanar_difference(const SuperpixelSegmentation& seg, int e, const Homography& hi, const Homography& hj) {
  const Edge& ed = seg.edges()[e];
  const auto& mi = seg.members(ed.i);
  const auto& mj = seg.members(ed.j);
  double d = 0.0;
  for (int p : mi)
    d += motion_difference(hi, hj, p, seg.width(), seg.height());
  for (int p : mj)
    d += motion_difference(hi, hj, p, seg.width(), seg.height());
  return d / static_cast<double>(mi.size() + mj.size());
}

/// Mean motion difference of the two homographies over the shared boundary.
inline double hinge_difference(const SuperpixelSegmentation& seg, int e, const Homography& hi, const Homography& hj) {
  const auto& bset = seg.boundary(e);
  double d = 0.0;
  for (int p : bset)
    d += motion_difference(hi, hj, p, seg.width(), seg.height());
  return d / static_cast<double>(bset.size());
}

/// Connectivity potential of edge e under label b from its motion part:
/// `diff` is the coplanar or hinge difference, `omega` the occluded set of
/// the back superpixel for occlusion labels. `visibleI/J` tell whether the
/// mask bits of s_i / s_j count toward this edge (see mask_visible).
inline double assemble_connectivity(const SuperpixelSegmentation& seg, int e, BoundaryLabel b, double diff,
                                    std::span<const int> omega, std::span<const std::uint8_t> mask, bool visibleI,
                                    bool visibleJ, double lambdaImp) {
  const Edge& ed = seg.edges()[e];
  const auto& mi = seg.members(ed.i);
  const auto& mj = seg.members(ed.j);
  auto countMarked = [&](std::span<const int> px, bool visible) {
    if (!visible)
      return 0.0;
    double n = 0.0;
    for (int p : px)
      n += mask[p] ? 1.0 : 0.0;
    return n;
  };
  if (!is_occlusion(b))
    return diff + lambdaImp * (countMarked(mi, visibleI) + countMarked(mj, visibleJ));

  bool left = b == BoundaryLabel::LeftOcc;
  const auto& front = left ? mi : mj;
  const auto& back = left ? mj : mi;
  double n = countMarked(front, left ? visibleI : visibleJ);
  bool backVisible = left ? visibleJ : visibleI;
  for (int p : back) {
    bool inOmega = std::binary_search(omega.begin(), omega.end(), p);
    if (inOmega && !mask[p])
      n += 1.0;
    else if (!inOmega && mask[p] && backVisible)
      n += 1.0;
  }
  return lambdaImp * n;
}

/// Connectivity potential of edge e under label b.
inline double connectivity_potential(const SuperpixelSegmentation& seg, int e, BoundaryLabel b, const Homography& hi,
                                     const Homography& hj, std::span<const std::uint8_t> mask, bool visibleI,
                                     bool visibleJ, double lambdaImp) {
  const Edge& ed = seg.edges()[e];
  switch (b) {
  case BoundaryLabel::CoPlanar:
    return assemble_connectivity(seg, e, b, coplanar_difference(seg, e, hi, hj), {}, mask, visibleI, visibleJ,
                                 lambdaImp);
  case BoundaryLabel::Hinge:
    return assemble_connectivity(seg, e, b, hinge_difference(seg, e, hi, hj), {}, mask, visibleI, visibleJ,
                                 lambdaImp);
  case BoundaryLabel::LeftOcc:
    return assemble_connectivity(seg, e, b, 0.0, occluded_set(ed.i, ed.j, hi, hj, seg), mask, visibleI, visibleJ,
                                 lambdaImp);
  case BoundaryLabel::RightOcc:
    return assemble_connectivity(seg, e, b, 0.0, occluded_set(ed.j, ed.i, hj, hi, seg), mask, visibleI, visibleJ,
                                 lambdaImp);
  }
  return 0.0;
}

inline double boundary_prior_edge(BoundaryLabel b, int labelI, int labelJ, const EnergyConfig& cfg) {
  switch (b) {
  case BoundaryLabel::CoPlanar:
    return labelI != labelJ ? cfg.lambdaCo : 0.0;
  case BoundaryLabel::Hinge:
    return cfg.lambdaH;
  default:
    return cfg.lambdaOcc;
  }
}

// ---------------------------------------------------------------------------
// Whole terms

inline void check_motion(const MotionField& mf, const SuperpixelSegmentation& seg) {
  if (mf.size() != static_cast<std::size_t>(seg.count()))
    throw InputError("motion field size does not match superpixel count");
}

inline void check_occlusion(const OcclusionState& occ, const SuperpixelSegmentation& seg) {
  if (!occ.consistent_with(seg))
    throw InputError("occlusion state does not match segmentation");
}

inline double image_data_term(const MotionField& mf, const SuperpixelSegmentation& seg, const OcclusionState& occ,
                              const GrayImage& it, const GrayImage& it1, const EnergyConfig& cfg) {
  check_motion(mf, seg);
  check_occlusion(occ, seg);
  auto census0 = census_transform(it, cfg);
  double sum = 0.0;
  for (int s = 0; s < seg.count(); ++s)
    sum += superpixel_data_cost(seg.members(s), mf[s], occ.mask, census0, it1, cfg);
  return sum;
}

inline double label_data_term(const MotionField& mf, const SuperpixelSegmentation& seg, const OcclusionState& occ,
                              const LabelProbMap& lNext, const LabelProbMap& lHatNext, const LabelProbMap& lPrev,
                              const EnergyConfig& cfg) {
  check_motion(mf, seg);
  check_occlusion(occ, seg);
  double sum = 0.0;
  for (int s = 0; s < seg.count(); ++s)
    sum += superpixel_label_cost(seg.members(s), mf[s], occ.mask, lNext, lHatNext, lPrev, cfg.alpha);
  return sum;
}

inline double physical_term(const MotionField& mf, const SuperpixelSegmentation& seg, const FundamentalMatrix& f,
                            const LabelProbMap& lPrev, const SemanticClassTable& table, const EnergyConfig& cfg) {
  check_motion(mf, seg);
  double sum = 0.0;
  for (int s = 0; s < seg.count(); ++s) {
    double ceiling = epipolar_ceiling(table.is_static(representative_label(seg.members(s), lPrev)), cfg);
    sum += std::min(epipolar_cost(seg.members(s), seg.width(), mf[s], f), ceiling);
  }
  return sum;
}

inline double connectivity_term(const MotionField& mf, const SuperpixelSegmentation& seg, const OcclusionState& occ,
                                const EnergyConfig& cfg) {
  check_motion(mf, seg);
  check_occlusion(occ, seg);
  double sum = 0.0;
  for (int e = 0; e < static_cast<int>(seg.edges().size()); ++e) {
    const Edge& ed = seg.edges()[e];
    sum += connectivity_potential(seg, e, occ.edgeLabels[e], mf[ed.i], mf[ed.j], occ.mask,
                                  mask_visible(seg, occ.edgeLabels, e, ed.i),
                                  mask_visible(seg, occ.edgeLabels, e, ed.j), cfg.lambdaImp);
  }
  return sum;
}

inline double boundary_prior(const OcclusionState& occ, const SuperpixelSegmentation& seg, const LabelProbMap& lPrev,
                             const EnergyConfig& cfg) {
  check_occlusion(occ, seg);
  std::vector<int> rep(seg.count());
  for (int s = 0; s < seg.count(); ++s)
    rep[s] = representative_label(seg.members(s), lPrev);
  double sum = 0.0;
  for (int e = 0; e < static_cast<int>(seg.edges().size()); ++e) {
    const Edge& ed = seg.edges()[e];
    sum += boundary_prior_edge(occ.edgeLabels[e], rep[ed.i], rep[ed.j], cfg);
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Problem instance and cached evaluation

/// Immutable inputs of one two-frame estimation.
struct Problem {
  GrayImage frame0;
  GrayImage frame1;
  SuperpixelSegmentation seg;
  LabelProbMap lPrev;
  LabelProbMap lHatNext;
  FundamentalMatrix fundamental;
  SemanticClassTable table;

  void validate() const {
    int w = seg.width(), h = seg.height();
    auto same = [&](int ww, int hh, const char* what) {
      if (ww != w || hh != h)
        throw InputError(std::string(what) + " dimensions do not match the segmentation");
    };
    same(frame0.width(), frame0.height(), "frame 0");
    same(frame1.width(), frame1.height(), "frame 1");
    same(lPrev.width(), lPrev.height(), "previous label map");
    same(lHatNext.width(), lHatNext.height(), "label evidence");
    if (lPrev.classes() != lHatNext.classes())
      throw InputError("label maps disagree on the class count");
    if (lPrev.classes() != table.size())
      throw InputError("label maps and semantic class table disagree on the class count");
  }
};

/// Caches what does not change during optimization (census of frame t,
/// representative labels) and evaluates unary and pairwise energy pieces.
class EnergyModel {
public:
  EnergyModel(const Problem& problem, const EnergyConfig& cfg)
      : problem_(problem), cfg_(cfg), census0_(census_transform(problem.frame0, cfg)) {
    const auto& seg = problem.seg;
    rep_.resize(seg.count());
    static_.resize(seg.count());
    for (int s = 0; s < seg.count(); ++s) {
      rep_[s] = representative_label(seg.members(s), problem.lPrev);
      static_[s] = problem.table.is_static(rep_[s]);
    }
  }

  const Problem& problem() const { return problem_; }
  const EnergyConfig& config() const { return cfg_; }
  const SuperpixelSegmentation& seg() const { return problem_.seg; }
  int representative(int s) const { return rep_[s]; }
  bool is_static(int s) const { return static_[s]; }
  std::span<const TernarySignature> census0() const { return census0_; }

  double data(int s, const Homography& h, std::span<const std::uint8_t> mask) const {
    return superpixel_data_cost(seg().members(s), h, mask, census0_, problem_.frame1, cfg_);
  }

  double label(int s, const Homography& h, std::span<const std::uint8_t> mask, const LabelProbMap& lNext) const {
    return superpixel_label_cost(seg().members(s), h, mask, lNext, problem_.lHatNext, problem_.lPrev, cfg_.alpha);
  }

  double epipolar(int s, const Homography& h) const {
    return std::min(epipolar_cost(seg().members(s), seg().width(), h, problem_.fundamental),
                    epipolar_ceiling(static_[s], cfg_));
  }

  /// Weighted per-superpixel share: E_D + lambda_L E_L + lambda_P E_P.
  double unary(int s, const Homography& h, std::span<const std::uint8_t> mask, const LabelProbMap& lNext) const {
    double u = data(s, h, mask);
    if (cfg_.lambdaL != 0.0)
      u += cfg_.lambdaL * label(s, h, mask, lNext);
    if (cfg_.lambdaP != 0.0)
      u += cfg_.lambdaP * epipolar(s, h);
    return u;
  }

  double prior(int e, BoundaryLabel b) const {
    const Edge& ed = seg().edges()[e];
    return boundary_prior_edge(b, rep_[ed.i], rep_[ed.j], cfg_);
  }

  /// Weighted per-edge share: lambda_C phi_C + lambda_B E_B.
  double pairwise(int e, BoundaryLabel b, const Homography& hi, const Homography& hj,
                  std::span<const std::uint8_t> mask, bool visibleI, bool visibleJ) const {
    double c = connectivity_potential(seg(), e, b, hi, hj, mask, visibleI, visibleJ, cfg_.lambdaImp);
    return cfg_.lambdaC * c + cfg_.lambdaB * prior(e, b);
  }

  EnergyBreakdown evaluate(const MotionField& mf, const OcclusionState& occ, const LabelProbMap& lNext) const {
    check_motion(mf, seg());
    check_occlusion(occ, seg());
    EnergyBreakdown r;
    for (int s = 0; s < seg().count(); ++s) {
      r.eD += data(s, mf[s], occ.mask);
      r.eL += label(s, mf[s], occ.mask, lNext);
      r.eP += epipolar(s, mf[s]);
    }
    for (int e = 0; e < static_cast<int>(seg().edges().size()); ++e) {
      const Edge& ed = seg().edges()[e];
      r.eC += connectivity_potential(seg(), e, occ.edgeLabels[e], mf[ed.i], mf[ed.j], occ.mask,
                                     mask_visible(seg(), occ.edgeLabels, e, ed.i),
                                     mask_visible(seg(), occ.edgeLabels, e, ed.j), cfg_.lambdaImp);
      r.eB += prior(e, occ.edgeLabels[e]);
    }
    r.total = weighted_total(r, cfg_);
    return r;
  }

private:
  const Problem& problem_;
  EnergyConfig cfg_;
  std::vector<TernarySignature> census0_;
  std::vector<int> rep_;
  std::vector<bool> static_;
};

/// All five terms and the weighted total for a full state.
inline EnergyBreakdown total_energy(const Problem& problem, const MotionField& mf, const OcclusionState& occ,
                                    const LabelProbMap& lNext, const EnergyConfig& cfg) {
  return EnergyModel(problem, cfg).evaluate(mf, occ, lNext);
}

} // namespace semflow

#endif // SEMFLOW_ENERGY_HPP
