#ifndef SEMFLOW_TESTKIT_HPP
#define SEMFLOW_TESTKIT_HPP

// Synthetic two-frame scenes of textured planes with exact ground truth,
// random small energy instances, and a brute-force energy oracle that
// shares nothing with the energy module beyond the core types.

#include "semflow/core.hpp"
#include "semflow/energy.hpp"
#include "semflow/geometry.hpp"
#include "semflow/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace semflow::testkit {

// ---------------------------------------------------------------------------
// Scene description

/// A textured plane. Foreground regions are pixel rectangles [x0,x1)x[y0,y1)
/// in frame 0; the background covers every pixel not claimed by a region.
struct PlaneRegion {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int classId = 0;
  bool isStatic = true;
  // Static planes with a camera: n^T X = depth in frame-0 camera coordinates.
  Eigen::Vector3d normal{0.0, 0.0, 1.0};
  double depth = 1.0;
  // Dynamic planes, or static planes when the scene has no camera.
  Homography motion;
  std::array<double, 3> tint{0.5, 0.7, 0.95};
};

/// Frame-1 camera relative to frame 0: X1 = R X0 + t.
struct CameraMotion {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  PlaneRegion background;
  std::vector<PlaneRegion> regions;  // later entries are in front of earlier ones
  std::optional<CameraMotion> camera;
  SemanticClassTable table = SemanticClassTable::two_class();
  double textureSigma = 1.0;  // blur of the uniform noise, px
  double noiseSigma = 0.0;    // additive Gaussian intensity noise on both frames
  int margin = 24;            // texture extent beyond the canvas
};

struct SyntheticScene {
  SceneSpec spec;
  ColorImage color0, color1;
  GrayImage frame0, frame1;
  FlowField gtFlow;
  std::vector<std::uint8_t> gtOcclusion;
  std::vector<int> gtLabels0, gtLabels1;
  std::vector<Homography> gtHomographies;  // [0] background, then regions in order
  std::vector<int> regionMap;              // frame-0 region index per pixel
  FundamentalMatrix fundamental;

  int width() const { return spec.width; }
  int height() const { return spec.height; }
  /// Pixels belonging to non-static regions.
  std::vector<std::uint8_t> foreground_mask() const {
    std::vector<std::uint8_t> m(regionMap.size());
    for (std::size_t p = 0; p < m.size(); ++p)
      m[p] = !region(regionMap[p]).isStatic;
    return m;
  }
  const PlaneRegion& region(int k) const { return k == 0 ? spec.background : spec.regions[k - 1]; }
};

// ---------------------------------------------------------------------------
// Scene construction

inline Homography plane_homography(const CameraMotion& cam, const Eigen::Vector3d& n, double d) {
  Eigen::Matrix3d h = cam.K * (cam.R + cam.t * n.transpose() / d) * cam.K.inverse();
  return Homography(h);
}

inline FundamentalMatrix camera_fundamental(const CameraMotion& cam) {
  Eigen::Matrix3d kinv = cam.K.inverse();
  return FundamentalMatrix(kinv.transpose() * cross_matrix(cam.t) * cam.R * kinv);
}

namespace detail {

struct Texture {
  int x0, y0, w, h;
  std::vector<double> v;  // in [0,1]

  double sample(double x, double y) const {
    x = std::clamp(x - x0, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y - y0, 0.0, static_cast<double>(h - 1));
    int ix = std::min(static_cast<int>(std::floor(x)), w - 2 < 0 ? 0 : w - 2);
    int iy = std::min(static_cast<int>(std::floor(y)), h - 2 < 0 ? 0 : h - 2);
    double a = x - ix, b = y - iy;
    auto at = [&](int xx, int yy) { return v[static_cast<std::size_t>(std::min(yy, h - 1)) * w + std::min(xx, w - 1)]; };
    return (1 - a) * (1 - b) * at(ix, iy) + a * (1 - b) * at(ix + 1, iy) + (1 - a) * b * at(ix, iy + 1) +
           a * b * at(ix + 1, iy + 1);
  }
};

inline Texture make_texture(int x0, int y0, int w, int h, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  for (double& x : v)
    x = rng.uniform(0.0, 1.0);
  if (sigma > 0.0) {
    int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    double ks = 0.0;
    for (int i = -r; i <= r; ++i)
      ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& x : k)
      x /= ks;
    std::vector<double> tmp(v.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i)
          s += k[i + r] * v[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
        tmp[static_cast<std::size_t>(y) * w + x] = s;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i)
          s += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
        v[static_cast<std::size_t>(y) * w + x] = s;
      }
  }
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  double a = *lo, b = *hi;
  for (double& x : v)
    x = b > a ? (x - a) / (b - a) : 0.5;
  return {x0, y0, w, h, std::move(v)};
}

inline bool in_rect(const PlaneRegion& r, double x, double y) {
  return x >= r.x0 - 0.5 && x < r.x1 - 0.5 && y >= r.y0 - 0.5 && y < r.y1 - 0.5;
}

} // namespace detail

/// Renders both frames and all ground truth. Frame 1 is the inverse warp of
/// each plane's texture through its homography, the frontmost plane winning.
inline SyntheticScene make_scene(const SceneSpec& spec, std::uint64_t seed) {
  const int W = spec.width, H = spec.height;
  if (W <= 0 || H <= 0)
    throw InputError("make_scene: dimensions must be positive");
  for (std::size_t a = 0; a < spec.regions.size(); ++a) {
    const auto& r = spec.regions[a];
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > W || r.y1 > H || r.x0 >= r.x1 || r.y0 >= r.y1)
      throw InputError("make_scene: region " + std::to_string(a) + " is empty or leaves the canvas");
    for (std::size_t b = 0; b < a; ++b) {
      const auto& o = spec.regions[b];
      if (r.x0 < o.x1 && o.x0 < r.x1 && r.y0 < o.y1 && o.y0 < r.y1)
        throw InputError("make_scene: regions " + std::to_string(b) + " and " + std::to_string(a) + " overlap");
    }
  }
  int nc = spec.table.size();
  auto checkClass = [&](const PlaneRegion& r) {
    if (r.classId < 0 || r.classId >= nc)
      throw InputError("make_scene: class id outside the class table");
  };
  checkClass(spec.background);
  for (const auto& r : spec.regions)
    checkClass(r);

  SyntheticScene sc;
  sc.spec = spec;
  const int R = 1 + static_cast<int>(spec.regions.size());
  for (int k = 0; k < R; ++k) {
    const PlaneRegion& r = sc.region(k);
    if (r.isStatic && spec.camera)
      sc.gtHomographies.push_back(plane_homography(*spec.camera, r.normal, r.depth));
    else
      sc.gtHomographies.push_back(r.motion);
  }
  sc.fundamental = spec.camera ? camera_fundamental(*spec.camera)
                               : FundamentalMatrix(cross_matrix(Eigen::Vector3d(1.0, 0.0, 0.0)));

  sc.regionMap.assign(static_cast<std::size_t>(W) * H, 0);
  for (int k = 1; k < R; ++k) {
    const auto& r = spec.regions[k - 1];
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x)
        sc.regionMap[static_cast<std::size_t>(y) * W + x] = k;
  }

  const int M = spec.margin;
  std::vector<detail::Texture> tex;
  for (int k = 0; k < R; ++k)
    tex.push_back(detail::make_texture(-M, -M, W + 2 * M, H + 2 * M, spec.textureSigma,
                                       derive_seed(seed, {static_cast<std::uint64_t>(k), 0x7e8ULL})));
  auto shade = [&](int k, double t, int c) { return sc.region(k).tint[c] * (0.2 + 0.8 * t); };

  std::vector<Homography> inv;
  for (const auto& h : sc.gtHomographies)
    inv.push_back(h.inverse());

  std::vector<double> c0(static_cast<std::size_t>(W) * H * 3), c1(c0.size());
  sc.gtLabels0.resize(static_cast<std::size_t>(W) * H);
  sc.gtLabels1.resize(sc.gtLabels0.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * W + x;
      int k = sc.regionMap[p];
      double t = tex[k].sample(x, y);
      for (int c = 0; c < 3; ++c)
        c0[3 * p + c] = shade(k, t, c);
      sc.gtLabels0[p] = sc.region(k).classId;

      int owner = 0;
      std::optional<Point2> src;
      for (int j = R - 1; j >= 0; --j) {
        auto s = inv[j].map(x, y);
        if (!s)
          continue;
        if (j == 0 || detail::in_rect(spec.regions[j - 1], s->x, s->y)) {
          owner = j;
          src = s;
          break;
        }
      }
      double t1 = src ? tex[owner].sample(src->x, src->y) : 0.0;
      for (int c = 0; c < 3; ++c)
        c1[3 * p + c] = shade(owner, t1, c);
      sc.gtLabels1[p] = sc.region(owner).classId;
    }
  if (spec.noiseSigma > 0.0) {
    Rng rng(derive_seed(seed, {0x0153ULL}));
    for (auto* buf : {&c0, &c1})
      for (double& v : *buf)
        v = std::clamp(v + rng.normal(0.0, spec.noiseSigma), 0.0, 1.0);
  }
  sc.color0 = ColorImage(W, H, std::move(c0));
  sc.color1 = ColorImage(W, H, std::move(c1));
  sc.frame0 = sc.color0.to_gray();
  sc.frame1 = sc.color1.to_gray();

  sc.gtFlow = FlowField(W, H);
  std::vector<std::optional<std::pair<long, long>>> target(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * W + x;
      auto q = sc.gtHomographies[sc.regionMap[p]].map(x, y);
      if (!q) {
        sc.gtFlow.valid[p] = 0;
        continue;
      }
      sc.gtFlow.u[p] = q->x - x;
      sc.gtFlow.v[p] = q->y - y;
      target[p] = std::pair<long, long>{round_coord(q->x), round_coord(q->y)};
    }
  // A pixel is occluded when a pixel of a plane in front of it lands on the
  // same rounded target.
  sc.gtOcclusion.assign(static_cast<std::size_t>(W) * H, 0);
  std::set<std::pair<long, long>> claimed;
  for (int k = R - 1; k >= 0; --k) {
    for (std::size_t p = 0; p < target.size(); ++p)
      if (sc.regionMap[p] == k && target[p] && claimed.count(*target[p]))
        sc.gtOcclusion[p] = 1;
    for (std::size_t p = 0; p < target.size(); ++p)
      if (sc.regionMap[p] == k && target[p])
        claimed.insert(*target[p]);
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Scene templates used by the property and acceptance suites

enum class SceneTemplate { TwoPlane = 0, StaticOnly = 1, TwoObjects = 2 };

inline const char* to_string(SceneTemplate t) {
  switch (t) {
  case SceneTemplate::TwoPlane:
    return "two-plane";
  case SceneTemplate::StaticOnly:
    return "static-only";
  case SceneTemplate::TwoObjects:
    return "two-objects";
  }
  return "?";
}

/// Camera translating parallel to the image plane so that a fronto-parallel
/// plane at `depth` shifts by (dx, dy) px.
inline CameraMotion lateral_camera(int width, int height, double dx, double dy, double depth = 10.0,
                                   double focal = 80.0) {
  CameraMotion cam;
  cam.K << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
  cam.t = Eigen::Vector3d(dx * depth / focal, dy * depth / focal, 0.0);
  return cam;
}

/// Randomized instance of a template. Background: static plane moved by the
/// camera (integer translation of 2..6 px, mostly horizontal). TwoPlane adds
/// one dynamic square moving by up to 4 px per axis; TwoObjects adds two;
/// StaticOnly adds a nearer static plane instead.
inline SceneSpec template_spec(SceneTemplate kind, std::uint64_t seed, int size = 64) {
  Rng rng(derive_seed(seed, {0x5ce7eULL, static_cast<std::uint64_t>(kind)}));
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))); };
  SceneSpec s;
  s.width = s.height = size;
  int bx = pick(2, 5) * (rng.index(2) ? 1 : -1);
  int by = pick(-1, 1);
  s.camera = lateral_camera(size, size, bx, by);
  s.background.classId = 0;
  s.background.isStatic = true;
  s.background.depth = 10.0;
  s.background.tint = {0.45, 0.65, 0.95};
  auto dynamic = [&](int x0, int y0, int side, std::array<double, 3> tint) {
    PlaneRegion r;
    r.x0 = x0;
    r.y0 = y0;
    r.x1 = x0 + side;
    r.y1 = y0 + side;
    r.classId = 1;
    r.isStatic = false;
    int fx, fy;
    do {
      fx = pick(-4, 4);
      fy = pick(-3, 3);
    } while (std::abs(fx - bx) + std::abs(fy - by) < 3);
    r.motion = Homography::translation(fx, fy);
    r.tint = tint;
    return r;
  };
  const int q = size / 4;
  switch (kind) {
  case SceneTemplate::TwoPlane:
    s.regions.push_back(dynamic(q + pick(-3, 3), q + pick(-3, 3), size / 2, {0.95, 0.45, 0.3}));
    break;
  case SceneTemplate::TwoObjects:
    s.regions.push_back(dynamic(pick(size / 8 - 2, size / 8 + 2), pick(size / 8 - 2, size / 8 + 2), size * 3 / 8,
                                {0.95, 0.45, 0.3}));
    s.regions.push_back(dynamic(std::min(size / 2 + pick(4, 8), size * 3 / 4 - 3),
                                std::min(size / 2 + pick(2, 6), size * 3 / 4 - 3), size / 4 + 2, {0.95, 0.9, 0.3}));
    break;
  case SceneTemplate::StaticOnly: {
    PlaneRegion r;
    r.x0 = q + pick(-3, 3);
    r.y0 = q + pick(-3, 3);
    r.x1 = r.x0 + size / 2;
    r.y1 = r.y0 + size / 2;
    r.classId = 0;
    r.isStatic = true;
    // Twice as close: twice the parallax of the background.
    r.depth = 5.0;
    r.tint = {0.95, 0.45, 0.3};
    s.regions.push_back(r);
    break;
  }
  }
  return s;
}

inline SyntheticScene make_template_scene(SceneTemplate kind, std::uint64_t seed, int size = 64) {
  return make_scene(template_spec(kind, seed, size), seed);
}

// ---------------------------------------------------------------------------
// Problem assembly helpers

/// Grid cells of `cell` px intersected with the ground-truth regions; every
/// superpixel lies on a single plane.
inline SuperpixelSegmentation region_grid_segmentation(const SyntheticScene& sc, int cell) {
  const int W = sc.width(), H = sc.height();
  std::map<std::tuple<int, int, int>, int> keyId;
  std::vector<int> raw(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * W + x;
      auto key = std::make_tuple(sc.regionMap[p], y / cell, x / cell);
      auto it = keyId.try_emplace(key, static_cast<int>(keyId.size())).first;
      raw[p] = it->second;
    }
  // Split disconnected pieces and renumber in raster order.
  std::vector<int> ids(raw.size(), -1);
  int next = 0;
  for (std::size_t start = 0; start < raw.size(); ++start) {
    if (ids[start] >= 0)
      continue;
    std::vector<std::size_t> stack{start};
    ids[start] = next;
    while (!stack.empty()) {
      std::size_t p = stack.back();
      stack.pop_back();
      int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
      const long nb[4] = {x > 0 ? long(p) - 1 : -1, x + 1 < W ? long(p) + 1 : -1, y > 0 ? long(p) - W : -1,
                          y + 1 < H ? long(p) + W : -1};
      for (long q : nb)
        if (q >= 0 && ids[q] < 0 && raw[q] == raw[p]) {
          ids[q] = next;
          stack.push_back(static_cast<std::size_t>(q));
        }
    }
    ++next;
  }
  return SuperpixelSegmentation::from_id_map(W, H, std::move(ids));
}

/// Ground-truth homography of the region holding most of each superpixel
/// (ties to the lower region index).
inline MotionField gt_motion_field(const SyntheticScene& sc, const SuperpixelSegmentation& seg) {
  MotionField mf;
  const int R = static_cast<int>(sc.gtHomographies.size());
  for (int s = 0; s < seg.count(); ++s) {
    std::vector<int> votes(R, 0);
    for (int p : seg.members(s))
      ++votes[sc.regionMap[p]];
    mf.push_back(sc.gtHomographies[std::max_element(votes.begin(), votes.end()) - votes.begin()]);
  }
  return mf;
}

inline LabelProbMap one_hot_labels(const SyntheticScene& sc, const std::vector<int>& labels) {
  return LabelProbMap::one_hot(sc.width(), sc.height(), sc.spec.table.size(), labels);
}

/// Soft evidence peaked (weight `confidence`) on the true class, except for
/// a fraction `flip` of pixels peaked on a random wrong class instead.
inline LabelProbMap noisy_labels(const std::vector<int>& labels, int width, int height, int classes, double flip,
                                 double confidence, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x1abe1ULL}));
  std::vector<double> probs(labels.size() * classes, (1.0 - confidence) / std::max(classes - 1, 1));
  for (std::size_t p = 0; p < labels.size(); ++p) {
    int c = labels[p];
    if (classes > 1 && rng.uniform(0.0, 1.0) < flip)
      c = static_cast<int>((c + 1 + rng.index(classes - 1)) % classes);
    probs[p * classes + c] = confidence;
  }
  return LabelProbMap::renormalized(width, height, classes, std::move(probs));
}

inline Problem make_problem(const SyntheticScene& sc, SuperpixelSegmentation seg, LabelProbMap lPrev,
                            LabelProbMap lHatNext) {
  return Problem{sc.frame0, sc.frame1, std::move(seg), std::move(lPrev), std::move(lHatNext), sc.fundamental,
                 sc.spec.table};
}

/// Exact correspondences of static pixels whose target stays in the image.
inline std::vector<Correspondence> static_matches(const SyntheticScene& sc, std::size_t maxCount,
                                                  std::uint64_t seed) {
  std::vector<Correspondence> all;
  for (int y = 0; y < sc.height(); ++y)
    for (int x = 0; x < sc.width(); ++x) {
      std::size_t p = static_cast<std::size_t>(y) * sc.width() + x;
      if (!sc.region(sc.regionMap[p]).isStatic || sc.gtOcclusion[p] || !sc.gtFlow.valid[p])
        continue;
      Point2 q{x + sc.gtFlow.u[p], y + sc.gtFlow.v[p]};
      if (q.x < 0 || q.y < 0 || q.x > sc.width() - 1 || q.y > sc.height() - 1)
        continue;
      all.push_back({{double(x), double(y)}, q});
    }
  Rng rng(derive_seed(seed, {0x3a7cULL}));
  std::shuffle(all.begin(), all.end(), rng.engine());
  if (all.size() > maxCount)
    all.resize(maxCount);
  return all;
}

// ---------------------------------------------------------------------------
// Random small instances

struct EnergyInstance {
  Problem problem;
  MotionField mf;
  OcclusionState occ;
  LabelProbMap lNext;
  EnergyConfig cfg;
};

/// Random instance of at most 12x12 px, 5 superpixels and 4 classes, with
/// arbitrary (possibly inconsistent) occlusion labels and masks.
inline EnergyInstance random_instance(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x0acaULL}));
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))); };
  const int W = pick(4, 12), H = pick(4, 12);
  const int L = pick(2, 4);
  const int S = pick(1, 5);
  const std::size_t N = static_cast<std::size_t>(W) * H;

  auto image = [&]() {
    std::vector<double> v(N);
    int mode = pick(0, 2);
    for (std::size_t p = 0; p < N; ++p)
      v[p] = mode == 0 ? rng.uniform(0.0, 1.0) : mode == 1 ? std::round(rng.uniform(0.0, 4.0)) / 4.0 : 0.5;
    return GrayImage(W, H, std::move(v));
  };
  GrayImage f0 = image(), f1 = image();

  // Voronoi regions of random seeds, split into connected pieces, capped at 5.
  std::vector<std::pair<int, int>> seeds;
  for (int k = 0; k < S; ++k)
    seeds.push_back({pick(0, W - 1), pick(0, H - 1)});
  std::vector<int> raw(N);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      long bd = -1;
      for (int k = 0; k < S; ++k) {
        long d = std::labs(x - seeds[k].first) + std::labs(y - seeds[k].second);
        if (bd < 0 || d < bd) {
          bd = d;
          best = k;
        }
      }
      raw[static_cast<std::size_t>(y) * W + x] = best;
    }
  std::vector<int> ids(N, -1);
  int next = 0;
  for (std::size_t start = 0; start < N; ++start) {
    if (ids[start] >= 0)
      continue;
    int label = std::min(next, 4);
    std::vector<std::size_t> stack{start};
    ids[start] = label;
    while (!stack.empty()) {
      std::size_t p = stack.back();
      stack.pop_back();
      int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
      const long nb[4] = {x > 0 ? long(p) - 1 : -1, x + 1 < W ? long(p) + 1 : -1, y > 0 ? long(p) - W : -1,
                          y + 1 < H ? long(p) + W : -1};
      for (long q : nb)
        if (q >= 0 && ids[q] < 0 && raw[q] == raw[p]) {
          ids[q] = label;
          stack.push_back(static_cast<std::size_t>(q));
        }
    }
    ++next;
  }
  auto seg = SuperpixelSegmentation::from_id_map(W, H, ids);

  auto labels = [&]() {
    std::vector<double> pr(N * L);
    int mode = pick(0, 1);
    for (std::size_t p = 0; p < N; ++p) {
      if (mode == 0) {
        double s = 0.0;
        for (int c = 0; c < L; ++c)
          s += pr[p * L + c] = rng.uniform(0.0, 1.0);
        for (int c = 0; c < L; ++c)
          pr[p * L + c] /= s;
      } else {
        pr[p * L + pick(0, L - 1)] = 1.0;
      }
    }
    return LabelProbMap(W, H, L, std::move(pr));
  };

  SemanticClassTable table;
  for (int c = 0; c < L; ++c)
    table.classes.push_back({c, "c" + std::to_string(c), c % 2 == 0});

  Eigen::Matrix3d fm;
  for (int k = 0; k < 9; ++k)
    fm(k / 3, k % 3) = rng.uniform(-1.0, 1.0);
  Problem pr{f0, f1, seg, labels(), labels(), FundamentalMatrix(fm), table};

  MotionField mf;
  for (int s = 0; s < seg.count(); ++s) {
    int mode = pick(0, 3);
    if (mode == 0) {
      mf.push_back(Homography::translation(pick(-3, 3), pick(-3, 3)));
    } else if (mode == 1) {
      mf.push_back(Homography::translation(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)));
    } else {
      Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
      for (int k = 0; k < 9; ++k)
        h(k / 3, k % 3) += rng.normal(0.0, k == 6 || k == 7 ? (mode == 3 ? 0.2 : 0.01) : 0.3);
      h(0, 2) += rng.uniform(-3.0, 3.0);
      h(1, 2) += rng.uniform(-3.0, 3.0);
      try {
        mf.push_back(Homography(h));
      } catch (const DegenerateError&) {
        mf.push_back(Homography::identity());
      }
    }
  }

  OcclusionState occ = OcclusionState::clear(seg);
  for (auto& b : occ.edgeLabels)
    b = static_cast<BoundaryLabel>(pick(0, 3));
  int maskMode = pick(0, 2);
  for (std::size_t p = 0; p < N; ++p)
    occ.mask[p] = maskMode == 0 ? 0 : maskMode == 1 ? (rng.uniform(0.0, 1.0) < 0.2) : (rng.uniform(0.0, 1.0) < 0.6);

  EnergyConfig cfg;
  cfg.lambdaL = rng.uniform(0.0, 2.0);
  cfg.lambdaP = rng.uniform(0.0, 2.0);
  cfg.lambdaC = rng.uniform(0.0, 1.0);
  cfg.lambdaB = rng.uniform(0.0, 2.0);
  cfg.lambdaO = rng.uniform(0.0, 10.0);
  cfg.alpha = rng.uniform(0.0, 1.0);
  cfg.lambdaNonStatic = rng.uniform(0.0, 1.0);
  cfg.beta = rng.uniform(0.0, 2.0);
  cfg.lambdaImp = pick(0, 1) ? 1e9 : rng.uniform(1.0, 100.0);
  cfg.lambdaCo = rng.uniform(0.1, 1.0);
  cfg.lambdaH = cfg.lambdaCo + rng.uniform(0.1, 1.0);
  cfg.lambdaOcc = cfg.lambdaH + rng.uniform(0.1, 1.0);
  cfg.tauD = pick(4, 30);
  cfg.censusRadius = pick(1, 3);
  cfg.censusEpsilon = rng.uniform(0.0, 0.05);

  LabelProbMap lNext = labels();
  return {std::move(pr), std::move(mf), std::move(occ), std::move(lNext), cfg};
}

// ---------------------------------------------------------------------------
// Brute-force oracle

namespace oracle {

inline double pixel(const GrayImage& img, int x, int y) { return img.data()[static_cast<std::size_t>(y) * img.width() + x]; }

inline double bilinear(const GrayImage& img, double x, double y) {
  double cx = std::min(std::max(x, 0.0), img.width() - 1.0);
  double cy = std::min(std::max(y, 0.0), img.height() - 1.0);
  int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
  int x1 = x0 + 1 < img.width() ? x0 + 1 : x0;
  int y1 = y0 + 1 < img.height() ? y0 + 1 : y0;
  double fx = cx - x0, fy = cy - y0;
  return (1.0 - fx) * (1.0 - fy) * pixel(img, x0, y0) + fx * (1.0 - fy) * pixel(img, x1, y0) +
         (1.0 - fx) * fy * pixel(img, x0, y1) + fx * fy * pixel(img, x1, y1);
}

/// Ternary state of every window neighbour: -1 darker, 0 equal, +1 brighter.
inline std::vector<int> ternary(const GrayImage& img, double x, double y, int r, double eps) {
  std::vector<int> out;
  double c = bilinear(img, x, y);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      if (dx == 0 && dy == 0)
        continue;
      double d = bilinear(img, x + dx, y + dy) - c;
      out.push_back(d < -eps ? -1 : d > eps ? 1 : 0);
    }
  return out;
}

} // namespace oracle

/// Every term of the energy by direct enumeration.
inline EnergyBreakdown oracle_energy(const Problem& pr, const MotionField& mf, const OcclusionState& occ,
                                     const LabelProbMap& lNext, const EnergyConfig& cfg) {
  const int W = pr.seg.width(), H = pr.seg.height();
  const auto& idMap = pr.seg.id_map();
  int S = 0;
  for (int v : idMap)
    S = std::max(S, v + 1);
  std::vector<std::vector<int>> members(S);
  for (int p = 0; p < W * H; ++p)
    members[idMap[p]].push_back(p);

  // Adjacency and shared boundaries from scratch.
  std::map<std::pair<int, int>, std::set<int>> bnd;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int p = y * W + x;
      for (auto [qx, qy] : {std::pair{x + 1, y}, std::pair{x, y + 1}}) {
        if (qx >= W || qy >= H)
          continue;
        int q = qy * W + qx;
        int a = idMap[p], b = idMap[q];
        if (a == b)
          continue;
        auto& set = bnd[{std::min(a, b), std::max(a, b)}];
        set.insert(p);
        set.insert(q);
      }
    }
  std::vector<std::pair<int, int>> edges;
  for (const auto& kv : bnd)
    edges.push_back(kv.first);

  auto target = [&](int s, int p) { return mf[s].map(p % W, p / W); };
  const int L = lNext.classes();

  EnergyBreakdown e;
  // Data.
  for (int s = 0; s < S; ++s) {
    double sum = 0.0;
    for (int p : members[s]) {
      if (occ.mask[p]) {
        sum += cfg.lambdaO;
        continue;
      }
      auto q = target(s, p);
      double rho = cfg.tauD;
      if (q && q->x >= 0.0 && q->y >= 0.0 && q->x <= W - 1.0 && q->y <= H - 1.0) {
        auto a = oracle::ternary(pr.frame0, p % W, p / W, cfg.censusRadius, cfg.censusEpsilon);
        auto b = oracle::ternary(pr.frame1, q->x, q->y, cfg.censusRadius, cfg.censusEpsilon);
        int diff = 0;
        for (std::size_t k = 0; k < a.size(); ++k)
          diff += a[k] != b[k];
        rho = std::min(static_cast<double>(diff), cfg.tauD);
      }
      sum += rho;
    }
    e.eD += sum / static_cast<double>(members[s].size());
  }
  // Labels.
  for (int s = 0; s < S; ++s) {
    double sum = 0.0;
    for (int p : members[s]) {
      if (occ.mask[p])
        continue;
      auto q = target(s, p);
      if (!q)
        continue;
      long tx = static_cast<long>(std::floor(q->x + 0.5)), ty = static_cast<long>(std::floor(q->y + 0.5));
      if (tx < 0 || ty < 0 || tx >= W || ty >= H)
        continue;
      int t = static_cast<int>(ty * W + tx);
      for (int c = 0; c < L; ++c) {
        double d = lNext(t, c) - (cfg.alpha * pr.lHatNext(t, c) + (1.0 - cfg.alpha) * pr.lPrev(p, c));
        sum += 0.5 * d * d;
      }
    }
    e.eL += sum / static_cast<double>(members[s].size());
  }
  // Representative labels.
  std::vector<int> rep(S, 0);
  for (int s = 0; s < S; ++s) {
    std::vector<double> acc(L, 0.0);
    for (int p : members[s])
      for (int c = 0; c < L; ++c)
        acc[c] += pr.lPrev(p, c);
    for (int c = 1; c < L; ++c)
      if (acc[c] > acc[rep[s]])
        rep[s] = c;
  }
  // Epipolar.
  const Eigen::Matrix3d& F = pr.fundamental.matrix();
  for (int s = 0; s < S; ++s) {
    double sum = 0.0;
    bool degenerate = false;
    for (int p : members[s]) {
      auto q = target(s, p);
      if (!q) {
        degenerate = true;
        break;
      }
      Eigen::Vector3d a(p % W, p / W, 1.0), b(q->x, q->y, 1.0);
      sum += std::abs(b.dot(F * a));
    }
    bool st = rep[s] < pr.table.size() && pr.table.classes[rep[s]].isStatic;
    double ceiling = cfg.lambdaNonStatic + (st ? cfg.beta : 0.0);
    e.eP += degenerate ? ceiling : std::min(sum / static_cast<double>(members[s].size()), ceiling);
  }
  // Connectivity and boundary prior.
  auto back_of = [&](std::size_t k) {
    switch (occ.edgeLabels[k]) {
    case BoundaryLabel::LeftOcc:
      return edges[k].second;
    case BoundaryLabel::RightOcc:
      return edges[k].first;
    default:
      return -1;
    }
  };
  auto visible = [&](std::size_t k, int s) {
    for (std::size_t o = 0; o < edges.size(); ++o)
      if (o != k && (edges[o].first == s || edges[o].second == s) && back_of(o) == s)
        return false;
    return true;
  };
  auto l1diff = [&](int a, int b, int p) {
    auto qa = target(a, p), qb = target(b, p);
    if (!qa || !qb)
      return static_cast<double>(W + H);
    return std::abs(qa->x - qb->x) + std::abs(qa->y - qb->y);
  };
  for (std::size_t k = 0; k < edges.size(); ++k) {
    auto [i, j] = edges[k];
    BoundaryLabel b = occ.edgeLabels[k];
    bool vi = visible(k, i), vj = visible(k, j);
    double marked = 0.0;
    double phi = 0.0;
    if (b == BoundaryLabel::CoPlanar || b == BoundaryLabel::Hinge) {
      for (int p : members[i])
        marked += vi && occ.mask[p];
      for (int p : members[j])
        marked += vj && occ.mask[p];
      double d = 0.0;
      if (b == BoundaryLabel::CoPlanar) {
        for (int p : members[i])
          d += l1diff(i, j, p);
        for (int p : members[j])
          d += l1diff(i, j, p);
        d /= static_cast<double>(members[i].size() + members[j].size());
      } else {
        for (int p : bnd[edges[k]])
          d += l1diff(i, j, p);
        d /= static_cast<double>(bnd[edges[k]].size());
      }
      phi = d + cfg.lambdaImp * marked;
    } else {
      int front = b == BoundaryLabel::LeftOcc ? i : j;
      int back = b == BoundaryLabel::LeftOcc ? j : i;
      bool vf = b == BoundaryLabel::LeftOcc ? vi : vj;
      bool vb = b == BoundaryLabel::LeftOcc ? vj : vi;
      std::set<std::pair<long, long>> hit;
      for (int p : members[front])
        if (auto q = target(front, p))
          hit.insert({static_cast<long>(std::floor(q->x + 0.5)), static_cast<long>(std::floor(q->y + 0.5))});
      for (int p : members[front])
        marked += vf && occ.mask[p];
      for (int p : members[back]) {
        auto q = target(back, p);
        bool omega = q && hit.count({static_cast<long>(std::floor(q->x + 0.5)),
                                     static_cast<long>(std::floor(q->y + 0.5))});
        if (omega && !occ.mask[p])
          marked += 1.0;
        if (!omega && occ.mask[p] && vb)
          marked += 1.0;
      }
      phi = cfg.lambdaImp * marked;
    }
    e.eC += phi;
    if (b == BoundaryLabel::CoPlanar)
      e.eB += rep[i] != rep[j] ? cfg.lambdaCo : 0.0;
    else if (b == BoundaryLabel::Hinge)
      e.eB += cfg.lambdaH;
    else
      e.eB += cfg.lambdaOcc;
  }
  e.total = e.eD + cfg.lambdaL * e.eL + cfg.lambdaP * e.eP + cfg.lambdaC * e.eC + cfg.lambdaB * e.eB;
  return e;
}

inline EnergyBreakdown oracle_energy(const EnergyInstance& inst) {
  return oracle_energy(inst.problem, inst.mf, inst.occ, inst.lNext, inst.cfg);
}

} // namespace semflow::testkit

#endif // SEMFLOW_TESTKIT_HPP
