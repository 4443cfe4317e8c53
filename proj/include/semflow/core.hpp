#ifndef SEMFLOW_CORE_HPP
#define SEMFLOW_CORE_HPP

// Shared domain types: images, superpixel segmentations, homographies,
// label probability maps, occlusion state, configuration and flow fields.

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace semflow {

/// Base class of all errors raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent caller-supplied data.
class InputError : public Error {
public:
  using Error::Error;
};

/// A file does not follow its documented layout.
class FormatError : public InputError {
public:
  using InputError::InputError;
};

/// Geometric degeneracy (collinear points, singular systems, projections to infinity).
class DegenerateError : public Error {
public:
  using Error::Error;
};

/// Numerical breakdown inside an estimator.
class NumericalError : public Error {
public:
  using Error::Error;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Nearest-integer rounding used wherever a warped position selects a pixel.
/// Halves round up.
inline long round_coord(double v) { return static_cast<long>(std::floor(v + 0.5)); }

// ---------------------------------------------------------------------------
// Images

class GrayImage {
public:
  GrayImage() = default;

  GrayImage(int width, int height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (width_ <= 0 || height_ <= 0)
      throw InputError("GrayImage: dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(width_) * height_)
      throw InputError("GrayImage: data length does not match width*height");
    for (double v : data_)
      if (!(v >= 0.0 && v <= 1.0))
        throw InputError("GrayImage: intensities must lie in [0,1]");
  }

  GrayImage(int width, int height, double fill = 0.0)
      : GrayImage(width, height, std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                                         static_cast<std::size_t>(std::max(height, 0)),
                                                     fill)) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  double operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double operator[](std::size_t i) const { return data_[i]; }
  const std::vector<double>& data() const { return data_; }

  bool contains(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width_ - 1 && y <= height_ - 1;
  }

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

/// Interleaved RGB, each channel in [0,1].
class ColorImage {
public:
  ColorImage() = default;

  ColorImage(int width, int height, std::vector<double> rgb)
      : width_(width), height_(height), data_(std::move(rgb)) {
    if (width_ <= 0 || height_ <= 0)
      throw InputError("ColorImage: dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(width_) * height_ * 3)
      throw InputError("ColorImage: data length does not match width*height*3");
    for (double v : data_)
      if (!(v >= 0.0 && v <= 1.0))
        throw InputError("ColorImage: channel values must lie in [0,1]");
  }

  static ColorImage from_gray(const GrayImage& g) {
    std::vector<double> rgb(g.size() * 3);
    for (std::size_t i = 0; i < g.size(); ++i)
      rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = g[i];
    return ColorImage(g.width(), g.height(), std::move(rgb));
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  double at(int x, int y, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  double channel(std::size_t pixel, int c) const { return data_[pixel * 3 + c]; }
  const std::vector<double>& data() const { return data_; }

  GrayImage to_gray() const {
    std::vector<double> g(pixel_count());
    for (std::size_t i = 0; i < g.size(); ++i) {
      double v = 0.299 * data_[3 * i] + 0.587 * data_[3 * i + 1] + 0.114 * data_[3 * i + 2];
      g[i] = std::clamp(v, 0.0, 1.0);
    }
    return GrayImage(width_, height_, std::move(g));
  }

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Superpixels

struct Edge {
  int i = 0;  // always i < j
  int j = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct Neighbor {
  int id;
  int edge;
};

/// Pixel-to-superpixel map with the derived adjacency graph and the shared
/// boundary pixel sets. Edges are sorted lexicographically by (i, j).
class SuperpixelSegmentation {
public:
  SuperpixelSegmentation() = default;

  static SuperpixelSegmentation from_id_map(int width, int height, std::vector<int> ids) {
    if (width <= 0 || height <= 0)
      throw InputError("segmentation: dimensions must be positive");
    if (ids.size() != static_cast<std::size_t>(width) * height)
      throw InputError("segmentation: id map length does not match width*height");
    int maxId = -1;
    for (int id : ids) {
      if (id < 0)
        throw InputError("segmentation: negative superpixel id");
      maxId = std::max(maxId, id);
    }
    SuperpixelSegmentation seg;
    seg.width_ = width;
    seg.height_ = height;
    seg.count_ = maxId + 1;
    seg.ids_ = std::move(ids);
    seg.members_.assign(seg.count_, {});
    for (std::size_t p = 0; p < seg.ids_.size(); ++p)
      seg.members_[seg.ids_[p]].push_back(static_cast<int>(p));
    for (int s = 0; s < seg.count_; ++s)
      if (seg.members_[s].empty())
        throw InputError("segmentation: superpixel ids are not contiguous (id " + std::to_string(s) +
                         " is empty)");

    std::map<std::pair<int, int>, std::vector<int>> boundary;
    auto touch = [&](int p, int q) {
      int a = seg.ids_[p], b = seg.ids_[q];
      if (a == b)
        return;
      auto& set = boundary[{std::min(a, b), std::max(a, b)}];
      set.push_back(p);
      set.push_back(q);
    };
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        int p = y * width + x;
        if (x + 1 < width)
          touch(p, p + 1);
        if (y + 1 < height)
          touch(p, p + width);
      }
    seg.neighbors_.assign(seg.count_, {});
    for (auto& [key, pixels] : boundary) {
      std::sort(pixels.begin(), pixels.end());
      pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
      int e = static_cast<int>(seg.edges_.size());
      seg.edges_.push_back({key.first, key.second});
      seg.boundary_.push_back(std::move(pixels));
      seg.edgeIndex_[key] = e;
      seg.neighbors_[key.first].push_back({key.second, e});
      seg.neighbors_[key.second].push_back({key.first, e});
    }
    for (auto& n : seg.neighbors_)
      std::sort(n.begin(), n.end(), [](const Neighbor& a, const Neighbor& b) { return a.id < b.id; });
    return seg;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return ids_.size(); }
  int count() const { return count_; }
  int id(int pixel) const { return ids_[pixel]; }
  int id(int x, int y) const { return ids_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<int>& id_map() const { return ids_; }
  const std::vector<int>& members(int s) const { return members_[s]; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& boundary(int edge) const { return boundary_[edge]; }
  const std::vector<Neighbor>& neighbors(int s) const { return neighbors_[s]; }

  /// Edge index of the unordered pair, or -1 when not adjacent.
  int edge_index(int a, int b) const {
    auto it = edgeIndex_.find({std::min(a, b), std::max(a, b)});
    return it == edgeIndex_.end() ? -1 : it->second;
  }

private:
  int width_ = 0;
  int height_ = 0;
  int count_ = 0;
  std::vector<int> ids_;
  std::vector<std::vector<int>> members_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> boundary_;
  std::vector<std::vector<Neighbor>> neighbors_;
  std::map<std::pair<int, int>, int> edgeIndex_;
};

// ---------------------------------------------------------------------------
// Homographies

/// 3x3 projective transform stored with unit Frobenius norm. The sign is
/// fixed so that m(2,2) >= 0; when m(2,2) is exactly zero the first nonzero
/// entry in row-major order is made positive.
class Homography {
public:
  Homography() : m_(Eigen::Matrix3d::Identity() / std::sqrt(3.0)), affine_(Eigen::Matrix3d::Identity()) {}

  explicit Homography(const Eigen::Matrix3d& m) : m_(normalize(m)) {
    // Mapping goes through m / m(2,2) of the caller's matrix so that
    // identities and integer translations map exactly.
    if (std::abs(m(2, 2)) > 1e-8 * m.norm())
      affine_ = m / m(2, 2);
    else
      affine_ = m_;
  }

  static Homography identity() { return Homography(); }

  static Homography translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return Homography(m);
  }

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  /// Dehomogenized image of (x, y); empty when the homogeneous coordinate is <= 1e-12.
  std::optional<Point2> map(double x, double y) const {
    double w = m_(2, 0) * x + m_(2, 1) * y + m_(2, 2);
    if (!(w > 1e-12))
      return std::nullopt;
    const Eigen::Matrix3d& a = affine_;
    double d = a(2, 0) * x + a(2, 1) * y + a(2, 2);
    double u = a(0, 0) * x + a(0, 1) * y + a(0, 2);
    double v = a(1, 0) * x + a(1, 1) * y + a(1, 2);
    return Point2{u / d, v / d};
  }

  Homography compose(const Homography& rhs) const { return Homography(m_ * rhs.m_); }

  Homography inverse() const { return Homography(m_.inverse()); }

  friend bool operator==(const Homography& a, const Homography& b) { return a.m_ == b.m_; }

  static Eigen::Matrix3d normalize(const Eigen::Matrix3d& m) {
    if (!m.allFinite())
      throw DegenerateError("homography has non-finite entries");
    double n = m.norm();
    if (!(n > 0.0))
      throw DegenerateError("homography is the zero matrix");
    Eigen::Matrix3d r = m / n;
    double sign = 1.0;
    if (r(2, 2) < 0.0) {
      sign = -1.0;
    } else if (r(2, 2) == 0.0) {
      for (int k = 0; k < 9; ++k) {
        double v = r(k / 3, k % 3);
        if (v != 0.0) {
          sign = v < 0.0 ? -1.0 : 1.0;
          break;
        }
      }
    }
    r *= sign;
    if (!(std::abs(r.determinant()) > 1e-12))
      throw DegenerateError("homography is singular");
    return r;
  }

private:
  Eigen::Matrix3d m_;
  Eigen::Matrix3d affine_;
};

/// One homography per superpixel.
using MotionField = std::vector<Homography>;

// ---------------------------------------------------------------------------
// Label probability maps

/// Per-pixel distributions over `classes` semantic classes, pixel-major.
class LabelProbMap {
public:
  LabelProbMap() = default;

  LabelProbMap(int width, int height, int classes, std::vector<double> probs)
      : width_(width), height_(height), classes_(classes), probs_(std::move(probs)) {
    if (width_ <= 0 || height_ <= 0 || classes_ <= 0)
      throw InputError("LabelProbMap: dimensions and class count must be positive");
    if (probs_.size() != static_cast<std::size_t>(width_) * height_ * classes_)
      throw InputError("LabelProbMap: payload length does not match width*height*classes");
    for (std::size_t p = 0; p < pixel_count(); ++p) {
      double sum = 0.0;
      for (int c = 0; c < classes_; ++c) {
        double v = probs_[p * classes_ + c];
        if (!(v >= 0.0 && v <= 1.0))
          throw InputError("LabelProbMap: probability outside [0,1] at pixel " + std::to_string(p));
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6)
        throw InputError("LabelProbMap: distribution at pixel " + std::to_string(p) + " sums to " +
                         std::to_string(sum));
    }
  }

  static LabelProbMap one_hot(int width, int height, int classes, const std::vector<int>& labels) {
    if (labels.size() != static_cast<std::size_t>(width) * height)
      throw InputError("one_hot: label count does not match width*height");
    std::vector<double> probs(labels.size() * classes, 0.0);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (labels[p] < 0 || labels[p] >= classes)
        throw InputError("one_hot: class id out of range");
      probs[p * classes + labels[p]] = 1.0;
    }
    return LabelProbMap(width, height, classes, std::move(probs));
  }

  static LabelProbMap uniform(int width, int height, int classes) {
    std::vector<double> probs(static_cast<std::size_t>(width) * height * classes, 1.0 / classes);
    return LabelProbMap(width, height, classes, std::move(probs));
  }

  /// Rescales each pixel's entries to sum to one; rows with zero mass become uniform.
  static LabelProbMap renormalized(int width, int height, int classes, std::vector<double> probs) {
    for (std::size_t p = 0; p * classes < probs.size(); ++p) {
      double sum = 0.0;
      for (int c = 0; c < classes; ++c) {
        probs[p * classes + c] = std::max(0.0, probs[p * classes + c]);
        sum += probs[p * classes + c];
      }
      for (int c = 0; c < classes; ++c)
        probs[p * classes + c] = sum > 0.0 ? probs[p * classes + c] / sum : 1.0 / classes;
    }
    return LabelProbMap(width, height, classes, std::move(probs));
  }

  LabelProbMap renormalized() const { return renormalized(width_, height_, classes_, probs_); }

  int width() const { return width_; }
  int height() const { return height_; }
  int classes() const { return classes_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  double operator()(std::size_t pixel, int c) const { return probs_[pixel * classes_ + c]; }
  const std::vector<double>& data() const { return probs_; }

  int argmax(std::size_t pixel) const {
    int best = 0;
    for (int c = 1; c < classes_; ++c)
      if (probs_[pixel * classes_ + c] > probs_[pixel * classes_ + best])
        best = c;
    return best;
  }

private:
  int width_ = 0;
  int height_ = 0;
  int classes_ = 0;
  std::vector<double> probs_;
};

// ---------------------------------------------------------------------------
// Occlusion

/// Relation between adjacent superpixels (i, j), i < j. LeftOcc: i occludes j.
/// RightOcc: j occludes i.
enum class BoundaryLabel : std::uint8_t { CoPlanar = 0, Hinge = 1, LeftOcc = 2, RightOcc = 3 };

inline const char* to_string(BoundaryLabel b) {
  switch (b) {
  case BoundaryLabel::CoPlanar:
    return "coplanar";
  case BoundaryLabel::Hinge:
    return "hinge";
  case BoundaryLabel::LeftOcc:
    return "left-occlusion";
  case BoundaryLabel::RightOcc:
    return "right-occlusion";
  }
  return "?";
}

inline bool is_occlusion(BoundaryLabel b) { return b == BoundaryLabel::LeftOcc || b == BoundaryLabel::RightOcc; }

struct OcclusionState {
  std::vector<std::uint8_t> mask;          // per pixel, 1 = occluded in the next frame
  std::vector<BoundaryLabel> edgeLabels;   // indexed like SuperpixelSegmentation::edges()

  static OcclusionState clear(const SuperpixelSegmentation& seg) {
    return {std::vector<std::uint8_t>(seg.pixel_count(), 0),
            std::vector<BoundaryLabel>(seg.edges().size(), BoundaryLabel::CoPlanar)};
  }

  bool consistent_with(const SuperpixelSegmentation& seg) const {
    return mask.size() == seg.pixel_count() && edgeLabels.size() == seg.edges().size();
  }
};

// ---------------------------------------------------------------------------
// Semantic classes

struct SemanticClass {
  int id = 0;
  std::string name;
  bool isStatic = false;
};

struct SemanticClassTable {
  std::vector<SemanticClass> classes;

  int size() const { return static_cast<int>(classes.size()); }
  bool is_static(int id) const { return id >= 0 && id < size() && classes[id].isStatic; }

  /// Two-class table: 0 = static background, 1 = dynamic object.
  static SemanticClassTable two_class() { return {{{0, "static", true}, {1, "dynamic", false}}}; }
};

// ---------------------------------------------------------------------------
// Configuration

struct EnergyConfig {
  // Term weights of the total energy.
  double lambdaL = 1.0;
  double lambdaP = 1.0;
  double lambdaC = 0.5;
  double lambdaB = 1.0;
  // Data penalty of an occluded pixel.
  double lambdaO = 8.0;
  // Weight of the bottom-up evidence against the propagated previous labels.
  double alpha = 0.5;
  // Epipolar truncation: base ceiling, plus beta for static superpixels.
  double lambdaNonStatic = 0.5;
  double beta = 1.5;
  double lambdaImp = 1e9;
  // Boundary priors; must satisfy lambdaOcc > lambdaH > lambdaCo > 0.
  double lambdaCo = 0.5;
  double lambdaH = 1.0;
  double lambdaOcc = 2.0;
  // Census data term.
  double tauD = 24.0;
  int censusRadius = 3;
  double censusEpsilon = 0.0078;
  // Solver schedule.
  int particleCount = 5;
  int innerIters = 2;
  int outerIters = 5;
  double sigma0 = 3.0;
  double gamma = 0.5;
  int maxDisp = 64;
  int lkMaxIters = 20;
  double epipolarGate = 5.0;
  std::uint64_t rngSeed = 0;
  // Fundamental matrix estimation.
  int ransacIters = 500;
  double ransacThreshold = 1.0;
};

struct ValidationReport {
  std::vector<std::string> messages;
  bool ok() const { return messages.empty(); }
  std::string summary() const {
    std::ostringstream os;
    for (std::size_t k = 0; k < messages.size(); ++k)
      os << (k ? "; " : "") << messages[k];
    return os.str();
  }
};

inline ValidationReport validate_config(const EnergyConfig& cfg, const SemanticClassTable& table) {
  ValidationReport r;
  auto nonneg = [&](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      r.messages.push_back(std::string(name) + " must be a finite value >= 0");
  };
  nonneg(cfg.lambdaL, "lambda_L");
  nonneg(cfg.lambdaP, "lambda_P");
  nonneg(cfg.lambdaC, "lambda_C");
  nonneg(cfg.lambdaB, "lambda_B");
  nonneg(cfg.lambdaO, "lambda_o");
  nonneg(cfg.lambdaNonStatic, "lambda_non_st");
  nonneg(cfg.beta, "beta");
  nonneg(cfg.lambdaImp, "lambda_imp");
  nonneg(cfg.tauD, "tau_D");
  nonneg(cfg.censusEpsilon, "census_epsilon");
  if (!(cfg.lambdaOcc > cfg.lambdaH && cfg.lambdaH > cfg.lambdaCo && cfg.lambdaCo > 0.0))
    r.messages.push_back("boundary priors must satisfy lambda_occ > lambda_h > lambda_co > 0");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
    r.messages.push_back("alpha must lie in [0,1]");
  if (cfg.censusRadius < 1 || cfg.censusRadius > 7)
    r.messages.push_back("census_radius must lie in [1,7]");
  if (cfg.particleCount < 1)
    r.messages.push_back("particle_count must be >= 1");
  if (cfg.innerIters < 1)
    r.messages.push_back("inner_iters must be >= 1");
  if (cfg.outerIters < 1)
    r.messages.push_back("outer_iters must be >= 1");
  if (!(cfg.sigma0 >= 0.0))
    r.messages.push_back("sigma0 must be >= 0");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0))
    r.messages.push_back("gamma must lie in (0,1]");
  if (cfg.maxDisp < 0)
    r.messages.push_back("max_disp must be >= 0");
  if (cfg.lkMaxIters < 0)
    r.messages.push_back("lk_max_iters must be >= 0");
  if (!(cfg.epipolarGate > 0.0))
    r.messages.push_back("epipolar_gate must be > 0");
  if (cfg.ransacIters < 1)
    r.messages.push_back("ransac_iters must be >= 1");
  if (!(cfg.ransacThreshold > 0.0))
    r.messages.push_back("ransac_threshold must be > 0");

  if (table.classes.empty()) {
    r.messages.push_back("semantic class table is empty");
  } else {
    bool anyStatic = false, anyDynamic = false;
    for (int k = 0; k < table.size(); ++k) {
      if (table.classes[k].id != k)
        r.messages.push_back("semantic class ids must be contiguous from 0");
      (table.classes[k].isStatic ? anyStatic : anyDynamic) = true;
    }
    if (!anyStatic || !anyDynamic)
      r.messages.push_back("semantic class table needs at least one static and one non-static class");
  }
  return r;
}

/// Upper bound of the finite part of the total energy on an instance, for
/// motions that stay within maxDisp of the image. The impossible-configuration
/// penalty (scaled by lambda_C) has to exceed it.
inline double finite_energy_bound(const EnergyConfig& cfg, const SuperpixelSegmentation& seg) {
  double n = seg.count();
  double edges = static_cast<double>(seg.edges().size());
  double reach = 2.0 * (seg.width() + seg.height() + 4.0 * cfg.maxDisp);
  double eD = n * std::max(cfg.tauD, cfg.lambdaO);
  double eL = n;
  double eP = n * (cfg.lambdaNonStatic + cfg.beta);
  double eC = edges * reach;
  double eB = edges * std::max({cfg.lambdaCo, cfg.lambdaH, cfg.lambdaOcc});
  return eD + cfg.lambdaL * eL + cfg.lambdaP * eP + cfg.lambdaC * eC + cfg.lambdaB * eB;
}

inline ValidationReport validate_for_instance(const EnergyConfig& cfg, const SemanticClassTable& table,
                                              const SuperpixelSegmentation& seg) {
  ValidationReport r = validate_config(cfg, table);
  if (cfg.lambdaC > 0.0 && !(cfg.lambdaC * cfg.lambdaImp > finite_energy_bound(cfg, seg))) {
    std::ostringstream os;
    os << "lambda_imp too small for this instance: lambda_C*lambda_imp must exceed "
       << finite_energy_bound(cfg, seg);
    r.messages.push_back(os.str());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Flow

struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h), u(static_cast<std::size_t>(w) * h, 0.0), v(u.size(), 0.0), valid(u.size(), 1) {}

  std::size_t pixel_count() const { return u.size(); }
};

/// Dense flow induced by per-superpixel homographies. Pixels whose projection
/// degenerates are marked invalid with zero displacement.
inline FlowField dense_flow(const MotionField& mf, const SuperpixelSegmentation& seg) {
  if (mf.size() != static_cast<std::size_t>(seg.count()))
    throw InputError("dense_flow: motion field size does not match superpixel count");
  FlowField f(seg.width(), seg.height());
  for (int y = 0; y < seg.height(); ++y)
    for (int x = 0; x < seg.width(); ++x) {
      std::size_t p = static_cast<std::size_t>(y) * seg.width() + x;
      auto q = mf[seg.id(static_cast<int>(p))].map(x, y);
      if (q) {
        f.u[p] = q->x - x;
        f.v[p] = q->y - y;
      } else {
        f.valid[p] = 0;
      }
    }
  return f;
}

} // namespace semflow

#endif // SEMFLOW_CORE_HPP
