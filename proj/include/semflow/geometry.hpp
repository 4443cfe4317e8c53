#ifndef SEMFLOW_GEOMETRY_HPP
#define SEMFLOW_GEOMETRY_HPP

// Homography and two-view algebra: point warping, fundamental matrix
// estimation, plane-induced homographies and Lucas-Kanade refinement.

#include "semflow/core.hpp"
#include "semflow/random.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace semflow {

/// Rank-2 fundamental matrix with unit Frobenius norm.
class FundamentalMatrix {
public:
  FundamentalMatrix() = default;

  explicit FundamentalMatrix(const Eigen::Matrix3d& m) {
    if (!m.allFinite() || !(m.norm() > 0.0))
      throw DegenerateError("fundamental matrix must be finite and nonzero");
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    s(2) = 0.0;
    m_ = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    double n = m_.norm();
    if (!(n > 0.0))
      throw DegenerateError("fundamental matrix has rank < 2");
    m_ /= n;
  }

  const Eigen::Matrix3d& matrix() const { return m_; }

private:
  Eigen::Matrix3d m_ = Eigen::Matrix3d::Zero();
};

struct Correspondence {
  Point2 p;  // frame t
  Point2 q;  // frame t+1
};

inline Eigen::Matrix3d cross_matrix(const Eigen::Vector3d& t) {
  Eigen::Matrix3d m;
  m << 0.0, -t(2), t(1), t(2), 0.0, -t(0), -t(1), t(0), 0.0;
  return m;
}

inline Eigen::Vector3d homogeneous(const Point2& p) { return {p.x, p.y, 1.0}; }

/// Dehomogenized H*(x, y, 1). Throws DegenerateError when the projection is at infinity.
inline Point2 apply_homography(const Homography& h, const Point2& p) {
  auto q = h.map(p.x, p.y);
  if (!q)
    throw DegenerateError("degenerate projection: homogeneous coordinate <= 1e-12");
  return *q;
}

/// Clamp-to-edge bilinear intensity sample.
inline double sample_bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  int x1 = std::min(x0 + 1, img.width() - 1);
  int y1 = std::min(y0 + 1, img.height() - 1);
  double a = x - x0;
  double b = y - y0;
  return (1.0 - a) * (1.0 - b) * img(x0, y0) + a * (1.0 - b) * img(x1, y0) + (1.0 - a) * b * img(x0, y1) +
         a * b * img(x1, y1);
}

/// |q^T F p|, the algebraic epipolar residual.
inline double epipolar_residual(const FundamentalMatrix& f, const Point2& p, const Point2& q) {
  const Eigen::Matrix3d& m = f.matrix();
  double l0 = m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2);
  double l1 = m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2);
  double l2 = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
  return std::abs(q.x * l0 + q.y * l1 + l2);
}

/// Symmetric epipolar line distance in pixels (used as the RANSAC inlier test).
inline double symmetric_epipolar_distance(const Eigen::Matrix3d& f, const Point2& p, const Point2& q) {
  Eigen::Vector3d x = homogeneous(p), xp = homogeneous(q);
  Eigen::Vector3d l2 = f * x;              // line in frame t+1
  Eigen::Vector3d l1 = f.transpose() * xp;  // line in frame t
  double r = xp.dot(l2);
  double n2 = l2.head<2>().squaredNorm();
  double n1 = l1.head<2>().squaredNorm();
  if (!(n1 > 0.0) || !(n2 > 0.0))
    return std::numeric_limits<double>::infinity();
  return std::sqrt(r * r * (1.0 / n1 + 1.0 / n2));
}

/// Left null vector e' of F (e'^T F = 0), unit norm: the epipole in frame t+1.
inline Eigen::Vector3d epipole(const FundamentalMatrix& f) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f.matrix(), Eigen::ComputeFullU);
  Eigen::Vector3d e = svd.matrixU().col(2);
  return e / e.norm();
}

namespace detail {

/// Hartley normalization: centroid to origin, mean distance sqrt(2).
inline Eigen::Matrix3d hartley_transform(std::span<const Point2> pts) {
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean = 0.0;
  for (const auto& p : pts)
    mean += std::hypot(p.x - cx, p.y - cy);
  mean /= static_cast<double>(pts.size());
  double s = mean > 0.0 ? std::sqrt(2.0) / mean : 1.0;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0;
  return t;
}

inline Point2 transform_point(const Eigen::Matrix3d& t, const Point2& p) {
  Eigen::Vector3d r = t * homogeneous(p);
  return {r(0) / r(2), r(1) / r(2)};
}

/// Normalized eight-point fit on the given correspondences; empty when the
/// linear system has more than a one-dimensional null space.
inline std::optional<Eigen::Matrix3d> eight_point(std::span<const Correspondence> m) {
  std::vector<Point2> ps, qs;
  for (const auto& c : m) {
    ps.push_back(c.p);
    qs.push_back(c.q);
  }
  Eigen::Matrix3d t1 = hartley_transform(ps), t2 = hartley_transform(qs);
  Eigen::MatrixXd a(std::max<std::size_t>(m.size(), 9), 9);
  a.setZero();
  for (std::size_t k = 0; k < m.size(); ++k) {
    Point2 p = transform_point(t1, m[k].p), q = transform_point(t2, m[k].q);
    a.row(static_cast<Eigen::Index>(k)) << q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(7) / sv(0) < 1e-10)
    return std::nullopt;
  Eigen::VectorXd f = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  Eigen::JacobiSVD<Eigen::Matrix3d> s3(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = s3.singularValues();
  d(2) = 0.0;
  fn = s3.matrixU() * d.asDiagonal() * s3.matrixV().transpose();
  Eigen::Matrix3d full = t2.transpose() * fn * t1;
  if (!full.allFinite() || !(full.norm() > 0.0))
    return std::nullopt;
  return full / full.norm();
}

inline bool collinear(const Point2& a, const Point2& b, const Point2& c, double areaTol = 1e-9) {
  double area = 0.5 * std::abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
  return area < areaTol;
}

/// Direct linear transform over >= 4 correspondences with Hartley normalization.
inline Eigen::Matrix3d dlt(std::span<const Point2> src, std::span<const Point2> dst) {
  Eigen::Matrix3d t1 = hartley_transform(src), t2 = hartley_transform(dst);
  Eigen::MatrixXd a(std::max<std::size_t>(2 * src.size(), 9), 9);
  a.setZero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    Point2 p = transform_point(t1, src[k]), q = transform_point(t2, dst[k]);
    auto r = static_cast<Eigen::Index>(2 * k);
    a.row(r) << -p.x, -p.y, -1.0, 0.0, 0.0, 0.0, q.x * p.x, q.x * p.y, q.x;
    a.row(r + 1) << 0.0, 0.0, 0.0, -p.x, -p.y, -1.0, q.y * p.x, q.y * p.y, q.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(7) / sv(0) < 1e-12)
    throw DegenerateError("homography DLT: degenerate point configuration");
  Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return t2.inverse() * hn * t1;
}

} // namespace detail

struct FundamentalEstimate {
  FundamentalMatrix f;
  std::vector<std::uint8_t> inliers;
};

/// RANSAC over normalized eight-point samples, inliers by symmetric epipolar
/// distance, final refit on all inliers. Deterministic for a given seed.
inline FundamentalEstimate estimate_fundamental(std::span<const Correspondence> matches, int iters,
                                                double inlierThresh, std::uint64_t seed) {
  if (matches.size() < 8)
    throw InputError("estimate_fundamental: at least 8 correspondences are required");
  const std::size_t n = matches.size();
  Rng rng(seed);
  std::optional<Eigen::Matrix3d> best;
  std::size_t bestCount = 0;
  std::vector<Correspondence> sample(8);
  for (int it = 0; it < std::max(iters, 1); ++it) {
    std::array<std::size_t, 8> idx{};
    for (std::size_t k = 0; k < 8; ++k) {
      bool fresh;
      do {
        idx[k] = rng.index(n);
        fresh = std::find(idx.begin(), idx.begin() + k, idx[k]) == idx.begin() + k;
      } while (!fresh);
      sample[k] = matches[idx[k]];
    }
    auto f = detail::eight_point(sample);
    if (!f)
      continue;
    std::size_t count = 0;
    for (const auto& c : matches)
      if (symmetric_epipolar_distance(*f, c.p, c.q) < inlierThresh)
        ++count;
    if (count > bestCount) {
      bestCount = count;
      best = f;
    }
    if (n == 8)
      break;
  }
  if (!best)
    throw NumericalError("estimate_fundamental: no consensus (all samples degenerate)");

  auto classify = [&](const Eigen::Matrix3d& f) {
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t k = 0; k < n; ++k)
      mask[k] = symmetric_epipolar_distance(f, matches[k].p, matches[k].q) < inlierThresh ? 1 : 0;
    return mask;
  };
  std::vector<std::uint8_t> mask = classify(*best);
  std::vector<Correspondence> inl;
  for (std::size_t k = 0; k < n; ++k)
    if (mask[k])
      inl.push_back(matches[k]);
  Eigen::Matrix3d final = *best;
  if (inl.size() >= 8)
    if (auto refit = detail::eight_point(inl))
      final = *refit;
  FundamentalMatrix fm(final);
  return {fm, classify(fm.matrix())};
}

inline Homography fit_homography(std::span<const Point2> src, std::span<const Point2> dst);

/// Fallback for matches that all lie on one plane, where the eight-point
/// system has no unique solution: F = [e']_x H with H the least-squares
/// homography and e' the epipole at infinity along the mean displacement.
/// Exact for a camera translating parallel to the image plane.
inline FundamentalEstimate planar_fundamental(std::span<const Correspondence> matches, double inlierThresh) {
  if (matches.size() < 4)
    throw NumericalError("planar_fundamental: at least 4 correspondences are required");
  std::vector<Point2> src, dst;
  double dx = 0.0, dy = 0.0;
  for (const auto& c : matches) {
    src.push_back(c.p);
    dst.push_back(c.q);
    dx += c.q.x - c.p.x;
    dy += c.q.y - c.p.y;
  }
  if (std::hypot(dx, dy) < 1e-9 * static_cast<double>(matches.size()))
    throw NumericalError("planar_fundamental: no mean displacement to place the epipole");
  Homography h = [&] {
    try {
      return fit_homography(src, dst);
    } catch (const DegenerateError& ex) {
      throw NumericalError(std::string("planar_fundamental: ") + ex.what());
    }
  }();
  std::vector<std::uint8_t> mask(matches.size(), 0);
  std::size_t good = 0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    auto q = h.map(matches[k].p.x, matches[k].p.y);
    if (q && std::hypot(q->x - matches[k].q.x, q->y - matches[k].q.y) < inlierThresh) {
      mask[k] = 1;
      ++good;
    }
  }
  if (2 * good < matches.size())
    throw NumericalError("planar_fundamental: matches are not explained by a single homography");
  Eigen::Vector3d e(dx, dy, 0.0);
  return {FundamentalMatrix(cross_matrix(e / e.norm()) * h.matrix()), std::move(mask)};
}

/// Eight-point RANSAC, falling back to the planar construction when every
/// sample is degenerate (typically all static points on one plane).
inline FundamentalEstimate robust_fundamental(std::span<const Correspondence> matches, int iters, double inlierThresh,
                                              std::uint64_t seed) {
  try {
    return estimate_fundamental(matches, iters, inlierThresh, seed);
  } catch (const NumericalError&) {
    return planar_fundamental(matches, inlierThresh);
  }
}

/// Homography mapping four source points exactly onto four destination points.
inline Homography homography_from_4pts(std::span<const Point2, 4> src, std::span<const Point2, 4> dst) {
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b)
      for (int c = b + 1; c < 4; ++c)
        if (detail::collinear(src[a], src[b], src[c]))
          throw DegenerateError("homography_from_4pts: three source points are collinear");
  return Homography(detail::dlt(src, dst));
}

/// Least-squares homography over any number (>= 4) of correspondences.
inline Homography fit_homography(std::span<const Point2> src, std::span<const Point2> dst) {
  if (src.size() != dst.size() || src.size() < 4)
    throw DegenerateError("fit_homography: need at least 4 correspondences");
  return Homography(detail::dlt(src, dst));
}

/// Plane-induced homography H = [e']_x F - e' v^T compatible with F, with v
/// chosen so that H maps each of the three points onto its match.
inline Homography homography_from_3pts_and_F(const FundamentalMatrix& f, std::span<const Correspondence, 3> m,
                                              double residualGate = std::numeric_limits<double>::infinity()) {
  if (detail::collinear(m[0].p, m[1].p, m[2].p))
    throw DegenerateError("homography_from_3pts_and_F: source points are collinear");
  for (const auto& c : m)
    if (symmetric_epipolar_distance(f.matrix(), c.p, c.q) > residualGate)
      throw DegenerateError("homography_from_3pts_and_F: match violates the epipolar constraint");
  Eigen::Vector3d e = epipole(f);
  Eigen::Matrix3d a = cross_matrix(e) * f.matrix();
  Eigen::Matrix3d mm;
  Eigen::Vector3d b;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d x = homogeneous(m[k].p), xp = homogeneous(m[k].q);
    Eigen::Vector3d xe = xp.cross(e);
    double den = xe.squaredNorm();
    if (!(den > 1e-24))
      throw DegenerateError("homography_from_3pts_and_F: match coincides with the epipole");
    mm.row(k) = x.transpose();
    b(k) = xp.cross(a * x).dot(xe) / den;
  }
  Eigen::FullPivLU<Eigen::Matrix3d> lu(mm);
  if (!lu.isInvertible())
    throw DegenerateError("homography_from_3pts_and_F: singular linear system");
  Eigen::Vector3d v = lu.solve(b);
  return Homography(a - e * v.transpose());
}

/// Sum of squared intensity differences between It at the pixels and It1 at
/// their warped positions (bilinear). Infinite if any projection degenerates.
inline double warp_ssd(const Homography& h, const GrayImage& it, const GrayImage& it1, std::span<const int> pixels) {
  double ssd = 0.0;
  for (int p : pixels) {
    int x = p % it.width(), y = p / it.width();
    auto q = h.map(x, y);
    if (!q)
      return std::numeric_limits<double>::infinity();
    double r = sample_bilinear(it1, q->x, q->y) - it(x, y);
    ssd += r * r;
  }
  return ssd;
}

/// Inverse-compositional Lucas-Kanade over the 8 homography parameters.
/// Never returns a homography with larger SSD than `h0` on the pixel set.
inline Homography lk_refine(const Homography& h0, const GrayImage& it, const GrayImage& it1,
                            std::span<const int> pixels, int maxIters) {
  if (pixels.empty() || maxIters <= 0)
    return h0;
  const int w = it.width(), hgt = it.height();

  // Work in coordinates centred on the pixel set for conditioning.
  double cx = 0.0, cy = 0.0;
  for (int p : pixels) {
    cx += p % w;
    cy += p / w;
  }
  cx /= static_cast<double>(pixels.size());
  cy /= static_cast<double>(pixels.size());
  double scale = 0.0;
  for (int p : pixels)
    scale = std::max({scale, std::abs(p % w - cx), std::abs(p / w - cy)});
  scale = std::max(scale, 1.0);
  Eigen::Matrix3d norm;
  norm << 1.0 / scale, 0.0, -cx / scale, 0.0, 1.0 / scale, -cy / scale, 0.0, 0.0, 1.0;
  Eigen::Matrix3d denorm = norm.inverse();

  const std::size_t n = pixels.size();
  std::vector<Eigen::Matrix<double, 8, 1>> sd(n);
  Eigen::Matrix<double, 8, 8> hess = Eigen::Matrix<double, 8, 8>::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    int x = pixels[k] % w, y = pixels[k] / w;
    double gx = 0.5 * (it(std::min(x + 1, w - 1), y) - it(std::max(x - 1, 0), y)) * scale;
    double gy = 0.5 * (it(x, std::min(y + 1, hgt - 1)) - it(x, std::max(y - 1, 0))) * scale;
    double u = (x - cx) / scale, v = (y - cy) / scale;
    sd[k] << gx * u, gy * u, gx * v, gy * v, gx, gy, -gx * u * u - gy * u * v, -gx * u * v - gy * v * v;
    hess += sd[k] * sd[k].transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 8, 8>> eig(hess);
  double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmax > 1e-12) || eig.eigenvalues().minCoeff() < 1e-9 * lmax)
    return h0;
  Eigen::Matrix<double, 8, 8> hinv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                                     eig.eigenvectors().transpose();

  Homography best = h0;
  double bestSsd = warp_ssd(h0, it, it1, pixels);
  if (!std::isfinite(bestSsd))
    return h0;
  Eigen::Matrix3d warp = norm * h0.matrix() * denorm;
  for (int iter = 0; iter < maxIters; ++iter) {
    Eigen::Matrix<double, 8, 1> g = Eigen::Matrix<double, 8, 1>::Zero();
    Homography cur(denorm * warp * norm);
    for (std::size_t k = 0; k < n; ++k) {
      int x = pixels[k] % w, y = pixels[k] / w;
      auto q = cur.map(x, y);
      if (!q)
        return best;
      g += sd[k] * (sample_bilinear(it1, q->x, q->y) - it(x, y));
    }
    Eigen::Matrix<double, 8, 1> dp = hinv * g;
    Eigen::Matrix3d dw;
    dw << 1.0 + dp(0), dp(2), dp(4), dp(1), 1.0 + dp(3), dp(5), dp(6), dp(7), 1.0;
    Eigen::FullPivLU<Eigen::Matrix3d> lu(dw);
    if (!lu.isInvertible())
      return best;
    warp = warp * lu.inverse();
    std::optional<Homography> cand;
    try {
      cand = Homography(denorm * warp * norm);
    } catch (const DegenerateError&) {
      return best;
    }
    double ssd = warp_ssd(*cand, it, it1, pixels);
    if (!(ssd <= bestSsd))
      return best;
    double decrease = bestSsd - ssd;
    best = *cand;
    bool converged = decrease <= 1e-6 * bestSsd;
    bestSsd = ssd;
    if (converged)
      break;
  }
  return best;
}

} // namespace semflow

#endif // SEMFLOW_GEOMETRY_HPP
