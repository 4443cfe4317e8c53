#ifndef SEMFLOW_SUPERPIXELS_HPP
#define SEMFLOW_SUPERPIXELS_HPP

// SLIC-style superpixels: local k-means over (color, position) from a grid
// of seeds, followed by a connectivity pass.

#include "semflow/core.hpp"
#include "semflow/random.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace semflow {

namespace detail {

struct SlicCenter {
  double r, g, b, x, y;
};

/// Connected components (4-neighbourhood) of the label map, in raster order
/// of first pixel.
inline std::vector<int> connected_components(int w, int h, const std::vector<int>& labels, int& count) {
  std::vector<int> comp(labels.size(), -1);
  std::vector<int> stack;
  count = 0;
  for (int start = 0; start < w * h; ++start) {
    if (comp[start] >= 0)
      continue;
    comp[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      int p = stack.back();
      stack.pop_back();
      int x = p % w, y = p / w;
      const int nb[4] = {x > 0 ? p - 1 : -1, x + 1 < w ? p + 1 : -1, y > 0 ? p - w : -1, y + 1 < h ? p + w : -1};
      for (int q : nb)
        if (q >= 0 && comp[q] < 0 && labels[q] == labels[p]) {
          comp[q] = count;
          stack.push_back(q);
        }
    }
    ++count;
  }
  return comp;
}

} // namespace detail

/// Partitions the image into about targetCount connected superpixels.
/// Colors are compared on a 0..255 scale; `compactness` weighs spatial
/// distance in units of the grid step. The seed jitters the initial grid.
inline SuperpixelSegmentation compute_superpixels(const ColorImage& img, int targetCount, double compactness,
                                                  std::uint64_t seed, int iterations = 10) {
  const int w = img.width(), h = img.height();
  const int n = w * h;
  if (targetCount < 2)
    throw InputError("compute_superpixels: targetCount must be >= 2");
  if (targetCount > n)
    throw InputError("compute_superpixels: targetCount exceeds the pixel count");
  if (!(compactness >= 0.0))
    throw InputError("compute_superpixels: compactness must be >= 0");

  // Grid with about targetCount cells of roughly square shape.
  int gx = std::max(1, static_cast<int>(std::lround(std::sqrt(targetCount * static_cast<double>(w) / h))));
  gx = std::min(gx, w);
  int gy = std::clamp(static_cast<int>(std::lround(static_cast<double>(targetCount) / gx)), 1, h);
  const double stepX = static_cast<double>(w) / gx, stepY = static_cast<double>(h) / gy;
  const double step = std::sqrt(stepX * stepY);

  Rng rng(derive_seed(seed, {0x51cULL}));
  std::vector<detail::SlicCenter> centers;
  for (int j = 0; j < gy; ++j)
    for (int i = 0; i < gx; ++i) {
      double cx = (i + 0.5) * stepX + rng.uniform(-0.25, 0.25) * stepX;
      double cy = (j + 0.5) * stepY + rng.uniform(-0.25, 0.25) * stepY;
      int x = std::clamp(static_cast<int>(std::floor(cx)), 0, w - 1);
      int y = std::clamp(static_cast<int>(std::floor(cy)), 0, h - 1);
      centers.push_back({img.at(x, y, 0) * 255.0, img.at(x, y, 1) * 255.0, img.at(x, y, 2) * 255.0,
                         static_cast<double>(x), static_cast<double>(y)});
    }

  const double spatial = compactness / step;
  std::vector<int> labels(n, 0);
  std::vector<double> dist(n);
  for (int it = 0; it < iterations; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const auto& c = centers[k];
      int x0 = std::max(0, static_cast<int>(c.x - stepX)), x1 = std::min(w - 1, static_cast<int>(c.x + stepX) + 1);
      int y0 = std::max(0, static_cast<int>(c.y - stepY)), y1 = std::min(h - 1, static_cast<int>(c.y + stepY) + 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double dr = img.at(x, y, 0) * 255.0 - c.r, dg = img.at(x, y, 1) * 255.0 - c.g,
                 db = img.at(x, y, 2) * 255.0 - c.b;
          double dx = x - c.x, dy = y - c.y;
          double d = dr * dr + dg * dg + db * db + spatial * spatial * (dx * dx + dy * dy);
          int p = y * w + x;
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = static_cast<int>(k);
          }
        }
    }
    std::vector<detail::SlicCenter> acc(centers.size(), {0, 0, 0, 0, 0});
    std::vector<int> cnt(centers.size(), 0);
    for (int p = 0; p < n; ++p) {
      auto& a = acc[labels[p]];
      int x = p % w, y = p / w;
      a.r += img.at(x, y, 0) * 255.0;
      a.g += img.at(x, y, 1) * 255.0;
      a.b += img.at(x, y, 2) * 255.0;
      a.x += x;
      a.y += y;
      ++cnt[labels[p]];
    }
    for (std::size_t k = 0; k < centers.size(); ++k)
      if (cnt[k] > 0)
        centers[k] = {acc[k].r / cnt[k], acc[k].g / cnt[k], acc[k].b / cnt[k], acc[k].x / cnt[k], acc[k].y / cnt[k]};
  }

  // Connectivity: every component becomes its own region, then fragments
  // under a quarter of the mean size merge into the adjacent region with the
  // closest mean color. Repeat until stable.
  int count = 0;
  std::vector<int> comp = detail::connected_components(w, h, labels, count);
  const double minSize = 0.25 * static_cast<double>(n) / static_cast<double>(centers.size());
  for (;;) {
    std::vector<double> size(count, 0.0);
    std::vector<std::array<double, 3>> color(count, {0.0, 0.0, 0.0});
    for (int p = 0; p < n; ++p) {
      size[comp[p]] += 1.0;
      for (int c = 0; c < 3; ++c)
        color[comp[p]][c] += img.channel(p, c);
    }
    for (int k = 0; k < count; ++k)
      for (int c = 0; c < 3; ++c)
        color[k][c] /= size[k];
    int victim = -1;
    for (int k = 0; k < count && victim < 0; ++k)
      if (size[k] < minSize && count > 1)
        victim = k;
    if (victim < 0)
      break;
    int target = -1;
    double bestD = std::numeric_limits<double>::infinity();
    for (int p = 0; p < n; ++p) {
      if (comp[p] != victim)
        continue;
      int x = p % w, y = p / w;
      const int nb[4] = {x > 0 ? p - 1 : -1, x + 1 < w ? p + 1 : -1, y > 0 ? p - w : -1, y + 1 < h ? p + w : -1};
      for (int q : nb) {
        if (q < 0 || comp[q] == victim)
          continue;
        int o = comp[q];
        double d = 0.0;
        for (int c = 0; c < 3; ++c)
          d += (color[o][c] - color[victim][c]) * (color[o][c] - color[victim][c]);
        if (d < bestD || (d == bestD && o < target)) {
          bestD = d;
          target = o;
        }
      }
    }
    for (int& c : comp)
      if (c == victim)
        c = target;
    comp = detail::connected_components(w, h, comp, count);
  }
  return SuperpixelSegmentation::from_id_map(w, h, std::move(comp));
}

} // namespace semflow

#endif // SEMFLOW_SUPERPIXELS_HPP
