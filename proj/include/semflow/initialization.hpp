#ifndef SEMFLOW_INITIALIZATION_HPP
#define SEMFLOW_INITIALIZATION_HPP

// Inputs the solver needs when no external ones are supplied: an initial
// flow by per-superpixel integer translation search on census signatures,
// and a fundamental matrix from correspondences sampled off that flow.

#include "semflow/core.hpp"
#include "semflow/energy.hpp"
#include "semflow/geometry.hpp"
#include "semflow/parallel.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace semflow {

/// Integer translation per superpixel within +-maxDisp minimizing the mean
/// truncated census distance (out-of-image pixels cost tau_D). Ties go to
/// the smaller |dx|+|dy|, then raster order of (dy, dx).
inline FlowField census_translation_flow(const GrayImage& it, const GrayImage& it1, const SuperpixelSegmentation& seg,
                                         const EnergyConfig& cfg, int threads = 1) {
  const int w = seg.width(), h = seg.height();
  auto c0 = census_transform(it, cfg);
  auto c1 = census_transform(it1, cfg);
  std::vector<std::pair<int, int>> best(seg.count(), {0, 0});
  const int D = cfg.maxDisp;
  parallel_for(static_cast<std::size_t>(seg.count()), threads, [&](std::size_t s) {
    const auto& members = seg.members(static_cast<int>(s));
    double bestCost = std::numeric_limits<double>::infinity();
    int bestL1 = 0;
    for (int dy = -D; dy <= D; ++dy)
      for (int dx = -D; dx <= D; ++dx) {
        double cost = 0.0;
        for (int p : members) {
          int x = p % w + dx, y = p / w + dy;
          if (x < 0 || y < 0 || x >= w || y >= h)
            cost += cfg.tauD;
          else
            cost += std::min(static_cast<double>(differing_states(c0[p], c1[y * w + x])), cfg.tauD);
          if (cost > bestCost)
            break;
        }
        int l1 = std::abs(dx) + std::abs(dy);
        if (cost < bestCost || (cost == bestCost && l1 < bestL1)) {
          bestCost = cost;
          bestL1 = l1;
          best[s] = {dx, dy};
        }
      }
  });
  FlowField f(w, h);
  for (int p = 0; p < w * h; ++p) {
    f.u[p] = best[seg.id(p)].first;
    f.v[p] = best[seg.id(p)].second;
  }
  return f;
}

/// Up to `perSuperpixel` correspondences from each superpixel whose
/// representative label is static: the pixels with the lowest census cost
/// at their flow target (ties by pixel index).
inline std::vector<Correspondence> sample_static_correspondences(const GrayImage& it, const GrayImage& it1,
                                                                 const SuperpixelSegmentation& seg,
                                                                 const FlowField& flow, const LabelProbMap& lPrev,
                                                                 const SemanticClassTable& table,
                                                                 const EnergyConfig& cfg, int perSuperpixel = 8) {
  const int w = seg.width();
  std::vector<Correspondence> out;
  for (int s = 0; s < seg.count(); ++s) {
    const auto& members = seg.members(s);
    if (!table.is_static(representative_label(members, lPrev)))
      continue;
    std::vector<std::pair<double, int>> scored;
    for (int p : members) {
      if (!flow.valid[p])
        continue;
      Point2 src{static_cast<double>(p % w), static_cast<double>(p / w)};
      Point2 dst{src.x + flow.u[p], src.y + flow.v[p]};
      if (!it1.contains(dst.x, dst.y))
        continue;
      TernarySignature a = ternary_signature(it, src, cfg.censusRadius, cfg.censusEpsilon);
      scored.push_back({pixel_data_cost(a, it1, dst, cfg), p});
    }
    std::sort(scored.begin(), scored.end());
    for (int k = 0; k < std::min<int>(perSuperpixel, static_cast<int>(scored.size())); ++k) {
      int p = scored[k].second;
      Point2 src{static_cast<double>(p % w), static_cast<double>(p / w)};
      out.push_back({src, {src.x + flow.u[p], src.y + flow.v[p]}});
    }
  }
  return out;
}

} // namespace semflow

#endif // SEMFLOW_INITIALIZATION_HPP
