#ifndef SEMFLOW_METRICS_HPP
#define SEMFLOW_METRICS_HPP

// Flow outlier rates and endpoint error, semantic IoU, and mask F1.

#include "semflow/core.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace semflow {

struct FlowScores {
  double flBg = 0.0;   // percent
  double flFg = 0.0;
  double flAll = 0.0;
  double epeAll = 0.0; // px
  std::size_t pixels = 0;
};

struct MetricsReport {
  // Flow, over all valid ground-truth pixels.
  double flBg = 0.0;
  double flFg = 0.0;
  double flAll = 0.0;
  double epeAll = 0.0;
  // Same restricted to non-occluded pixels, when an occlusion mask was given.
  std::optional<FlowScores> nonOccluded;
  // Labels.
  std::vector<double> iouPerClass;  // NaN for classes absent from the ground truth
  double meanIou = 0.0;
};

/// KITTI outlier rule: EPE > 3 px and EPE > 5% of the ground-truth magnitude.
inline bool is_flow_outlier(double epe, double gtMagnitude) { return epe > 3.0 && epe > 0.05 * gtMagnitude; }

namespace detail {

inline FlowScores score_flow(const FlowField& est, const FlowField& gt, const std::vector<std::uint8_t>& fg,
                             const std::vector<std::uint8_t>* keep) {
  std::size_t nAll = 0, nFg = 0, nBg = 0, oAll = 0, oFg = 0, oBg = 0;
  double epe = 0.0;
  for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
    if (!gt.valid[p] || (keep && !(*keep)[p]))
      continue;
    double du = est.valid[p] ? est.u[p] - gt.u[p] : -gt.u[p];
    double dv = est.valid[p] ? est.v[p] - gt.v[p] : -gt.v[p];
    double e = std::hypot(du, dv);
    bool out = is_flow_outlier(e, std::hypot(gt.u[p], gt.v[p]));
    ++nAll;
    oAll += out;
    epe += e;
    if (fg[p]) {
      ++nFg;
      oFg += out;
    } else {
      ++nBg;
      oBg += out;
    }
  }
  FlowScores s;
  s.pixels = nAll;
  auto pct = [](std::size_t a, std::size_t b) { return b ? 100.0 * static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  s.flAll = pct(oAll, nAll);
  s.flFg = pct(oFg, nFg);
  s.flBg = pct(oBg, nBg);
  s.epeAll = nAll ? epe / static_cast<double>(nAll) : 0.0;
  return s;
}

} // namespace detail

/// Invalid estimates count as zero flow. Fl-fg over fgMask pixels, Fl-bg over
/// the rest; an empty group scores 0.
inline MetricsReport evaluate_flow(const FlowField& est, const FlowField& gt, const std::vector<std::uint8_t>& fgMask,
                                   const std::optional<std::vector<std::uint8_t>>& occMask = std::nullopt) {
  if (est.width != gt.width || est.height != gt.height || fgMask.size() != gt.pixel_count() ||
      (occMask && occMask->size() != gt.pixel_count()))
    throw InputError("evaluate_flow: dimensions do not match");
  FlowScores all = detail::score_flow(est, gt, fgMask, nullptr);
  if (all.pixels == 0)
    throw InputError("evaluate_flow: ground truth has no valid pixels");
  MetricsReport r;
  r.flAll = all.flAll;
  r.flFg = all.flFg;
  r.flBg = all.flBg;
  r.epeAll = all.epeAll;
  if (occMask) {
    std::vector<std::uint8_t> keep(occMask->size());
    for (std::size_t p = 0; p < keep.size(); ++p)
      keep[p] = !(*occMask)[p];
    r.nonOccluded = detail::score_flow(est, gt, fgMask, &keep);
  }
  return r;
}

/// Per-class IoU of the argmax labels; the mean runs over classes present in
/// the ground truth.
inline MetricsReport evaluate_iou(const LabelProbMap& est, const std::vector<int>& gtLabels) {
  if (gtLabels.size() != est.pixel_count())
    throw InputError("evaluate_iou: dimensions do not match");
  const int L = est.classes();
  std::vector<std::size_t> tp(L, 0), fp(L, 0), fn(L, 0), present(L, 0);
  for (std::size_t p = 0; p < gtLabels.size(); ++p) {
    int g = gtLabels[p];
    if (g < 0 || g >= L)
      throw InputError("evaluate_iou: ground-truth class " + std::to_string(g) + " outside the label map's classes");
    int e = est.argmax(p);
    ++present[g];
    if (e == g) {
      ++tp[g];
    } else {
      ++fp[e];
      ++fn[g];
    }
  }
  MetricsReport r;
  r.iouPerClass.assign(L, std::nan(""));
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < L; ++c) {
    if (!present[c])
      continue;
    r.iouPerClass[c] = static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c] + fn[c]);
    sum += r.iouPerClass[c];
    ++n;
  }
  r.meanIou = n ? sum / n : 0.0;
  return r;
}

struct MaskScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Precision/recall/F1 of a binary mask; both empty scores 1.
inline MaskScores mask_f1(const std::vector<std::uint8_t>& est, const std::vector<std::uint8_t>& gt) {
  if (est.size() != gt.size())
    throw InputError("mask_f1: sizes do not match");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    tp += est[p] && gt[p];
    fp += est[p] && !gt[p];
    fn += !est[p] && gt[p];
  }
  MaskScores s;
  if (tp + fp + fn == 0)
    return {1.0, 1.0, 1.0};
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

inline std::string format_report(const MetricsReport& r, bool flow, bool labels) {
  std::ostringstream os;
  if (flow) {
    os << "fl_bg = " << r.flBg << "\nfl_fg = " << r.flFg << "\nfl_all = " << r.flAll << "\nepe_all = " << r.epeAll
       << "\n";
    if (r.nonOccluded)
      os << "noc_fl_bg = " << r.nonOccluded->flBg << "\nnoc_fl_fg = " << r.nonOccluded->flFg
         << "\nnoc_fl_all = " << r.nonOccluded->flAll << "\nnoc_epe_all = " << r.nonOccluded->epeAll << "\n";
  }
  if (labels) {
    for (std::size_t c = 0; c < r.iouPerClass.size(); ++c)
      if (!std::isnan(r.iouPerClass[c]))
        os << "iou_class_" << c << " = " << r.iouPerClass[c] << "\n";
    os << "mean_iou = " << r.meanIou << "\n";
  }
  return os.str();
}

} // namespace semflow

#endif // SEMFLOW_METRICS_HPP
