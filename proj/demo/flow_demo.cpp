// Builds a synthetic two-plane scene, runs the joint estimator from a census
// block-matching initialization and prints the error statistics.

#include "semflow/semflow.hpp"
#include "semflow/testkit.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  using namespace semflow;
  std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;

  auto scene = testkit::make_template_scene(testkit::SceneTemplate::TwoPlane, seed);
  auto seg = compute_superpixels(scene.color0, 48, 10.0, seed);
  auto lPrev = testkit::one_hot_labels(scene, scene.gtLabels0);
  auto lHat = testkit::noisy_labels(scene.gtLabels1, scene.width(), scene.height(), 2, 0.2, 0.7, seed);
  Problem problem = testkit::make_problem(scene, seg, lPrev, lHat);

  EnergyConfig cfg;
  cfg.maxDisp = 10;
  FlowField init = census_translation_flow(scene.frame0, scene.frame1, seg, cfg);

  SolverOptions opts;
  opts.progress = [](int m, const EnergyBreakdown& e) { std::cout << format_trace_line(m, e) << "\n"; };
  EstimationResult r = run_joint_estimation(problem, init, cfg, opts);

  MetricsReport flow = evaluate_flow(r.flow, scene.gtFlow, scene.foreground_mask(), scene.gtOcclusion);
  MetricsReport iou = evaluate_iou(r.labels, scene.gtLabels1);
  MaskScores occ = mask_f1(r.occlusion.mask, scene.gtOcclusion);
  std::cout << format_report(flow, true, false) << "mean_iou = " << iou.meanIou << "\nocclusion_f1 = " << occ.f1
            << "\n";
}
