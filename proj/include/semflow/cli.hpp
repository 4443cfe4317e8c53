#ifndef SEMFLOW_CLI_HPP
#define SEMFLOW_CLI_HPP

// Command-line front end: estimate, evaluate, visualize, synth.
// Exit codes: 0 success, 1 usage, 2 input error, 3 numerical failure.

#include "semflow/core.hpp"
#include "semflow/inference.hpp"
#include "semflow/initialization.hpp"
#include "semflow/io.hpp"
#include "semflow/metrics.hpp"
#include "semflow/superpixels.hpp"
#include "semflow/testkit.hpp"
#include "semflow/visualize.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace semflow {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitInput = 2, kExitNumerical = 3 };

struct EstimateArgs {
  std::string frame0, frame1, labelsPrev, labelsEvidence;
  std::string initFlow, matches, superpixels, config;
  std::string outFlow, outLabels, outOcclusion, outTrace, outSuperpixels;
  std::string staticClasses = "0";
  int superpixelCount = 0;
  double compactness = 10.0;
  int threads = 1;
  bool verbose = false;
};

/// Class table with the listed ids static and every other id dynamic.
inline SemanticClassTable parse_class_table(const std::string& staticList, int classes) {
  std::vector<bool> isStatic(classes, false);
  std::stringstream ss(staticList);
  for (std::string tok; std::getline(ss, tok, ',');) {
    tok = detail::trim(tok);
    if (tok.empty())
      continue;
    int id = -1;
    if (!detail::parse_number(tok, id) || id < 0 || id >= classes)
      throw InputError("--static-classes: '" + tok + "' is not a class id in [0," + std::to_string(classes) + ")");
    isStatic[id] = true;
  }
  SemanticClassTable t;
  for (int c = 0; c < classes; ++c)
    t.classes.push_back({c, "class" + std::to_string(c), isStatic[c]});
  return t;
}

inline int run_estimate(const EstimateArgs& a, std::ostream& log) {
  EnergyConfig cfg = a.config.empty() ? EnergyConfig{} : read_config(a.config);
  ColorImage c0 = read_color_image(a.frame0);
  ColorImage c1 = read_color_image(a.frame1);
  if (c0.width() != c1.width() || c0.height() != c1.height())
    throw InputError("frames differ in size");
  LabelProbMap lPrev = read_labelprob(a.labelsPrev);
  LabelProbMap lHat = read_labelprob(a.labelsEvidence);
  SemanticClassTable table = parse_class_table(a.staticClasses, lPrev.classes());
  ValidationReport rep = validate_config(cfg, table);
  if (!rep.ok())
    throw InputError("invalid configuration: " + rep.summary());

  SuperpixelSegmentation seg;
  if (!a.superpixels.empty()) {
    seg = read_superpixels(a.superpixels);
  } else {
    int n = a.superpixelCount > 0 ? a.superpixelCount
                                  : std::max(2, static_cast<int>(c0.pixel_count() / 256));
    seg = compute_superpixels(c0, n, a.compactness, cfg.rngSeed);
  }
  if (seg.width() != c0.width() || seg.height() != c0.height())
    throw InputError("superpixel map dimensions do not match the frames");

  GrayImage g0 = c0.to_gray(), g1 = c1.to_gray();
  FlowField init = a.initFlow.empty() ? census_translation_flow(g0, g1, seg, cfg, a.threads) : read_flow_kitti(a.initFlow);
  if (init.width != seg.width() || init.height != seg.height())
    throw InputError("initial flow dimensions do not match the frames");

  std::vector<Correspondence> matches =
      a.matches.empty() ? sample_static_correspondences(g0, g1, seg, init, lPrev, table, cfg) : read_matches(a.matches);
  if (matches.size() < 8)
    throw NumericalError("only " + std::to_string(matches.size()) +
                         " correspondences available for the fundamental matrix; supply --matches");
  FundamentalEstimate fe =
      robust_fundamental(matches, cfg.ransacIters, cfg.ransacThreshold, derive_seed(cfg.rngSeed, {0xf00dULL}));

  Problem problem{g0, g1, seg, lPrev, lHat, fe.f, table};
  SolverOptions opts;
  opts.threads = a.threads;
  if (a.verbose)
    opts.progress = [&](int m, const EnergyBreakdown& e) { log << format_trace_line(m, e) << "\n"; };
  EstimationResult r = run_joint_estimation(problem, init, cfg, opts);

  if (!a.outFlow.empty())
    write_flow_kitti(r.flow, a.outFlow);
  if (!a.outLabels.empty())
    write_labelprob(r.labels, a.outLabels);
  if (!a.outOcclusion.empty())
    write_mask(a.outOcclusion, seg.width(), seg.height(), r.occlusion.mask);
  if (!a.outTrace.empty())
    write_trace(r.trace, a.outTrace);
  if (!a.outSuperpixels.empty())
    write_superpixels(a.outSuperpixels, seg);
  return kExitOk;
}

struct EvaluateArgs {
  std::string flow, gtFlow, fgMask, occlusion, labels, gtLabels, out;
};

inline int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  bool doFlow = !a.flow.empty() || !a.gtFlow.empty();
  bool doLabels = !a.labels.empty() || !a.gtLabels.empty();
  if (!doFlow && !doLabels)
    throw CLI::ValidationError("evaluate", "give --flow/--gt-flow and/or --labels/--gt-labels");
  if (doFlow && (a.flow.empty() || a.gtFlow.empty()))
    throw CLI::ValidationError("evaluate", "--flow and --gt-flow go together");
  if (doLabels && (a.labels.empty() || a.gtLabels.empty()))
    throw CLI::ValidationError("evaluate", "--labels and --gt-labels go together");
  MetricsReport report;
  if (doFlow) {
    FlowField est = read_flow_kitti(a.flow), gt = read_flow_kitti(a.gtFlow);
    std::vector<std::uint8_t> fg(gt.pixel_count(), 0);
    int w = 0, h = 0;
    if (!a.fgMask.empty()) {
      fg = read_mask(a.fgMask, w, h);
      if (w != gt.width || h != gt.height)
        throw InputError("foreground mask dimensions do not match the flow");
    }
    std::optional<std::vector<std::uint8_t>> occ;
    if (!a.occlusion.empty()) {
      occ = read_mask(a.occlusion, w, h);
      if (w != gt.width || h != gt.height)
        throw InputError("occlusion mask dimensions do not match the flow");
    }
    report = evaluate_flow(est, gt, fg, occ);
  }
  if (doLabels) {
    LabelProbMap est = read_labelprob(a.labels);
    int w = 0, h = 0;
    auto gt = read_index_png(a.gtLabels, w, h);
    if (w != est.width() || h != est.height())
      throw InputError("ground-truth label dimensions do not match the label map");
    MetricsReport lr = evaluate_iou(est, gt);
    report.iouPerClass = lr.iouPerClass;
    report.meanIou = lr.meanIou;
  }
  std::string text = format_report(report, doFlow, doLabels);
  if (a.out.empty())
    out << text;
  else
    detail::spit(a.out, text);
  return kExitOk;
}

struct VisualizeArgs {
  std::string flow, labels, occlusion, frame;
  std::string outFlow, outLabels, outOcclusion;
  double maxMag = 0.0;
};

inline int run_visualize(const VisualizeArgs& a) {
  bool any = false;
  if (!a.flow.empty()) {
    if (a.outFlow.empty())
      throw CLI::ValidationError("visualize", "--flow needs --out-flow");
    FlowField f = read_flow_kitti(a.flow);
    write_color_image(a.outFlow, flow_to_color(f, a.maxMag > 0.0 ? std::optional<double>(a.maxMag) : std::nullopt));
    any = true;
  }
  if (!a.labels.empty()) {
    if (a.outLabels.empty())
      throw CLI::ValidationError("visualize", "--labels needs --out-labels");
    write_color_image(a.outLabels, labels_to_color(read_labelprob(a.labels)));
    any = true;
  }
  if (!a.occlusion.empty()) {
    if (a.outOcclusion.empty() || a.frame.empty())
      throw CLI::ValidationError("visualize", "--occlusion needs --frame and --out-occlusion");
    int w = 0, h = 0;
    auto mask = read_mask(a.occlusion, w, h);
    GrayImage frame = read_color_image(a.frame).to_gray();
    write_color_image(a.outOcclusion, occlusion_overlay(frame, mask));
    any = true;
  }
  if (!any)
    throw CLI::ValidationError("visualize", "nothing to render: give --flow, --labels or --occlusion");
  return kExitOk;
}

struct SynthArgs {
  std::string kind = "two-plane";
  std::string outDir;
  std::uint64_t seed = 1;
  int size = 64;
  double labelNoise = 0.0;
};

inline int run_synth(const SynthArgs& a, std::ostream& out) {
  testkit::SceneTemplate kind;
  if (a.kind == "two-plane")
    kind = testkit::SceneTemplate::TwoPlane;
  else if (a.kind == "static-only")
    kind = testkit::SceneTemplate::StaticOnly;
  else if (a.kind == "two-objects")
    kind = testkit::SceneTemplate::TwoObjects;
  else
    throw CLI::ValidationError("synth", "unknown template '" + a.kind + "'");
  if (a.size < 32)
    throw CLI::ValidationError("synth", "--size must be >= 32");
  auto sc = testkit::make_template_scene(kind, a.seed, a.size);
  namespace fs = std::filesystem;
  fs::create_directories(a.outDir);
  auto at = [&](const char* name) { return (fs::path(a.outDir) / name).string(); };
  const int W = sc.width(), H = sc.height(), L = sc.spec.table.size();
  write_color_image(at("frame0.png"), sc.color0);
  write_color_image(at("frame1.png"), sc.color1);
  write_labelprob(testkit::one_hot_labels(sc, sc.gtLabels0), at("labels_prev.lpm"));
  LabelProbMap evidence = a.labelNoise > 0.0
                              ? testkit::noisy_labels(sc.gtLabels1, W, H, L, a.labelNoise, 0.7, a.seed)
                              : testkit::one_hot_labels(sc, sc.gtLabels1);
  write_labelprob(evidence, at("labels_evidence.lpm"));
  write_flow_kitti(sc.gtFlow, at("gt_flow.png"));
  write_mask(at("gt_occlusion.png"), W, H, sc.gtOcclusion);
  write_mask(at("fg_mask.png"), W, H, sc.foreground_mask());
  write_index_png(at("gt_labels0.png"), W, H, sc.gtLabels0, 8);
  write_index_png(at("gt_labels1.png"), W, H, sc.gtLabels1, 8);
  write_matches(testkit::static_matches(sc, 200, a.seed), at("matches.txt"));

  std::ostringstream m;
  m << std::setprecision(17);
  m << "template = " << a.kind << "\nseed = " << a.seed << "\nwidth = " << W << "\nheight = " << H
    << "\nclasses = " << L << "\nlabel_noise = " << a.labelNoise << "\n";
  for (std::size_t k = 0; k < sc.gtHomographies.size(); ++k) {
    const auto& r = sc.region(static_cast<int>(k));
    Eigen::Matrix3d h = sc.gtHomographies[k].matrix();
    m << "region" << k << ".rect = " << r.x0 << ' ' << r.y0 << ' ' << r.x1 << ' ' << r.y1 << "\n";
    m << "region" << k << ".class = " << r.classId << "\nregion" << k << ".static = " << (r.isStatic ? 1 : 0)
      << "\nregion" << k << ".homography =";
    for (int i = 0; i < 9; ++i)
      m << ' ' << h(i / 3, i % 3);
    m << "\n";
  }
  m << "fundamental =";
  for (int i = 0; i < 9; ++i)
    m << ' ' << sc.fundamental.matrix()(i / 3, i % 3);
  m << "\n";
  detail::spit(at("manifest.txt"), m.str());
  out << "wrote scene to " << a.outDir << "\n";
  return kExitOk;
}

inline int cli_main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Joint piecewise-homography optical flow and semantic label estimation", "semflow"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "estimate flow, labels and occlusion for a frame pair");
  e->add_option("--frame0", est.frame0, "frame t (PNG)")->required();
  e->add_option("--frame1", est.frame1, "frame t+1 (PNG)")->required();
  e->add_option("--labels-prev", est.labelsPrev, "label probabilities of frame t (LPM1)")->required();
  e->add_option("--labels-evidence", est.labelsEvidence, "label evidence for frame t+1 (LPM1)")->required();
  e->add_option("--init-flow", est.initFlow, "initial flow (KITTI PNG)");
  e->add_option("--matches", est.matches, "correspondences for the fundamental matrix");
  e->add_option("--superpixels", est.superpixels, "superpixel id map (16-bit PNG)");
  e->add_option("--config", est.config, "energy configuration (key = value)");
  e->add_option("--static-classes", est.staticClasses, "comma-separated static class ids")->capture_default_str();
  e->add_option("--superpixel-count", est.superpixelCount, "target superpixel count (default: pixels/256)");
  e->add_option("--compactness", est.compactness, "superpixel compactness")->capture_default_str();
  e->add_option("--threads", est.threads, "worker threads")->capture_default_str()->check(CLI::Range(1, 256));
  e->add_option("--out-flow", est.outFlow, "estimated flow (KITTI PNG)");
  e->add_option("--out-labels", est.outLabels, "estimated labels of frame t+1 (LPM1)");
  e->add_option("--out-occlusion", est.outOcclusion, "occlusion mask (PNG)");
  e->add_option("--out-trace", est.outTrace, "energy per outer iteration");
  e->add_option("--out-superpixels", est.outSuperpixels, "superpixel id map used (16-bit PNG)");
  e->add_flag("-v,--verbose", est.verbose, "print the energy trace to stderr");

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "score flow and/or labels against ground truth");
  v->add_option("--flow", ev.flow, "estimated flow (KITTI PNG)");
  v->add_option("--gt-flow", ev.gtFlow, "ground-truth flow (KITTI PNG)");
  v->add_option("--fg-mask", ev.fgMask, "foreground pixels (PNG, nonzero = foreground)");
  v->add_option("--occlusion", ev.occlusion, "ground-truth occlusion (PNG) for the non-occluded scores");
  v->add_option("--labels", ev.labels, "estimated labels (LPM1)");
  v->add_option("--gt-labels", ev.gtLabels, "ground-truth class ids (PNG)");
  v->add_option("--out", ev.out, "report file (default: stdout)");

  VisualizeArgs vis;
  auto* z = app.add_subcommand("visualize", "render flow, labels or occlusion as PNG");
  z->add_option("--flow", vis.flow, "flow (KITTI PNG)");
  z->add_option("--labels", vis.labels, "labels (LPM1)");
  z->add_option("--occlusion", vis.occlusion, "occlusion mask (PNG)");
  z->add_option("--frame", vis.frame, "frame to overlay the occlusion on");
  z->add_option("--max-mag", vis.maxMag, "flow magnitude of full saturation (default: 99th percentile)");
  z->add_option("--out-flow", vis.outFlow, "flow color image");
  z->add_option("--out-labels", vis.outLabels, "label color image");
  z->add_option("--out-occlusion", vis.outOcclusion, "occlusion overlay image");

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "write a synthetic scene with ground truth");
  s->add_option("--template", sy.kind, "two-plane | static-only | two-objects")->capture_default_str();
  s->add_option("--seed", sy.seed, "scene seed")->capture_default_str();
  s->add_option("--size", sy.size, "image side in px")->capture_default_str();
  s->add_option("--label-noise", sy.labelNoise, "fraction of evidence pixels peaked on a wrong class")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  s->add_option("--out-dir", sy.outDir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    if (e->parsed())
      return run_estimate(est, err);
    if (v->parsed())
      return run_evaluate(ev, out);
    if (z->parsed())
      return run_visualize(vis);
    if (s->parsed())
      return run_synth(sy, out);
  } catch (const CLI::Error& ex) {
    err << "usage error: " << ex.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const InputError& ex) {
    err << "input error: " << ex.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& ex) {
    err << "numerical failure: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const DegenerateError& ex) {
    err << "numerical failure: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "input error: " << ex.what() << "\n";
    return kExitInput;
  }
  return kExitUsage;
}

} // namespace semflow

#endif // SEMFLOW_CLI_HPP
