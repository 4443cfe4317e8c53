#ifndef SEMFLOW_VISUALIZE_HPP
#define SEMFLOW_VISUALIZE_HPP

#include "semflow/core.hpp"
#include "semflow/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace semflow {

/// RGB in [0,1] of hue h (degrees), saturation s, value 1.
inline std::array<double, 3> hsv_to_rgb(double h, double s) {
  h = std::fmod(h, 360.0);
  if (h < 0.0)
    h += 360.0;
  double c = s;
  double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
  double m = 1.0 - c;
  std::array<double, 3> rgb;
  switch (static_cast<int>(h / 60.0)) {
  case 0: rgb = {c, x, 0}; break;
  case 1: rgb = {x, c, 0}; break;
  case 2: rgb = {0, c, x}; break;
  case 3: rgb = {0, x, c}; break;
  case 4: rgb = {x, 0, c}; break;
  default: rgb = {c, 0, x}; break;
  }
  for (double& v : rgb)
    v = std::clamp(v + m, 0.0, 1.0);
  return rgb;
}

/// 99th percentile of the flow magnitude over valid pixels (0 if none).
inline double flow_magnitude_percentile(const FlowField& flow, double q = 0.99) {
  std::vector<double> mags;
  for (std::size_t p = 0; p < flow.pixel_count(); ++p)
    if (flow.valid[p])
      mags.push_back(std::hypot(flow.u[p], flow.v[p]));
  if (mags.empty())
    return 0.0;
  auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(mags.size() - 1)));
  std::nth_element(mags.begin(), mags.begin() + k, mags.end());
  return mags[k];
}

/// Color wheel: hue = direction atan2(v, u) in degrees, saturation =
/// min(1, magnitude / maxMag), full value. Invalid pixels are black; zero
/// flow is white.
inline ColorImage flow_to_color(const FlowField& flow, std::optional<double> maxMag = std::nullopt) {
  double mm = maxMag ? *maxMag : flow_magnitude_percentile(flow);
  std::vector<double> rgb(flow.pixel_count() * 3, 0.0);
  for (std::size_t p = 0; p < flow.pixel_count(); ++p) {
    if (!flow.valid[p])
      continue;
    double mag = std::hypot(flow.u[p], flow.v[p]);
    double s = mag == 0.0 ? 0.0 : mm > 0.0 ? std::min(1.0, mag / mm) : 1.0;
    double hue = std::atan2(flow.v[p], flow.u[p]) * 180.0 / std::numbers::pi;
    auto c = hsv_to_rgb(hue, s);
    for (int k = 0; k < 3; ++k)
      rgb[3 * p + k] = c[k];
  }
  return ColorImage(flow.width, flow.height, std::move(rgb));
}

/// Distinct color per class id.
inline std::array<double, 3> class_color(int c) {
  static const std::array<std::array<double, 3>, 8> base = {{{0.50, 0.25, 0.50},
                                                              {0.86, 0.08, 0.24},
                                                              {0.27, 0.51, 0.71},
                                                              {0.42, 0.56, 0.14},
                                                              {0.98, 0.67, 0.12},
                                                              {0.00, 0.00, 0.56},
                                                              {0.40, 0.40, 0.61},
                                                              {0.86, 0.86, 0.00}}};
  if (c >= 0 && c < static_cast<int>(base.size()))
    return base[c];
  std::uint64_t h = mix64(static_cast<std::uint64_t>(c));
  return {(h & 0xff) / 255.0, ((h >> 8) & 0xff) / 255.0, ((h >> 16) & 0xff) / 255.0};
}

inline ColorImage labels_to_color(const LabelProbMap& labels) {
  std::vector<double> rgb(labels.pixel_count() * 3);
  for (std::size_t p = 0; p < labels.pixel_count(); ++p) {
    auto c = class_color(labels.argmax(p));
    for (int k = 0; k < 3; ++k)
      rgb[3 * p + k] = c[k];
  }
  return ColorImage(labels.width(), labels.height(), std::move(rgb));
}

/// Frame tinted red where the mask is set.
inline ColorImage occlusion_overlay(const GrayImage& frame, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != frame.size())
    throw InputError("occlusion_overlay: mask size does not match the frame");
  std::vector<double> rgb(frame.size() * 3);
  for (std::size_t p = 0; p < frame.size(); ++p) {
    double g = 0.6 * frame[p];
    rgb[3 * p] = mask[p] ? 1.0 : g;
    rgb[3 * p + 1] = mask[p] ? 0.0 : g;
    rgb[3 * p + 2] = mask[p] ? 0.0 : g;
  }
  return ColorImage(frame.width(), frame.height(), std::move(rgb));
}

} // namespace semflow

#endif // SEMFLOW_VISUALIZE_HPP
