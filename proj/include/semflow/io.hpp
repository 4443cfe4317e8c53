#ifndef SEMFLOW_IO_HPP
#define SEMFLOW_IO_HPP

// File formats: PNG images (libpng), KITTI 16-bit flow PNGs, LPM1 label
// probability maps, superpixel id maps, match lists, config text and
// energy traces.

#include "semflow/core.hpp"
#include "semflow/energy.hpp"
#include "semflow/geometry.hpp"

#include <png.h>

#include <bit>
#include <charconv>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace semflow {

// ---------------------------------------------------------------------------
// Raw PNG access

/// Decoded PNG: samples are row-major, channel-interleaved, at the file's bit
/// depth (8 or 16). Palette and sub-byte grayscale are expanded to 8 bit.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bitDepth = 8;
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<char*>(png_get_error_ptr(png));
  if (buf)
    std::snprintf(buf, 256, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

// Both helpers keep every object with a destructor outside the setjmp scope.
inline bool png_decode(std::FILE* fp, PngImage& out, char* err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, png_error_handler, png_warning_handler);
  if (!png)
    return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_png(png, info, PNG_TRANSFORM_EXPAND, nullptr);
  png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info), ch = png_get_channels(png, info);
  png_bytepp rows = png_get_rows(png, info);
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.bitDepth = depth;
  out.channels = ch;
  out.samples.resize(static_cast<std::size_t>(w) * h * ch);
  std::size_t k = 0;
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 i = 0; i < w * static_cast<png_uint_32>(ch); ++i)
      out.samples[k++] = depth == 16 ? static_cast<std::uint16_t>((rows[y][2 * i] << 8) | rows[y][2 * i + 1])
                                     : rows[y][i];
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool png_encode(std::FILE* fp, const PngImage& img, std::vector<png_byte>& rowBuf, char* err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, png_error_handler, png_warning_handler);
  if (!png)
    return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  static constexpr int kColor[] = {0, PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                   PNG_COLOR_TYPE_RGB_ALPHA};
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, img.bitDepth, kColor[img.channels], PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t perRow = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y) {
    const std::uint16_t* src = img.samples.data() + y * perRow;
    for (std::size_t i = 0; i < perRow; ++i) {
      if (img.bitDepth == 16) {
        rowBuf[2 * i] = static_cast<png_byte>(src[i] >> 8);
        rowBuf[2 * i + 1] = static_cast<png_byte>(src[i] & 0xff);
      } else {
        rowBuf[i] = static_cast<png_byte>(src[i]);
      }
    }
    png_write_row(png, rowBuf.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

} // namespace detail

inline PngImage read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp)
    throw InputError("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(path + ": not a PNG file");
  std::rewind(fp.get());
  PngImage img;
  char err[256] = "libpng failure";
  if (!detail::png_decode(fp.get(), img, err))
    throw FormatError(path + ": " + err);
  return img;
}

inline void write_png(const std::string& path, const PngImage& img) {
  if (img.width <= 0 || img.height <= 0 || img.channels < 1 || img.channels > 4 ||
      (img.bitDepth != 8 && img.bitDepth != 16) ||
      img.samples.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw InputError("write_png: inconsistent image description");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp)
    throw InputError("cannot write " + path);
  std::vector<png_byte> rowBuf(static_cast<std::size_t>(img.width) * img.channels * (img.bitDepth / 8));
  char err[256] = "libpng failure";
  if (!detail::png_encode(fp.get(), img, rowBuf, err))
    throw Error(path + ": " + err);
}

// ---------------------------------------------------------------------------
// Images

/// Any 8/16-bit gray, gray+alpha, RGB or RGBA PNG; alpha is dropped.
inline ColorImage read_color_image(const std::string& path) {
  PngImage png = read_png(path);
  double maxv = png.bitDepth == 16 ? 65535.0 : 255.0;
  std::vector<double> rgb(static_cast<std::size_t>(png.width) * png.height * 3);
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * png.width + x;
      for (int c = 0; c < 3; ++c) {
        int src = png.channels >= 3 ? c : 0;
        rgb[3 * p + c] = png.at(x, y, src) / maxv;
      }
    }
  return ColorImage(png.width, png.height, std::move(rgb));
}

inline void write_color_image(const std::string& path, const ColorImage& img) {
  PngImage png{img.width(), img.height(), 3, 8, {}};
  png.samples.resize(img.data().size());
  for (std::size_t k = 0; k < img.data().size(); ++k)
    png.samples[k] = static_cast<std::uint16_t>(std::lround(img.data()[k] * 255.0));
  write_png(path, png);
}

inline void write_gray_image(const std::string& path, const GrayImage& img) {
  PngImage png{img.width(), img.height(), 1, 8, {}};
  png.samples.resize(img.size());
  for (std::size_t k = 0; k < img.size(); ++k)
    png.samples[k] = static_cast<std::uint16_t>(std::lround(img[k] * 255.0));
  write_png(path, png);
}

/// Single-channel 8/16-bit PNG of small non-negative integers (class ids,
/// superpixel ids, mask bits).
inline std::vector<int> read_index_png(const std::string& path, int& width, int& height) {
  PngImage png = read_png(path);
  if (png.channels != 1)
    throw FormatError(path + ": expected a single-channel PNG, got " + std::to_string(png.channels) + " channels");
  width = png.width;
  height = png.height;
  return {png.samples.begin(), png.samples.end()};
}

inline void write_index_png(const std::string& path, int width, int height, const std::vector<int>& values,
                            int bitDepth) {
  PngImage png{width, height, 1, bitDepth, {}};
  png.samples.reserve(values.size());
  int maxv = bitDepth == 16 ? 65535 : 255;
  for (int v : values) {
    if (v < 0 || v > maxv)
      throw InputError("write_index_png: value " + std::to_string(v) + " does not fit the bit depth");
    png.samples.push_back(static_cast<std::uint16_t>(v));
  }
  write_png(path, png);
}

/// Superpixel id map: 16-bit single-channel PNG.
inline SuperpixelSegmentation read_superpixels(const std::string& path) {
  int w = 0, h = 0;
  auto ids = read_index_png(path, w, h);
  return SuperpixelSegmentation::from_id_map(w, h, std::move(ids));
}

inline void write_superpixels(const std::string& path, const SuperpixelSegmentation& seg) {
  write_index_png(path, seg.width(), seg.height(), seg.id_map(), 16);
}

/// Occlusion or foreground mask: any nonzero sample is set.
inline std::vector<std::uint8_t> read_mask(const std::string& path, int& width, int& height) {
  auto v = read_index_png(path, width, height);
  std::vector<std::uint8_t> m(v.size());
  for (std::size_t k = 0; k < v.size(); ++k)
    m[k] = v[k] != 0;
  return m;
}

inline void write_mask(const std::string& path, int width, int height, const std::vector<std::uint8_t>& mask) {
  std::vector<int> v(mask.size());
  for (std::size_t k = 0; k < mask.size(); ++k)
    v[k] = mask[k] ? 255 : 0;
  write_index_png(path, width, height, v, 8);
}

// ---------------------------------------------------------------------------
// KITTI flow

/// u = (R - 2^15)/64, v = (G - 2^15)/64, valid = B != 0.
inline FlowField read_flow_kitti(const std::string& path) {
  PngImage png = read_png(path);
  if (png.bitDepth != 16)
    throw FormatError(path + ": KITTI flow must be 16-bit, got " + std::to_string(png.bitDepth) + "-bit");
  if (png.channels != 3)
    throw FormatError(path + ": KITTI flow must have 3 channels, got " + std::to_string(png.channels));
  FlowField f(png.width, png.height);
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * png.width + x;
      f.valid[p] = png.at(x, y, 2) != 0;
      f.u[p] = f.valid[p] ? (png.at(x, y, 0) - 32768.0) / 64.0 : 0.0;
      f.v[p] = f.valid[p] ? (png.at(x, y, 1) - 32768.0) / 64.0 : 0.0;
    }
  return f;
}

/// Quantizes to 1/64 px; displacements must lie in [-512, 512).
inline void write_flow_kitti(const FlowField& flow, const std::string& path) {
  if (flow.width <= 0 || flow.height <= 0 || flow.u.size() != static_cast<std::size_t>(flow.width) * flow.height ||
      flow.v.size() != flow.u.size() || flow.valid.size() != flow.u.size())
    throw InputError("write_flow_kitti: inconsistent flow field");
  PngImage png{flow.width, flow.height, 3, 16, std::vector<std::uint16_t>(flow.u.size() * 3)};
  auto enc = [](double d) {
    double r = std::round(d * 64.0 + 32768.0);
    if (!(r >= 0.0 && r <= 65535.0))
      throw InputError("write_flow_kitti: displacement " + std::to_string(d) + " outside the encodable range");
    return static_cast<std::uint16_t>(r);
  };
  for (std::size_t p = 0; p < flow.u.size(); ++p) {
    bool ok = flow.valid[p] != 0;
    png.samples[3 * p] = ok ? enc(flow.u[p]) : 0;
    png.samples[3 * p + 1] = ok ? enc(flow.v[p]) : 0;
    png.samples[3 * p + 2] = ok ? 1 : 0;
  }
  write_png(path, png);
}

// ---------------------------------------------------------------------------
// LPM1 label probability maps

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k)
    out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline void spit(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw InputError("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out)
    throw Error("write failed: " + path);
}

} // namespace detail

inline std::string encode_labelprob(const LabelProbMap& map) {
  std::string out = "LPM1";
  detail::put_u32(out, static_cast<std::uint32_t>(map.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(map.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(map.classes()));
  out.reserve(out.size() + map.data().size() * 4);
  for (double v : map.data())
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

/// Rows whose sum is within 1e-6 of one are kept verbatim; rows off by at
/// most 1e-4 are renormalized; anything else is rejected.
inline LabelProbMap decode_labelprob(const std::string& bytes, const std::string& what = "label map") {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(b, "LPM1", 4) != 0)
    throw FormatError(what + ": bad magic (expected LPM1)");
  if (bytes.size() < 16)
    throw FormatError(what + ": truncated header");
  std::uint32_t h = detail::get_u32(b + 4), w = detail::get_u32(b + 8), L = detail::get_u32(b + 12);
  if (h == 0 || w == 0 || L == 0)
    throw FormatError(what + ": zero dimension in header");
  std::uint64_t n = static_cast<std::uint64_t>(h) * w * L;
  if (n > (1ULL << 32) || bytes.size() - 16 < n * 4)
    throw FormatError(what + ": truncated payload");
  if (bytes.size() - 16 != n * 4)
    throw FormatError(what + ": trailing bytes after payload");
  std::vector<double> probs(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    float f = std::bit_cast<float>(detail::get_u32(b + 16 + 4 * k));
    if (!std::isfinite(f))
      throw FormatError(what + ": non-finite probability at index " + std::to_string(k));
    if (f < 0.0f || f > 1.0f)
      throw FormatError(what + ": probability outside [0,1] at index " + std::to_string(k));
    probs[k] = f;
  }
  for (std::uint64_t p = 0; p < n / L; ++p) {
    double sum = 0.0;
    for (std::uint32_t c = 0; c < L; ++c)
      sum += probs[p * L + c];
    double dev = std::abs(sum - 1.0);
    if (dev > 1e-4)
      throw FormatError(what + ": distribution at pixel " + std::to_string(p) + " sums to " + std::to_string(sum));
    if (dev > 1e-6)
      for (std::uint32_t c = 0; c < L; ++c)
        probs[p * L + c] /= sum;
  }
  return LabelProbMap(static_cast<int>(w), static_cast<int>(h), static_cast<int>(L), std::move(probs));
}

inline LabelProbMap read_labelprob(const std::string& path) { return decode_labelprob(detail::slurp(path), path); }

/// Probabilities are stored as float32.
inline void write_labelprob(const LabelProbMap& map, const std::string& path) {
  detail::spit(path, encode_labelprob(map));
}

// ---------------------------------------------------------------------------
// Matches: one "x1 y1 x2 y2" per line, '#' starts a comment.

inline std::vector<Correspondence> parse_matches(const std::string& text, const std::string& what = "matches") {
  std::vector<Correspondence> out;
  std::istringstream in(text);
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;)
      tok.push_back(t);
    if (tok.empty())
      continue;
    double v[4];
    bool ok = tok.size() == 4;
    for (int k = 0; ok && k < 4; ++k)
      ok = detail::parse_number(tok[k], v[k]) && std::isfinite(v[k]);
    if (!ok)
      throw FormatError(what + ":" + std::to_string(lineNo) + ": expected four numbers 'x1 y1 x2 y2'");
    out.push_back({{v[0], v[1]}, {v[2], v[3]}});
  }
  return out;
}

inline std::vector<Correspondence> read_matches(const std::string& path) {
  return parse_matches(detail::slurp(path), path);
}

inline void write_matches(const std::vector<Correspondence>& m, const std::string& path) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& c : m)
    os << c.p.x << ' ' << c.p.y << ' ' << c.q.x << ' ' << c.q.y << '\n';
  detail::spit(path, os.str());
}

// ---------------------------------------------------------------------------
// Config text: "key = value" lines, '#' comments, unknown keys rejected.

namespace detail {

struct ConfigField {
  const char* key;
  std::function<void(EnergyConfig&, const std::string&)> set;
  std::function<std::string(const EnergyConfig&)> get;
};

template <class T>
ConfigField field(const char* key, T EnergyConfig::*member) {
  return {key,
          [key, member](EnergyConfig& c, const std::string& v) {
            T value{};
            if (!parse_number(v, value))
              throw FormatError(std::string("config: bad value for ") + key + ": '" + v + "'");
            c.*member = value;
          },
          [member](const EnergyConfig& c) {
            std::ostringstream os;
            os << std::setprecision(17) << c.*member;
            return os.str();
          }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      field("lambda_l", &EnergyConfig::lambdaL),
      field("lambda_p", &EnergyConfig::lambdaP),
      field("lambda_c", &EnergyConfig::lambdaC),
      field("lambda_b", &EnergyConfig::lambdaB),
      field("lambda_o", &EnergyConfig::lambdaO),
      field("alpha", &EnergyConfig::alpha),
      field("lambda_non_static", &EnergyConfig::lambdaNonStatic),
      field("beta", &EnergyConfig::beta),
      field("lambda_imp", &EnergyConfig::lambdaImp),
      field("lambda_co", &EnergyConfig::lambdaCo),
      field("lambda_h", &EnergyConfig::lambdaH),
      field("lambda_occ", &EnergyConfig::lambdaOcc),
      field("tau_d", &EnergyConfig::tauD),
      field("census_radius", &EnergyConfig::censusRadius),
      field("census_epsilon", &EnergyConfig::censusEpsilon),
      field("particle_count", &EnergyConfig::particleCount),
      field("inner_iters", &EnergyConfig::innerIters),
      field("outer_iters", &EnergyConfig::outerIters),
      field("sigma0", &EnergyConfig::sigma0),
      field("gamma", &EnergyConfig::gamma),
      field("max_disp", &EnergyConfig::maxDisp),
      field("lk_max_iters", &EnergyConfig::lkMaxIters),
      field("epipolar_gate", &EnergyConfig::epipolarGate),
      field("rng_seed", &EnergyConfig::rngSeed),
      field("ransac_iters", &EnergyConfig::ransacIters),
      field("ransac_threshold", &EnergyConfig::ransacThreshold),
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos)
    return {};
  auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

} // namespace detail

/// Starts from `base` and overrides the keys present in the text.
inline EnergyConfig parse_config(const std::string& text, EnergyConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    line = detail::trim(line);
    if (line.empty())
      continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config:" + std::to_string(lineNo) + ": expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    const auto& fields = detail::config_fields();
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
    if (it == fields.end())
      throw FormatError("config:" + std::to_string(lineNo) + ": unknown key '" + key + "'");
    it->set(base, value);
  }
  return base;
}

inline EnergyConfig read_config(const std::string& path) { return parse_config(detail::slurp(path)); }

inline std::string config_to_text(const EnergyConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields())
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Energy trace: "iter eD eL eP eC eB total" per outer iteration.

inline std::string format_trace_line(int iter, const EnergyBreakdown& e) {
  std::ostringstream os;
  os << std::setprecision(17) << iter << ' ' << e.eD << ' ' << e.eL << ' ' << e.eP << ' ' << e.eC << ' ' << e.eB
     << ' ' << e.total;
  return os.str();
}

inline void write_trace(const std::vector<EnergyBreakdown>& trace, const std::string& path) {
  std::string out;
  for (std::size_t k = 0; k < trace.size(); ++k)
    out += format_trace_line(static_cast<int>(k), trace[k]) + "\n";
  detail::spit(path, out);
}

} // namespace semflow

#endif // SEMFLOW_IO_HPP
