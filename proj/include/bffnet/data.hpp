#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "bffnet/errors.hpp"
#include "bffnet/layers.hpp"
#include "bffnet/metrics.hpp"

namespace bffnet {

namespace fs = std::filesystem;

inline constexpr int kDefaultMaskThreshold = 127;
inline constexpr const char* kDataRootEnv = "BFFNET_DATA_ROOT";

// image: CV_32FC3, RGB, values in [0,1]. mask: CV_8UC1 with values {0,1}.
struct ImageMaskPair {
  cv::Mat image;
  cv::Mat mask;
  std::string id;

  int rows() const { return image.rows; }
  int cols() const { return image.cols; }
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

struct ManifestEntry {
  std::string image;  // relative to the manifest root
  std::string mask;
  std::string id;
};

struct DatasetManifest {
  Split split = Split::train;
  std::vector<ManifestEntry> entries;
  fs::path root;  // directory that entry paths are relative to

  fs::path image_path(const ManifestEntry& e) const { return root / e.image; }
  fs::path mask_path(const ManifestEntry& e) const { return root / e.mask; }
};

// ---------------------------------------------------------------- loading

inline cv::Mat binarize_mask(const cv::Mat& mask8, int threshold = kDefaultMaskThreshold) {
  cv::Mat out;
  cv::threshold(mask8, out, threshold, 1, cv::THRESH_BINARY);
  return out;
}

inline ImageMaskPair pair_from_8bit(const cv::Mat& bgr8, const cv::Mat& mask8, std::string id,
                                    int threshold = kDefaultMaskThreshold) {
  if (bgr8.rows != mask8.rows || bgr8.cols != mask8.cols)
    throw ShapeMismatch("image is " + std::to_string(bgr8.rows) + "x" + std::to_string(bgr8.cols) + " but mask is " +
                        std::to_string(mask8.rows) + "x" + std::to_string(mask8.cols));
  ImageMaskPair p;
  cv::Mat rgb;
  cv::cvtColor(bgr8, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(p.image, CV_32FC3, 1.0 / 255.0);
  p.mask = binarize_mask(mask8, threshold);
  p.id = std::move(id);
  return p;
}

inline ImageMaskPair load_pair(const fs::path& image_path, const fs::path& mask_path, std::string id = {},
                               int threshold = kDefaultMaskThreshold) {
  if (!fs::exists(image_path)) throw DecodeError("image file not found: " + image_path.string());
  if (!fs::exists(mask_path)) throw DecodeError("mask file not found: " + mask_path.string());
  cv::Mat img = cv::imread(image_path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DecodeError("cannot decode image " + image_path.string());
  cv::Mat mask = cv::imread(mask_path.string(), cv::IMREAD_UNCHANGED);
  if (mask.empty()) throw DecodeError("cannot decode mask " + mask_path.string());
  if (mask.channels() != 1 || mask.depth() != CV_8U)
    throw DecodeError("mask " + mask_path.string() + " is not a single-channel 8-bit image");
  if (id.empty()) id = image_path.stem().string();
  return pair_from_8bit(img, mask, std::move(id), threshold);
}

// --------------------------------------------------------------- resizing

inline bool valid_target(int v) { return v >= 32 && v % 32 == 0; }

/// Bilinear for the image, nearest-neighbour for the mask.
inline ImageMaskPair resize_pair(const ImageMaskPair& pair, int target_h, int target_w) {
  if (!valid_target(target_h) || !valid_target(target_w))
    throw InvalidTarget("resize target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                        " must be >= 32 and divisible by 32");
  ImageMaskPair out;
  out.id = pair.id;
  if (pair.rows() == target_h && pair.cols() == target_w) {
    out.image = pair.image.clone();
    out.mask = pair.mask.clone();
    return out;
  }
  cv::resize(pair.image, out.image, cv::Size(target_w, target_h), 0, 0, cv::INTER_LINEAR);
  cv::resize(pair.mask, out.mask, cv::Size(target_w, target_h), 0, 0, cv::INTER_NEAREST_EXACT);
  return out;
}

inline const std::vector<double>& allowed_scales() {
  static const std::vector<double> s{0.75, 1.0, 1.25};
  return s;
}

inline bool is_allowed_scale(double s) {
  return std::any_of(allowed_scales().begin(), allowed_scales().end(),
                     [s](double a) { return std::abs(a - s) < 1e-12; });
}

/// round(base·scale) snapped to the nearest multiple of 32 (at least 32).
inline int snapped_size(int base, double scale) {
  const double v = std::round(base * scale);
  return std::max(32, static_cast<int>(std::lround(v / 32.0)) * 32);
}

inline ImageMaskPair multiscale_resize(const ImageMaskPair& pair, double scale, int base_h = 320, int base_w = 640) {
  if (!is_allowed_scale(scale)) throw InvalidScale("scale " + std::to_string(scale) + " not in {0.75, 1, 1.25}");
  return resize_pair(pair, snapped_size(base_h, scale), snapped_size(base_w, scale));
}

// --------------------------------------------------------------- synthesis

struct SyntheticSample {
  cv::Mat image_bgr8;  // grayscale replicated into three channels
  cv::Mat mask8;       // {0,255}
};

namespace detail {

inline void fill_rounded_rect(cv::Mat& m, cv::Rect r, int radius, int value) {
  radius = std::max(0, std::min({radius, r.width / 2, r.height / 2}));
  cv::rectangle(m, cv::Rect(r.x + radius, r.y, r.width - 2 * radius, r.height), value, cv::FILLED, cv::LINE_8);
  cv::rectangle(m, cv::Rect(r.x, r.y + radius, r.width, r.height - 2 * radius), value, cv::FILLED, cv::LINE_8);
  const int x0 = r.x + radius, x1 = r.x + r.width - 1 - radius;
  const int y0 = r.y + radius, y1 = r.y + r.height - 1 - radius;
  for (auto c : {cv::Point(x0, y0), cv::Point(x1, y0), cv::Point(x0, y1), cv::Point(x1, y1)})
    cv::circle(m, c, radius, value, cv::FILLED, cv::LINE_8);
}

}  // namespace detail

/// One synthetic "panoramic" sample: 8-16 tooth-like blobs along an upper and
/// a lower arc over a noisy, shaded background. Pure function of its inputs.
inline SyntheticSample synthesize_sample(int h, int w, std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x7ee7u};
  std::mt19937_64 rng(seq);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto pick = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };

  const int total = pick(8, 16);
  const int upper = total / 2 + (total % 2 ? pick(0, 1) : 0);
  const std::array<int, 2> counts{upper, total - upper};

  cv::Mat mask = cv::Mat::zeros(h, w, CV_8UC1);
  cv::Mat teeth = cv::Mat::zeros(h, w, CV_32FC1);
  const double x_lo = uni(0.08, 0.16) * w, x_hi = uni(0.84, 0.92) * w;
  const double curve = uni(0.04, 0.10) * h;
  for (int arc = 0; arc < 2; ++arc) {
    const int n = counts[arc];
    const double base_y = (arc == 0 ? uni(0.30, 0.38) : uni(0.62, 0.70)) * h;
    const double pitch = (x_hi - x_lo) / n;
    for (int k = 0; k < n; ++k) {
      const double cx = x_lo + (k + 0.5) * pitch + uni(-0.05, 0.05) * pitch;
      const double u = (cx - w / 2.0) / (w / 2.0);
      const double cy = base_y - curve * u * u;
      const double tw = pitch * uni(1.10, 1.30);  // neighbours touch, as in a dentition
      const double th = h * uni(0.26, 0.34);
      // upper teeth hang down from the arc, lower teeth stand up on it
      const double top = arc == 0 ? cy - th * 0.85 : cy - th * 0.15;
      const float level = static_cast<float>(uni(150, 220));
      cv::Mat blob = cv::Mat::zeros(h, w, CV_8UC1);
      if (pick(0, 1) == 0) {
        const cv::Rect r(static_cast<int>(std::lround(cx - tw / 2)), static_cast<int>(std::lround(top)),
                         std::max(2, static_cast<int>(std::lround(tw))), std::max(2, static_cast<int>(std::lround(th))));
        detail::fill_rounded_rect(blob, r, static_cast<int>(std::lround(tw * uni(0.2, 0.4))), 255);
      } else {
        cv::ellipse(blob, cv::Point(static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(top + th / 2))),
                    cv::Size(std::max(1, static_cast<int>(std::lround(tw / 2))),
                             std::max(1, static_cast<int>(std::lround(th / 2)))),
                    uni(-10, 10), 0, 360, 255, cv::FILLED, cv::LINE_8);
      }
      mask |= blob;
      teeth.setTo(level, blob);
    }
  }

  // background level + linear brightness gradient
  const double bg = uni(40, 90), gx = uni(-30, 30), gy = uni(-20, 20);
  cv::Mat img(h, w, CV_32FC1);
  for (int r = 0; r < h; ++r) {
    auto* row = img.ptr<float>(r);
    const auto* tr = teeth.ptr<float>(r);
    for (int c = 0; c < w; ++c) {
      const double ramp = bg + gx * (static_cast<double>(c) / std::max(1, w - 1) - 0.5) +
                          gy * (static_cast<double>(r) / std::max(1, h - 1) - 0.5);
      row[c] = static_cast<float>(tr[c] > 0 ? tr[c] + 0.3 * ramp : ramp);
    }
  }
  cv::GaussianBlur(img, img, cv::Size(3, 3), 0.8);
  const double sigma = uni(4, 10);
  std::normal_distribution<double> noise(0.0, sigma);
  for (int r = 0; r < h; ++r) {
    auto* row = img.ptr<float>(r);
    for (int c = 0; c < w; ++c) row[c] += static_cast<float>(noise(rng));
  }
  cv::Mat gray8;
  img.convertTo(gray8, CV_8UC1);  // saturating
  SyntheticSample s;
  cv::cvtColor(gray8, s.image_bgr8, cv::COLOR_GRAY2BGR);
  s.mask8 = mask;
  return s;
}

inline std::string synthetic_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%04llu", static_cast<unsigned long long>(index));
  return buf;
}

/// In-memory synthetic dataset, already binarized and scaled.
inline std::vector<ImageMaskPair> synthesize_pairs(int n, int h, int w, std::uint64_t seed) {
  if (n < 1) throw ConfigError("synthetic dataset needs n >= 1");
  std::vector<ImageMaskPair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto s = synthesize_sample(h, w, seed, static_cast<std::uint64_t>(i));
    out.push_back(pair_from_8bit(s.image_bgr8, s.mask8, synthetic_id(static_cast<std::uint64_t>(i))));
  }
  return out;
}

// ---------------------------------------------------------------- manifest

inline fs::path manifest_filename(Split s) { return "manifest_" + to_string(s) + ".json"; }

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  nlohmann::json j;
  j["split"] = to_string(m.split);
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) j["entries"].push_back({{"id", e.id}, {"image", e.image}, {"mask", e.mask}});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

/// Reads a manifest and checks ids are unique and files exist. Entry paths
/// resolve against $BFFNET_DATA_ROOT when set, else the manifest's directory.
inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.split = parse_split(j.at("split").get<std::string>());
    for (const auto& e : j.at("entries"))
      m.entries.push_back({e.at("image").get<std::string>(), e.at("mask").get<std::string>(), e.at("id").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
  const char* root = std::getenv(kDataRootEnv);
  m.root = (root && *root) ? fs::path(root) : path.parent_path();
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (!ids.insert(e.id).second) throw DataError(path.string() + ": duplicate id '" + e.id + "'");
    for (const auto& p : {m.image_path(e), m.mask_path(e)})
      if (!fs::exists(p)) throw DataError(path.string() + ": missing file " + p.string());
  }
  return m;
}

inline std::vector<ImageMaskPair> load_dataset(const DatasetManifest& m, int threshold = kDefaultMaskThreshold) {
  std::vector<ImageMaskPair> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_pair(m.image_path(e), m.mask_path(e), e.id, threshold));
  return out;
}

/// Writes n synthetic samples under out_dir/{images,masks} plus the split's
/// manifest, and returns that manifest.
inline DatasetManifest generate_synthetic_dataset(const fs::path& out_dir, int n, int h, int w, std::uint64_t seed,
                                                  Split split = Split::train) {
  if (n < 1) throw ConfigError("synthetic dataset needs n >= 1");
  if (h < 1 || w < 1) throw ConfigError("synthetic image size must be positive");
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  DatasetManifest m;
  m.split = split;
  m.root = out_dir;
  for (int i = 0; i < n; ++i) {
    const auto id = synthetic_id(static_cast<std::uint64_t>(i));
    const auto s = synthesize_sample(h, w, seed, static_cast<std::uint64_t>(i));
    ManifestEntry e{"images/" + id + ".png", "masks/" + id + ".png", id};
    if (!cv::imwrite((out_dir / e.image).string(), s.image_bgr8) || !cv::imwrite((out_dir / e.mask).string(), s.mask8))
      throw DataError("failed writing sample " + id + " under " + out_dir.string());
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, out_dir / manifest_filename(split));
  return m;
}

// ------------------------------------------------------------- conversions

inline Mask to_mask(const cv::Mat& m01) {
  Mask out(m01.rows, m01.cols);
  for (int r = 0; r < m01.rows; ++r) {
    const auto* row = m01.ptr<std::uint8_t>(r);
    for (int c = 0; c < m01.cols; ++c) out.at(r, c) = row[c] ? 1 : 0;
  }
  return out;
}

inline cv::Mat to_mat(const Mask& m, std::uint8_t on = 255) {
  cv::Mat out(m.rows, m.cols, CV_8UC1);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) out.at<std::uint8_t>(r, c) = m.at(r, c) ? on : 0;
  return out;
}

/// N×3×H×W images and N×1×H×W {0,1} masks. All pairs must share a size.
struct Batch {
  torch::Tensor images;
  torch::Tensor masks;
};

inline Batch to_batch(const std::vector<ImageMaskPair>& pairs, const std::array<double, 3>& mean = {0, 0, 0},
                      const std::array<double, 3>& stdev = {1, 1, 1}, torch::ScalarType dtype = torch::kFloat32) {
  if (pairs.empty()) throw DataError("empty batch");
  const int h = pairs[0].rows(), w = pairs[0].cols();
  auto images = torch::empty({static_cast<int64_t>(pairs.size()), 3, h, w}, torch::kFloat32);
  auto masks = torch::empty({static_cast<int64_t>(pairs.size()), 1, h, w}, torch::kFloat32);
  auto ia = images.accessor<float, 4>();
  auto ma = masks.accessor<float, 4>();
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const auto& p = pairs[n];
    if (p.rows() != h || p.cols() != w || p.mask.rows != h || p.mask.cols != w)
      throw ShapeMismatch("batch items differ in size");
    for (int r = 0; r < h; ++r) {
      const auto* px = p.image.ptr<cv::Vec3f>(r);
      const auto* mk = p.mask.ptr<std::uint8_t>(r);
      for (int c = 0; c < w; ++c) {
        for (int ch = 0; ch < 3; ++ch)
          ia[static_cast<int64_t>(n)][ch][r][c] = static_cast<float>((px[c][ch] - mean[ch]) / stdev[ch]);
        ma[static_cast<int64_t>(n)][0][r][c] = mk[c] ? 1.0f : 0.0f;
      }
    }
  }
  return {images.to(dtype), masks.to(dtype)};
}

/// Converts one H×W (or 1×H×W) tensor of foreground flags/probabilities.
inline Mask tensor_to_mask(const torch::Tensor& t) {
  auto m = t.detach().to(torch::kCPU).squeeze().to(torch::kUInt8).contiguous();
  if (m.dim() != 2) throw ShapeError("tensor_to_mask expects a single 2-D map, got " + shape_str(t));
  Mask out(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)));
  std::memcpy(out.data.data(), m.data_ptr<std::uint8_t>(), out.size());
  return out;
}

inline ProbMap tensor_to_probmap(const torch::Tensor& t) {
  auto m = t.detach().to(torch::kCPU).squeeze().to(torch::kFloat32).contiguous();
  if (m.dim() != 2) throw ShapeError("tensor_to_probmap expects a single 2-D map, got " + shape_str(t));
  ProbMap p{static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), {}};
  p.data.assign(m.data_ptr<float>(), m.data_ptr<float>() + m.numel());
  return p;
}

}  // namespace bffnet
