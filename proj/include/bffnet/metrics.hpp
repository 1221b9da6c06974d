#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bffnet/errors.hpp"

namespace bffnet {

// Row-major binary mask; any nonzero byte is foreground.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int r, int c, std::uint8_t fill = 0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }
  std::size_t count() const {
    return static_cast<std::size_t>(
        std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
  }
  bool empty_foreground() const { return count() == 0; }
};

// Per-pixel foreground probability map in [0,1].
struct ProbMap {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;
};

enum class HdMode { standard, literal };

inline HdMode parse_hd_mode(const std::string& s) {
  if (s == "standard") return HdMode::standard;
  if (s == "literal") return HdMode::literal;
  throw ConfigError("unknown hd mode '" + s + "' (expected standard|literal)");
}

inline std::string to_string(HdMode m) { return m == HdMode::standard ? "standard" : "literal"; }

namespace detail {

inline void check_same_shape(const Mask& a, const Mask& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.size() != b.size())
    throw ShapeError("mask shapes differ: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
}

struct OverlapCounts {
  std::size_t a = 0, b = 0, both = 0;
};

inline OverlapCounts overlap(const Mask& a, const Mask& b) {
  check_same_shape(a, b);
  OverlapCounts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a.data[i] != 0, pb = b.data[i] != 0;
    c.a += pa;
    c.b += pb;
    c.both += pa && pb;
  }
  return c;
}

// Exact squared Euclidean distance to the nearest foreground pixel
// (Meijster, Roerdink and Hesselink). Integer arithmetic throughout.
inline std::vector<std::int64_t> squared_edt(const Mask& m) {
  const std::int64_t rows = m.rows, cols = m.cols;
  const std::int64_t inf = rows + cols + 1;
  std::vector<std::int64_t> g(static_cast<std::size_t>(rows * cols));
  for (std::int64_t x = 0; x < cols; ++x) {
    g[x] = m.at(0, static_cast<int>(x)) ? 0 : inf;
    for (std::int64_t y = 1; y < rows; ++y)
      g[y * cols + x] = m.at(static_cast<int>(y), static_cast<int>(x)) ? 0 : g[(y - 1) * cols + x] + 1;
    for (std::int64_t y = rows - 2; y >= 0; --y)
      if (g[(y + 1) * cols + x] < g[y * cols + x]) g[y * cols + x] = g[(y + 1) * cols + x] + 1;
  }

  std::vector<std::int64_t> dt(g.size());
  std::vector<std::int64_t> s(static_cast<std::size_t>(cols)), t(static_cast<std::size_t>(cols));
  for (std::int64_t y = 0; y < rows; ++y) {
    const std::int64_t* gy = &g[y * cols];
    auto f = [&](std::int64_t x, std::int64_t i) { return (x - i) * (x - i) + gy[i] * gy[i]; };
    auto sep = [&](std::int64_t i, std::int64_t u) {
      const std::int64_t num = u * u - i * i + gy[u] * gy[u] - gy[i] * gy[i];
      const std::int64_t den = 2 * (u - i);
      return num >= 0 ? num / den : -((-num + den - 1) / den);
    };
    std::int64_t q = 0;
    s[0] = 0;
    t[0] = 0;
    for (std::int64_t u = 1; u < cols; ++u) {
      while (q >= 0 && f(t[q], s[q]) > f(t[q], u)) --q;
      if (q < 0) {
        q = 0;
        s[0] = u;
      } else {
        const std::int64_t w = 1 + sep(s[q], u);
        if (w < cols) {
          ++q;
          s[q] = u;
          t[q] = w;
        }
      }
    }
    for (std::int64_t u = cols - 1; u >= 0; --u) {
      dt[y * cols + u] = f(u, s[q]);
      if (u == t[q]) --q;
    }
  }
  return dt;
}

// Exact city-block distance to the nearest foreground pixel (two raster passes).
inline std::vector<std::int64_t> manhattan_dt(const Mask& m) {
  const int rows = m.rows, cols = m.cols;
  const std::int64_t inf = static_cast<std::int64_t>(rows) + cols + 1;
  std::vector<std::int64_t> d(m.size());
  auto idx = [cols](int r, int c) { return static_cast<std::size_t>(r) * cols + c; };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      std::int64_t v = m.at(r, c) ? 0 : inf;
      if (r > 0) v = std::min(v, d[idx(r - 1, c)] + 1);
      if (c > 0) v = std::min(v, d[idx(r, c - 1)] + 1);
      d[idx(r, c)] = v;
    }
  for (int r = rows - 1; r >= 0; --r)
    for (int c = cols - 1; c >= 0; --c) {
      std::int64_t v = d[idx(r, c)];
      if (r + 1 < rows) v = std::min(v, d[idx(r + 1, c)] + 1);
      if (c + 1 < cols) v = std::min(v, d[idx(r, c + 1)] + 1);
      d[idx(r, c)] = v;
    }
  return d;
}

inline std::int64_t directed_max_sq(const Mask& from, const std::vector<std::int64_t>& dt_to) {
  std::int64_t best = 0;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from.data[i]) best = std::max(best, dt_to[i]);
  return best;
}

}  // namespace detail

/// Dice overlap 2|A∩B| / (|A|+|B|). Two empty masks score 1.
inline double dice(const Mask& a, const Mask& b) {
  const auto c = detail::overlap(a, b);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

/// Jaccard index |A∩B| / |A∪B|. Two empty masks score 1.
inline double iou(const Mask& a, const Mask& b) {
  const auto c = detail::overlap(a, b);
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

/// Smallest city-block distance between any pixel of A and any pixel of B.
/// This is the challenge's "H(d)" taken at face value; it is zero whenever the
/// masks touch. Both empty gives 0; exactly one empty gives max(rows, cols).
inline double hd_literal(const Mask& a, const Mask& b) {
  const auto c = detail::overlap(a, b);
  if (c.a == 0 && c.b == 0) return 0.0;
  if (c.a == 0 || c.b == 0) return static_cast<double>(std::max(a.rows, a.cols));
  if (c.both > 0) return 0.0;
  const auto dt = detail::manhattan_dt(b);
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i]) best = std::min(best, dt[i]);
  return static_cast<double>(best);
}

inline double image_diagonal(int rows, int cols) {
  const double dr = rows > 0 ? rows - 1 : 0, dc = cols > 0 ? cols - 1 : 0;
  return std::sqrt(dr * dr + dc * dc);
}

/// Symmetric Euclidean Hausdorff distance normalized by the image diagonal.
/// Both empty gives 0; exactly one empty gives 1.
inline double hd_standard(const Mask& a, const Mask& b) {
  const auto c = detail::overlap(a, b);
  if (c.a == 0 && c.b == 0) return 0.0;
  if (c.a == 0 || c.b == 0) return 1.0;
  const double diag = image_diagonal(a.rows, a.cols);
  if (diag == 0.0) return 0.0;
  const auto dt_b = detail::squared_edt(b);
  const auto dt_a = detail::squared_edt(a);
  const std::int64_t sq = std::max(detail::directed_max_sq(a, dt_b), detail::directed_max_sq(b, dt_a));
  return std::sqrt(static_cast<double>(sq)) / diag;
}

struct ScoreWeights {
  double dice = 0.4;
  double iou = 0.4;
  double hd = 0.3;
};

/// Challenge score w1·Dice + w2·IoU + w3·(1 − HD). The default weights sum to
/// 1.1, so a perfect prediction scores 1.1; the value is not renormalized.
inline double score(double dice_v, double iou_v, double hd_v, const ScoreWeights& w = {}) {
  return w.dice * dice_v + w.iou * iou_v + w.hd * (1.0 - hd_v);
}

struct PrPoint {
  double threshold = 0;
  double precision = 0;
  double recall = 0;
};

/// Micro-averaged precision/recall over all pixels of all images at
/// `num_thresholds` evenly spaced thresholds in [0,1]. A pixel is predicted
/// positive when its probability is strictly greater than the threshold.
/// Precision with no predicted positives is 1; recall with no positives in
/// the ground truth is 1.
inline std::vector<PrPoint> pr_curve(const std::vector<ProbMap>& probs, const std::vector<Mask>& gts,
                                     int num_thresholds = 256) {
  if (probs.size() != gts.size()) throw ShapeError("pr_curve: probability and mask lists differ in length");
  if (num_thresholds < 2) throw ConfigError("pr_curve: need at least two thresholds");
  const int n = num_thresholds;
  std::vector<double> thr(n);
  for (int k = 0; k < n; ++k) thr[k] = static_cast<double>(k) / (n - 1);

  // bucket m holds pixels that are positive at exactly thresholds 0..m-1
  std::vector<std::uint64_t> pos(n + 1, 0), neg(n + 1, 0);
  std::uint64_t total_pos = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    const auto& g = gts[i];
    if (p.rows != g.rows || p.cols != g.cols || p.data.size() != g.size())
      throw ShapeError("pr_curve: probability map and mask shapes differ");
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double v = p.data[j];
      int m = static_cast<int>(std::ceil(v * (n - 1)));
      m = std::clamp(m, 0, n);
      while (m > 0 && !(v > thr[m - 1])) --m;
      while (m < n && v > thr[m]) ++m;
      if (g.data[j]) {
        ++pos[m];
        ++total_pos;
      } else {
        ++neg[m];
      }
    }
  }
  std::vector<PrPoint> out(n);
  std::uint64_t tp = 0, fp = 0;
  for (int k = n - 1; k >= 0; --k) {
    tp += pos[k + 1];
    fp += neg[k + 1];
    out[k].threshold = thr[k];
    out[k].precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    out[k].recall = total_pos == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(total_pos);
  }
  return out;
}

struct ImageMetrics {
  std::string id;
  double dice = 0;
  double iou = 0;
  double hd_literal = 0;
  double hd_standard = 0;
  double score = 0;
};

inline ImageMetrics evaluate_pair(const std::string& id, const Mask& pred, const Mask& gt,
                                  HdMode mode = HdMode::standard, const ScoreWeights& w = {}) {
  ImageMetrics m;
  m.id = id;
  m.dice = dice(pred, gt);
  m.iou = iou(pred, gt);
  m.hd_literal = bffnet::hd_literal(pred, gt);
  m.hd_standard = bffnet::hd_standard(pred, gt);
  m.score = score(m.dice, m.iou, mode == HdMode::standard ? m.hd_standard : m.hd_literal, w);
  return m;
}

struct MetricReport {
  std::vector<ImageMetrics> per_image;
  ImageMetrics aggregate{"AGGREGATE"};
  ScoreWeights weights;
  HdMode hd_mode = HdMode::standard;

  void add(ImageMetrics m) { per_image.push_back(std::move(m)); }

  // Aggregate is the arithmetic mean of each column.
  void finalize() {
    aggregate = ImageMetrics{"AGGREGATE"};
    if (per_image.empty()) return;
    for (const auto& m : per_image) {
      aggregate.dice += m.dice;
      aggregate.iou += m.iou;
      aggregate.hd_literal += m.hd_literal;
      aggregate.hd_standard += m.hd_standard;
      aggregate.score += m.score;
    }
    const double n = static_cast<double>(per_image.size());
    aggregate.dice /= n;
    aggregate.iou /= n;
    aggregate.hd_literal /= n;
    aggregate.hd_standard /= n;
    aggregate.score /= n;
  }
};

namespace detail {
inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace detail

inline const char* kReportCsvHeader = "id,dice,iou,hd_literal,hd_standard,score";

inline void write_report_csv(const MetricReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << kReportCsvHeader << "\n";
  auto row = [&](const ImageMetrics& m) {
    out << m.id << ',' << detail::fmt_double(m.dice) << ',' << detail::fmt_double(m.iou) << ','
        << detail::fmt_double(m.hd_literal) << ',' << detail::fmt_double(m.hd_standard) << ','
        << detail::fmt_double(m.score) << "\n";
  };
  for (const auto& m : r.per_image) row(m);
  row(r.aggregate);
}

inline MetricReport read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kReportCsvHeader) throw FormatError(path + ": bad report header");
  MetricReport r;
  bool saw_aggregate = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw FormatError(path + ": expected 6 columns, got " + std::to_string(cells.size()));
    ImageMetrics m;
    m.id = cells[0];
    try {
      m.dice = std::stod(cells[1]);
      m.iou = std::stod(cells[2]);
      m.hd_literal = std::stod(cells[3]);
      m.hd_standard = std::stod(cells[4]);
      m.score = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw FormatError(path + ": non-numeric metric in row '" + line + "'");
    }
    if (m.id == "AGGREGATE") {
      r.aggregate = m;
      saw_aggregate = true;
    } else {
      r.per_image.push_back(m);
    }
  }
  if (!saw_aggregate) throw FormatError(path + ": missing AGGREGATE row");
  return r;
}

inline nlohmann::json metrics_to_json(const ImageMetrics& m) {
  return {{"id", m.id},
          {"dice", m.dice},
          {"iou", m.iou},
          {"hd_literal", m.hd_literal},
          {"hd_standard", m.hd_standard},
          {"score", m.score}};
}

inline ImageMetrics metrics_from_json(const nlohmann::json& j) {
  ImageMetrics m;
  m.id = j.at("id").get<std::string>();
  m.dice = j.at("dice").get<double>();
  m.iou = j.at("iou").get<double>();
  m.hd_literal = j.at("hd_literal").get<double>();
  m.hd_standard = j.at("hd_standard").get<double>();
  m.score = j.at("score").get<double>();
  return m;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["weights"] = {r.weights.dice, r.weights.iou, r.weights.hd};
  j["hd_mode"] = to_string(r.hd_mode);
  j["per_image"] = nlohmann::json::array();
  for (const auto& m : r.per_image) j["per_image"].push_back(metrics_to_json(m));
  j["aggregate"] = metrics_to_json(r.aggregate);
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    const auto& w = j.at("weights");
    r.weights = {w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()};
    r.hd_mode = parse_hd_mode(j.at("hd_mode").get<std::string>());
    for (const auto& m : j.at("per_image")) r.per_image.push_back(metrics_from_json(m));
    r.aggregate = metrics_from_json(j.at("aggregate"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metric report json: ") + e.what());
  }
  return r;
}

inline void write_pr_csv(const std::vector<PrPoint>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "threshold,precision,recall\n";
  for (const auto& p : curve)
    out << detail::fmt_double(p.threshold) << ',' << detail::fmt_double(p.precision) << ','
        << detail::fmt_double(p.recall) << "\n";
}

inline std::vector<PrPoint> read_pr_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "threshold,precision,recall") throw FormatError(path + ": bad header");
  std::vector<PrPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    PrPoint p;
    char c1 = 0, c2 = 0;
    std::stringstream ss(line);
    if (!(ss >> p.threshold >> c1 >> p.precision >> c2 >> p.recall) || c1 != ',' || c2 != ',')
      throw FormatError(path + ": bad row '" + line + "'");
    out.push_back(p);
  }
  return out;
}

}  // namespace bffnet
