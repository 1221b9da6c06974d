#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "bffnet/checkpoint.hpp"
#include "bffnet/config.hpp"
#include "bffnet/data.hpp"
#include "bffnet/losses.hpp"
#include "bffnet/metrics.hpp"

namespace bffnet {

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> val_loss;
};

struct TrainResult {
  BffNet model{nullptr};  // best-by-selection weights
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_loss = 0;
  double wall_seconds = 0;
};

/// Single-threaded, deterministic kernels, fixed seed.
inline void set_deterministic(bool on) {
  if (!on) return;
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
}

namespace detail {

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

inline std::map<std::string, torch::Tensor> snapshot(torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (auto& [k, v] : named_state(m)) out[k] = v.detach().clone();
  return out;
}

inline std::vector<ImageMaskPair> resize_all(const std::vector<ImageMaskPair>& in, int h, int w) {
  std::vector<ImageMaskPair> out;
  out.reserve(in.size());
  for (const auto& p : in) out.push_back(resize_pair(p, h, w));
  return out;
}

inline double mean_loss(BffNet& model, const TrainConfig& cfg, const std::vector<ImageMaskPair>& data) {
  torch::NoGradGuard no_grad;
  model->eval();
  double sum = 0;
  int batches = 0;
  for (std::size_t i = 0; i < data.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
    const auto end = std::min(data.size(), i + static_cast<std::size_t>(cfg.batch_size));
    std::vector<ImageMaskPair> chunk(data.begin() + static_cast<std::ptrdiff_t>(i), data.begin() + static_cast<std::ptrdiff_t>(end));
    auto b = to_batch(resize_all(chunk, cfg.train_h, cfg.train_w), cfg.model.input_mean, cfg.model.input_std);
    sum += total_loss(model->forward(b.images), b.masks, cfg.loss).total.item<double>();
    ++batches;
  }
  return batches ? sum / batches : 0.0;
}

}  // namespace detail

inline void write_loss_csv(const std::vector<EpochRecord>& h, const fs::path& path) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,val_loss\n";
  for (const auto& r : h)
    os << r.epoch << ',' << detail::fmt_double(r.lr) << ',' << detail::fmt_double(r.train_loss) << ','
       << (r.val_loss ? detail::fmt_double(*r.val_loss) : "") << "\n";
  detail::write_text_atomic(path, os.str());
}

inline std::vector<EpochRecord> read_loss_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,train_loss,val_loss") throw FormatError(path.string() + ": bad header");
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> all;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) all.push_back(cell);
    if (all.size() < 3) throw FormatError(path.string() + ": bad row '" + line + "'");
    EpochRecord r;
    r.epoch = std::stoi(all[0]);
    r.lr = std::stod(all[1]);
    r.train_loss = std::stod(all[2]);
    if (all.size() > 3 && !all[3].empty()) r.val_loss = std::stod(all[3]);
    out.push_back(r);
  }
  return out;
}

/// Multiscale Adam training with step lr decay and deep supervision. The
/// returned model holds the weights of the epoch with the lowest selection
/// loss (training loss by default). With a non-empty out_dir, writes
/// best.ckpt, last.ckpt, loss_history.csv and run_manifest.json there.
inline TrainResult train_model(const TrainConfig& cfg, const std::vector<ImageMaskPair>& train_data,
                               const std::vector<ImageMaskPair>& val_data = {}, const fs::path& out_dir = {}) {
  cfg.validate();
  if (train_data.empty()) throw DataError("training set is empty");
  if (cfg.select_on == SelectOn::val && val_data.empty()) throw DataError("select_on = val but validation set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  set_deterministic(cfg.deterministic);
  torch::manual_seed(cfg.seed);
  std::mt19937_64 rng(cfg.seed);

  TrainResult res;
  res.model = make_model(cfg.model);
  int start_epoch = 1;
  if (!cfg.resume_from.empty()) {
    try {
      const auto meta = load_checkpoint_into(res.model, cfg.resume_from);
      start_epoch = meta.value("epoch", 0) + 1;
    } catch (const VersionError& e) {
      throw ResumeMismatch(std::string("cannot resume: ") + e.what());
    }
  }

  torch::optim::Adam opt(res.model->parameters(), torch::optim::AdamOptions(lr_at_epoch(cfg, start_epoch)));
  auto best_state = detail::snapshot(*res.model);
  res.best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_data.size());

  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);

    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);

    res.model->train();
    double sum = 0;
    int batches = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const double scale = cfg.scales[std::uniform_int_distribution<std::size_t>(0, cfg.scales.size() - 1)(rng)];
      std::vector<ImageMaskPair> items;
      for (std::size_t k = i; k < std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size)); ++k)
        items.push_back(multiscale_resize(train_data[order[k]], scale, cfg.train_h, cfg.train_w));
      auto b = to_batch(items, cfg.model.input_mean, cfg.model.input_std);
      opt.zero_grad();
      auto loss = total_loss(res.model->forward(b.images), b.masks, cfg.loss).total;
      loss.backward();
      opt.step();
      sum += loss.item<double>();
      ++batches;
    }

    EpochRecord rec{epoch, lr, sum / batches, std::nullopt};
    if (!val_data.empty()) rec.val_loss = detail::mean_loss(res.model, cfg, val_data);
    res.history.push_back(rec);

    const double sel = cfg.select_on == SelectOn::val ? *rec.val_loss : rec.train_loss;
    if (sel < res.best_loss) {
      res.best_loss = sel;
      res.best_epoch = epoch;
      best_state = detail::snapshot(*res.model);
      if (!out_dir.empty()) save_checkpoint(res.model, out_dir / "best.ckpt", {{"epoch", epoch}, {"loss", sel}});
    }
  }

  if (!out_dir.empty()) {
    save_checkpoint(res.model, out_dir / "last.ckpt", {{"epoch", cfg.epochs}});
    write_loss_csv(res.history, out_dir / "loss_history.csv");
  }
  detail::copy_state(*res.model, best_state, "", "best snapshot");
  res.model->eval();
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!out_dir.empty()) {
    nlohmann::json run;
    run["config"] = to_json(cfg);
    run["seed"] = cfg.seed;
    run["code_version"] = kVersion;
    run["best_epoch"] = res.best_epoch;
    run["best_loss"] = res.best_loss;
    run["selected_on"] = cfg.select_on == SelectOn::train ? "train_loss" : "val_loss";
    run["epochs_completed"] = res.history.empty() ? 0 : res.history.back().epoch;
    run["wall_clock_seconds"] = res.wall_seconds;
    detail::write_text_atomic(out_dir / "run_manifest.json", run.dump(2) + "\n");
  }
  return res;
}

struct EvalOptions {
  int h = 320;
  int w = 640;
  double threshold = 0.5;
  HdMode hd_mode = HdMode::standard;
  bool oracle = false;    // score the ground truth against itself
  fs::path mask_dir;      // when set, predicted masks are written here as PNG
  int pr_thresholds = 256;
  int batch_size = 4;
};

struct EvalResult {
  MetricReport report;
  std::vector<PrPoint> pr;
};

/// Predicts every pair at the evaluation size and scores it against its
/// nearest-neighbour-resized ground truth.
inline EvalResult evaluate_model(BffNet& model, const std::vector<ImageMaskPair>& data, const EvalOptions& opt) {
  if (!valid_target(opt.h) || !valid_target(opt.w)) throw ConfigError("eval size must be multiples of 32");
  EvalResult res;
  res.report.hd_mode = opt.hd_mode;
  std::vector<ProbMap> probs;
  std::vector<Mask> gts;
  if (!opt.mask_dir.empty()) fs::create_directories(opt.mask_dir);
  if (model) model->eval();
  torch::NoGradGuard no_grad;
  const auto dtype = model ? model->parameters().front().scalar_type() : torch::kFloat32;

  for (std::size_t i = 0; i < data.size(); i += static_cast<std::size_t>(opt.batch_size)) {
    const auto end = std::min(data.size(), i + static_cast<std::size_t>(opt.batch_size));
    std::vector<ImageMaskPair> chunk;
    for (std::size_t k = i; k < end; ++k) chunk.push_back(resize_pair(data[k], opt.h, opt.w));
    const auto& mc = model ? model->config() : ModelConfig{};
    auto b = to_batch(chunk, mc.input_mean, mc.input_std, dtype);
    torch::Tensor prob;
    if (opt.oracle) {
      prob = b.masks;
    } else {
      if (!model) throw CheckpointError("evaluation needs a model unless oracle mode is on");
      prob = torch::sigmoid(model->forward(b.images).final_mask_logits());
    }
    const auto pred = prob > opt.threshold;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const auto idx = static_cast<int64_t>(k);
      auto pm = tensor_to_mask(pred[idx]);
      auto gt = to_mask(chunk[k].mask);
      res.report.add(evaluate_pair(chunk[k].id, pm, gt, opt.hd_mode, res.report.weights));
      probs.push_back(tensor_to_probmap(prob[idx]));
      if (!opt.mask_dir.empty()) cv::imwrite((opt.mask_dir / (chunk[k].id + ".png")).string(), to_mat(pm));
      gts.push_back(std::move(gt));
    }
  }
  res.report.finalize();
  res.pr = pr_curve(probs, gts, opt.pr_thresholds);
  return res;
}

inline EvalOptions eval_options(const TrainConfig& cfg) {
  EvalOptions o;
  o.h = cfg.eval_h;
  o.w = cfg.eval_w;
  o.threshold = cfg.threshold;
  o.hd_mode = cfg.hd_mode;
  o.batch_size = cfg.batch_size;
  return o;
}

/// metrics.csv, metrics.json and pr_curve.csv under out_dir.
inline void write_eval_outputs(const EvalResult& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_report_csv(r.report, (out_dir / "metrics.csv").string());
  detail::write_text_atomic(out_dir / "metrics.json", report_to_json(r.report).dump(2) + "\n");
  write_pr_csv(r.pr, (out_dir / "pr_curve.csv").string());
}

struct AblationRow {
  std::string setting;
  ImageMetrics aggregate;
};

inline std::vector<ModelConfig> ablation_grid(const ModelConfig& base) {
  std::vector<ModelConfig> grid;
  for (auto [bfem, fcfm] : {std::pair{false, false}, std::pair{true, false}, std::pair{false, true}, std::pair{true, true}}) {
    auto c = base;
    c.use_bfem = bfem;
    c.use_fcfm = fcfm;
    grid.push_back(c);
  }
  return grid;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path, HdMode mode) {
  std::ostringstream os;
  os << "Settings,Dice,IOU,HD,Score\n";
  for (const auto& r : rows)
    os << r.setting << ',' << detail::fmt_double(r.aggregate.dice) << ',' << detail::fmt_double(r.aggregate.iou) << ','
       << detail::fmt_double(mode == HdMode::standard ? r.aggregate.hd_standard : r.aggregate.hd_literal) << ','
       << detail::fmt_double(r.aggregate.score) << "\n";
  detail::write_text_atomic(path, os.str());
}

inline std::vector<AblationRow> read_ablation_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "Settings,Dice,IOU,HD,Score") throw FormatError(path.string() + ": bad header");
  std::vector<AblationRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError(path.string() + ": bad row '" + line + "'");
    AblationRow r;
    r.setting = cells[0];
    r.aggregate.id = cells[0];
    r.aggregate.dice = std::stod(cells[1]);
    r.aggregate.iou = std::stod(cells[2]);
    r.aggregate.hd_standard = std::stod(cells[3]);
    r.aggregate.score = std::stod(cells[4]);
    rows.push_back(r);
  }
  return rows;
}

/// Trains and evaluates the four {BFEM, FCFM} combinations with identical
/// seed and data. Each run lives in out_dir/<setting>/; the comparison table
/// is out_dir/ablation.csv.
inline std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const std::vector<ImageMaskPair>& train_data,
                                             const std::vector<ImageMaskPair>& eval_data,
                                             const std::vector<ImageMaskPair>& val_data, const fs::path& out_dir) {
  std::vector<AblationRow> rows;
  for (const auto& mc : ablation_grid(cfg.model)) {
    auto run_cfg = cfg;
    run_cfg.model = mc;
    const auto name = ablation_name(mc);
    const auto dir = out_dir.empty() ? fs::path{} : out_dir / name;
    auto trained = train_model(run_cfg, train_data, val_data, dir);
    auto eval = evaluate_model(trained.model, eval_data, eval_options(run_cfg));
    if (!dir.empty()) write_eval_outputs(eval, dir / "eval");
    rows.push_back({name, eval.report.aggregate});
  }
  if (!out_dir.empty()) write_ablation_csv(rows, out_dir / "ablation.csv", cfg.hd_mode);
  return rows;
}

}  // namespace bffnet
