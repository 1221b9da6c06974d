// Command-line entry points: synth, train, eval, ablate, report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bffnet/bffnet.hpp"

namespace fs = std::filesystem;
using namespace bffnet;

namespace {

struct CommonTrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::int64_t seed = -1;
  std::string out;
  bool deterministic = false;
  std::string hd;
  std::string train_manifest;
  std::string val_manifest;
  std::string select_on;
};

void add_common(CLI::App* cmd, CommonTrainArgs& a) {
  cmd->add_option("--config", a.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.sets, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_flag("--deterministic", a.deterministic, "single-threaded deterministic kernels");
  cmd->add_option("--hd", a.hd, "HD column used in Score")->check(CLI::IsMember({"standard", "literal"}));
  cmd->add_option("--train", a.train_manifest, "training manifest");
  cmd->add_option("--val", a.val_manifest, "validation manifest");
  cmd->add_option("--select-on", a.select_on, "best-model criterion")->check(CLI::IsMember({"train", "val"}));
}

TrainConfig resolve(const CommonTrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_config_file(a.config);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.deterministic) cfg.deterministic = true;
  if (!a.hd.empty()) cfg.hd_mode = parse_hd_mode(a.hd);
  if (!a.train_manifest.empty()) cfg.train_manifest = a.train_manifest;
  if (!a.val_manifest.empty()) cfg.val_manifest = a.val_manifest;
  if (!a.select_on.empty()) apply_setting(cfg, "select_on", a.select_on);
  cfg.validate();
  if (cfg.train_manifest.empty()) throw ConfigError("no training manifest (train_manifest or --train)");
  return cfg;
}

std::vector<ImageMaskPair> load_split(const std::string& manifest, int threshold) {
  if (manifest.empty()) return {};
  return load_dataset(read_manifest(manifest), threshold);
}

void print_row(const std::string& label, const ImageMetrics& m, HdMode mode) {
  std::cout << label << ": Dice=" << m.dice << " IOU=" << m.iou
            << " HD=" << (mode == HdMode::standard ? m.hd_standard : m.hd_literal) << " Score=" << m.score << "\n";
}

struct ReportRow {
  std::string label;
  double dice, iou, hd, score;
};

std::vector<ReportRow> collect_rows(const std::string& path, const std::string& label_override) {
  std::vector<ReportRow> rows;
  const fs::path p(path);
  if (p.extension() == ".json") {
    std::ifstream in(p);
    if (!in) throw DataError("cannot read " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
    const auto r = report_from_json(j);
    auto label = label_override;
    if (label.empty()) {
      auto parent = p.parent_path();
      if (parent.filename() == "eval" && parent.has_parent_path()) parent = parent.parent_path();
      label = parent.filename().string();
      if (label.empty()) label = p.stem().string();
    }
    const auto& a = r.aggregate;
    rows.push_back({label, a.dice, a.iou, r.hd_mode == HdMode::standard ? a.hd_standard : a.hd_literal, a.score});
  } else if (p.extension() == ".csv") {
    for (const auto& r : read_ablation_csv(p))
      rows.push_back({r.setting, r.aggregate.dice, r.aggregate.iou, r.aggregate.hd_standard, r.aggregate.score});
  } else {
    throw DataError(path + ": expected a metrics .json or an ablation .csv");
  }
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary feature fusion network: training, evaluation and ablation harness"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic tooth-like dataset");
  int synth_n = 8, synth_h = 320, synth_w = 640;
  std::uint64_t synth_seed = 1;
  std::string synth_out, synth_split = "train";
  synth->add_option("--n", synth_n, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--height", synth_h, "image height")->check(CLI::PositiveNumber);
  synth->add_option("--width", synth_w, "image width")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--split", synth_split, "manifest split")->check(CLI::IsMember({"train", "val", "test"}));
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model");
  CommonTrainArgs train_args;
  add_common(train, train_args);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_data, eval_out, eval_hd = "standard";
  int eval_h = 320, eval_w = 640;
  double eval_threshold = 0.5;
  bool eval_oracle = false, eval_masks = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  eval->add_option("--data", eval_data, "dataset manifest")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--hd", eval_hd, "HD column used in Score")->check(CLI::IsMember({"standard", "literal"}));
  eval->add_option("--height", eval_h, "evaluation height");
  eval->add_option("--width", eval_w, "evaluation width");
  eval->add_option("--threshold", eval_threshold, "probability threshold");
  eval->add_flag("--oracle", eval_oracle, "score ground truth against itself (no checkpoint needed)");
  eval->add_flag("--save-masks", eval_masks, "write predicted masks as PNG");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the four BFEM/FCFM combinations");
  CommonTrainArgs ablate_args;
  std::string ablate_eval;
  add_common(ablate, ablate_args);
  ablate->add_option("--eval-data", ablate_eval, "manifest to evaluate on (default: training set)");

  // report
  auto* report = app.add_subcommand("report", "tabulate metrics.json / ablation.csv files");
  std::vector<std::string> report_inputs, report_labels;
  std::string report_out;
  report->add_option("inputs", report_inputs, "metrics.json or ablation.csv files")->required();
  report->add_option("--label", report_labels, "row label per metrics.json input, in order");
  report->add_option("--out", report_out, "write the table as CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto m = generate_synthetic_dataset(synth_out, synth_n, synth_h, synth_w, synth_seed, parse_split(synth_split));
      std::cout << "wrote " << m.entries.size() << " samples to " << synth_out << " ("
                << (fs::path(synth_out) / manifest_filename(m.split)).string() << ")\n";
    } else if (*train) {
      const auto cfg = resolve(train_args);
      const auto train_data = load_split(cfg.train_manifest, cfg.mask_threshold);
      const auto val_data = load_split(cfg.val_manifest, cfg.mask_threshold);
      auto res = train_model(cfg, train_data, val_data, cfg.out_dir);
      std::cout << "trained " << res.history.size() << " epochs in " << res.wall_seconds << " s; best epoch "
                << res.best_epoch << " loss " << res.best_loss << "\n"
                << "checkpoint: " << (fs::path(cfg.out_dir) / "best.ckpt").string() << "\n";
    } else if (*eval) {
      EvalOptions opt;
      opt.h = eval_h;
      opt.w = eval_w;
      opt.threshold = eval_threshold;
      opt.hd_mode = parse_hd_mode(eval_hd);
      opt.oracle = eval_oracle;
      if (eval_masks) opt.mask_dir = fs::path(eval_out) / "masks";
      BffNet model{nullptr};
      if (!eval_oracle) {
        if (eval_ckpt.empty()) throw ConfigError("eval needs --checkpoint unless --oracle is given");
        try {
          model = load_checkpoint(eval_ckpt).model;
        } catch (const CheckpointError&) {
          throw;
        } catch (const Error& e) {
          throw CheckpointError(e.kind() + ": " + e.what());
        }
      }
      const auto m = read_manifest(eval_data);
      const auto res = evaluate_model(model, load_dataset(m), opt);
      write_eval_outputs(res, eval_out);
      print_row("AGGREGATE", res.report.aggregate, opt.hd_mode);
    } else if (*ablate) {
      const auto cfg = resolve(ablate_args);
      const auto train_data = load_split(cfg.train_manifest, cfg.mask_threshold);
      const auto val_data = load_split(cfg.val_manifest, cfg.mask_threshold);
      const auto eval_data = ablate_eval.empty() ? train_data : load_split(ablate_eval, cfg.mask_threshold);
      const auto rows = run_ablation(cfg, train_data, eval_data, val_data, cfg.out_dir);
      for (const auto& r : rows) print_row(r.setting, r.aggregate, cfg.hd_mode);
      std::cout << "table: " << (fs::path(cfg.out_dir) / "ablation.csv").string() << "\n";
    } else if (*report) {
      std::vector<ReportRow> rows;
      std::size_t label_idx = 0;
      for (const auto& in : report_inputs) {
        std::string label;
        if (fs::path(in).extension() == ".json" && label_idx < report_labels.size()) label = report_labels[label_idx++];
        for (auto& r : collect_rows(in, label)) rows.push_back(r);
      }
      std::ostringstream csv;
      csv << "Method,Dice,IOU,HD,Score\n";
      std::cout << "| Method | Dice | IOU | HD | Score |\n|---|---|---|---|---|\n";
      for (const auto& r : rows) {
        csv << r.label << ',' << r.dice << ',' << r.iou << ',' << r.hd << ',' << r.score << "\n";
        std::cout << "| " << r.label << " | " << r.dice << " | " << r.iou << " | " << r.hd << " | " << r.score << " |\n";
      }
      std::cout << "\nScore = 0.4*Dice + 0.4*IOU + 0.3*(1 - HD), per image, then averaged; maximum 1.1.\n";
      if (!report_out.empty()) {
        std::ofstream out(report_out);
        if (!out) throw DataError("cannot write " + report_out);
        out << csv.str();
      }
    }
  } catch (const Error& e) {
    nlohmann::json line{{"error", e.kind()}, {"message", e.what()}};
    std::cerr << line.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json line{{"error", "InternalError"}, {"message", e.what()}};
    std::cerr << line.dump() << "\n";
    return 1;
  }
  return 0;
}
