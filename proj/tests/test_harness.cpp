#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>

#include "bffnet/bffnet.hpp"

using namespace bffnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("bffnet_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TrainConfig quick_config(int epochs) {
  auto c = parse_config_text(
      "encoder = tiny\n"
      "train_h = 64\ntrain_w = 128\neval_h = 64\neval_w = 128\n"
      "deterministic = true\nseed = 3\n");
  c.epochs = epochs;
  return c;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(BFFNET_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), slurp(out), slurp(err)};
}

}  // namespace

TEST(Config, DefaultsFollowTheTrainingProtocol) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_EQ(c.train_h, 320);
  EXPECT_EQ(c.train_w, 640);
  EXPECT_EQ(c.epochs, 300);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.lr_decay_every, 50);
  EXPECT_EQ(c.lr_decay_factor, 0.1);
  EXPECT_EQ(c.scales, (std::vector<double>{0.75, 1.0, 1.25}));
  EXPECT_EQ(c.model.decoder.channels, 32);
  EXPECT_EQ(c.model.decoder.reduction, 4);
}

TEST(Config, StepSchedule) {
  const TrainConfig c;
  EXPECT_EQ(lr_at_epoch(c, 1), 1e-4);
  EXPECT_EQ(lr_at_epoch(c, 50), 1e-4);
  EXPECT_NEAR(lr_at_epoch(c, 51), 1e-5, 1e-20);
  EXPECT_NEAR(lr_at_epoch(c, 101), 1e-6, 1e-21);
  EXPECT_NEAR(lr_at_epoch(c, 300), 1e-9, 1e-24);
}

TEST(Config, TextParsing) {
  const auto c = parse_config_text(
      "# desk run\n"
      "epochs = 12   # short\n"
      "scales = 1, 1.25\n"
      "tiny_channels = 16,24,32,48,64\n"
      "encoder = tiny\n"
      "use_fcfm = false\n"
      "hd = literal\n");
  EXPECT_EQ(c.epochs, 12);
  EXPECT_EQ(c.scales, (std::vector<double>{1.0, 1.25}));
  EXPECT_FALSE(c.model.use_fcfm);
  EXPECT_EQ(c.hd_mode, HdMode::literal);
  EXPECT_THROW(parse_config_text("nonsense = 1"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs 5"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs = five"), ConfigError);
  auto bad = c;
  bad.scales = {1.5};
  EXPECT_THROW(bad.validate(), ConfigError);
  const auto j = to_json(c);
  EXPECT_EQ(j.at("epochs").get<int>(), 12);
}

TEST(Training, DeterministicRunsRepeatAndWriteArtifacts) {
  const auto dir = scratch("train");
  const auto data = synthesize_pairs(4, 64, 128, 5);
  const auto cfg = quick_config(3);
  auto a = train_model(cfg, data, {}, dir / "a");
  const auto b = train_model(cfg, data, {}, dir / "b");
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
  EXPECT_EQ(slurp(dir / "a" / "loss_history.csv"), slurp(dir / "b" / "loss_history.csv"));

  for (const auto* f : {"best.ckpt", "last.ckpt", "loss_history.csv", "run_manifest.json"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  const auto run = nlohmann::json::parse(slurp(dir / "a" / "run_manifest.json"));
  for (const auto* k : {"config", "seed", "code_version", "best_epoch", "best_loss", "selected_on", "epochs_completed",
                        "wall_clock_seconds"})
    EXPECT_TRUE(run.contains(k)) << k;
  EXPECT_EQ(run.at("epochs_completed").get<int>(), 3);

  const auto hist = read_loss_csv(dir / "a" / "loss_history.csv");
  ASSERT_EQ(hist.size(), 3u);
  double best = hist[0].train_loss;
  int best_epoch = 1;
  for (const auto& r : hist)
    if (r.train_loss < best) {
      best = r.train_loss;
      best_epoch = r.epoch;
    }
  EXPECT_EQ(a.best_epoch, best_epoch);

  // best.ckpt holds the weights of the selected epoch, which is what the result carries
  auto ck = load_checkpoint(dir / "a" / "best.ckpt");
  EXPECT_EQ(ck.meta.at("epoch").get<int>(), a.best_epoch);
  ck.model->eval();
  torch::NoGradGuard ng;
  const auto x = to_batch({data[0]}).images;
  EXPECT_TRUE(torch::equal(ck.model->forward(x).s3, a.model->forward(x).s3));
  fs::remove_all(dir);
}

TEST(Training, ResumeContinuesAndRejectsOtherConfigs) {
  const auto dir = scratch("resume");
  const auto data = synthesize_pairs(4, 64, 128, 5);
  auto cfg = quick_config(2);
  train_model(cfg, data, {}, dir / "first");
  auto more = cfg;
  more.epochs = 3;
  more.resume_from = (dir / "first" / "last.ckpt").string();
  const auto r = train_model(more, data, {}, dir / "second");
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].epoch, 3);

  auto other = more;
  other.model.use_bfem = false;
  EXPECT_THROW(train_model(other, data), ResumeMismatch);
  fs::remove_all(dir);
}

TEST(Training, ValidationSelection) {
  const auto train = synthesize_pairs(4, 64, 128, 5);
  const auto val = synthesize_pairs(2, 64, 128, 6);
  auto cfg = quick_config(2);
  cfg.select_on = SelectOn::val;
  cfg.val_manifest = "in-memory";
  const auto r = train_model(cfg, train, val);
  for (const auto& h : r.history) EXPECT_TRUE(h.val_loss.has_value());
  EXPECT_THROW(train_model(cfg, train, {}), DataError);
}

TEST(Evaluation, OracleModeIsPerfect) {
  const auto data = synthesize_pairs(3, 64, 128, 9);
  EvalOptions opt;
  opt.h = 64;
  opt.w = 128;
  opt.oracle = true;
  BffNet none{nullptr};
  const auto r = evaluate_model(none, data, opt);
  ASSERT_EQ(r.report.per_image.size(), 3u);
  for (const auto& m : r.report.per_image) {
    EXPECT_EQ(m.dice, 1.0);
    EXPECT_EQ(m.iou, 1.0);
    EXPECT_EQ(m.hd_standard, 0.0);
  }
  EXPECT_EQ(r.pr.size(), 256u);
}

TEST(Evaluation, EmptyPredictionScoresZero) {
  Mask gt(8, 8), empty(8, 8);
  gt.at(2, 2) = 1;
  const auto m = evaluate_pair("x", empty, gt);
  EXPECT_EQ(m.dice, 0.0);
  EXPECT_EQ(m.iou, 0.0);
}

TEST(Evaluation, WritesReports) {
  const auto dir = scratch("eval");
  const auto data = synthesize_pairs(2, 64, 128, 9);
  BffNet net(quick_config(1).model);
  EvalOptions opt;
  opt.h = 64;
  opt.w = 128;
  opt.mask_dir = dir / "masks";
  const auto r = evaluate_model(net, data, opt);
  write_eval_outputs(r, dir);
  EXPECT_EQ(read_report_csv((dir / "metrics.csv").string()).per_image.size(), 2u);
  EXPECT_EQ(report_from_json(nlohmann::json::parse(slurp(dir / "metrics.json"))).per_image.size(), 2u);
  EXPECT_EQ(read_pr_csv((dir / "pr_curve.csv").string()).size(), 256u);
  EXPECT_TRUE(fs::exists(dir / "masks" / "synth_0001.png"));
  fs::remove_all(dir);
}

TEST(Ablation, FourRowsInFixedOrder) {
  const auto dir = scratch("ablate");
  const auto data = synthesize_pairs(4, 64, 128, 5);
  const auto rows = run_ablation(quick_config(1), data, data, {}, dir);
  ASSERT_EQ(rows.size(), 4u);
  const auto back = read_ablation_csv(dir / "ablation.csv");
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[0].setting, "Backbone");
  EXPECT_EQ(back[3].setting, "Backbone+BFEM+FCFM");
  EXPECT_EQ(slurp(dir / "ablation.csv").substr(0, 26), "Settings,Dice,IOU,HD,Score");
  for (const auto& r : rows) EXPECT_TRUE(fs::exists(dir / r.setting / "eval" / "metrics.json"));
  fs::remove_all(dir);
}

TEST(Cli, SynthIsReproducible) {
  const auto dir = scratch("cli_synth");
  ASSERT_EQ(run_cli("synth --n 8 --seed 1 --height 64 --width 128 --out " + (dir / "a").string(), dir).code, 0);
  ASSERT_EQ(run_cli("synth --n 8 --seed 1 --height 64 --width 128 --out " + (dir / "b").string(), dir).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 17u);
  fs::remove_all(dir);
}

TEST(Cli, TrainEvalReportAndErrors) {
  const auto dir = scratch("cli_run");
  ASSERT_EQ(run_cli("synth --n 4 --height 64 --width 128 --out " + (dir / "data").string(), dir).code, 0);
  std::ofstream(dir / "run.cfg") << "encoder = tiny\ntrain_h = 64\ntrain_w = 128\neval_h = 64\neval_w = 128\n"
                                    "epochs = 2\n";
  const auto manifest = (dir / "data" / "manifest_train.json").string();
  auto r = run_cli("train --config " + (dir / "run.cfg").string() + " --train " + manifest + " --deterministic --out " +
                       (dir / "run").string(),
                   dir);
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli("eval --checkpoint " + (dir / "run" / "best.ckpt").string() + " --data " + manifest +
                  " --height 64 --width 128 --out " + (dir / "eval").string(),
              dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("AGGREGATE"), std::string::npos);
  r = run_cli("eval --oracle --data " + manifest + " --height 64 --width 128 --out " + (dir / "oracle").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_report_csv((dir / "oracle" / "metrics.csv").string()).aggregate.dice, 1.0);
  r = run_cli("report " + (dir / "eval" / "metrics.json").string() + " --label tiny", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("| tiny |"), std::string::npos);

  r = run_cli("eval --checkpoint " + (dir / "nothing.ckpt").string() + " --data " + manifest + " --out " +
                  (dir / "x").string(),
              dir);
  EXPECT_EQ(r.code, 1);
  const auto err = nlohmann::json::parse(r.err);
  EXPECT_EQ(err.at("error").get<std::string>(), "CheckpointError");
  r = run_cli("train --train " + manifest + " --set epochs=0 --out " + (dir / "y").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error").get<std::string>(), "ConfigError");
  fs::remove_all(dir);
}
