// udc: dataset generation, two-stage training, evaluation and rendering.
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <malloc.h>
#include <filesystem>
#include <iostream>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>

#include "udc/errors.hpp"
#include "udc/lidarsim.hpp"
#include "udc/metrics.hpp"
#include "udc/model.hpp"
#include "udc/pnm_io.hpp"
#include "udc/render.hpp"
#include "udc/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Invalid flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenArgs {
  fs::path out;
  int frames = 0;
  std::uint64_t seed = 0;
  std::optional<double> outlier_rate;
  std::optional<double> dropout;
  std::string size;
};

struct TrainArgs {
  int stage = 1;
  fs::path data;
  fs::path eval_data;
  fs::path config;
  fs::path ckpt_out;
  fs::path ckpt_in;
  fs::path log;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss;
  std::optional<int> batch;
  std::optional<int> ns;
  bool quiet = false;
};

struct EvalArgs {
  fs::path ckpt;
  fs::path ckpt2;
  fs::path data;
  std::string against = "clean";
};

struct RenderArgs {
  fs::path ckpt;
  fs::path ckpt2;
  fs::path frame;
  fs::path out;
};

int cmd_gen(const GenArgs& a) {
  if (a.frames < 1) throw UsageError("--frames must be >= 1");
  udc::DatasetConfig cfg;
  if (!a.size.empty()) {
    std::smatch m;
    if (!std::regex_match(a.size, m, std::regex(R"((\d+)x(\d+))"))) {
      throw UsageError("--size must look like HxW, e.g. 64x192");
    }
    cfg.height = std::stoi(m[1]);
    cfg.width = std::stoi(m[2]);
    if (cfg.height < 1 || cfg.width < 1) throw UsageError("--size must be positive");
  }
  if (a.outlier_rate) cfg.corruption.outlier_rate = *a.outlier_rate;
  if (a.dropout) cfg.scan.dropout = *a.dropout;
  try {
    udc::validate(cfg.scan);
    udc::validate(cfg.corruption);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const udc::Manifest m = udc::gen_dataset(a.frames, a.seed, a.out, cfg);
  std::cout << m.path.string() << "\n";
  return 0;
}

udc::TrainConfig build_train_config(const TrainArgs& a) {
  udc::TrainConfig cfg;
  cfg.stage = static_cast<udc::Stage>(a.stage);
  cfg.loss = a.stage == 1 ? "ud" : "ur";
  if (!a.config.empty()) cfg = udc::read_train_config(a.config, cfg);
  cfg.stage = static_cast<udc::Stage>(a.stage);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.lr) cfg.lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;
  if (a.loss) cfg.loss = *a.loss;
  if (a.batch) cfg.batch = *a.batch;
  if (a.ns) cfg.model.ns = *a.ns;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  if (a.stage == 2 && a.ckpt_in.empty()) {
    throw UsageError("stage 2 requires --ckpt-in (the stage-1 checkpoint)");
  }
  udc::TrainConfig cfg;
  try {
    cfg = build_train_config(a);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const udc::Dataset train = udc::load_dataset(a.data);
  const udc::Dataset eval =
      a.eval_data.empty() ? train : udc::load_dataset(a.eval_data);
  const auto report = [&a](const udc::EpochRecord& r) {
    if (a.quiet) return;
    std::fprintf(stderr, "epoch %d loss=%.6g (%s) mae_clean_mm=%.3f rmse_clean_mm=%.3f\n",
                 r.epoch, r.loss, r.loss_family.c_str(), r.clean.mae_mm,
                 r.clean.rmse_mm);
  };
  const fs::path log_path =
      a.log.empty() ? fs::path(a.ckpt_out.string() + ".csv") : a.log;
  udc::TrainLog log;
  if (a.stage == 1) {
    auto result = udc::train_stage1(cfg, train, eval, report);
    udc::save_joint(a.ckpt_out, result.params);
    log = std::move(result.log);
  } else {
    const udc::JointModelParams stage1 = udc::load_joint(a.ckpt_in);
    cfg.model = stage1.config;
    auto result = udc::train_stage2(cfg, train, eval, stage1, report);
    udc::save_residual(a.ckpt_out, result.params);
    log = std::move(result.log);
  }
  udc::write_log_csv(log_path, log);
  std::cout << a.ckpt_out.string() << "\n";
  return 0;
}

std::optional<udc::ResidualNetParams> load_optional_residual(const fs::path& p) {
  if (p.empty()) return std::nullopt;
  return udc::load_residual(p);
}

int cmd_eval(const EvalArgs& a) {
  const udc::Against against =
      a.against == "semi" ? udc::Against::kSemi : udc::Against::kClean;
  const udc::JointModelParams stage1 = udc::load_joint(a.ckpt);
  const auto residual = load_optional_residual(a.ckpt2);
  const udc::Dataset data = udc::load_dataset(a.data);
  const udc::EvalResult r =
      udc::eval_run(stage1, residual ? &*residual : nullptr, data, against);
  std::cout << udc::format_report(r.mean) << "\n";
  return 0;
}

int cmd_render(const RenderArgs& a) {
  const udc::JointModelParams stage1 = udc::load_joint(a.ckpt);
  const auto residual = load_optional_residual(a.ckpt2);
  const udc::Frame frame = udc::load_frame(a.frame);
  const udc::FramePrediction p =
      udc::predict(stage1, residual ? &*residual : nullptr, frame);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw udc::IoError("cannot create " + a.out.string() + ": " + ec.message());
  udc::write_ppm(a.out / "depth.ppm", udc::render_depth(p.stage1.depth));
  udc::write_ppm(a.out / "uncert.ppm", udc::render_logvar(p.stage1.s));
  if (residual) {
    udc::write_ppm(a.out / "residual.ppm", udc::render_residual(p.residual));
    udc::write_ppm(a.out / "final.ppm", udc::render_depth(p.final_depth));
  }
  std::cout << a.out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Training reallocates the same large tensors every step; keep them on
  // the heap instead of fresh zeroed mappings.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"Uncertainty-driven depth completion toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--frames", gen.frames, "Number of frames (>= 1)")->required();
  g->add_option("--seed", gen.seed, "Global seed")->required();
  g->add_option("--outlier-rate", gen.outlier_rate, "Semi-dense GT outlier rate [0,1)");
  g->add_option("--dropout", gen.dropout, "LiDAR sample dropout [0,1)");
  g->add_option("--size", gen.size, "Frame size HxW (default 64x192)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train stage 1 (joint) or stage 2 (residual)");
  t->add_option("--stage", train.stage, "1 or 2")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  t->add_option("--data", train.data, "Training dataset directory")->required();
  t->add_option("--eval-data", train.eval_data,
                "Dataset for per-epoch metrics (default: training set)");
  t->add_option("--config", train.config, "key=value config file");
  t->add_option("--ckpt-out", train.ckpt_out, "Output checkpoint")->required();
  t->add_option("--ckpt-in", train.ckpt_in, "Stage-1 checkpoint (stage 2 only)");
  t->add_option("--log", train.log, "CSV log path (default: <ckpt-out>.csv)");
  t->add_option("--epochs", train.epochs, "Override epochs");
  t->add_option("--lr", train.lr, "Override base learning rate");
  t->add_option("--seed", train.seed, "Override seed");
  t->add_option("--loss", train.loss, "Override loss: ud|mse (stage 1), ur|urb (stage 2)");
  t->add_option("--batch", train.batch, "Override batch size");
  t->add_option("--ns", train.ns, "Override number of scales (stage 1)");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress on stderr");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on a dataset");
  e->add_option("--ckpt", eval.ckpt, "Stage-1 checkpoint")->required();
  e->add_option("--ckpt2", eval.ckpt2, "Stage-2 checkpoint");
  e->add_option("--data", eval.data, "Dataset directory")->required();
  e->add_option("--against", eval.against, "clean or semi")
      ->check(CLI::IsMember({"clean", "semi"}));

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Write false-color PPM renders for one frame");
  r->add_option("--ckpt", render.ckpt, "Stage-1 checkpoint")->required();
  r->add_option("--ckpt2", render.ckpt2, "Stage-2 checkpoint");
  r->add_option("--frame", render.frame, "Frame directory")->required();
  r->add_option("--out", render.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*r) return cmd_render(render);
  } catch (const UsageError& err) {
    std::cerr << "udc: " << err.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "udc: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
