// Command-line front end: dataset generation, training, interpolation,
// evaluation and gradient checks.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hvfi/checkpoint.hpp"
#include "hvfi/data.hpp"
#include "hvfi/eval.hpp"
#include "hvfi/gradcheck_suite.hpp"
#include "hvfi/image_io.hpp"
#include "hvfi/train.hpp"

namespace fs = std::filesystem;
using namespace hvfi;

namespace {

int gen_data(const SynthOptions& opt, const fs::path& out) {
  const auto data = gen_synthetic(opt);
  save_dataset(out, data);
  std::printf("wrote %zu triplets to %s\n", data.size(), out.string().c_str());
  return 0;
}

int train(const fs::path& config, const fs::path& data_dir, const fs::path& out,
          const std::string& resume, const std::string& log, bool quiet) {
  const TrainConfig cfg = TrainConfig::load(config);
  Trainer trainer(cfg, load_dataset(data_dir));
  if (!resume.empty()) {
    trainer.resume(load_checkpoint(resume));
    std::printf("resumed at step %lld\n", static_cast<long long>(trainer.steps()));
  }
  Trainer::RunOptions run;
  run.checkpoint = out;
  if (!log.empty()) run.log = fs::path(log);
  if (!quiet) {
    std::printf("%s\n", Trainer::log_header(cfg.model.levels).c_str());
    run.on_epoch = [](const EpochStats& e) {
      std::printf("%s\n", Trainer::log_row(e).c_str());
      std::fflush(stdout);
    };
  }
  trainer.run(run);
  std::printf("saved %s after %lld steps\n", out.string().c_str(),
              static_cast<long long>(trainer.steps()));
  return 0;
}

int eval(const fs::path& model_path, const fs::path& data_dir, const std::vector<int>& intervals,
         const std::string& report_path, int threads) {
  const Model<float> model = load_model(model_path);
  const auto report =
      eval_run(model, load_dataset(data_dir), intervals, model_path.filename().string(), threads);
  std::cout << report.tsv();
  if (!report_path.empty()) write_report(report_path, report);
  return 0;
}

int gradcheck_cmd(const std::string& op, int seeds) {
  std::vector<std::string> ops;
  if (op.empty()) {
    ops = gradcheck_ops();
  } else {
    ops.push_back(op);
  }
  int failures = 0;
  for (const auto& name : ops) {
    double worst = 0;
    double tolerance = 0;
    int failed = 0;
    for (int s = 0; s < seeds; ++s) {
      const auto r = check_op(name, static_cast<std::uint64_t>(s));
      worst = std::max(worst, r.max_error());
      tolerance = r.tolerance;
      if (!r.passed()) ++failed;
    }
    std::printf("%-18s %s  max rel error %.3e (tol %.0e, %d/%d seeds passed)\n", name.c_str(),
                failed ? "FAIL" : "ok  ", worst, tolerance, seeds - failed, seeds);
    failures += failed;
  }
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-scale video frame interpolation"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic triplet dataset");
  gen->add_option("--count", synth.count, "Scenes")->capture_default_str();
  gen->add_option("--size", synth.size, "Frame side in pixels")->capture_default_str();
  gen->add_option("--motion-lo", synth.motion_lo, "Least per-interval motion, px")->capture_default_str();
  gen->add_option("--motion-hi", synth.motion_hi, "Largest per-interval motion, px")->capture_default_str();
  gen->add_option("--seed", synth.seed)->capture_default_str();
  gen->add_option("--intervals", synth.intervals, "One triplet per scene and interval")
      ->delimiter(',')
      ->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  std::string config, data_dir, out, resume, log;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "key = value file")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", out, "Checkpoint to write")->required();
  tr->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--log", log, "Tab-separated per-epoch log");
  tr->add_flag("--quiet", quiet, "No per-epoch output");

  std::string model, frame0, frame1, interp_out;
  auto* in = app.add_subcommand("interp", "Interpolate the middle frame of two images");
  in->add_option("--model", model)->required()->check(CLI::ExistingFile);
  in->add_option("--frame0", frame0)->required();
  in->add_option("--frame1", frame1)->required();
  in->add_option("--out", interp_out, "PNG to write")->required();

  std::vector<int> intervals{1, 2, 3, 4};
  std::string report;
  int threads = 1;
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM per frame interval");
  ev->add_option("--model", model)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--intervals", intervals)->delimiter(',')->capture_default_str();
  ev->add_option("--report", report, "TSV report; a .json twin is written next to it");
  ev->add_option("--threads", threads)->capture_default_str()->check(CLI::PositiveNumber);

  std::string op;
  int seeds = 20;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--op", op, "Single op to check")->check(CLI::IsMember(gradcheck_ops()));
  gc->add_option("--seeds", seeds)->capture_default_str()->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(synth, gen_out);
    if (*tr) return train(config, data_dir, out, resume, log, quiet);
    if (*in) {
      interp_files(model, frame0, frame1, interp_out);
      return 0;
    }
    if (*ev) return eval(model, data_dir, intervals, report, threads);
    if (*gc) return gradcheck_cmd(op, seeds);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
