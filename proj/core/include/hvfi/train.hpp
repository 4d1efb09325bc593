#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hvfi/checkpoint.hpp"
#include "hvfi/data.hpp"
#include "hvfi/loss.hpp"
#include "hvfi/optim.hpp"
#include "hvfi/pipeline.hpp"

namespace hvfi {

struct TrainConfig {
  double lr = 3e-4;
  int epochs = 60;
  int batch = 4;
  int crop = 64;
  std::uint64_t seed = 1;
  double weight_decay = 1e-4;
  std::int64_t max_steps = 0;  // > 0 caps the run (and the cosine horizon)
  bool augment = true;         // random crop; flips and reversal as below
  bool flip = true;
  bool reverse = true;
  int checkpoint_every = 0;    // epochs between checkpoints; 0 saves only at the end
  ModelConfig model;

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
  /// Flat `key = value` text, one pair per line; '#' starts a comment. Model
  /// keys (levels, kernel, width, ...) sit alongside the training keys.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string str() const;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::int64_t step, double value);
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct StepStats {
  std::int64_t step = 0;  // index of the step just taken, from 0
  double lr = 0;
  double total = 0;
  std::vector<double> l1;      // per stage, coarsest first
  std::vector<double> census;
};

struct EpochStats {
  int epoch = 0;            // from 1
  std::int64_t steps = 0;   // optimizer steps taken so far
  double lr = 0;            // rate of the last step
  double total = 0;         // means over the epoch's steps
  std::vector<double> l1;
  std::vector<double> census;
};

/// Fraction of parameter scalars whose gradient is exactly zero (or absent).
double zero_gradient_fraction(const ParamStore<float>& params);

/// Single-owner training loop. The sample order and augmentation of each
/// epoch derive from the seed and the epoch index alone, so a run resumed
/// from a checkpoint replays the same batches as an uninterrupted one.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<FrameTriplet> data);
  // The optimizer points into the model's parameter store.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  Model<float>& model() { return model_; }
  AdamW<float>& optimizer() { return opt_; }
  std::int64_t steps() const { return opt_.steps(); }
  std::int64_t steps_per_epoch() const;
  std::int64_t total_steps() const;
  bool done() const { return steps() >= total_steps(); }

  /// Runs one optimizer step on the next batch of the schedule.
  StepStats step();
  /// Steps to the end of the current epoch (or of the run).
  EpochStats epoch();

  struct RunOptions {
    std::optional<std::filesystem::path> checkpoint;  // also written at the end
    std::optional<std::filesystem::path> log;         // tab-separated, one row per epoch
    std::function<void(const EpochStats&)> on_epoch;
  };
  void run(const RunOptions& options);

  Checkpoint checkpoint() const { return capture_checkpoint(model_, &opt_); }
  /// Restores parameters, optimizer moments and the step counter.
  void resume(const Checkpoint& checkpoint);

  /// The augmented, batched inputs of a given step (exposed for tests).
  struct Batch {
    Tensor<float> frame_a, frame_b, target;
  };
  Batch batch(std::int64_t step) const;

  static std::string log_header(int levels);
  static std::string log_row(const EpochStats& stats);

 private:
  TrainConfig cfg_;
  std::vector<FrameTriplet> data_;
  Model<float> model_;
  AdamW<float> opt_;
};

}  // namespace hvfi
