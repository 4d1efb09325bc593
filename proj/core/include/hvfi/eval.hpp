#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hvfi/data.hpp"
#include "hvfi/pipeline.hpp"

namespace hvfi {

struct IntervalMetrics {
  int interval = 0;
  std::int64_t samples = 0;
  double psnr = 0;  // mean of per-sample values
  double ssim = 0;
};

struct EvalReport {
  std::string model;
  std::vector<IntervalMetrics> intervals;  // in the requested order

  std::int64_t samples() const;
  /// Header line plus one row per interval.
  std::string tsv() const;
  std::string json() const;
};

/// Maps (frame0, frame1), each (1,3,H,W) in [0,1], to the middle frame.
using Interpolator = std::function<Tensor<float>(const Tensor<float>&, const Tensor<float>&)>;

/// Mean PSNR and SSIM of `interpolate` against the targets, per interval.
/// Throws std::invalid_argument on an empty dataset or when a requested
/// interval has no samples. With workers > 1 samples are spread over threads
/// (so `interpolate` must be safe to call concurrently); the per-sample
/// metrics are still summed in dataset order, so the report does not depend
/// on the thread count.
EvalReport eval_run(const Interpolator& interpolate, const std::vector<FrameTriplet>& data,
                    const std::vector<int>& intervals, const std::string& model_id,
                    int workers = 1);
EvalReport eval_run(const Model<float>& model, const std::vector<FrameTriplet>& data,
                    const std::vector<int>& intervals, const std::string& model_id,
                    int workers = 1);

/// Mirror padding without repeating the edge sample (a b c | b a), applied
/// on the bottom and right only.
Tensor<float> reflect_pad(const Tensor<float>& image, std::int64_t bottom, std::int64_t right);
Tensor<float> crop_top_left(const Tensor<float>& image, std::int64_t h, std::int64_t w);

/// Runs the model on frames of any size: pads to the next multiple of
/// 2^(levels-1), interpolates, and crops back. Throws DimensionError when the
/// two frames differ in shape.
Tensor<float> interpolate_any_size(const Model<float>& model, const Tensor<float>& frame0,
                                   const Tensor<float>& frame1);

/// Reads a checkpoint and two images, writes the interpolated frame as PNG.
void interp_files(const std::filesystem::path& model, const std::filesystem::path& frame0,
                  const std::filesystem::path& frame1, const std::filesystem::path& out);

/// Writes `report.tsv()` to `path` and `report.json()` next to it with the
/// extension replaced by ".json" (or ".tsv" when `path` already ends in .json).
void write_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace hvfi
