#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "hvfi/data.hpp"
#include "hvfi/tensor.hpp"

namespace hvfi {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Clamps to [0, 1] and rounds half up to the nearest of 256 levels.
std::uint8_t quantize(float value);

/// 8-bit RGB raster, row-major, interleaved.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Decodes PNG (any bit depth / colour type, reduced to 8-bit RGB) or binary
/// PPM (P6, maxval 255), chosen by the file's signature.
Image8 read_image8(const std::filesystem::path& path);
void write_png8(const std::filesystem::path& path, const Image8& image);
void write_ppm8(const std::filesystem::path& path, const Image8& image);

Image8 to_image8(const Tensor<float>& image);
/// (1, 3, H, W) with values k / 255.
Tensor<float> from_image8(const Image8& image);

Tensor<float> read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// A dataset directory holds `index.tsv` (one row per triplet: id, interval,
/// motion_px, flow_x, flow_y) and three PNGs per row: <id>_a.png,
/// <id>_b.png and <id>_gt.png.
void save_dataset(const std::filesystem::path& dir, const std::vector<FrameTriplet>& samples);
std::vector<FrameTriplet> load_dataset(const std::filesystem::path& dir);

}  // namespace hvfi
