#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hvfi/optim.hpp"
#include "hvfi/pipeline.hpp"

namespace hvfi {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// Bad magic bytes or an unparsable header.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Tensor list or shapes do not match the model being restored.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// File layout: "HVFI", u32 version, then two sections, each a u64 length,
/// that many bytes of header text and the raw little-endian f32 payload of
/// every tensor the header lists, in order. The first section holds the
/// model config and parameters, the second the optimizer state.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  std::vector<NamedTensor> params;
  bool has_optimizer = false;
  std::int64_t steps = 0;
  std::vector<NamedTensor> first_moments;
  std::vector<NamedTensor> second_moments;
};

Checkpoint capture_checkpoint(const Model<float>& model, const AdamW<float>* optimizer = nullptr);

/// Writes to a temporary sibling file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameters (and optimizer state when both sides have it) into
/// `model`. Throws CheckpointShapeError naming the first model tensor that is
/// missing or shaped differently, or the first surplus checkpoint tensor.
void restore_checkpoint(const Checkpoint& checkpoint, Model<float>& model,
                        AdamW<float>* optimizer = nullptr);

/// Builds a model from the checkpoint's config and restores its parameters.
Model<float> load_model(const std::filesystem::path& path);

}  // namespace hvfi
