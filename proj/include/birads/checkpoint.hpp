#pragma once

#include "birads/model.hpp"
#include "birads/preprocess.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace birads {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  nn::Matrix<float> value;
};

/// Flat little-endian float32 container: `weights.bin` holds the tensors
/// back to back (column-major), `weights.index.json` maps each name to
/// dtype, shape and byte offset.
void write_tensor_archive(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_archive(const std::filesystem::path& dir);

struct Checkpoint {
  Model model;
  PreprocessConfig preprocess;
};

/// Writes config.json, weights.bin and weights.index.json into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const PreprocessConfig& preprocess = {});
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Writes only the backbone tensors, for use as pretrained weights.
void export_backbone(const std::filesystem::path& dir, const Model& model);

/// Overwrites the backbone of `model` from an archive directory; the heads
/// are left untouched. Throws naming the first missing or mis-shaped tensor.
void load_backbone(const std::filesystem::path& dir, Model& model);

}  // namespace birads
