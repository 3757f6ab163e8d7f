#pragma once

#include "birads/dataset.hpp"
#include "birads/model.hpp"
#include "birads/preprocess.hpp"
#include "birads/tasks.hpp"

#include <cstddef>
#include <vector>

namespace birads {

/// A preprocessed network input with its encoded targets.
struct Sample {
  ChannelImage image;
  TaskTargets targets;
  std::size_t record = 0;  // index into the source manifest
};

/// Loads, crops, resizes and channel-synthesizes the selected records.
std::vector<Sample> prepare_samples(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                                    const PreprocessConfig& config);

/// Column-stacks the targets of `samples[order[i]]`.
TaskTargets stack_targets(const std::vector<Sample>& samples, const std::vector<std::size_t>& order);
TaskTargets stack_targets(const std::vector<Sample>& samples);

/// Inference-mode outputs for every sample, evaluated in chunks.
TaskValues<double> predict(const Model& model, const std::vector<Sample>& samples, std::size_t chunk = 32);

}  // namespace birads
