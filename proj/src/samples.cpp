#include "birads/samples.hpp"

#include <numeric>

namespace birads {

std::vector<Sample> prepare_samples(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                                    const PreprocessConfig& config) {
  config.validate();
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= manifest.size()) throw DatasetError("record index " + std::to_string(i) + " out of range");
    const auto& record = manifest.records[i];
    const GrayImage image = read_png_gray(manifest.resolve(record));
    out.push_back({prepare_image(image, record.bbox, config), record.targets(), i});
  }
  return out;
}

TaskTargets stack_targets(const std::vector<Sample>& samples, const std::vector<std::size_t>& order) {
  TaskTargets out = TaskTargets::zeros(static_cast<Eigen::Index>(order.size()));
  for (std::size_t j = 0; j < order.size(); ++j) out.set_sample(static_cast<Eigen::Index>(j), samples[order[j]].targets);
  return out;
}

TaskTargets stack_targets(const std::vector<Sample>& samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return stack_targets(samples, order);
}

TaskValues<double> predict(const Model& model, const std::vector<Sample>& samples, std::size_t chunk) {
  TaskValues<double> out = TaskValues<double>::zeros(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const std::size_t end = std::min(samples.size(), begin + chunk);
    std::vector<const ChannelImage*> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(&samples[i].image);
    const auto outputs = model.forward(make_batch<float>(images));
    for (std::size_t i = begin; i < end; ++i) {
      out.set_sample(static_cast<Eigen::Index>(i), outputs, static_cast<Eigen::Index>(i - begin));
    }
  }
  return out;
}

}  // namespace birads
