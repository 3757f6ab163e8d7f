#pragma once

#include "birads/image.hpp"
#include "birads/nn.hpp"
#include "birads/tasks.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace birads {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// VGG-16 style convolutional encoder: every stage is a run of 3x3
/// conv + ReLU layers followed by 2x2 max pooling.
struct BackboneConfig {
  std::string kind = "vgg16_encoder";
  std::vector<std::vector<int>> stages = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  int input_size = 256;
  std::optional<std::filesystem::path> pretrained_weights;
  bool trainable = true;

  int feature_channels() const { return stages.back().back(); }
  int feature_size() const { return input_size >> stages.size(); }
  int conv_layer_count() const;
  void validate() const;
};

struct HeadConfig {
  int descriptor_hidden = 256;
  int fusion_hidden = 64;
  double dropout = 0.5;
};

/// Which branches contribute to the fused likelihood / tumor inputs. A
/// disabled branch is still evaluated but its probabilities enter the fusion
/// as zeros and receive no gradient from it.
struct BranchMask {
  std::array<bool, 5> descriptors = {true, true, true, true, true};
  bool likelihood = true;

  bool operator==(const BranchMask&) const = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig heads;
  BranchMask branches;
  std::uint64_t seed = 0;

  /// Full-size VGG-16 encoder on 256x256 inputs.
  static ModelConfig vgg16(std::uint64_t seed = 0);
  /// Same 13-conv / 5-pool topology with channel widths divided by
  /// `width_divisor` and a smaller input, for CPU-scale training.
  static ModelConfig vgg16_scaled(int width_divisor, int input_size, std::uint64_t seed = 0);
  /// Two conv layers and all heads on 16x16 inputs.
  static ModelConfig miniature(std::uint64_t seed = 0);
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

template <typename Scalar>
class BiradsNet {
 public:
  using Matrix = nn::Matrix<Scalar>;
  using RowMatrix = nn::RowMatrix<Scalar>;
  using Maps = nn::FeatureMaps<Scalar>;
  using Outputs = TaskValues<Scalar>;

  /// Everything the backward pass needs from one training-mode forward pass.
  struct Tape {
    std::vector<std::vector<RowMatrix>> conv_inputs;   // [layer][sample]
    std::vector<std::vector<RowMatrix>> conv_outputs;  // [layer][sample]
    std::vector<std::vector<std::vector<int>>> pool_argmax;
    std::vector<std::pair<int, int>> conv_dims;  // (height, width) per conv layer
    Matrix features;                             // F x B
    std::array<Matrix, 5> head_hidden;           // post-ReLU, pre-dropout
    std::array<Matrix, 5> head_mask;
    std::array<Matrix, 5> head_dropped;
    Matrix descriptor_concat;  // 17 x B after masking
    Matrix likelihood_input, likelihood_hidden;
    Matrix tumor_input, tumor_hidden;
    Outputs outputs;
  };

  BiradsNet() = default;
  explicit BiradsNet(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  void set_branch_mask(const BranchMask& mask) { config_.branches = mask; }

  /// Inference-mode forward pass (dropout disabled).
  Outputs forward(const Maps& batch) const;

  /// Training-mode forward pass; dropout masks are drawn from `dropout_seed`.
  Tape forward_train(const Maps& batch, std::uint64_t dropout_seed) const;

  /// Accumulates parameter gradients for d(loss)/d(outputs) = `grad_outputs`.
  void backward(const Tape& tape, const Outputs& grad_outputs);

  /// Backbone feature maps (after the last pooling stage).
  Maps backbone_features(const Maps& batch) const;

  void zero_grad();

  /// Every parameter in canonical order: backbone first, then heads.
  std::vector<nn::Parameter<Scalar>*> parameters();
  std::vector<const nn::Parameter<Scalar>*> parameters() const;
  std::size_t parameter_count() const;

  /// Copies all parameters from a model of identical architecture, possibly
  /// of another scalar type; throws naming the first tensor that disagrees.
  template <typename Other>
  void copy_parameters_from(const BiradsNet<Other>& other);

 private:
  void check_input(const Maps& batch) const;
  void initialize();
  Matrix run_backbone(const Maps& batch, Tape* tape) const;
  Outputs run_heads(const Matrix& features, Tape* tape, std::uint64_t dropout_seed) const;

  struct DescriptorHead {
    nn::Linear<Scalar> hidden;
    nn::Linear<Scalar> out;
  };

  ModelConfig config_;
  std::vector<nn::Conv3x3Relu<Scalar>> convs_;
  std::vector<bool> pool_after_;
  std::array<DescriptorHead, 5> descriptor_heads_;
  nn::Linear<Scalar> subtype_out_;
  nn::Linear<Scalar> likelihood_hidden_, likelihood_out_;
  nn::Linear<Scalar> tumor_hidden_, tumor_out_;
};

extern template class BiradsNet<float>;
extern template class BiradsNet<double>;

using Model = BiradsNet<float>;

template <typename Scalar>
template <typename Other>
void BiradsNet<Scalar>::copy_parameters_from(const BiradsNet<Other>& other) {
  auto mine = parameters();
  auto theirs = other.parameters();
  if (mine.size() != theirs.size()) throw ModelError("parameter count mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->name != theirs[i]->name || mine[i]->value.rows() != theirs[i]->value.rows() ||
        mine[i]->value.cols() != theirs[i]->value.cols()) {
      throw ModelError("parameter mismatch at tensor '" + mine[i]->name + "'");
    }
    mine[i]->value = theirs[i]->value.template cast<Scalar>();
  }
}

/// Stacks prepared images into a network batch.
template <typename Scalar>
nn::FeatureMaps<Scalar> make_batch(const std::vector<const ChannelImage*>& images) {
  nn::FeatureMaps<Scalar> batch;
  if (images.empty()) return batch;
  batch.height = images.front()->height;
  batch.width = images.front()->width;
  for (const auto* img : images) {
    if (img->height != batch.height || img->width != batch.width) throw ModelError("images in a batch differ in size");
    batch.samples.push_back(img->data.template cast<Scalar>());
  }
  return batch;
}

template <typename Scalar>
nn::FeatureMaps<Scalar> make_batch(const std::vector<ChannelImage>& images) {
  std::vector<const ChannelImage*> ptrs;
  for (const auto& i : images) ptrs.push_back(&i);
  return make_batch<Scalar>(ptrs);
}

}  // namespace birads
