#include "birads/model.hpp"

#include "birads/random.hpp"

#include "json.hpp"

#include <cmath>

namespace birads {

using nlohmann::json;

int BackboneConfig::conv_layer_count() const {
  int n = 0;
  for (const auto& s : stages) n += static_cast<int>(s.size());
  return n;
}

void BackboneConfig::validate() const {
  if (kind != "vgg16_encoder") throw ModelError("unknown backbone kind '" + kind + "'");
  if (stages.empty()) throw ModelError("backbone needs at least one stage");
  for (const auto& s : stages) {
    if (s.empty()) throw ModelError("backbone stage without conv layers");
    for (int c : s) {
      if (c <= 0) throw ModelError("conv layer width must be positive");
    }
  }
  const int factor = 1 << stages.size();
  if (input_size <= 0 || input_size % factor != 0) {
    throw ModelError("input size " + std::to_string(input_size) + " is not divisible by " + std::to_string(factor));
  }
}

ModelConfig ModelConfig::vgg16(std::uint64_t seed) {
  ModelConfig c;
  c.seed = seed;
  return c;
}

ModelConfig ModelConfig::vgg16_scaled(int width_divisor, int input_size, std::uint64_t seed) {
  ModelConfig c = vgg16(seed);
  for (auto& stage : c.backbone.stages) {
    for (int& width : stage) width = std::max(1, width / width_divisor);
  }
  c.backbone.input_size = input_size;
  c.heads.descriptor_hidden = std::max(8, 256 / width_divisor);
  return c;
}

ModelConfig ModelConfig::miniature(std::uint64_t seed) {
  ModelConfig c;
  c.seed = seed;
  c.backbone.stages = {{4}, {4}};
  c.backbone.input_size = 16;
  c.heads.descriptor_hidden = 8;
  c.heads.fusion_hidden = 6;
  return c;
}

std::string model_config_to_json(const ModelConfig& config) {
  json j;
  j["backbone"] = {{"kind", config.backbone.kind},
                   {"stages", config.backbone.stages},
                   {"input_size", config.backbone.input_size},
                   {"trainable", config.backbone.trainable}};
  j["backbone"]["pretrained_weights"] =
      config.backbone.pretrained_weights ? json(config.backbone.pretrained_weights->string()) : json(nullptr);
  j["heads"] = {{"descriptor_hidden", config.heads.descriptor_hidden},
                {"fusion_hidden", config.heads.fusion_hidden},
                {"dropout", config.heads.dropout}};
  j["branches"] = {{"descriptors", config.branches.descriptors}, {"likelihood", config.branches.likelihood}};
  j["seed"] = config.seed;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    const auto& b = j.at("backbone");
    c.backbone.kind = b.at("kind").get<std::string>();
    c.backbone.stages = b.at("stages").get<std::vector<std::vector<int>>>();
    c.backbone.input_size = b.at("input_size").get<int>();
    c.backbone.trainable = b.value("trainable", true);
    if (b.contains("pretrained_weights") && !b["pretrained_weights"].is_null()) {
      c.backbone.pretrained_weights = b["pretrained_weights"].get<std::string>();
    }
    const auto& h = j.at("heads");
    c.heads.descriptor_hidden = h.at("descriptor_hidden").get<int>();
    c.heads.fusion_hidden = h.at("fusion_hidden").get<int>();
    c.heads.dropout = h.at("dropout").get<double>();
    if (j.contains("branches")) {
      c.branches.descriptors = j["branches"].at("descriptors").get<std::array<bool, 5>>();
      c.branches.likelihood = j["branches"].at("likelihood").get<bool>();
    }
    c.seed = j.value("seed", std::uint64_t{0});
    c.backbone.validate();
    return c;
  } catch (const json::exception& e) {
    throw ModelError(std::string("malformed model config: ") + e.what());
  }
}

template <typename Scalar>
BiradsNet<Scalar>::BiradsNet(const ModelConfig& config) : config_(config) {
  config_.backbone.validate();
  if (config_.heads.descriptor_hidden <= 0 || config_.heads.fusion_hidden <= 0) {
    throw ModelError("head widths must be positive");
  }
  if (config_.heads.dropout < 0.0 || config_.heads.dropout >= 1.0) throw ModelError("dropout must lie in [0, 1)");

  int in = 3;
  for (std::size_t s = 0; s < config_.backbone.stages.size(); ++s) {
    const auto& stage = config_.backbone.stages[s];
    for (std::size_t l = 0; l < stage.size(); ++l) {
      const std::string name = "backbone.conv" + std::to_string(s + 1) + "_" + std::to_string(l + 1);
      convs_.emplace_back(name, in, stage[l]);
      pool_after_.push_back(l + 1 == stage.size());
      in = stage[l];
    }
  }
  const int f = config_.backbone.feature_channels();
  const int hidden = config_.heads.descriptor_hidden;
  for (int k = 0; k < 5; ++k) {
    const std::string name = "head." + std::string(kTaskNames[k]);
    descriptor_heads_[k].hidden = nn::Linear<Scalar>(name + ".hidden", f, hidden);
    descriptor_heads_[k].out = nn::Linear<Scalar>(name + ".out", hidden, kTaskArity[k]);
  }
  subtype_out_ = nn::Linear<Scalar>("head.margin_subtypes.out", hidden, 4);
  const int fusion = config_.heads.fusion_hidden;
  likelihood_hidden_ = nn::Linear<Scalar>("head.likelihood.hidden", f + kDescriptorProbabilityWidth, fusion);
  likelihood_out_ = nn::Linear<Scalar>("head.likelihood.out", fusion, 1);
  tumor_hidden_ = nn::Linear<Scalar>("head.tumor_class.hidden", f + kDescriptorProbabilityWidth + 1, fusion);
  tumor_out_ = nn::Linear<Scalar>("head.tumor_class.out", fusion, 2);
  initialize();
}

template <typename Scalar>
void BiradsNet<Scalar>::initialize() {
  Rng rng = make_rng({config_.seed, 0x1417u});
  auto fill = [&rng](nn::Parameter<Scalar>& p, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(normal(rng));
  };
  auto he = [&](nn::Parameter<Scalar>& w) { fill(w, std::sqrt(2.0 / static_cast<double>(w.value.cols()))); };
  auto glorot = [&](nn::Parameter<Scalar>& w) {
    fill(w, std::sqrt(2.0 / static_cast<double>(w.value.cols() + w.value.rows())));
  };
  for (auto& c : convs_) he(c.weight);
  // Every other filter starts with zero tap sum per input channel, so the
  // encoder responds to local contrast as well as to intensity.
  for (auto& c : convs_) {
    auto& w = c.weight.value;
    for (Eigen::Index o = 0; o < w.rows(); o += 2) {
      for (Eigen::Index ch = 0; ch < w.cols() / 9; ++ch) {
        auto taps = w.row(o).segment(ch * 9, 9);
        taps.array() -= taps.mean();
        taps *= static_cast<Scalar>(std::sqrt(9.0 / 8.0));
      }
    }
  }
  for (auto& h : descriptor_heads_) {
    he(h.hidden.weight);
    glorot(h.out.weight);
  }
  glorot(subtype_out_.weight);
  he(likelihood_hidden_.weight);
  glorot(likelihood_out_.weight);
  he(tumor_hidden_.weight);
  glorot(tumor_out_.weight);
}

template <typename Scalar>
void BiradsNet<Scalar>::check_input(const Maps& batch) const {
  const int size = config_.backbone.input_size;
  if (batch.batch() == 0) throw ModelError("empty batch");
  for (const auto& s : batch.samples) {
    if (s.rows() != 3 || batch.height != size || batch.width != size ||
        s.cols() != static_cast<Eigen::Index>(size) * size) {
      throw ModelError("expected input of shape " + std::to_string(size) + "x" + std::to_string(size) + "x3, got " +
                       std::to_string(batch.height) + "x" + std::to_string(batch.width) + "x" + std::to_string(s.rows()));
    }
  }
}

template <typename Scalar>
typename BiradsNet<Scalar>::Matrix BiradsNet<Scalar>::run_backbone(const Maps& batch, Tape* tape) const {
  const int layers = static_cast<int>(convs_.size());
  const int batch_size = batch.batch();
  if (tape) {
    tape->conv_inputs.assign(layers, std::vector<RowMatrix>(batch_size));
    tape->conv_outputs.assign(layers, std::vector<RowMatrix>(batch_size));
    tape->pool_argmax.assign(layers, std::vector<std::vector<int>>(batch_size));
    tape->conv_dims.assign(layers, {0, 0});
  }
  Matrix features(config_.backbone.feature_channels(), batch_size);
  for (int b = 0; b < batch_size; ++b) {
    RowMatrix x = batch.samples[b];
    int h = batch.height, w = batch.width;
    for (int l = 0; l < layers; ++l) {
      RowMatrix y = convs_[l].forward(x, h, w);
      if (tape) {
        tape->conv_dims[l] = {h, w};
        tape->conv_inputs[l][b] = std::move(x);
        tape->conv_outputs[l][b] = y;
      }
      if (pool_after_[l]) {
        x = nn::maxpool2x2<Scalar>(y, h, w, tape ? &tape->pool_argmax[l][b] : nullptr);
        h /= 2;
        w /= 2;
      } else {
        x = std::move(y);
      }
    }
    features.col(b) = x.rowwise().mean();
  }
  return features;
}

template <typename Scalar>
typename BiradsNet<Scalar>::Outputs BiradsNet<Scalar>::run_heads(const Matrix& features, Tape* tape,
                                                                 std::uint64_t dropout_seed) const {
  const Eigen::Index batch = features.cols();
  const bool dropout = tape && config_.heads.dropout > 0.0;
  Rng rng = make_rng({dropout_seed, 0xd209u});
  Outputs out;
  std::array<Matrix*, 5> probs = {&out.shape, &out.orientation, &out.margin, &out.echo, &out.posterior};
  Matrix margin_dropped;
  for (int k = 0; k < 5; ++k) {
    Matrix hidden = nn::relu(descriptor_heads_[k].hidden.forward(features));
    Matrix dropped = hidden;
    if (dropout) {
      Matrix mask = nn::dropout_mask<Scalar>(hidden.rows(), hidden.cols(), config_.heads.dropout, rng);
      dropped = hidden.cwiseProduct(mask);
      tape->head_mask[k] = std::move(mask);
    }
    *probs[k] = nn::softmax<Scalar>(descriptor_heads_[k].out.forward(dropped));
    if (k == 2) margin_dropped = dropped;
    if (tape) {
      tape->head_hidden[k] = std::move(hidden);
      tape->head_dropped[k] = std::move(dropped);
    }
  }
  out.subtypes = nn::sigmoid<Scalar>(subtype_out_.forward(margin_dropped));

  const Eigen::Index f = features.rows();
  Matrix concat = Matrix::Zero(kDescriptorProbabilityWidth, batch);
  Eigen::Index row = 0;
  for (int k = 0; k < 5; ++k) {
    if (config_.branches.descriptors[k]) concat.middleRows(row, kTaskArity[k]) = *probs[k];
    row += kTaskArity[k];
  }

  Matrix likelihood_input(f + kDescriptorProbabilityWidth, batch);
  likelihood_input << features, concat;
  Matrix likelihood_hidden = nn::relu(likelihood_hidden_.forward(likelihood_input));
  out.likelihood = nn::sigmoid<Scalar>(likelihood_out_.forward(likelihood_hidden));

  Matrix tumor_input(f + kDescriptorProbabilityWidth + 1, batch);
  tumor_input << features, concat, (config_.branches.likelihood ? out.likelihood : Matrix::Zero(1, batch));
  Matrix tumor_hidden = nn::relu(tumor_hidden_.forward(tumor_input));
  out.tumor = nn::softmax<Scalar>(tumor_out_.forward(tumor_hidden));

  if (tape) {
    tape->features = features;
    tape->descriptor_concat = std::move(concat);
    tape->likelihood_input = std::move(likelihood_input);
    tape->likelihood_hidden = std::move(likelihood_hidden);
    tape->tumor_input = std::move(tumor_input);
    tape->tumor_hidden = std::move(tumor_hidden);
    tape->outputs = out;
  }
  return out;
}

template <typename Scalar>
typename BiradsNet<Scalar>::Outputs BiradsNet<Scalar>::forward(const Maps& batch) const {
  check_input(batch);
  return run_heads(run_backbone(batch, nullptr), nullptr, 0);
}

template <typename Scalar>
typename BiradsNet<Scalar>::Tape BiradsNet<Scalar>::forward_train(const Maps& batch, std::uint64_t dropout_seed) const {
  check_input(batch);
  Tape tape;
  const Matrix features = run_backbone(batch, &tape);
  run_heads(features, &tape, dropout_seed);
  return tape;
}

template <typename Scalar>
typename BiradsNet<Scalar>::Maps BiradsNet<Scalar>::backbone_features(const Maps& batch) const {
  check_input(batch);
  Maps out;
  out.height = batch.height;
  out.width = batch.width;
  for (const auto& sample : batch.samples) {
    RowMatrix x = sample;
    int h = batch.height, w = batch.width;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      x = convs_[l].forward(x, h, w);
      if (pool_after_[l]) {
        x = nn::maxpool2x2<Scalar>(x, h, w, nullptr);
        h /= 2;
        w /= 2;
      }
    }
    out.height = h;
    out.width = w;
    out.samples.push_back(std::move(x));
  }
  return out;
}

template <typename Scalar>
void BiradsNet<Scalar>::backward(const Tape& tape, const Outputs& grad_outputs) {
  const auto& out = tape.outputs;
  const Eigen::Index batch = out.batch_size();
  const Eigen::Index f = tape.features.rows();
  Outputs grad = grad_outputs;

  // Tumor branch: consumes [f; X1..X5; X10].
  Matrix d_tumor = tumor_out_.backward(tape.tumor_hidden, nn::softmax_backward<Scalar>(out.tumor, grad.tumor));
  d_tumor = (tape.tumor_hidden.array() > Scalar(0)).select(d_tumor.array(), Scalar(0)).matrix();
  const Matrix d_tumor_input = tumor_hidden_.backward(tape.tumor_input, d_tumor);
  Matrix d_features = d_tumor_input.topRows(f);
  Matrix d_concat = d_tumor_input.middleRows(f, kDescriptorProbabilityWidth);
  if (config_.branches.likelihood) grad.likelihood += d_tumor_input.bottomRows(1);

  // Likelihood branch: consumes [f; X1..X5].
  Matrix d_like =
      likelihood_out_.backward(tape.likelihood_hidden, nn::sigmoid_backward<Scalar>(out.likelihood, grad.likelihood));
  d_like = (tape.likelihood_hidden.array() > Scalar(0)).select(d_like.array(), Scalar(0)).matrix();
  const Matrix d_like_input = likelihood_hidden_.backward(tape.likelihood_input, d_like);
  d_features += d_like_input.topRows(f);
  d_concat += d_like_input.bottomRows(kDescriptorProbabilityWidth);

  std::array<Matrix*, 5> grad_probs = {&grad.shape, &grad.orientation, &grad.margin, &grad.echo, &grad.posterior};
  std::array<const Matrix*, 5> probs = {&out.shape, &out.orientation, &out.margin, &out.echo, &out.posterior};
  Eigen::Index row = 0;
  for (int k = 0; k < 5; ++k) {
    if (config_.branches.descriptors[k]) *grad_probs[k] += d_concat.middleRows(row, kTaskArity[k]);
    row += kTaskArity[k];
  }

  const Matrix d_margin_dropped =
      subtype_out_.backward(tape.head_dropped[2], nn::sigmoid_backward<Scalar>(out.subtypes, grad.subtypes));

  for (int k = 0; k < 5; ++k) {
    auto& head = descriptor_heads_[k];
    Matrix d_dropped = head.out.backward(tape.head_dropped[k], nn::softmax_backward<Scalar>(*probs[k], *grad_probs[k]));
    if (k == 2) d_dropped += d_margin_dropped;
    if (tape.head_mask[k].size() > 0) d_dropped = d_dropped.cwiseProduct(tape.head_mask[k]);
    d_dropped = (tape.head_hidden[k].array() > Scalar(0)).select(d_dropped.array(), Scalar(0)).matrix();
    d_features += head.hidden.backward(tape.features, d_dropped);
  }

  if (!config_.backbone.trainable) return;

  const int layers = static_cast<int>(convs_.size());
  for (Eigen::Index b = 0; b < batch; ++b) {
    // Global average pooling spreads the feature gradient evenly over the last map.
    const auto [last_h, last_w] = tape.conv_dims[layers - 1];
    const int pooled = (last_h / 2) * (last_w / 2);
    RowMatrix grad_map = (d_features.col(b) / Scalar(pooled)).replicate(1, pooled);
    for (int l = layers - 1; l >= 0; --l) {
      const auto [h, w] = tape.conv_dims[l];
      if (pool_after_[l]) grad_map = nn::maxpool2x2_backward<Scalar>(grad_map, tape.pool_argmax[l][b], h, w);
      grad_map = convs_[l].backward(tape.conv_inputs[l][b], tape.conv_outputs[l][b], grad_map, h, w, l > 0);
    }
  }
}

template <typename Scalar>
void BiradsNet<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->grad.setZero();
}

template <typename Scalar>
std::vector<nn::Parameter<Scalar>*> BiradsNet<Scalar>::parameters() {
  std::vector<nn::Parameter<Scalar>*> out;
  for (auto& c : convs_) out.insert(out.end(), {&c.weight, &c.bias});
  for (auto& h : descriptor_heads_) out.insert(out.end(), {&h.hidden.weight, &h.hidden.bias, &h.out.weight, &h.out.bias});
  for (auto* l : {&subtype_out_, &likelihood_hidden_, &likelihood_out_, &tumor_hidden_, &tumor_out_}) {
    out.insert(out.end(), {&l->weight, &l->bias});
  }
  return out;
}

template <typename Scalar>
std::vector<const nn::Parameter<Scalar>*> BiradsNet<Scalar>::parameters() const {
  auto mutable_params = const_cast<BiradsNet*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename Scalar>
std::size_t BiradsNet<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template class BiradsNet<float>;
template class BiradsNet<double>;

}  // namespace birads
