#include "birads/checkpoint.hpp"

#include "birads/lexicon.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace birads {
namespace {

using nlohmann::json;

constexpr const char* kWeightsFile = "weights.bin";
constexpr const char* kIndexFile = "weights.index.json";
constexpr const char* kConfigFile = "config.json";

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write '" + path.string() + "'");
  out << text;
}

json task_order_json() {
  json order = json::array();
  for (auto name : kTaskNames) order.push_back(std::string(name));
  return order;
}

json preprocess_to_json(const PreprocessConfig& p) {
  return {{"target_size", p.target_size},
          {"use_crop", p.use_crop},
          {"use_three_channels", p.use_three_channels},
          {"smoothing_sigma", p.smoothing_sigma}};
}

PreprocessConfig preprocess_from_json(const json& j) {
  PreprocessConfig p;
  p.target_size = j.at("target_size").get<int>();
  p.use_crop = j.at("use_crop").get<bool>();
  p.use_three_channels = j.at("use_three_channels").get<bool>();
  p.smoothing_sigma = j.at("smoothing_sigma").get<double>();
  return p;
}

std::vector<NamedTensor> model_tensors(const Model& model, bool backbone_only) {
  std::vector<NamedTensor> out;
  for (const auto* p : model.parameters()) {
    if (backbone_only && p->name.rfind("backbone.", 0) != 0) continue;
    out.push_back({p->name, p->value});
  }
  return out;
}

}  // namespace

void write_tensor_archive(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CheckpointError("cannot create '" + dir.string() + "': " + ec.message());
  std::ofstream bin(dir / kWeightsFile, std::ios::binary);
  if (!bin) throw CheckpointError("cannot write '" + (dir / kWeightsFile).string() + "'");
  json index;
  index["format"] = "birads-tensors";
  index["version"] = kCheckpointFormatVersion;
  index["tensors"] = json::object();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    if (index["tensors"].contains(t.name)) throw CheckpointError("duplicate tensor name '" + t.name + "'");
    index["tensors"][t.name] = {{"dtype", "float32"}, {"shape", {t.value.rows(), t.value.cols()}}, {"offset", offset}};
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(t.value.data()[i]);
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      bin.write(bytes, 4);
    }
    offset += static_cast<std::uint64_t>(t.value.size()) * 4;
  }
  if (!bin) throw CheckpointError("failed writing '" + (dir / kWeightsFile).string() + "'");
  write_text(dir / kIndexFile, index.dump(2) + "\n");
}

std::vector<NamedTensor> read_tensor_archive(const std::filesystem::path& dir) {
  const std::string blob = read_text(dir / kWeightsFile);
  json index;
  try {
    index = json::parse(read_text(dir / kIndexFile));
  } catch (const json::exception& e) {
    throw CheckpointError("malformed tensor index in '" + dir.string() + "': " + e.what());
  }
  if (index.value("format", "") != "birads-tensors") throw CheckpointError("'" + dir.string() + "' is not a tensor archive");
  if (index.value("version", 0) != kCheckpointFormatVersion) {
    throw CheckpointError("unsupported tensor archive version " + index.value("version", json(0)).dump());
  }
  // Restore file order from the offsets.
  std::map<std::uint64_t, NamedTensor> by_offset;
  for (const auto& [name, meta] : index.at("tensors").items()) {
    if (meta.value("dtype", "") != "float32") throw CheckpointError("tensor '" + name + "' has unsupported dtype");
    const auto shape = meta.at("shape").get<std::vector<Eigen::Index>>();
    const auto offset = meta.at("offset").get<std::uint64_t>();
    if (shape.size() != 2) throw CheckpointError("tensor '" + name + "' must be two-dimensional");
    const std::uint64_t bytes = static_cast<std::uint64_t>(shape[0] * shape[1]) * 4;
    if (offset + bytes > blob.size()) throw CheckpointError("tensor '" + name + "' extends past the end of weights.bin");
    NamedTensor t{name, nn::Matrix<float>(shape[0], shape[1])};
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset + 4 * i);
      const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      t.value.data()[i] = std::bit_cast<float>(bits);
    }
    by_offset.emplace(offset, std::move(t));
  }
  std::vector<NamedTensor> out;
  for (auto& [offset, t] : by_offset) out.push_back(std::move(t));
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const PreprocessConfig& preprocess) {
  write_tensor_archive(dir, model_tensors(model, false));
  json config;
  config["format_version"] = kCheckpointFormatVersion;
  config["model"] = json::parse(model_config_to_json(model.config()));
  config["seed"] = model.config().seed;
  config["task_order"] = task_order_json();
  config["lexicon_version"] = std::string(kLexiconVersion);
  config["preprocess"] = preprocess_to_json(preprocess);
  write_text(dir / kConfigFile, config.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw CheckpointError("checkpoint directory '" + dir.string() + "' not found");
  json config;
  try {
    config = json::parse(read_text(dir / kConfigFile));
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint config: " + std::string(e.what()));
  }
  if (config.value("format_version", 0) != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint format version " + config.value("format_version", json(0)).dump() +
                          " is not supported (expected " + std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (config.value("task_order", json()) != task_order_json()) {
    throw CheckpointError("checkpoint task order " + config.value("task_order", json()).dump() +
                          " does not match " + task_order_json().dump());
  }
  if (config.value("lexicon_version", "") != kLexiconVersion) {
    throw CheckpointError("checkpoint lexicon version '" + config.value("lexicon_version", "") + "' does not match");
  }
  ModelConfig model_config;
  PreprocessConfig preprocess;
  try {
    model_config = model_config_from_json(config.at("model").dump());
    preprocess = preprocess_from_json(config.at("preprocess"));
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint config: " + std::string(e.what()));
  } catch (const ModelError& e) {
    throw CheckpointError(e.what());
  }
  // Pretrained weights were already folded into the saved tensors.
  model_config.backbone.pretrained_weights.reset();

  Checkpoint ckpt{Model(model_config), preprocess};
  auto tensors = read_tensor_archive(dir);
  auto params = ckpt.model.parameters();
  if (tensors.size() != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    if (t.name != params[i]->name) {
      throw CheckpointError("tensor " + std::to_string(i) + " is '" + t.name + "', expected '" + params[i]->name + "'");
    }
    if (t.value.rows() != params[i]->value.rows() || t.value.cols() != params[i]->value.cols()) {
      throw CheckpointError("tensor '" + t.name + "' has shape " + std::to_string(t.value.rows()) + "x" +
                            std::to_string(t.value.cols()) + ", expected " + std::to_string(params[i]->value.rows()) +
                            "x" + std::to_string(params[i]->value.cols()));
    }
    params[i]->value = t.value;
  }
  return ckpt;
}

void export_backbone(const std::filesystem::path& dir, const Model& model) {
  write_tensor_archive(dir, model_tensors(model, true));
}

void load_backbone(const std::filesystem::path& dir, Model& model) {
  const auto tensors = read_tensor_archive(dir);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto* p : model.parameters()) {
    if (p->name.rfind("backbone.", 0) != 0) continue;
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CheckpointError("pretrained archive is missing tensor '" + p->name + "'");
    const auto& v = it->second->value;
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw CheckpointError("pretrained tensor '" + p->name + "' has shape " + std::to_string(v.rows()) + "x" +
                            std::to_string(v.cols()) + ", expected " + std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
    }
  }
  for (auto* p : model.parameters()) {
    if (p->name.rfind("backbone.", 0) == 0) p->value = by_name.at(p->name)->value;
  }
}

}  // namespace birads
