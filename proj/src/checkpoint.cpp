#include "reid/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace reid {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'R', 'E', 'I', 'D', 'C', 'K', 'P', '1'};

json config_to_json(const ModelConfig& cfg) {
  const BackboneConfig& bb = cfg.backbone;
  json j;
  j["backbone"] = {
      {"image_h", bb.image_h},
      {"image_w", bb.image_w},
      {"in_channels", bb.in_channels},
      {"embed_dims", bb.embed_dims},
      {"depths", bb.depths},
      {"num_heads", bb.num_heads},
      {"sr_ratios", bb.sr_ratios},
      {"patch_sizes", bb.patch_sizes},
      {"strides", bb.strides},
      {"paddings", bb.paddings},
      {"mlp_ratio", bb.mlp_ratio},
  };
  j["fused_dim"] = cfg.fused_dim;
  j["cam_dim"] = cfg.cam_dim;
  j["gate_reduction"] = cfg.gate_reduction;
  j["num_ids"] = cfg.num_ids;
  j["num_cams"] = cfg.num_cams;
  j["cam_classifier"] = cfg.cam_classifier;
  j["log_var_clamp"] = cfg.log_var_clamp;
  return j;
}

template <typename T, size_t N>
void read_array(const json& j, const char* key, std::array<T, N>& out) {
  auto vec = j.at(key).get<std::vector<T>>();
  if (vec.size() != N) throw IoError(std::string("checkpoint: bad array length for ") + key);
  std::copy(vec.begin(), vec.end(), out.begin());
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  const json& bb = j.at("backbone");
  cfg.backbone.image_h = bb.at("image_h").get<long>();
  cfg.backbone.image_w = bb.at("image_w").get<long>();
  cfg.backbone.in_channels = bb.at("in_channels").get<long>();
  read_array(bb, "embed_dims", cfg.backbone.embed_dims);
  read_array(bb, "depths", cfg.backbone.depths);
  read_array(bb, "num_heads", cfg.backbone.num_heads);
  read_array(bb, "sr_ratios", cfg.backbone.sr_ratios);
  read_array(bb, "patch_sizes", cfg.backbone.patch_sizes);
  read_array(bb, "strides", cfg.backbone.strides);
  read_array(bb, "paddings", cfg.backbone.paddings);
  cfg.backbone.mlp_ratio = bb.at("mlp_ratio").get<double>();
  cfg.fused_dim = j.at("fused_dim").get<long>();
  cfg.cam_dim = j.at("cam_dim").get<long>();
  cfg.gate_reduction = j.at("gate_reduction").get<long>();
  cfg.num_ids = j.at("num_ids").get<long>();
  cfg.num_cams = j.at("num_cams").get<long>();
  cfg.cam_classifier = j.at("cam_classifier").get<bool>();
  cfg.log_var_clamp = j.at("log_var_clamp").get<double>();
  return cfg;
}

struct HeaderInfo {
  json header;
  std::streamoff data_start = 0;
};

HeaderInfo read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint: truncated header in " + path);
  HeaderInfo info;
  info.header = json::parse(text);
  info.data_start = 16 + static_cast<std::streamoff>(len);
  return info;
}

void load_tensors(std::ifstream& in, const std::string& path, const HeaderInfo& info,
                  Model& model) {
  auto restore = [&](const json& index, const std::string& kind, const std::string& name,
                     Tensor* t) {
    if (!index.contains(name)) {
      throw IoError("checkpoint: missing " + kind + " '" + name + "' in " + path);
    }
    const json& entry = index.at(name);
    if (entry.contains("dtype") && entry.at("dtype").get<std::string>() != "f64") {
      throw IoError("checkpoint: unsupported dtype for '" + name + "' in " + path);
    }
    auto shape = entry.at("shape").get<std::vector<long>>();
    if (Shape(shape.begin(), shape.end()) != t->shape()) {
      throw ConfigError("checkpoint: shape mismatch for '" + name + "': stored " +
                        shape_str(Shape(shape.begin(), shape.end())) + " vs model " +
                        shape_str(t->shape()));
    }
    uint64_t offset = entry.at("offset").get<uint64_t>();
    in.seekg(info.data_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(sizeof(Real) * static_cast<size_t>(t->size())));
    if (!in) throw IoError("checkpoint: truncated payload for '" + name + "' in " + path);
  };
  for (auto& e : model.store().params()) restore(info.header.at("params"), "param", e.name, &e.tensor);
  for (auto& b : model.store().buffers()) restore(info.header.at("buffers"), "buffer", b.first, &b.second);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  json params = json::object();
  json buffers = json::object();
  uint64_t offset = 0;
  auto record = [&offset](json& index, const std::string& name, const Tensor& t) {
    index[name] = {{"offset", offset}, {"shape", t.shape()}, {"dtype", "f64"}};
    offset += sizeof(Real) * static_cast<uint64_t>(t.size());
  };
  for (const auto& e : model.store().params()) record(params, e.name, e.tensor);
  for (const auto& b : model.store().buffers()) record(buffers, b.first, b.second);

  json header;
  header["dtype"] = "f64";
  header["config"] = config_to_json(model.config());
  header["params"] = params;
  header["buffers"] = buffers;
  std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : model.store().params()) {
    out.write(reinterpret_cast<const char*>(e.tensor.data()),
              static_cast<std::streamsize>(sizeof(Real) * static_cast<size_t>(e.tensor.size())));
  }
  for (const auto& b : model.store().buffers()) {
    out.write(reinterpret_cast<const char*>(b.second.data()),
              static_cast<std::streamsize>(sizeof(Real) * static_cast<size_t>(b.second.size())));
  }
  if (!out) throw IoError("checkpoint: write failure on " + path);
}

ModelConfig checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  HeaderInfo info = read_header(in, path);
  if (info.header.at("dtype").get<std::string>() != "f64") {
    throw IoError("checkpoint: unsupported dtype in " + path);
  }
  return config_from_json(info.header.at("config"));
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  HeaderInfo info = read_header(in, path);
  if (info.header.at("dtype").get<std::string>() != "f64") {
    throw IoError("checkpoint: unsupported dtype in " + path);
  }
  Model model(config_from_json(info.header.at("config")), /*seed=*/0);
  load_tensors(in, path, info, model);
  return model;
}

void load_checkpoint_into(const std::string& path, Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  HeaderInfo info = read_header(in, path);
  load_tensors(in, path, info, model);
}

}  // namespace reid
