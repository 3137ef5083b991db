#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "flare/model.hpp"
#include "flare/tensor.hpp"

namespace flare {

// On-disk layout: 4-byte magic, u32 header length, JSON header, then the
// raw fp32 payload in declared order. Little-endian only.
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'F', 'L', 'C', 'P'};
inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointData {
  int format_version = kCheckpointFormatVersion;
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> params;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor<float>& require(const std::string& name) const {
    const Tensor<float>* t = find(name);
    if (!t)
      throw CheckpointShapeError("checkpoint is missing parameter '" + name +
                                 "'");
    return *t;
  }
};

inline void save_checkpoint(
    const std::string& path, const std::string& kind,
    const nlohmann::json& meta,
    const std::vector<std::pair<std::string, Tensor<float>>>& params) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["kind"] = kind;
  header["meta"] = meta;
  nlohmann::json plist = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["offset"] = offset;
    p["numel"] = t.numel();
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
    plist.push_back(std::move(p));
  }
  header["params"] = std::move(plist);
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic, 4);
  uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : params)
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out)
    throw CheckpointError("write to '" + path + "' failed");
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "' for reading");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointHeaderError("'" + path + "' is not a checkpoint (bad magic)");
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (!in) throw CheckpointHeaderError("'" + path + "': truncated header length");
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw CheckpointHeaderError("'" + path + "': truncated header");
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded())
    throw CheckpointHeaderError("'" + path + "': header is not valid JSON");
  CheckpointData data;
  try {
    data.format_version = header.at("format_version").get<int>();
    data.kind = header.at("kind").get<std::string>();
    data.meta = header.value("meta", nlohmann::json::object());
    if (data.format_version != kCheckpointFormatVersion)
      throw CheckpointHeaderError(
          "'" + path + "': unsupported format_version " +
          std::to_string(data.format_version));
    for (const auto& p : header.at("params")) {
      std::string name = p.at("name").get<std::string>();
      std::vector<int> shape = p.at("shape").get<std::vector<int>>();
      int numel = p.at("numel").get<int>();
      int want = 1;
      for (int d : shape) want *= d;
      if (want != numel || shape.empty())
        throw CheckpointHeaderError("'" + path + "': parameter '" + name +
                                    "' declares inconsistent shape");
      std::vector<float> buf(static_cast<size_t>(numel));
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (in.gcount() !=
          static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw CheckpointTruncatedError("'" + path +
                                       "': payload truncated while reading '" +
                                       name + "'");
      data.params.emplace_back(
          name, Tensor<float>::from_data(std::move(shape), std::move(buf)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointHeaderError("'" + path + "': malformed header (" +
                                std::string(e.what()) + ")");
  }
  return data;
}

// Copies a checkpoint parameter into an existing tensor, insisting the
// shapes agree. The offender is named in the error.
inline void load_param(const CheckpointData& data, const std::string& name,
                       Tensor<float>& dst) {
  const Tensor<float>& src = data.require(name);
  if (src.shape() != dst.shape())
    throw CheckpointShapeError(
        "checkpoint parameter '" + name + "' has shape " +
        shape_string(src.shape()) + ", model expects " +
        shape_string(dst.shape()));
  dst.data_mut() = src.data();
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},   {"hidden_dim", c.hidden_dim},
          {"num_heads", c.num_heads},     {"ffn_dim", c.ffn_dim},
          {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
          {"num_classes", c.num_classes}, {"max_span_len", c.max_span_len}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.max_span_len = j.at("max_span_len").get<int>();
  return c;
}

inline void save_model(const std::string& path, Model<float>& model,
                       const nlohmann::json& provenance) {
  nlohmann::json meta;
  meta["config"] = model_config_to_json(model.config);
  meta["task"] = to_string(model.head.kind);
  meta["provenance"] = provenance;
  std::vector<std::pair<std::string, Tensor<float>>> params =
      model.encoder.named_parameters();
  for (auto& p : model.head.named_parameters()) params.push_back(p);
  save_checkpoint(path, "model", meta, params);
}

inline Model<float> load_model(const std::string& path) {
  CheckpointData data = load_checkpoint(path);
  if (data.kind != "model")
    throw CheckpointHeaderError("'" + path + "' holds a '" + data.kind +
                                "' checkpoint, expected 'model'");
  ModelConfig cfg;
  TaskKind kind;
  try {
    cfg = model_config_from_json(data.meta.at("config"));
    kind = task_kind_from_string(data.meta.at("task").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointHeaderError("'" + path + "': malformed model meta (" +
                                std::string(e.what()) + ")");
  }
  Model<float> model = Model<float>::init(cfg, kind, 0);
  for (auto& [name, t] : model.encoder.named_parameters())
    load_param(data, name, t);
  for (auto& [name, t] : model.head.named_parameters())
    load_param(data, name, t);
  return model;
}

}  // namespace flare
