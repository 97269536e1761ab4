#pragma once

#include <fstream>
#include <map>

#include "cployo/model.hpp"

namespace cployo {

// On-disk layout: "CPKT" magic, uint32 LE header length, header JSON (sorted
// keys), then each tensor's float32 little-endian data in header order.
struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, Tensor<float>> tensors;

  std::string format_version() const { return header.value("format_version", ""); }
  ModelConfig model_config() const { return ModelConfig::from_json(header.at("model")); }
};

inline void save_checkpoint(const std::string& path, Detector<float>& model,
                            const nlohmann::json& train_config, int epoch,
                            const nlohmann::json& history) {
  ParamList<float> params = model.params();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.var->value().dims()}});
  }
  nlohmann::json header{{"format_version", "1"},
                        {"model", model.cfg.to_json()},
                        {"train_config", train_config},
                        {"epoch", epoch},
                        {"history", history},
                        {"tensors", tensors}};
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write " + path);
  out.write("CPKT", 4);
  const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : params) {
    const Tensor<float>& t = p.var->value();
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.numel())));
  }
  check(out.good(), "write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  check(in.gcount() == 4 && std::string(magic, 4) == "CPKT", path + ": not a checkpoint file");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  check(in.good() && len > 0 && len < (1u << 28), path + ": bad header length");
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  check(in.gcount() == static_cast<std::streamsize>(len), path + ": truncated header");
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    throw ValueError(path + ": bad checkpoint header: " + std::string(e.what()));
  }
  if (ck.format_version() != "1")
    throw ValueError(path + ": unsupported checkpoint format_version '" + ck.format_version() +
                     "'");
  for (const auto& entry : ck.header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.numel())));
    check(in.gcount() == static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.numel())),
          path + ": truncated tensor data for " + name);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

// Rebuilds the detector topology recorded in the checkpoint and loads every
// tensor; name or shape mismatches are errors here (see load_matching for the
// lenient transfer-learning path).
inline Detector<float> build_detector(const Checkpoint& ck) {
  Detector<float> model(ck.model_config(), 0);
  ParamList<float> params = model.params();
  check(params.size() == ck.tensors.size(), "checkpoint tensor count mismatch");
  for (auto& p : params) {
    auto it = ck.tensors.find(p.name);
    check(it != ck.tensors.end(), "checkpoint missing tensor " + p.name);
    check(it->second.same_shape(p.var->value()), "checkpoint shape mismatch for " + p.name);
    p.var->value() = it->second;
  }
  return model;
}

// Copies parameters whose name and shape match; returns the names skipped on
// either side (checkpoint-only entries and untouched model tensors).
inline std::vector<std::string> load_matching(Detector<float>& model, const Checkpoint& ck) {
  std::vector<std::string> skipped;
  ParamList<float> params = model.params();
  std::map<std::string, ParamRef<float>*> by_name;
  for (auto& p : params) by_name[p.name] = &p;
  for (const auto& [name, tensor] : ck.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end() || !tensor.same_shape(it->second->var->value())) {
      skipped.push_back(name);
      continue;
    }
    it->second->var->value() = tensor;
  }
  return skipped;
}

}  // namespace cployo
