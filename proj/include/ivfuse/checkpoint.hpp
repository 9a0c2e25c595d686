// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory: manifest.json (name -> shape/dtype/group/frozen +
// config echo) plus one raw little-endian float32 binary per array.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivfuse/model.hpp"

namespace ivfuse {

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"patch", cfg.patch},
          {"embed_dim", cfg.embed_dim},
          {"encoder_depth", cfg.encoder_depth},
          {"decoder_depth", cfg.decoder_depth},
          {"heads", cfg.heads},
          {"mlp_ratio", cfg.mlp_ratio},
          {"use_cls", cfg.use_cls},
          {"mask_ratio", cfg.mask_ratio},
          {"init_std", cfg.init_std}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.patch = j.at("patch").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.encoder_depth = j.at("encoder_depth").get<int>();
  cfg.decoder_depth = j.at("decoder_depth").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
  cfg.use_cls = j.at("use_cls").get<bool>();
  cfg.mask_ratio = j.at("mask_ratio").get<double>();
  cfg.init_std = j.at("init_std").get<double>();
  return cfg;
}

namespace detail {

inline std::string array_filename(const std::string& group, const std::string& key) {
  std::string f = group + "." + key + ".bin";
  for (char& c : f)
    if (c == '/') c = '_';
  return f;
}

template <class S>
void write_f32(const std::filesystem::path& path, const nn::Mat<S>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot write " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float v = static_cast<float>(m(i, j));
      os.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
}

template <class S>
nn::Mat<S> read_f32(const std::filesystem::path& path, int rows, int cols) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot read " + path.string());
  nn::Mat<S> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      float v;
      is.read(reinterpret_cast<char*>(&v), sizeof(float));
      if (!is) throw FormatError("checkpoint: truncated array " + path.string());
      m(i, j) = static_cast<S>(v);
    }
  return m;
}

}  // namespace detail

template <class S>
void save_checkpoint(ModelParams<S>& params, const ModelConfig& cfg,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "ivfuse-checkpoint-v1";
  manifest["config"] = config_to_json(cfg);
  nlohmann::json arrays = nlohmann::json::array();
  params.for_each([&](ParamGroup<S>& g, const std::string& key, const nn::NodePtr<S>& node) {
    const std::string file = detail::array_filename(g.name, key);
    detail::write_f32<S>(dir / file, node->value);
    arrays.push_back({{"name", g.name + "/" + key},
                      {"group", g.name},
                      {"shape", {node->value.rows(), node->value.cols()}},
                      {"dtype", "f32"},
                      {"frozen", g.frozen},
                      {"file", file}});
  });
  manifest["arrays"] = arrays;
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("checkpoint: cannot write manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

/// Load arrays into an existing parameter set. `groups` empty means all
/// groups; otherwise only listed groups are populated and they are marked
/// frozen (imported-weights contract). Shape or name mismatches are
/// collected and reported together.
template <class S>
void load_checkpoint(ModelParams<S>& params, const ModelConfig& cfg,
                     const std::filesystem::path& dir,
                     const std::vector<std::string>& groups = {},
                     bool freeze_loaded = false) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("checkpoint: missing manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad manifest: " + std::string(e.what()));
  }
  const ModelConfig stored = config_from_json(manifest.at("config"));
  if (stored.patch != cfg.patch || stored.embed_dim != cfg.embed_dim ||
      stored.encoder_depth != cfg.encoder_depth ||
      stored.decoder_depth != cfg.decoder_depth || stored.heads != cfg.heads ||
      stored.use_cls != cfg.use_cls) {
    throw WeightImportError("checkpoint: config mismatch (stored patch=" +
                            std::to_string(stored.patch) +
                            " embed_dim=" + std::to_string(stored.embed_dim) +
                            " encoder_depth=" + std::to_string(stored.encoder_depth) +
                            " decoder_depth=" + std::to_string(stored.decoder_depth) +
                            " heads=" + std::to_string(stored.heads) + ")");
  }
  auto wanted = [&](const std::string& g) {
    if (groups.empty()) return true;
    for (const auto& w : groups)
      if (w == g) return true;
    return false;
  };
  std::string problems;
  for (const auto& entry : manifest.at("arrays")) {
    const std::string group = entry.at("group").get<std::string>();
    if (!wanted(group)) continue;
    const std::string name = entry.at("name").get<std::string>();
    const std::string key = name.substr(group.size() + 1);
    auto& grp = params.group(group);
    auto it = grp.by_name.find(key);
    if (it == grp.by_name.end()) {
      problems += "  unknown array: " + name + "\n";
      continue;
    }
    const auto shape = entry.at("shape");
    const int rows = shape.at(0).get<int>();
    const int cols = shape.at(1).get<int>();
    if (rows != it->second->value.rows() || cols != it->second->value.cols()) {
      problems += "  shape mismatch: " + name + " stored " + std::to_string(rows) + "x" +
                  std::to_string(cols) + ", expected " +
                  std::to_string(it->second->value.rows()) + "x" +
                  std::to_string(it->second->value.cols()) + "\n";
      continue;
    }
    it->second->value =
        detail::read_f32<S>(dir / entry.at("file").get<std::string>(), rows, cols);
    grp.frozen = freeze_loaded ? true : entry.at("frozen").get<bool>();
  }
  if (!problems.empty()) throw WeightImportError("checkpoint import failed:\n" + problems);
}

/// Externally pretrained weights: populate listed groups, frozen by default.
template <class S>
ModelParams<S> import_weights(const std::filesystem::path& dir, const ModelConfig& cfg,
                              const std::vector<std::string>& target_groups,
                              std::uint64_t init_seed = 0) {
  ModelParams<S> params = init_params<S>(cfg, init_seed);
  if (!target_groups.empty()) {
    load_checkpoint(params, cfg, dir, target_groups, /*freeze_loaded=*/true);
  }
  return params;
}

}  // namespace ivfuse
