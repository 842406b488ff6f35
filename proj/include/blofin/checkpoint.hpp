#pragma once

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "blofin/model.hpp"

namespace blofin {

class CheckpointError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Textual key -> float-array checkpoint. The manifest lists which partition
// each tensor belongs to; values are printed with 17 significant digits so
// doubles round-trip exactly.
inline void save_checkpoint(const SegModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out << "BLOFIN1\n";
  const ModelConfig& c = model.config;
  out << "config image_size " << c.image_size << "\n";
  out << "config patch_size " << c.patch_size << "\n";
  out << "config embed_dim " << c.embed_dim << "\n";
  out << "config n_decoder_blocks " << c.n_decoder_blocks << "\n";
  out << "config n_prompt_tokens " << c.n_prompt_tokens << "\n";
  out << "config lora_rank " << c.lora_rank << "\n";
  out << "config head_hidden " << c.head_hidden << "\n";
  out << "config head_channels " << c.head_channels << "\n";
  out << "config seed " << c.seed << "\n";

  const ParamPartition part = parameter_partition(model);
  const std::vector<ParamEntry> entries = part.all();
  for (const ParamEntry& e : entries) {
    out << "partition " << param_group_name(e.group) << " " << e.name << "\n";
  }
  out << std::setprecision(17);
  for (const ParamEntry& e : entries) {
    out << "tensor " << e.name << " " << e.tensor.rank();
    for (const auto d : e.tensor.shape()) out << " " << d;
    out << "\n";
    const auto& v = e.tensor.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out << ' ';
      out << v[i];
    }
    out << "\n";
  }
  out << "end\n";
  if (!out) throw CheckpointError("write to " + path + " failed");
}

inline SegModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path);
  std::string magic;
  if (!std::getline(in, magic) || magic != "BLOFIN1") {
    throw CheckpointError(path + ": bad magic, expected BLOFIN1");
  }

  ModelConfig cfg;
  std::map<std::string, std::string> manifest;  // name -> partition
  std::string line;
  std::streampos tensors_at = in.tellg();
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key;
      ls >> key;
      if (key == "image_size") ls >> cfg.image_size;
      else if (key == "patch_size") ls >> cfg.patch_size;
      else if (key == "embed_dim") ls >> cfg.embed_dim;
      else if (key == "n_decoder_blocks") ls >> cfg.n_decoder_blocks;
      else if (key == "n_prompt_tokens") ls >> cfg.n_prompt_tokens;
      else if (key == "lora_rank") ls >> cfg.lora_rank;
      else if (key == "head_hidden") ls >> cfg.head_hidden;
      else if (key == "head_channels") ls >> cfg.head_channels;
      else if (key == "seed") ls >> cfg.seed;
      else throw CheckpointError(path + ": unknown config key " + key);
    } else if (kind == "partition") {
      std::string group, name;
      ls >> group >> name;
      manifest[name] = group;
    } else if (kind == "tensor") {
      break;
    } else if (kind == "end" || kind.empty()) {
      break;
    } else {
      throw CheckpointError(path + ": unexpected record " + kind);
    }
    tensors_at = in.tellg();
  }
  in.clear();
  in.seekg(tensors_at);

  SegModel model = make_model(cfg);
  const ParamPartition part = parameter_partition(model);
  std::map<std::string, ParamEntry> by_name;
  for (const ParamEntry& e : part.all()) {
    by_name.emplace(e.name, e);
    const auto it = manifest.find(e.name);
    if (it == manifest.end()) {
      throw CheckpointError(path + ": manifest is missing tensor " + e.name);
    }
    if (it->second != param_group_name(e.group)) {
      throw CheckpointError(path + ": tensor " + e.name + " listed under partition " +
                            it->second + ", expected " + param_group_name(e.group));
    }
  }

  std::size_t loaded = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end" || kind.empty()) break;
    if (kind != "tensor") throw CheckpointError(path + ": unexpected record " + kind);
    std::string name;
    std::int64_t rank = 0;
    ls >> name >> rank;
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) ls >> d;
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError(path + ": unknown tensor " + name);
    if (shape != it->second.tensor.shape()) {
      throw CheckpointError(path + ": tensor " + name + " has shape " + shape_str(shape) +
                            ", expected " + shape_str(it->second.tensor.shape()));
    }
    if (!std::getline(in, line)) throw CheckpointError(path + ": truncated values for " + name);
    std::istringstream vs(line);
    auto& dst = it->second.tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (!(vs >> dst[i])) {
        throw CheckpointError(path + ": too few values for tensor " + name);
      }
    }
    ++loaded;
  }
  if (loaded != by_name.size()) {
    throw CheckpointError(path + ": expected " + std::to_string(by_name.size()) +
                          " tensors, found " + std::to_string(loaded));
  }
  return model;
}

}  // namespace blofin
