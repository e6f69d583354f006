#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "betoken/model.hpp"

namespace betoken::model {

// Checkpoint layout (all multi-byte values little-endian):
//   magic "BETK1"
//   7 x int32: d_model, n_layers, n_heads, d_ff, max_seq, vocab_size, frozen
//   theta as float32 in Weights<T>::visit order
//   zero or more soft-token records: u32 name length, name bytes, d_model
//   float32s (one record per embedding row; a width-k token repeats its name
//   k times in consecutive records)
// Round-trips bit-exactly.
inline constexpr char kCheckpointMagic[5] = {'B', 'E', 'T', 'K', '1'};

struct Checkpoint {
  FrozenModelF model;
  std::vector<SoftTokenF> soft_tokens;

  const SoftTokenF* find(const std::string& name) const {
    for (const auto& t : soft_tokens) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  SoftTokenF* find(const std::string& name) {
    for (auto& t : soft_tokens) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  const SoftTokenF& require(const std::string& name) const {
    const SoftTokenF* t = find(name);
    if (!t) throw InvalidArgumentError("checkpoint: missing soft token '" + name + "'");
    return *t;
  }
};

void save_checkpoint(const std::filesystem::path& path, const FrozenModelF& model,
                     std::span<const SoftTokenF> soft_tokens);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace betoken::model
