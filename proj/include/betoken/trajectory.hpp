#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "betoken/model.hpp"
#include "betoken/tensor.hpp"

namespace betoken::training {

// KD supervision record: a teacher response plus the teacher's full logits
// row for every response step (including the terminating EOS). Row t predicts
// answer_ids[t]. Logits are raw (temperature-independent).
struct Trajectory {
  std::vector<int> query_ids;
  std::vector<int> answer_ids;
  numcore::TensorF teacher_logits;  // [T, V]
};

uint64_t hash_prompt_ids(std::span<const int> prompt_ids);

// Teacher generation with logits captured from the generation pass itself:
// the forward that emits token t already holds the logits rows for every
// earlier step, so no separate scoring pass is run. With a non-empty
// `gold_answer_ids` the response is forced to the gold tokens instead
// (teacher logits still come from the full-prompt model).
Trajectory build_teacher_trajectory(const model::FrozenModelF& m,
                                    std::span<const int> prompt_ids,
                                    std::span<const int> query_ids,
                                    std::span<const int> gold_answer_ids, int max_new);

// On-disk cache, one file per prompt.
// Layout (little-endian): magic "BTRJ1", u64 prompt hash, i32 vocab size,
// u32 record count, then per record: u32 query length + ids, u32 answer
// length + ids, answer-length x vocab-size float32 logits rows.
struct TrajectoryCache {
  uint64_t prompt_hash = 0;
  int vocab_size = 0;
  std::vector<Trajectory> items;

  void save(const std::filesystem::path& path) const;
  static TrajectoryCache load(const std::filesystem::path& path);
};

}  // namespace betoken::training
