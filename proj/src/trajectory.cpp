#include "betoken/trajectory.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace betoken::training {

using model::FrozenModelF;
using model::MixedSequence;
using model::Vocab;
using numcore::TensorF;

uint64_t hash_prompt_ids(std::span<const int> prompt_ids) {
  uint64_t h = kFnvOffset;
  for (int id : prompt_ids) {
    const int32_t v = id;
    h = fnv1a64(&v, sizeof(v), h);
  }
  return h;
}

Trajectory build_teacher_trajectory(const FrozenModelF& m, std::span<const int> prompt_ids,
                                    std::span<const int> query_ids,
                                    std::span<const int> gold_answer_ids, int max_new) {
  const std::vector<int> prefix = model::chat_tokens(prompt_ids, query_ids);
  const int prefix_len = static_cast<int>(prefix.size());
  const int room = m.config().max_seq - prefix_len;
  if (room < 1) throw InvalidArgumentError("trajectory: prompt+query leave no room to generate");

  Trajectory traj;
  traj.query_ids.assign(query_ids.begin(), query_ids.end());

  if (!gold_answer_ids.empty()) {
    // Gold teacher: force the gold answer (with EOS) and take the teacher's
    // logits from one teacher-forced pass.
    traj.answer_ids.assign(gold_answer_ids.begin(), gold_answer_ids.end());
    if (traj.answer_ids.back() != Vocab::kEos) traj.answer_ids.push_back(Vocab::kEos);
    const int steps = static_cast<int>(traj.answer_ids.size());
    if (steps > room) throw InvalidArgumentError("trajectory: gold answer exceeds max_seq");
    std::vector<int> seq = prefix;
    seq.insert(seq.end(), traj.answer_ids.begin(), traj.answer_ids.end() - 1);
    const TensorF logits = model::forward_logits(m, MixedSequence<float>::hard(seq));
    traj.teacher_logits = TensorF({steps, logits.cols()});
    for (int t = 0; t < steps; ++t) {
      std::memcpy(traj.teacher_logits.row(t), logits.row(prefix_len - 1 + t),
                  sizeof(float) * static_cast<size_t>(logits.cols()));
    }
    return traj;
  }

  // Self-generated teacher, greedy. Each step forwards the whole sequence, so
  // the final step's logits matrix already contains every row we need.
  const int cap = std::min(max_new, room);
  std::vector<int> seq = prefix;
  TensorF last_logits;
  for (int step = 0; step < cap; ++step) {
    last_logits = model::forward_logits(m, MixedSequence<float>::hard(seq));
    const float* row = last_logits.row(static_cast<int>(seq.size()) - 1);
    int next = 0;
    for (int c = 1; c < last_logits.cols(); ++c) {
      if (row[c] > row[next]) next = c;
    }
    traj.answer_ids.push_back(next);
    seq.push_back(next);
    if (next == Vocab::kEos) break;
  }
  const int steps = static_cast<int>(traj.answer_ids.size());
  if (steps == 0) throw InvalidArgumentError("trajectory: max_new produced no steps");
  // Rows prefix_len-1 .. prefix_len+steps-2 predicted a_1..a_{T-1}; the final
  // row of the last forward predicted a_T.
  traj.teacher_logits = TensorF({steps, last_logits.cols()});
  for (int t = 0; t + 1 < steps; ++t) {
    std::memcpy(traj.teacher_logits.row(t), last_logits.row(prefix_len - 1 + t),
                sizeof(float) * static_cast<size_t>(last_logits.cols()));
  }
  std::memcpy(traj.teacher_logits.row(steps - 1), last_logits.row(last_logits.rows() - 1),
              sizeof(float) * static_cast<size_t>(last_logits.cols()));
  return traj;
}

namespace {

constexpr char kMagic[5] = {'B', 'T', 'R', 'J', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("trajectory cache: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is) {
  const uint64_t lo = get_u32(is);
  const uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

}  // namespace

void TrajectoryCache::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("trajectory cache: cannot open for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_u64(os, prompt_hash);
  put_u32(os, static_cast<uint32_t>(vocab_size));
  put_u32(os, static_cast<uint32_t>(items.size()));
  for (const auto& t : items) {
    if (t.teacher_logits.rows() != static_cast<int>(t.answer_ids.size()) ||
        t.teacher_logits.cols() != vocab_size) {
      throw InvariantViolationError("trajectory cache: logits shape mismatch with answer length");
    }
    put_u32(os, static_cast<uint32_t>(t.query_ids.size()));
    for (int id : t.query_ids) put_u32(os, static_cast<uint32_t>(id));
    put_u32(os, static_cast<uint32_t>(t.answer_ids.size()));
    for (int id : t.answer_ids) put_u32(os, static_cast<uint32_t>(id));
    for (float f : t.teacher_logits.data) put_u32(os, std::bit_cast<uint32_t>(f));
  }
  if (!os) throw IoError("trajectory cache: write failed: " + path.string());
}

TrajectoryCache TrajectoryCache::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("trajectory cache: cannot open: " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError("trajectory cache: bad magic in " + path.string());
  }
  TrajectoryCache cache;
  cache.prompt_hash = get_u64(is);
  cache.vocab_size = static_cast<int>(get_u32(is));
  const uint32_t count = get_u32(is);
  cache.items.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Trajectory t;
    const uint32_t qn = get_u32(is);
    t.query_ids.resize(qn);
    for (auto& id : t.query_ids) id = static_cast<int>(get_u32(is));
    const uint32_t an = get_u32(is);
    t.answer_ids.resize(an);
    for (auto& id : t.answer_ids) id = static_cast<int>(get_u32(is));
    t.teacher_logits = TensorF({static_cast<int>(an), cache.vocab_size});
    for (auto& f : t.teacher_logits.data) f = std::bit_cast<float>(get_u32(is));
    cache.items.push_back(std::move(t));
  }
  return cache;
}

}  // namespace betoken::training
