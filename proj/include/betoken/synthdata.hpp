#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "betoken/errors.hpp"
#include "betoken/rng.hpp"
#include "betoken/vocab.hpp"

namespace betoken::synthdata {

// A task rule is a pure deterministic transformation of lowercase query
// strings, plus paraphrased renderings into system-prompt text. These are the
// desk-scale stand-ins for behavior-carrying system prompts.
enum class TaskKind { kUpper, kReverse, kDuplicate, kCaesar, kParityTag };

struct TaskRule {
  TaskKind kind = TaskKind::kUpper;
  int shift = 0;  // Caesar only, 1..3

  std::string name() const;
  static TaskRule upper() { return {TaskKind::kUpper, 0}; }
  static TaskRule reverse() { return {TaskKind::kReverse, 0}; }
  static TaskRule duplicate() { return {TaskKind::kDuplicate, 0}; }
  static TaskRule caesar(int k);
  static TaskRule parity_tag() { return {TaskKind::kParityTag, 0}; }
  static TaskRule from_name(std::string_view name);

  bool operator==(const TaskRule&) const = default;
};

// Gold transformation. UPPER capitalizes; REVERSE mirrors; DUPLICATE writes
// each character twice; CAESAR(k) rotates letters by k; PARITY-TAG maps each
// letter to 'e'/'o' by the parity of its 0-based alphabet index.
std::string oracle_answer(const TaskRule& rule, std::string_view query);

// A rendered system prompt with its exact token length (char-level: one
// token per character).
struct PromptSpec {
  TaskRule rule;
  std::string text;
  int token_length = 0;
};

// Smallest rendering length for the rule (its shortest paraphrase template).
int min_prompt_length(const TaskRule& rule);

// Smallest renderable length >= target (a few lengths just above a template
// cannot be hit exactly and snap upward).
int nearest_renderable_target(const TaskRule& rule, int target);

// Renders the rule into prompt text of exactly `target_length` tokens:
// a seeded paraphrase template, seeded neutral filler sentences, and a fixed
// length-exact closing phrase.
PromptSpec make_prompt(const TaskRule& rule, int target_length, uint64_t seed);

// One pretraining example. Rendered line format (UTF-8, one per line):
//   SYS <prompt> USR <query> ASST <answer> EOS
struct CorpusLine {
  std::string prompt, query, answer;

  std::string render() const;
  static CorpusLine parse(std::string_view line);
  std::vector<int> tokens(const model::Vocab& v) const;  // [SYS p USR q ASST a EOS]
};

std::vector<CorpusLine> gen_corpus(uint64_t seed, int n_examples);
void write_corpus(const std::filesystem::path& path, const std::vector<CorpusLine>& lines);
std::vector<CorpusLine> read_corpus(const std::filesystem::path& path);

std::string random_query(RngStream& rng, int min_len = 3, int max_len = 12);

struct LabeledQuery {
  std::string query;
  std::string oracle;
};

// Distinct queries split into train (used unlabeled) and held-out (oracles
// consumed only by eval). Split is a seeded shuffle; the draw stream and the
// split stream are independent sub-streams of `seed`.
struct QuerySet {
  std::vector<LabeledQuery> train;
  std::vector<LabeledQuery> held_out;
};

QuerySet make_query_set(const TaskRule& rule, int n, uint64_t seed, double held_out_frac = 0.2,
                        int max_query_len = 12);

void write_queries_jsonl(const std::filesystem::path& path, const std::vector<LabeledQuery>& qs);
std::vector<LabeledQuery> read_queries_jsonl(const std::filesystem::path& path);

}  // namespace betoken::synthdata
