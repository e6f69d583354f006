#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <map>
#include <set>

#include "betoken/synthdata.hpp"
#include "betoken/vocab.hpp"

using namespace betoken;
using synthdata::TaskRule;

TEST_CASE("oracle answers") {
  CHECK(synthdata::oracle_answer(TaskRule::upper(), "ab") == "AB");
  CHECK(synthdata::oracle_answer(TaskRule::reverse(), "abc") == "cba");
  CHECK(synthdata::oracle_answer(TaskRule::duplicate(), "ab") == "aabb");
  CHECK(synthdata::oracle_answer(TaskRule::parity_tag(), "abc") == "eoe");

  // Independent modular-shift check for caesar.
  const std::string q = "xyz";
  const auto got = synthdata::oracle_answer(TaskRule::caesar(3), q);
  CHECK(got == "abc");
  for (size_t i = 0; i < q.size(); ++i) {
    CHECK(got[i] == static_cast<char>('a' + ((q[i] - 'a') + 3) % 26));
  }
  CHECK_THROWS_AS(TaskRule::caesar(9), InvalidArgumentError);
  CHECK(TaskRule::from_name("CAESAR2") == TaskRule::caesar(2));
  CHECK(TaskRule::from_name("PARITY-TAG") == TaskRule::parity_tag());
  CHECK_THROWS_AS(TaskRule::from_name("NOPE"), InvalidArgumentError);
}

TEST_CASE("make_prompt hits exact lengths") {
  for (const auto& rule : {TaskRule::upper(), TaskRule::reverse(), TaskRule::duplicate(),
                           TaskRule::caesar(1), TaskRule::parity_tag()}) {
    for (int target : {64, 100, 150, 200, 337}) {
      const auto p = synthdata::make_prompt(rule, target, 7);
      CHECK(p.token_length == target);
      CHECK(static_cast<int>(p.text.size()) == target);
      // char-level: token length == byte length
      const model::Vocab v;
      CHECK(static_cast<int>(v.tokenize(p.text).size()) == target);
    }
  }
  CHECK_THROWS_AS(synthdata::make_prompt(TaskRule::upper(), 5, 7), InvalidArgumentError);
}

TEST_CASE("make_prompt is deterministic and varies with seed") {
  const auto a = synthdata::make_prompt(TaskRule::reverse(), 180, 11);
  const auto b = synthdata::make_prompt(TaskRule::reverse(), 180, 11);
  const auto c = synthdata::make_prompt(TaskRule::reverse(), 180, 12);
  CHECK(a.text == b.text);
  CHECK(a.text != c.text);
}

TEST_CASE("every nearby target is renderable after snapping") {
  for (const auto& rule : {TaskRule::upper(), TaskRule::caesar(3), TaskRule::parity_tag()}) {
    for (int t = synthdata::min_prompt_length(rule); t < 260; ++t) {
      const int snapped = synthdata::nearest_renderable_target(rule, t);
      CHECK(snapped >= t);
      CHECK(snapped - t <= 3);
      const auto p = synthdata::make_prompt(rule, snapped, 5);
      CHECK(static_cast<int>(p.text.size()) == snapped);
    }
  }
}

TEST_CASE("gen_corpus is deterministic and oracle-consistent") {
  const auto a = synthdata::gen_corpus(99, 500);
  const auto b = synthdata::gen_corpus(99, 500);
  REQUIRE(a.size() == 500);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].render() == b[i].render());
  }
  const auto c = synthdata::gen_corpus(100, 500);
  bool any_diff = false;
  for (size_t i = 0; i < c.size(); ++i) any_diff = any_diff || c[i].render() != a[i].render();
  CHECK(any_diff);
}

TEST_CASE("corpus answers match the oracle by construction") {
  const auto lines = synthdata::gen_corpus(7, 400);
  const std::vector<TaskRule> rules = {TaskRule::upper(),     TaskRule::reverse(),
                                       TaskRule::duplicate(), TaskRule::caesar(1),
                                       TaskRule::caesar(2),   TaskRule::caesar(3),
                                       TaskRule::parity_tag()};
  for (const auto& line : lines) {
    bool matched = false;
    for (const auto& rule : rules) {
      if (synthdata::oracle_answer(rule, line.query) == line.answer) {
        matched = true;
        break;
      }
    }
    CHECK(matched);
  }
}

TEST_CASE("rule frequencies within 5% of uniform at 10k lines") {
  const auto lines = synthdata::gen_corpus(2024, 10000);
  std::map<char, int> family_counts;  // keyed by answer-style family marker
  // Count by re-deriving the family from the prompt's first characters: each
  // family has distinct template openings.
  int upper = 0, reverse = 0, dup = 0, caesar = 0, parity = 0;
  for (const auto& line : lines) {
    const std::string& p = line.prompt;
    if (p.find("ppercase") != std::string::npos || p.find("capital") != std::string::npos) {
      ++upper;
    } else if (p.find("ackward") != std::string::npos || p.find("revers") != std::string::npos) {
      ++reverse;
    } else if (p.find("twice") != std::string::npos || p.find("two times") != std::string::npos ||
               p.find("doubling") != std::string::npos) {
      ++dup;
    } else if (p.find("aesar") != std::string::npos || p.find("alphabet, ") != std::string::npos ||
               p.find("wrap") != std::string::npos) {
      ++caesar;
    } else {
      ++parity;
    }
  }
  for (int count : {upper, reverse, dup, caesar, parity}) {
    CHECK(count > static_cast<int>(10000 * 0.2 * 0.95));
    CHECK(count < static_cast<int>(10000 * 0.2 * 1.05));
  }
}

TEST_CASE("corpus lines stay within the toy context budget") {
  const auto lines = synthdata::gen_corpus(5, 2000);
  const model::Vocab v;
  for (const auto& line : lines) {
    CHECK(static_cast<int>(line.tokens(v).size()) <= 256);
  }
}

TEST_CASE("query sets are disjoint and deterministic") {
  const auto qs = synthdata::make_query_set(TaskRule::upper(), 500, 42);
  CHECK(qs.train.size() + qs.held_out.size() == 500);
  CHECK(qs.held_out.size() == 100);
  std::set<std::string> train_set, held_set;
  for (const auto& q : qs.train) train_set.insert(q.query);
  for (const auto& q : qs.held_out) held_set.insert(q.query);
  CHECK(train_set.size() == qs.train.size());
  CHECK(held_set.size() == qs.held_out.size());
  for (const auto& q : held_set) CHECK(train_set.count(q) == 0);
  for (const auto& q : qs.train) CHECK(q.oracle == synthdata::oracle_answer(TaskRule::upper(), q.query));

  const auto qs2 = synthdata::make_query_set(TaskRule::upper(), 500, 42);
  CHECK(qs2.train.size() == qs.train.size());
  for (size_t i = 0; i < qs.train.size(); ++i) CHECK(qs.train[i].query == qs2.train[i].query);
}

TEST_CASE("corpus and query files round trip") {
  namespace fs = std::filesystem;
  const auto lines = synthdata::gen_corpus(3, 50);
  const fs::path cpath = fs::temp_directory_path() / "betoken_corpus_test.txt";
  synthdata::write_corpus(cpath, lines);
  const auto loaded = synthdata::read_corpus(cpath);
  REQUIRE(loaded.size() == lines.size());
  for (size_t i = 0; i < lines.size(); ++i) CHECK(loaded[i].render() == lines[i].render());
  fs::remove(cpath);

  const auto qs = synthdata::make_query_set(TaskRule::caesar(2), 40, 9);
  const fs::path qpath = fs::temp_directory_path() / "betoken_queries_test.jsonl";
  synthdata::write_queries_jsonl(qpath, qs.train);
  const auto qloaded = synthdata::read_queries_jsonl(qpath);
  REQUIRE(qloaded.size() == qs.train.size());
  for (size_t i = 0; i < qloaded.size(); ++i) {
    CHECK(qloaded[i].query == qs.train[i].query);
    CHECK(qloaded[i].oracle == qs.train[i].oracle);
  }
  fs::remove(qpath);
}

TEST_CASE("prompts never contain the corpus line markers") {
  const auto lines = synthdata::gen_corpus(17, 1000);
  for (const auto& line : lines) {
    CHECK(line.prompt.find(" USR ") == std::string::npos);
    CHECK(line.prompt.find(" ASST ") == std::string::npos);
    CHECK(line.prompt.find(" EOS") == std::string::npos);
  }
}
