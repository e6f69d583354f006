#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "betoken/model.hpp"
#include "betoken/synthdata.hpp"

namespace betoken::eval {

// Prefix condition for task evaluation: the full prompt (teacher), a soft
// replacement (student), or nothing (no-prompt lower bound).
struct TaskCondition {
  std::span<const int> prompt_ids = {};
  const model::SoftTokenF* soft = nullptr;

  static TaskCondition full_prompt(std::span<const int> ids) { return {ids, nullptr}; }
  static TaskCondition soft_token(const model::SoftTokenF* t) { return {{}, t}; }
  static TaskCondition no_prompt() { return {{}, nullptr}; }
};

struct EvalReport {
  double recon_exact_match = 0;
  double recon_token_acc = 0;
  double behavioral_kl = 0;          // mean nats/step on held-out queries
  double behavioral_kl_baseline = 0; // same metric with a random-init token
  double teacher_task_acc = 0;
  double student_task_acc = 0;
  double no_prompt_task_acc = 0;
  double retention = 0;  // student / teacher; valid only when teacher > 0

  void validate() const;
};

// Greedy-decode P from [BE, AE]; exact match is whole-string equality,
// token accuracy is positionwise prefix accuracy.
std::pair<double, double> eval_reconstruction(const model::FrozenModelF& m,
                                              const model::SoftTokenF& be,
                                              const model::SoftTokenF& ae,
                                              std::span<const int> prompt_ids);

// Mean per-step KL(teacher || student) at tau=1 over greedy teacher
// trajectories for the held-out queries. Computed in double.
double eval_behavioral_kl(const model::FrozenModelF& m, const model::Vocab& vocab,
                          const model::SoftTokenF& be, std::span<const int> prompt_ids,
                          const std::vector<synthdata::LabeledQuery>& held_out, double tau = 1.0);

// Greedy decoding under the given prefix condition, exact-match scored
// against the oracle answers.
double eval_task(const model::FrozenModelF& m, const model::Vocab& vocab,
                 const TaskCondition& condition,
                 const std::vector<synthdata::LabeledQuery>& queries);

double retention_of(double student_acc, double teacher_acc);

void write_report_kv(const std::filesystem::path& path, const EvalReport& r);
void append_report_jsonl(const std::filesystem::path& path, const EvalReport& r,
                         const std::string& prompt_name, const std::string& config_name);

}  // namespace betoken::eval
