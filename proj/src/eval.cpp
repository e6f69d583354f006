#include "betoken/eval.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "betoken/trajectory.hpp"

namespace betoken::eval {

using model::FrozenModelF;
using model::MixedSequence;
using model::SoftTokenF;
using model::Vocab;
using numcore::TensorF;

void EvalReport::validate() const {
  auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!frac(recon_exact_match) || !frac(recon_token_acc) || !frac(teacher_task_acc) ||
      !frac(student_task_acc) || !frac(no_prompt_task_acc)) {
    throw InvariantViolationError("eval report: fraction outside [0,1]");
  }
  if (behavioral_kl < 0) throw InvariantViolationError("eval report: negative KL");
}

std::pair<double, double> eval_reconstruction(const FrozenModelF& m, const SoftTokenF& be,
                                              const SoftTokenF& ae,
                                              std::span<const int> prompt_ids) {
  const int m_len = static_cast<int>(prompt_ids.size());
  MixedSequence<float> prefix;
  prefix.push_soft(&be);
  prefix.push_soft(&ae);
  std::vector<int> decoded = model::generate(m, prefix, m_len, {});
  if (!decoded.empty() && decoded.back() == Vocab::kEos) decoded.pop_back();
  size_t hits = 0;
  for (size_t i = 0; i < decoded.size() && i < prompt_ids.size(); ++i) {
    hits += decoded[i] == prompt_ids[i] ? 1 : 0;
  }
  const bool exact = decoded.size() == prompt_ids.size() &&
                     hits == prompt_ids.size();
  const double token_acc = m_len == 0 ? 0.0 : static_cast<double>(hits) / m_len;
  return {exact ? 1.0 : 0.0, token_acc};
}

double eval_behavioral_kl(const FrozenModelF& m, const Vocab& vocab, const SoftTokenF& be,
                          std::span<const int> prompt_ids,
                          const std::vector<synthdata::LabeledQuery>& held_out, double tau) {
  if (held_out.empty()) throw InvalidArgumentError("behavioral kl: no held-out queries");
  double total = 0;
  size_t steps = 0;
  for (const auto& lq : held_out) {
    const std::vector<int> q_ids = vocab.tokenize(lq.query);
    const training::Trajectory traj =
        training::build_teacher_trajectory(m, prompt_ids, q_ids, {}, 32);
    // Student logits, teacher-forced on the teacher's trajectory.
    MixedSequence<float> seq = model::chat_soft(&be, q_ids);
    const int prefix_len = seq.length();
    const int t_steps = static_cast<int>(traj.answer_ids.size());
    for (int t = 0; t + 1 < t_steps; ++t) seq.push_token(traj.answer_ids[t]);
    const TensorF student = model::forward_logits(m, seq);
    const int vocab_n = student.cols();
    for (int t = 0; t < t_steps; ++t) {
      const float* zt = traj.teacher_logits.row(t);
      const float* zs = student.row(prefix_len - 1 + t);
      // KL between tempered softmaxes, evaluated in double.
      double mt = zt[0], ms = zs[0];
      for (int c = 1; c < vocab_n; ++c) {
        mt = std::max(mt, static_cast<double>(zt[c]));
        ms = std::max(ms, static_cast<double>(zs[c]));
      }
      double dt = 0, ds = 0;
      for (int c = 0; c < vocab_n; ++c) {
        dt += std::exp((zt[c] - mt) / tau);
        ds += std::exp((zs[c] - ms) / tau);
      }
      const double log_dt = std::log(dt), log_ds = std::log(ds);
      double kl = 0;
      for (int c = 0; c < vocab_n; ++c) {
        const double log_p = (zt[c] - mt) / tau - log_dt;
        const double log_q = (zs[c] - ms) / tau - log_ds;
        kl += std::exp(log_p) * (log_p - log_q);
      }
      total += kl;
      ++steps;
    }
  }
  return total / static_cast<double>(steps);
}

double eval_task(const FrozenModelF& m, const Vocab& vocab, const TaskCondition& condition,
                 const std::vector<synthdata::LabeledQuery>& queries) {
  if (queries.empty()) throw InvalidArgumentError("eval_task: no queries");
  int hits = 0;
  for (const auto& lq : queries) {
    const std::vector<int> q_ids = vocab.tokenize(lq.query);
    MixedSequence<float> prefix;
    if (condition.soft) {
      prefix = model::chat_soft(condition.soft, q_ids);
    } else if (!condition.prompt_ids.empty()) {
      prefix = MixedSequence<float>::hard(model::chat_tokens(condition.prompt_ids, q_ids));
    } else {
      prefix = model::chat_soft<float>(nullptr, q_ids);
    }
    const int max_new = static_cast<int>(lq.oracle.size()) + 3;
    std::vector<int> out = model::generate(m, prefix, max_new, {});
    if (!out.empty() && out.back() == Vocab::kEos) out.pop_back();
    bool ok = out.size() == lq.oracle.size();
    if (ok) {
      for (size_t i = 0; i < out.size(); ++i) {
        if (Vocab::is_reserved(out[i]) || vocab.id_char(out[i]) != lq.oracle[i]) {
          ok = false;
          break;
        }
      }
    }
    hits += ok ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double retention_of(double student_acc, double teacher_acc) {
  if (teacher_acc <= 0.0) {
    throw InvalidArgumentError("retention: teacher accuracy must be positive");
  }
  return student_acc / teacher_acc;
}

void write_report_kv(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream os(path);
  if (!os) throw IoError("eval report: cannot open for writing: " + path.string());
  os << "recon_exact_match=" << r.recon_exact_match << '\n'
     << "recon_token_acc=" << r.recon_token_acc << '\n'
     << "behavioral_kl=" << r.behavioral_kl << '\n'
     << "behavioral_kl_baseline=" << r.behavioral_kl_baseline << '\n'
     << "teacher_task_acc=" << r.teacher_task_acc << '\n'
     << "student_task_acc=" << r.student_task_acc << '\n'
     << "no_prompt_task_acc=" << r.no_prompt_task_acc << '\n'
     << "retention=" << r.retention << '\n';
  if (!os) throw IoError("eval report: write failed: " + path.string());
}

void append_report_jsonl(const std::filesystem::path& path, const EvalReport& r,
                         const std::string& prompt_name, const std::string& config_name) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("eval report: cannot open for append: " + path.string());
  nlohmann::json j{{"prompt", prompt_name},
                   {"config", config_name},
                   {"recon_exact_match", r.recon_exact_match},
                   {"recon_token_acc", r.recon_token_acc},
                   {"behavioral_kl", r.behavioral_kl},
                   {"behavioral_kl_baseline", r.behavioral_kl_baseline},
                   {"teacher_task_acc", r.teacher_task_acc},
                   {"student_task_acc", r.student_task_acc},
                   {"no_prompt_task_acc", r.no_prompt_task_acc},
                   {"retention", r.retention}};
  os << j.dump() << '\n';
}

}  // namespace betoken::eval
