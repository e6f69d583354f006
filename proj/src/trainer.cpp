#include "betoken/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include "betoken/losses.hpp"

namespace betoken::training {

using model::FrozenModelF;
using model::MixedSequence;
using model::ModelGraph;
using model::SoftTokenF;
using model::Vocab;
using numcore::GradSlot;
using numcore::GraphF;
using numcore::NodeId;
using numcore::TensorF;
using synthdata::CorpusLine;
using synthdata::LabeledQuery;
using synthdata::PromptSpec;

void TrainLog::write_csv(const std::filesystem::path& path, const std::string& align_name) const {
  std::ofstream os(path);
  if (!os) throw IoError("train log: cannot open for writing: " + path.string());
  os << "step,recon," << align_name << ",total\n";
  for (const auto& s : steps) {
    os << s.step << ',' << s.recon << ',' << s.align << ',' << s.total << '\n';
  }
}

void StageConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgumentError("stage config: lambda must be in [0,1]");
  if (!(tau > 0.0)) throw InvalidArgumentError("stage config: tau must be positive");
  if (!(lr > 0.0)) throw InvalidArgumentError("stage config: lr must be positive");
  if (steps < 0 || batch < 1 || grad_accum < 1 || be_width < 1 || warmup_recon < 0) {
    throw InvalidArgumentError("stage config: bad loop sizes");
  }
  if (recon == Recon::kNone && align == Align::kNone) {
    throw InvalidArgumentError("stage config: both loss terms disabled");
  }
}

namespace {

void check_frozen(const FrozenModelF& m, const char* where) {
  if (!m.frozen()) {
    throw InvariantViolationError(std::string(where) + ": model must be frozen");
  }
}

struct ChecksumGuard {
  const FrozenModelF& m;
  const char* where;
  uint64_t before;
  explicit ChecksumGuard(const FrozenModelF& model, const char* w)
      : m(model), where(w), before(model.theta_checksum()) {}
  void verify() const {
    if (m.theta_checksum() != before) {
      throw InvariantViolationError(std::string(where) + ": theta changed during training");
    }
  }
};

std::vector<int> crop_text_tokens(const Vocab& vocab, const std::string& text, int len) {
  return vocab.tokenize(std::string_view(text).substr(0, static_cast<size_t>(len)));
}

double ae_eval_loss(const FrozenModelF& m, const SoftTokenF& ae,
                    const std::vector<std::vector<int>>& texts) {
  double total = 0;
  for (const auto& t : texts) {
    GraphF g;
    ModelGraph<float> mg(g, m);
    const NodeId ae_node = g.constant(&ae.embedding);
    total += g.val(loss_ae(g, mg, ae, ae_node, t)).data[0];
  }
  return total / static_cast<double>(texts.size());
}

double ae_eval_token_acc(const FrozenModelF& m, const SoftTokenF& ae,
                         const std::vector<std::vector<int>>& texts) {
  size_t hits = 0, total = 0;
  for (const auto& t : texts) {
    MixedSequence<float> seq;
    seq.push_tokens(t);
    seq.push_soft(&ae);
    seq.push_tokens(t);
    const TensorF logits = model::forward_logits(m, seq);
    const int n = static_cast<int>(t.size());
    const int base = n + ae.width() - 1;
    for (int i = 0; i < n; ++i) {
      const float* row = logits.row(base + i);
      int best = 0;
      for (int c = 1; c < logits.cols(); ++c) {
        if (row[c] > row[best]) best = c;
      }
      hits += best == t[i] ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

AeResult train_ae(const FrozenModelF& m, const Vocab& vocab,
                  const std::vector<CorpusLine>& corpus, const AeConfig& cfg) {
  check_frozen(m, "train_ae");
  if (corpus.empty()) throw InvalidArgumentError("train_ae: empty corpus");
  const int max_text_fit = (m.config().max_seq - 1 - cfg.width) / 2;
  const int max_text = std::min(cfg.max_text, max_text_fit);
  if (cfg.min_text < 1 || cfg.min_text > max_text) {
    throw InvalidArgumentError("train_ae: text window does not fit max_seq");
  }
  ChecksumGuard guard(m, "train_ae");

  RngStream init = RngStream::substream(cfg.seed, seeds::kInit);
  AeResult result{SoftTokenF::gaussian_init("AE", cfg.width, m.config().d_model, init), {}, 0, 0, 0};
  SoftTokenF& ae = result.ae;

  RngStream sampling = RngStream::substream(cfg.seed, seeds::kSampling);
  auto draw_text = [&](RngStream& rng) {
    const CorpusLine& line = corpus[rng.index(corpus.size())];
    const int cap = std::min<int>(max_text, static_cast<int>(line.prompt.size()));
    const int len = rng.uniform_int(std::min(cfg.min_text, cap), cap);
    return crop_text_tokens(vocab, line.prompt, len);
  };

  AdamWF opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0}, {&ae.embedding});
  for (int step = 0; step < cfg.steps; ++step) {
    GradSlot<float> slot(&ae.embedding);
    double loss_sum = 0;
    for (int acc = 0; acc < cfg.grad_accum; ++acc) {
      GraphF g;
      ModelGraph<float> mg(g, m);
      const NodeId ae_node = g.param(&ae.embedding);
      NodeId batch_loss = -1;
      for (int b = 0; b < cfg.batch; ++b) {
        const NodeId li = loss_ae(g, mg, ae, ae_node, draw_text(sampling));
        batch_loss = batch_loss < 0 ? li : g.add(batch_loss, li);
      }
      batch_loss = g.scale(batch_loss, 1.0f / static_cast<float>(cfg.batch));
      g.backward(batch_loss);
      slot.accumulate(g.grad(ae_node));
      loss_sum += g.val(batch_loss).data[0];
    }
    slot.scale(1.0f / static_cast<float>(cfg.grad_accum));
    const TensorF* gp = &slot.grad;
    opt.step({&gp, 1});
    const double mean_loss = loss_sum / cfg.grad_accum;
    result.log.steps.push_back({step, mean_loss, 0.0, mean_loss});
  }

  // Held-out gate: fresh texts, trained embedding vs a fresh random one.
  RngStream held = RngStream::substream(cfg.seed, "ae-held-out");
  std::vector<std::vector<int>> texts;
  for (int i = 0; i < 64; ++i) texts.push_back(draw_text(held));
  result.held_out_loss = ae_eval_loss(m, ae, texts);
  RngStream base_rng = RngStream::substream(cfg.seed, "ae-baseline");
  const SoftTokenF baseline =
      SoftTokenF::gaussian_init("AE", cfg.width, m.config().d_model, base_rng);
  result.baseline_loss = ae_eval_loss(m, baseline, texts);
  result.held_out_token_acc = ae_eval_token_acc(m, ae, texts);

  guard.verify();
  return result;
}

BeResult train_be(const FrozenModelF& m, const Vocab& vocab, const PromptSpec& prompt,
                  const std::vector<LabeledQuery>& train_queries, const SoftTokenF& ae,
                  const StageConfig& cfg) {
  cfg.validate();
  check_frozen(m, "train_be");
  ChecksumGuard guard(m, "train_be");
  const std::vector<float> ae_before = ae.embedding.data;

  const std::vector<int> prompt_ids = vocab.tokenize(prompt.text);
  if (static_cast<int>(prompt_ids.size()) != prompt.token_length) {
    throw InvariantViolationError("train_be: prompt length does not match its spec");
  }

  const bool needs_queries = cfg.align != StageConfig::Align::kNone && cfg.lambda > 0.0;
  if (needs_queries && train_queries.empty()) {
    throw InvalidArgumentError("train_be: alignment enabled but no training queries given");
  }

  RngStream init = RngStream::substream(cfg.seed, seeds::kInit);
  BeResult result{SoftTokenF::gaussian_init("BE", cfg.be_width, m.config().d_model, init),
                  {},
                  {hash_prompt_ids(prompt_ids), m.config().vocab_size, {}},
                  0,
                  0};
  SoftTokenF& be = result.be;

  RngStream sampling = RngStream::substream(cfg.seed, seeds::kSampling);

  // Trajectories are built on first use and cached for the whole run.
  std::unordered_map<int, size_t> traj_index;
  auto trajectory_for = [&](int qidx) -> const Trajectory& {
    auto it = traj_index.find(qidx);
    if (it != traj_index.end()) return result.trajectories.items[it->second];
    const LabeledQuery& lq = train_queries[static_cast<size_t>(qidx)];
    const std::vector<int> q_ids = vocab.tokenize(lq.query);
    std::vector<int> gold_ids;
    if (cfg.teacher == StageConfig::Teacher::kGold) {
      if (lq.oracle.empty()) {
        throw InvalidArgumentError("train_be: gold teacher requested but query '" + lq.query +
                                   "' has no oracle answer");
      }
      gold_ids = vocab.tokenize(lq.oracle);
    }
    result.trajectories.items.push_back(
        build_teacher_trajectory(m, prompt_ids, q_ids, gold_ids, cfg.traj_max_new));
    traj_index.emplace(qidx, result.trajectories.items.size() - 1);
    return result.trajectories.items.back();
  };

  AdamWF opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0}, {&be.embedding});
  for (int step = 0; step < cfg.steps; ++step) {
    const bool in_warmup = step < cfg.warmup_recon;
    const double lambda = in_warmup ? 0.0 : cfg.lambda;
    const bool align_on = !in_warmup && cfg.align != StageConfig::Align::kNone && lambda > 0.0;
    const bool recon_on = cfg.recon != StageConfig::Recon::kNone && (!align_on || lambda < 1.0);
    if (!align_on && !recon_on) {
      throw InvalidArgumentError("train_be: step " + std::to_string(step) +
                                 " has no active loss term (lambda=" + std::to_string(lambda) + ")");
    }

    GradSlot<float> slot(&be.embedding);
    double recon_sum = 0, align_sum = 0, total_sum = 0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      GraphF g;
      ModelGraph<float> mg(g, m);
      const NodeId be_node = g.param(&be.embedding);
      const bool with_ae = cfg.recon == StageConfig::Recon::kWithAe;
      const NodeId ae_node = (recon_on && with_ae) ? g.constant(&ae.embedding) : -1;

      NodeId l_recon = -1;
      if (recon_on) {
        l_recon = loss_recon(g, mg, be, be_node, with_ae ? &ae : nullptr, ae_node,
                             prompt_ids);
        ++result.recon_evals;
      }
      NodeId l_align = -1;
      if (align_on) {
        NodeId acc = -1;
        for (int b = 0; b < cfg.batch; ++b) {
          const int qidx = static_cast<int>(sampling.index(train_queries.size()));
          NodeId li;
          if (cfg.align == StageConfig::Align::kKd) {
            const Trajectory& traj = trajectory_for(qidx);
            li = loss_kd(g, mg, be, be_node, traj.query_ids, traj.answer_ids,
                         &traj.teacher_logits, cfg.tau);
          } else {
            const LabeledQuery& lq = train_queries[static_cast<size_t>(qidx)];
            if (lq.oracle.empty()) {
              throw InvalidArgumentError("train_be: prompt-tuning needs oracle answers");
            }
            std::vector<int> gold = vocab.tokenize(lq.oracle);
            gold.push_back(Vocab::kEos);
            li = loss_pt(g, mg, be, be_node, vocab.tokenize(lq.query), gold);
          }
          acc = acc < 0 ? li : g.add(acc, li);
        }
        l_align = g.scale(acc, 1.0f / static_cast<float>(cfg.batch));
        ++result.align_evals;
      }

      NodeId total;
      if (recon_on && align_on) {
        total = total_loss(g, l_recon, l_align, lambda);
      } else if (recon_on) {
        total = l_recon;
      } else {
        total = l_align;
      }
      g.backward(total);
      slot.accumulate(g.grad(be_node));
      recon_sum += l_recon >= 0 ? g.val(l_recon).data[0] : 0.0;
      align_sum += l_align >= 0 ? g.val(l_align).data[0] : 0.0;
      total_sum += g.val(total).data[0];
    }
    slot.scale(1.0f / static_cast<float>(cfg.grad_accum));
    const TensorF* gp = &slot.grad;
    opt.step({&gp, 1});
    result.log.steps.push_back({step, recon_sum / cfg.grad_accum, align_sum / cfg.grad_accum,
                                total_sum / cfg.grad_accum});
    if ((step + 1) % 200 == 0) {
      std::cout << "be step " << (step + 1) << " recon " << recon_sum / cfg.grad_accum
                << " align " << align_sum / cfg.grad_accum << std::endl;
    }
  }

  guard.verify();
  if (ae.embedding.data != ae_before) {
    throw InvariantViolationError("train_be: e_AE changed during stage 1+2");
  }
  return result;
}

// --- pretraining ----------------------------------------------------------------

namespace {

struct GateItem {
  std::vector<int> prompt_ids;
  std::vector<int> query_ids;
  std::string oracle;
};

std::vector<GateItem> build_gate_items(const Vocab& vocab, int n, uint64_t seed, int max_seq) {
  using synthdata::TaskRule;
  const std::vector<TaskRule> rules = {
      TaskRule::upper(),   TaskRule::reverse(),  TaskRule::duplicate(),  TaskRule::caesar(1),
      TaskRule::caesar(2), TaskRule::caesar(3),  TaskRule::parity_tag(),
  };
  RngStream rng = RngStream::substream(seed, "gate");
  // Prompt + query + separators + answer + EOS must fit the context window.
  const int cap = std::min(200, max_seq - 32);
  std::vector<GateItem> items;
  items.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const TaskRule& rule = rules[static_cast<size_t>(i) % rules.size()];
    const int min_len = synthdata::min_prompt_length(rule);
    if (min_len > cap) {
      throw InvalidArgumentError("pretrain: max_seq too small for gate prompts");
    }
    int target;
    switch (i % 3) {
      case 0: target = rng.uniform_int(min_len, std::max(min_len, std::min(90, cap))); break;
      case 1: target = rng.uniform_int(std::min(std::max(min_len, 90), cap), std::min(150, cap)); break;
      default: target = rng.uniform_int(std::min(150, cap), cap); break;
    }
    target = std::min(synthdata::nearest_renderable_target(rule, std::min(target, cap)), cap + 3);
    const synthdata::PromptSpec p = synthdata::make_prompt(rule, target, rng.next_u64());
    const std::string q = synthdata::random_query(rng, 3, 8);
    items.push_back({vocab.tokenize(p.text), vocab.tokenize(q), synthdata::oracle_answer(rule, q)});
  }
  return items;
}

double gate_accuracy(const FrozenModelF& m, const Vocab& vocab, const std::vector<GateItem>& items) {
  int hits = 0;
  for (const auto& item : items) {
    // Greedy decode with early exit: the first wrong character already
    // decides the exact-match outcome.
    std::vector<int> expected;
    for (char c : item.oracle) expected.push_back(vocab.char_id(c));
    expected.push_back(Vocab::kEos);
    std::vector<int> seq = model::chat_tokens(item.prompt_ids, item.query_ids);
    bool ok = true;
    for (int next_expected : expected) {
      GraphF g;
      ModelGraph<float> mg(g, m);
      const TensorF& logits =
          g.val(mg.logits(MixedSequence<float>::hard(seq), {}, /*last_only=*/true));
      int best = 0;
      for (int c = 1; c < logits.cols(); ++c) {
        if (logits.data[c] > logits.data[best]) best = c;
      }
      if (best != next_expected) {
        ok = false;
        break;
      }
      seq.push_back(best);
    }
    hits += ok ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

}  // namespace

PretrainResult pretrain_base(const PretrainConfig& cfg, const Vocab& vocab,
                             const std::vector<CorpusLine>& corpus) {
  if (corpus.empty()) throw InvalidArgumentError("pretrain: empty corpus");
  model::ModelConfig mc = cfg.model;
  if (mc.vocab_size == 0) mc.vocab_size = vocab.size();
  mc.validate();

  PretrainResult result{FrozenModelF::random_init(mc, cfg.seed), {}, 0.0, false};
  FrozenModelF& m = result.model;

  std::vector<TensorF*> params;
  m.mutable_weights().for_each(
      [&params](const std::string&, TensorF& t) { params.push_back(&t); });
  AdamWF opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0}, params);

  RngStream sampling = RngStream::substream(cfg.seed, seeds::kSampling);
  const std::vector<GateItem> gate_items =
      build_gate_items(vocab, cfg.eval_queries, cfg.seed, mc.max_seq);

  // Lines that cannot fit the context window are skipped, not cropped.
  std::vector<std::vector<int>> line_tokens;
  line_tokens.reserve(corpus.size());
  for (const auto& line : corpus) {
    std::vector<int> toks = line.tokens(vocab);
    if (static_cast<int>(toks.size()) <= mc.max_seq) line_tokens.push_back(std::move(toks));
  }
  if (line_tokens.empty()) {
    throw InvalidArgumentError("pretrain: no corpus line fits max_seq " +
                               std::to_string(mc.max_seq));
  }

  for (int step = 0; step < cfg.max_steps; ++step) {
    // Linear warmup, then cosine decay to 10% of peak.
    double lr_scale;
    if (step < cfg.warmup_steps) {
      lr_scale = static_cast<double>(step + 1) / cfg.warmup_steps;
    } else {
      const double p = static_cast<double>(step - cfg.warmup_steps) /
                       std::max(1, cfg.max_steps - cfg.warmup_steps);
      lr_scale = 0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * p));
    }

    GraphF g;
    ModelGraph<float> mg(g, m, /*trainable=*/true);
    NodeId batch_loss = -1;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::vector<int>& toks = line_tokens[sampling.index(line_tokens.size())];
      const int len = static_cast<int>(toks.size());
      const NodeId logits = mg.logits(MixedSequence<float>::hard(toks));
      const NodeId lm_rows = g.row_slice(logits, 0, len - 1);
      const NodeId ce_full =
          g.cross_entropy(lm_rows, std::vector<int>(toks.begin() + 1, toks.end()));
      NodeId line_loss = ce_full;
      if (cfg.answer_weight > 1.0) {
        // Extra weight on the answer span (ASST+1 .. EOS predictions).
        int asst = -1;
        for (int i = 0; i < len; ++i) {
          if (toks[i] == Vocab::kAsst) {
            asst = i;
            break;
          }
        }
        if (asst >= 0 && asst + 1 < len) {
          const int count = len - 1 - asst;
          const NodeId ans_rows = g.row_slice(logits, asst, count);
          const NodeId ce_ans = g.cross_entropy(
              ans_rows, std::vector<int>(toks.begin() + asst + 1, toks.end()));
          line_loss =
              g.add(ce_full, g.scale(ce_ans, static_cast<float>(cfg.answer_weight - 1.0)));
        }
      }
      batch_loss = batch_loss < 0 ? line_loss : g.add(batch_loss, line_loss);
    }
    batch_loss = g.scale(batch_loss, 1.0f / static_cast<float>(cfg.batch));
    g.backward(batch_loss);

    std::vector<const TensorF*> grads;
    grads.reserve(mg.param_bindings().size());
    for (const auto& pb : mg.param_bindings()) grads.push_back(&g.grad(pb.node));
    opt.step(grads, lr_scale);

    const double loss = g.val(batch_loss).data[0];
    const bool eval_now = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps;
    if (eval_now) {
      const double acc = gate_accuracy(m, vocab, gate_items);
      result.curve.push_back({step + 1, loss, acc});
      result.final_acc = acc;
      std::cout << "pretrain step " << (step + 1) << " loss " << loss << " held_out_acc " << acc
                << std::endl;
      if (acc >= cfg.gate_acc) {
        result.gate_reached = true;
        m.freeze();
        return result;
      }
    }
  }
  return result;
}

void write_gate_curve_csv(const std::filesystem::path& path, const std::vector<GatePoint>& curve) {
  std::ofstream os(path);
  if (!os) throw IoError("gate curve: cannot open for writing: " + path.string());
  os << "step,loss,held_out_acc\n";
  for (const auto& p : curve) os << p.step << ',' << p.loss << ',' << p.acc << '\n';
}

}  // namespace betoken::training
