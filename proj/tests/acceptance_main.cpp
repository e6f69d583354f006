// Acceptance harness. Each criterion prints one line:
//   [PASS] <name> -- <details>
//   [FAIL] <name> -- <details>
// Exit code is the number of failed criteria. The long criteria share one
// pretrained frozen backbone plus its reconstruction trigger, cached on disk
// under acceptance_cache/ so reruns skip the expensive pretraining.

#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "betoken/checkpoint.hpp"
#include "betoken/efficiency.hpp"
#include "betoken/eval.hpp"
#include "betoken/losses.hpp"
#include "betoken/model.hpp"
#include "betoken/synthdata.hpp"
#include "betoken/trainer.hpp"
#include "betoken/trajectory.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;
using namespace betoken;
using model::FrozenModelF;
using model::MixedSequence;
using model::ModelGraph;
using model::SoftToken;
using model::Vocab;
using numcore::Graph;
using numcore::NodeId;
using numcore::TensorD;
using numcore::TensorF;
using synthdata::TaskRule;
using training::StageConfig;

namespace {

constexpr uint64_t kRootSeed = 20240817;
constexpr const char* kCacheTag = "v1";

struct Shared {
  Vocab vocab;
  model::Checkpoint backbone;  // frozen model + trained AE
  bool ready = false;
};

fs::path cache_dir() {
  const char* env = std::getenv("BETOKEN_ACCEPT_CACHE");
  return env ? fs::path(env) : fs::path("acceptance_cache");
}

// Pretrain (or reload) the desk-scale backbone and its AE token.
Shared& shared_backbone() {
  static Shared s;
  if (s.ready) return s;
  const fs::path dir = cache_dir();
  fs::create_directories(dir);
  const fs::path ckpt_path = dir / (std::string("backbone_ae_") + kCacheTag + ".ckpt");
  if (fs::exists(ckpt_path)) {
    s.backbone = model::load_checkpoint(ckpt_path);
    s.ready = true;
    return s;
  }
  std::cout << "  (building backbone: pretraining to the accuracy gate...)" << std::endl;
  const auto corpus = synthdata::gen_corpus(kRootSeed, 24000);
  training::PretrainConfig pc;
  pc.seed = kRootSeed;
  auto pre = training::pretrain_base(pc, s.vocab, corpus);
  if (!pre.gate_reached) {
    throw Error("gate-not-reached",
                "backbone failed its accuracy gate at " + std::to_string(pre.final_acc));
  }
  std::cout << "  (backbone gate reached at held-out acc " << pre.final_acc
            << "; training the reconstruction trigger...)" << std::endl;
  training::AeConfig ac;
  ac.seed = kRootSeed + 1;
  auto ae = training::train_ae(pre.model, s.vocab, corpus, ac);
  std::cout << "  (AE held-out loss " << ae.held_out_loss << " vs random baseline "
            << ae.baseline_loss << ", token acc " << ae.held_out_token_acc << ")" << std::endl;
  model::save_checkpoint(ckpt_path, pre.model, {&ae.ae, 1});
  s.backbone = model::load_checkpoint(ckpt_path);
  s.ready = true;
  return s;
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }
double round1(double v) { return std::round(v * 10.0) / 10.0; }

// ---------------------------------------------------------------------------
// 1. Efficiency table reproduction
// ---------------------------------------------------------------------------
bool criterion_efficiency_table(std::ostream& os) {
  const auto rows = efficiency::theoretical_efficiency_table();
  const double norms[] = {1.000, 0.304, 0.152, 0.074, 1.000, 0.276, 0.116, 0.036};
  const double deltas[] = {0.0, -69.6, -84.8, -92.6, 0.0, -72.4, -88.4, -96.4};
  bool ok = rows.size() == 8;
  for (size_t i = 0; ok && i < 8; ++i) {
    ok = std::abs(round3(rows[i].norm) - norms[i]) < 1e-9 &&
         std::abs(round1(rows[i].delta_ttft_pct) - deltas[i]) < 1e-9;
    if (!ok) {
      os << "row " << i << " got norm " << rows[i].norm << " dTTFT " << rows[i].delta_ttft_pct;
    }
  }
  if (ok) os << "all 8 NormFLOPs and dTTFT entries at printed precision";
  return ok;
}

// ---------------------------------------------------------------------------
// 2. Implied speedups
// ---------------------------------------------------------------------------
bool criterion_speedups(std::ostream& os) {
  const double s1 = 1.0 / efficiency::norm_flops(1, 337, 26);
  const double s2 = 1.0 / efficiency::norm_flops(1, 1584, 58);
  os << "1/norm: " << s1 << "x and " << s2 << "x";
  return std::abs(s1 - 13.5) < 0.1 && std::abs(s2 - 27.8) < 0.1;
}

// ---------------------------------------------------------------------------
// 3. Gradient suite: d/d e_BE and d/d e_AE of all four losses vs central
//    finite differences (64-bit, h = 1e-4, rel err < 1e-4), >= 20 configs.
// ---------------------------------------------------------------------------
bool criterion_gradient_suite(std::ostream& os) {
  const Vocab vocab;
  double worst = 0;
  int configs = 0;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng(9000 + trial);
    model::ModelConfig cfg;
    cfg.d_model = 8 + 4 * rng.uniform_int(0, 2);
    cfg.n_layers = rng.uniform_int(1, 2);
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.max_seq = 96;
    cfg.vocab_size = vocab.size();
    auto mf = FrozenModelF::random_init(cfg, 500 + trial);
    mf.freeze();
    const auto m = mf.cast<double>();

    SoftToken<double> be = SoftToken<double>::gaussian_init("BE", 1, cfg.d_model, rng, 0.5);
    SoftToken<double> ae = SoftToken<double>::gaussian_init("AE", 1, cfg.d_model, rng, 0.5);

    const auto prompt =
        synthdata::make_prompt(TaskRule::caesar(1 + trial % 3),
                               synthdata::nearest_renderable_target(TaskRule::caesar(1), 40 + trial),
                               rng.next_u64());
    const std::vector<int> prompt_ids = vocab.tokenize(prompt.text);
    const std::vector<int> text = vocab.tokenize("check gradients");
    const std::vector<int> query = vocab.tokenize(synthdata::random_query(rng, 3, 6));
    std::vector<int> answer = vocab.tokenize(synthdata::random_query(rng, 2, 5));
    answer.push_back(Vocab::kEos);
    TensorD teacher({static_cast<int>(answer.size()), cfg.vocab_size});
    for (auto& v : teacher.data) v = rng.normal(0, 2);
    const double tau = 1.0 + rng.next_unit() * 2.0;
    const double lambda = rng.next_unit();

    // One combined graph per flavor; check both soft tokens where they appear.
    struct Case {
      const char* name;
      std::function<NodeId(Graph<double>&, ModelGraph<double>&, NodeId, NodeId)> build;
      bool uses_ae;
    };
    const std::vector<Case> cases = {
        {"ae", [&](Graph<double>& g, ModelGraph<double>& mg, NodeId, NodeId ae_n) {
           return training::loss_ae(g, mg, ae, ae_n, text);
         }, true},
        {"recon", [&](Graph<double>& g, ModelGraph<double>& mg, NodeId be_n, NodeId ae_n) {
           return training::loss_recon(g, mg, be, be_n, &ae, ae_n, prompt_ids);
         }, true},
        {"kd", [&](Graph<double>& g, ModelGraph<double>& mg, NodeId be_n, NodeId) {
           return training::loss_kd(g, mg, be, be_n, query, answer, &teacher, tau);
         }, false},
        {"total", [&](Graph<double>& g, ModelGraph<double>& mg, NodeId be_n, NodeId ae_n) {
           const NodeId r = training::loss_recon(g, mg, be, be_n, &ae, ae_n, prompt_ids);
           const NodeId k = training::loss_kd(g, mg, be, be_n, query, answer, &teacher, tau);
           return training::total_loss(g, r, k, lambda);
         }, true},
        {"pt", [&](Graph<double>& g, ModelGraph<double>& mg, NodeId be_n, NodeId) {
           return training::loss_pt(g, mg, be, be_n, query, answer);
         }, false},
    };

    for (const auto& c : cases) {
      auto eval_loss = [&]() {
        Graph<double> g;
        ModelGraph<double> mg(g, m);
        const NodeId be_n = g.constant(&be.embedding);
        const NodeId ae_n = g.constant(&ae.embedding);
        return g.val(c.build(g, mg, be_n, ae_n)).data[0];
      };
      Graph<double> g;
      ModelGraph<double> mg(g, m);
      const NodeId be_n = g.param(&be.embedding);
      const NodeId ae_n = g.param(&ae.embedding);
      const NodeId loss = c.build(g, mg, be_n, ae_n);
      g.backward(loss);

      const auto num_be = oracle::finite_diff(eval_loss, be.embedding.data, 1e-4);
      worst = std::max(worst, oracle::max_rel_err(g.grad(be_n).data, num_be));
      if (c.uses_ae) {
        const auto num_ae = oracle::finite_diff(eval_loss, ae.embedding.data, 1e-4);
        worst = std::max(worst, oracle::max_rel_err(g.grad(ae_n).data, num_ae));
      }
      ++configs;
      if (worst >= 1e-4) {
        os << "config " << trial << " case " << c.name << " rel err " << worst;
        return false;
      }
    }
  }
  os << configs << " loss configs, worst rel err " << worst;
  return worst < 1e-4;
}

// ---------------------------------------------------------------------------
// 4. Freeze suite
// ---------------------------------------------------------------------------
bool criterion_freeze_suite(std::ostream& os) {
  const Vocab vocab;
  // Small backbone: pretraining changes theta until freeze, afterwards no
  // training command may touch it.
  model::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq = 128;
  cfg.vocab_size = vocab.size();
  const auto corpus = synthdata::gen_corpus(77, 200);

  training::PretrainConfig pc;
  pc.model = cfg;
  pc.max_steps = 5;
  pc.eval_every = 5;
  pc.gate_acc = 2.0;  // unreachable: we only need the loop mechanics here
  auto pre = training::pretrain_base(pc, vocab, corpus);
  pre.model.freeze();
  const uint64_t frozen_sum = pre.model.theta_checksum();

  training::AeConfig ac;
  ac.steps = 8;
  ac.batch = 2;
  ac.grad_accum = 1;
  auto ae = training::train_ae(pre.model, vocab, corpus, ac);
  if (pre.model.theta_checksum() != frozen_sum) {
    os << "theta changed during train_ae";
    return false;
  }

  const auto prompt = synthdata::make_prompt(TaskRule::upper(), 60, 3);
  const auto queries = synthdata::make_query_set(TaskRule::upper(), 30, 3);
  const std::vector<float> ae_bytes = ae.ae.embedding.data;
  StageConfig sc;
  sc.steps = 6;
  sc.batch = 2;
  sc.traj_max_new = 8;
  auto be = training::train_be(pre.model, vocab, prompt, queries.train, ae.ae, sc);
  if (pre.model.theta_checksum() != frozen_sum) {
    os << "theta changed during train_be";
    return false;
  }
  if (ae.ae.embedding.data != ae_bytes) {
    os << "e_AE changed during train_be";
    return false;
  }
  os << "theta checksum " << std::hex << frozen_sum << std::dec
     << " invariant across train_ae and train_be; e_AE invariant across train_be";
  return true;
}

// ---------------------------------------------------------------------------
// 5. Loss identities
// ---------------------------------------------------------------------------
bool criterion_loss_identities(std::ostream& os) {
  const Vocab vocab;
  model::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq = 128;
  cfg.vocab_size = vocab.size();
  auto m = FrozenModelF::random_init(cfg, 123);
  m.freeze();
  RngStream rng(9);
  const auto ae = model::SoftTokenF::gaussian_init("AE", 1, cfg.d_model, rng);
  const auto prompt = synthdata::make_prompt(TaskRule::reverse(), 48, 2);
  const auto queries = synthdata::make_query_set(TaskRule::reverse(), 24, 2);

  StageConfig base;
  base.steps = 5;
  base.batch = 2;
  base.seed = 321;
  base.traj_max_new = 8;

  StageConfig zero = base;
  zero.lambda = 0.0;
  StageConfig pure = base;
  pure.align = StageConfig::Align::kNone;
  const auto r_zero = training::train_be(m, vocab, prompt, queries.train, ae, zero);
  const auto r_pure = training::train_be(m, vocab, prompt, queries.train, ae, pure);
  for (size_t i = 0; i < r_zero.log.steps.size(); ++i) {
    if (r_zero.log.steps[i].total != r_pure.log.steps[i].total) {
      os << "lambda=0 diverges from pure reconstruction at step " << i;
      return false;
    }
  }
  if (r_zero.be.embedding.data != r_pure.be.embedding.data) {
    os << "lambda=0 final embedding differs from pure reconstruction";
    return false;
  }

  StageConfig one = base;
  one.lambda = 1.0;
  const auto r_one = training::train_be(m, vocab, prompt, queries.train, ae, one);
  if (r_one.recon_evals != 0) {
    os << "lambda=1 evaluated the reconstruction graph " << r_one.recon_evals << " times";
    return false;
  }

  // KD loss exactly zero under forced teacher-equal logits.
  const int tok = vocab.char_id('m');
  TensorF row({1, cfg.d_model});
  for (int c = 0; c < cfg.d_model; ++c) row.at(0, c) = m.weights().tok_emb.at(tok, c);
  SoftToken<float> be_splice("BE", std::move(row));
  const std::vector<int> pid{tok};
  const auto traj =
      training::build_teacher_trajectory(m, pid, vocab.tokenize("abc"), {}, 8);
  Graph<float> g;
  ModelGraph<float> mg(g, m);
  const double kd = g.val(training::loss_kd(g, mg, be_splice, g.constant(&be_splice.embedding),
                                            traj.query_ids, traj.answer_ids,
                                            &traj.teacher_logits, 2.0))
                        .data[0];
  if (kd != 0.0) {
    os << "forced teacher-equal KD loss is " << kd << ", not exactly 0";
    return false;
  }

  // KL non-negativity and softmax shift invariance over 1000 draws.
  RngStream draws(777);
  for (int i = 0; i < 1000; ++i) {
    const int n = draws.uniform_int(2, 10);
    std::vector<double> zp(static_cast<size_t>(n)), zq(static_cast<size_t>(n));
    for (auto& v : zp) v = draws.normal(0, 3);
    for (auto& v : zq) v = draws.normal(0, 3);
    Graph<double> gd;
    const auto p = gd.row_softmax(gd.value(TensorD::from({n}, std::vector<double>(zp))), 1.0);
    const auto q = gd.row_softmax(gd.value(TensorD::from({n}, std::vector<double>(zq))), 1.0);
    if (gd.val(gd.kl_divergence(p, q)).data[0] < 0) {
      os << "negative KL on draw " << i;
      return false;
    }
    const double shift = draws.normal(0, 5);
    std::vector<double> zs = zp;
    for (auto& v : zs) v += shift;
    const auto ps = gd.row_softmax(gd.value(TensorD::from({n}, std::vector<double>(zs))), 1.0);
    const auto& a = gd.val(p);
    const auto& b = gd.val(ps);
    for (int c = 0; c < n; ++c) {
      if (std::abs(a.data[c] - b.data[c]) > 1e-6) {
        os << "shift variance " << std::abs(a.data[c] - b.data[c]) << " on draw " << i;
        return false;
      }
    }
  }
  os << "lambda endpoints bit-stable, forced KD optimum exactly 0, 1000 KL/softmax draws clean";
  return true;
}

// ---------------------------------------------------------------------------
// 6. End-to-end desk experiment
// ---------------------------------------------------------------------------
struct DeskArtifacts {
  synthdata::PromptSpec prompt;
  std::vector<int> prompt_ids;
  synthdata::QuerySet queries;
  model::SoftTokenF be;
  bool ready = false;
};

DeskArtifacts& desk_run() {
  static DeskArtifacts d;
  if (d.ready) return d;
  Shared& s = shared_backbone();
  d.prompt = synthdata::make_prompt(TaskRule::caesar(3), 200, kRootSeed + 7);
  d.prompt_ids = s.vocab.tokenize(d.prompt.text);
  d.queries = synthdata::make_query_set(TaskRule::caesar(3), 500, kRootSeed + 8);
  StageConfig sc;
  sc.seed = kRootSeed + 9;
  auto r = training::train_be(s.backbone.model, s.vocab, d.prompt, d.queries.train,
                              s.backbone.require("AE"), sc);
  d.be = std::move(r.be);
  d.ready = true;
  return d;
}

bool criterion_desk_experiment(std::ostream& os) {
  Shared& s = shared_backbone();
  DeskArtifacts& d = desk_run();
  const auto& ae = s.backbone.require("AE");

  const auto [em, token_acc] = eval::eval_reconstruction(s.backbone.model, d.be, ae, d.prompt_ids);
  const double kl =
      eval::eval_behavioral_kl(s.backbone.model, s.vocab, d.be, d.prompt_ids, d.queries.held_out);
  RngStream rng(kRootSeed + 10);
  const auto random_be =
      model::SoftTokenF::gaussian_init("BE", 1, s.backbone.model.config().d_model, rng);
  const double kl_baseline = eval::eval_behavioral_kl(s.backbone.model, s.vocab, random_be,
                                                      d.prompt_ids, d.queries.held_out);
  const double teacher_acc =
      eval::eval_task(s.backbone.model, s.vocab, eval::TaskCondition::full_prompt(d.prompt_ids),
                      d.queries.held_out);
  const double student_acc = eval::eval_task(s.backbone.model, s.vocab,
                                             eval::TaskCondition::soft_token(&d.be),
                                             d.queries.held_out);
  const double retention = eval::retention_of(student_acc, teacher_acc);

  os << "recon em=" << em << " tok_acc=" << token_acc << "; kl=" << kl << " vs random "
     << kl_baseline << " (ratio " << kl / kl_baseline << "); teacher=" << teacher_acc
     << " student=" << student_acc << " retention=" << retention;
  return em == 1.0 && kl <= 0.1 * kl_baseline && retention >= 0.95;
}

// ---------------------------------------------------------------------------
// 7. Ablation ordering
// ---------------------------------------------------------------------------
bool criterion_ablation_ordering(std::ostream& os) {
  Shared& s = shared_backbone();
  const auto& ae = s.backbone.require("AE");
  const auto prompt = synthdata::make_prompt(TaskRule::caesar(2), 200, kRootSeed + 21);
  const auto prompt_ids = s.vocab.tokenize(prompt.text);
  const auto queries = synthdata::make_query_set(TaskRule::caesar(2), 160, kRootSeed + 22);

  struct Cell {
    const char* name;
    StageConfig::Recon recon;
    StageConfig::Align align;
  };
  const std::vector<Cell> cells = {
      {"full", StageConfig::Recon::kWithAe, StageConfig::Align::kKd},
      {"kd-only", StageConfig::Recon::kNone, StageConfig::Align::kKd},
      {"pt-only", StageConfig::Recon::kNone, StageConfig::Align::kPt},
      {"memory-token", StageConfig::Recon::kWithoutAe, StageConfig::Align::kNone},
  };
  std::vector<double> acc(cells.size()), kl(cells.size());
  for (size_t i = 0; i < cells.size(); ++i) {
    StageConfig sc;
    sc.seed = kRootSeed + 23;
    sc.steps = 900;
    sc.recon = cells[i].recon;
    sc.align = cells[i].align;
    auto r = training::train_be(s.backbone.model, s.vocab, prompt, queries.train, ae, sc);
    acc[i] = eval::eval_task(s.backbone.model, s.vocab, eval::TaskCondition::soft_token(&r.be),
                             queries.held_out);
    kl[i] = eval::eval_behavioral_kl(s.backbone.model, s.vocab, r.be, prompt_ids,
                                     queries.held_out);
    os << cells[i].name << " acc=" << acc[i] << " kl=" << kl[i] << "; ";
  }
  // Strictly better task accuracy, or a tie broken by behavioral KL.
  auto better = [&](size_t a, size_t b) {
    return acc[a] > acc[b] || (acc[a] == acc[b] && kl[a] < kl[b]);
  };
  return better(0, 1) && better(1, 2) && better(2, 3);
}

// ---------------------------------------------------------------------------
// 8. Lambda sweep shape
// ---------------------------------------------------------------------------
bool criterion_lambda_sweep(std::ostream& os) {
  Shared& s = shared_backbone();
  const auto& ae = s.backbone.require("AE");
  const auto prompt = synthdata::make_prompt(TaskRule::reverse(), 200, kRootSeed + 31);
  const auto queries = synthdata::make_query_set(TaskRule::reverse(), 160, kRootSeed + 32);
  const double teacher_acc =
      eval::eval_task(s.backbone.model, s.vocab,
                      eval::TaskCondition::full_prompt(s.vocab.tokenize(prompt.text)),
                      queries.held_out);

  auto retention_at = [&](double lambda) {
    StageConfig sc;
    sc.seed = kRootSeed + 33;
    sc.steps = 900;
    sc.lambda = lambda;
    auto r = training::train_be(s.backbone.model, s.vocab, prompt, queries.train, ae, sc);
    const double acc = eval::eval_task(s.backbone.model, s.vocab,
                                       eval::TaskCondition::soft_token(&r.be), queries.held_out);
    return eval::retention_of(acc, teacher_acc);
  };
  const double r01 = retention_at(0.1);
  const double r05 = retention_at(0.5);
  const double r09 = retention_at(0.9);
  const double r10 = retention_at(1.0);
  os << "retention lambda=0.1: " << r01 << ", 0.5: " << r05 << ", 0.9: " << r09 << ", 1.0: "
     << r10;
  return r05 >= r01 && r09 >= r01 && r10 >= r01;
}

// ---------------------------------------------------------------------------
// 9. Prefill benchmark
// ---------------------------------------------------------------------------
bool criterion_benchmark(std::ostream& os) {
  Shared& s = shared_backbone();
  const int L_q = 12;
  const int repeats = 100;

  const auto soft =
      efficiency::benchmark_prefill(s.backbone.model, s.vocab, 1, L_q, true, repeats, kRootSeed);
  std::vector<efficiency::BenchStats> fulls;
  for (const int lp : {50, 100, 150, 200}) {
    fulls.push_back(efficiency::benchmark_prefill(s.backbone.model, s.vocab, lp, L_q, false,
                                                  repeats, kRootSeed));
  }
  const double t100 = fulls[1].median_ms, t200 = fulls[3].median_ms;
  const bool faster = soft.median_ms < t100 && soft.median_ms < t200;

  std::vector<std::pair<double, double>> pts;
  pts.emplace_back(soft.total_tokens, soft.median_ms);
  for (const auto& f : fulls) pts.emplace_back(f.total_tokens, f.median_ms);
  const auto fit = efficiency::fit_rho(pts);

  bool band_ok = true;
  double worst_gap = 0;
  for (const auto& f : fulls) {
    const double rho = fit.rho_at(f.total_tokens);
    const double norm =
        efficiency::norm_flops(1, f.total_tokens - L_q - 3, L_q + 3);  // chat adds 3 separators
    const double predicted = efficiency::ttft_ratio(norm, rho);
    const double measured = soft.median_ms / f.median_ms;
    const double gap = std::abs(measured - predicted) / predicted;
    worst_gap = std::max(worst_gap, gap);
    band_ok = band_ok && gap <= 0.20;
  }
  const double rho200 = fit.rho_at(fulls[3].total_tokens);
  os << "soft median " << soft.median_ms << "ms vs full@100 " << t100 << "ms / full@200 " << t200
     << "ms; alpha=" << fit.alpha << " beta=" << fit.beta << " rho@200=" << rho200
     << "; worst band gap " << worst_gap * 100 << "%";
  return faster && rho200 > 0.0 && rho200 < 1.0 && band_ok;
}

struct Criterion {
  const char* name;
  std::function<bool(std::ostream&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"efficiency-table", criterion_efficiency_table},
      {"implied-speedups", criterion_speedups},
      {"gradient-suite", criterion_gradient_suite},
      {"freeze-suite", criterion_freeze_suite},
      {"loss-identities", criterion_loss_identities},
      {"desk-experiment", criterion_desk_experiment},
      {"ablation-ordering", criterion_ablation_ordering},
      {"lambda-sweep-shape", criterion_lambda_sweep},
      {"prefill-benchmark", criterion_benchmark},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    std::ostringstream details;
    bool ok = false;
    try {
      ok = c.run(details);
    } catch (const std::exception& e) {
      details << "exception: " << e.what();
    }
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << c.name << " -- " << details.str() << std::endl;
    failures += ok ? 0 : 1;
  }
  return failures;
}
