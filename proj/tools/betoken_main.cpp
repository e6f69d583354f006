// betoken: compress a system prompt into a single behavior-equivalent token
// on a tiny frozen transformer, then measure how faithfully the token stands
// in for the prompt and what the shorter prefill buys.
//
// Subcommands: pretrain-base, train-ae, train-be, eval, efficiency,
// sweep-lambda. Every run writes the exact config it used next to its
// outputs; re-running a config reproduces all non-timing outputs.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "betoken/checkpoint.hpp"
#include "betoken/config.hpp"
#include "betoken/efficiency.hpp"
#include "betoken/errors.hpp"
#include "betoken/eval.hpp"
#include "betoken/model.hpp"
#include "betoken/synthdata.hpp"
#include "betoken/trainer.hpp"
#include "betoken/trajectory.hpp"

namespace fs = std::filesystem;
using namespace betoken;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "root seed (overrides config)");
  cmd->add_option("--set", args.sets, "extra key=value overrides")->take_all();
}

cli::KvConfig resolve(const CommonArgs& args) {
  cli::KvConfig cfg;
  if (!args.config_path.empty()) cfg = cli::KvConfig::load(args.config_path);
  cfg.apply_overrides(args.sets);
  if (args.seed) cfg.set_int("seed", static_cast<long long>(*args.seed));
  if (!args.out_dir.empty()) cfg.set("out", args.out_dir);
  if (!cfg.has("out")) throw InvalidArgumentError("missing output directory (--out or out=...)");
  return cfg;
}

fs::path prepare_out(cli::KvConfig& cfg) {
  const fs::path out(cfg.require_str("out"));
  fs::create_directories(out);
  return out;
}

model::ModelConfig model_config_from(const cli::KvConfig& cfg, const model::Vocab& vocab) {
  model::ModelConfig mc;
  mc.d_model = cfg.get_int("d_model", 128);
  mc.n_layers = cfg.get_int("n_layers", 4);
  mc.n_heads = cfg.get_int("n_heads", 4);
  mc.d_ff = cfg.get_int("d_ff", 512);
  mc.max_seq = cfg.get_int("max_seq", 256);
  mc.vocab_size = vocab.size();
  return mc;
}

void record_model_config(cli::KvConfig& cfg, const model::ModelConfig& mc) {
  cfg.set_int("d_model", mc.d_model);
  cfg.set_int("n_layers", mc.n_layers);
  cfg.set_int("n_heads", mc.n_heads);
  cfg.set_int("d_ff", mc.d_ff);
  cfg.set_int("max_seq", mc.max_seq);
}

synthdata::PromptSpec prompt_from(const cli::KvConfig& cfg) {
  const auto rule = synthdata::TaskRule::from_name(cfg.get_str("rule", "UPPER"));
  const int len = cfg.get_int("prompt_len", 200);
  const uint64_t seed = cfg.get_u64("prompt_seed", cfg.get_u64("seed", 1));
  return synthdata::make_prompt(rule, len, seed);
}

// --- subcommands ----------------------------------------------------------------

int cmd_pretrain_base(const CommonArgs& args) {
  cli::KvConfig cfg = resolve(args);
  const fs::path out = prepare_out(cfg);
  const model::Vocab vocab;

  training::PretrainConfig pc;
  pc.model = model_config_from(cfg, vocab);
  pc.seed = cfg.get_u64("seed", 1);
  pc.lr = cfg.get_double("lr", 1e-3);
  pc.warmup_steps = cfg.get_int("warmup_steps", 100);
  pc.max_steps = cfg.get_int("max_steps", 4000);
  pc.batch = cfg.get_int("batch", 16);
  pc.answer_weight = cfg.get_double("answer_weight", 3.0);
  pc.eval_every = cfg.get_int("eval_every", 250);
  pc.eval_queries = cfg.get_int("eval_queries", 140);
  pc.gate_acc = cfg.get_double("gate_acc", 0.99);
  const int corpus_examples = cfg.get_int("corpus_examples", 24000);

  record_model_config(cfg, pc.model);
  cfg.set_int("corpus_examples", corpus_examples);
  cfg.save(out / "config.used");

  const auto corpus = synthdata::gen_corpus(pc.seed, corpus_examples);
  synthdata::write_corpus(out / "corpus.txt", corpus);

  training::PretrainResult result = training::pretrain_base(pc, vocab, corpus);
  training::write_gate_curve_csv(out / "gate_curve.csv", result.curve);
  {
    std::ofstream os(out / "gate_report.txt");
    os << "gate_reached=" << (result.gate_reached ? 1 : 0) << '\n'
       << "held_out_acc=" << result.final_acc << '\n'
       << "gate_acc=" << pc.gate_acc << '\n'
       << "frozen=" << (result.model.frozen() ? 1 : 0) << '\n';
  }
  if (!result.gate_reached) {
    throw Error("gate-not-reached", "held-out accuracy " + std::to_string(result.final_acc) +
                                        " below gate " + std::to_string(pc.gate_acc) +
                                        "; curve in " + (out / "gate_curve.csv").string());
  }
  model::save_checkpoint(out / "model.ckpt", result.model, {});
  std::cout << "pretrain-base: gate reached, held_out_acc=" << result.final_acc << ", checkpoint "
            << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_train_ae(const CommonArgs& args) {
  cli::KvConfig cfg = resolve(args);
  const fs::path out = prepare_out(cfg);
  const model::Vocab vocab;

  const std::string ckpt_path = cfg.require_str("ckpt");
  if (!fs::exists(ckpt_path)) throw InvalidArgumentError("missing checkpoint: " + ckpt_path);
  model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);

  training::AeConfig ac;
  ac.lr = cfg.get_double("lr", 1e-3);
  ac.steps = cfg.get_int("steps", 600);
  ac.batch = cfg.get_int("batch", 4);
  ac.grad_accum = cfg.get_int("grad_accum", 2);
  ac.min_text = cfg.get_int("min_text", 16);
  ac.max_text = cfg.get_int("max_text", 100);
  ac.width = cfg.get_int("width", 1);
  ac.seed = cfg.get_u64("seed", 1);

  std::vector<synthdata::CorpusLine> corpus;
  if (cfg.has("corpus")) {
    corpus = synthdata::read_corpus(cfg.require_str("corpus"));
  } else {
    corpus = synthdata::gen_corpus(cfg.get_u64("corpus_seed", ac.seed), cfg.get_int("corpus_examples", 8000));
  }
  cfg.save(out / "config.used");

  training::AeResult result = training::train_ae(ckpt.model, vocab, corpus, ac);
  result.log.write_csv(out / "ae_loss.csv");
  {
    std::ofstream os(out / "ae_report.txt");
    os << "held_out_loss=" << result.held_out_loss << '\n'
       << "baseline_loss=" << result.baseline_loss << '\n'
       << "held_out_token_acc=" << result.held_out_token_acc << '\n';
  }
  std::vector<model::SoftTokenF> tokens = ckpt.soft_tokens;
  std::erase_if(tokens, [](const model::SoftTokenF& t) { return t.name == "AE"; });
  tokens.push_back(result.ae);
  model::save_checkpoint(out / "model_ae.ckpt", ckpt.model, tokens);
  std::cout << "train-ae: held_out_loss=" << result.held_out_loss
            << " baseline_loss=" << result.baseline_loss
            << " token_acc=" << result.held_out_token_acc << "\n";
  return 0;
}

training::StageConfig stage_config_from(const cli::KvConfig& cfg) {
  training::StageConfig sc;
  sc.lambda = cfg.get_double("lambda", 0.9);
  sc.tau = cfg.get_double("tau", 2.0);
  sc.lr = cfg.get_double("lr", 1e-3);
  sc.steps = cfg.get_int("steps", 1200);
  sc.batch = cfg.get_int("batch", 4);
  sc.grad_accum = cfg.get_int("grad_accum", 1);
  sc.warmup_recon = cfg.get_int("warmup_recon", 0);
  sc.be_width = cfg.get_int("width", 1);
  sc.traj_max_new = cfg.get_int("traj_max_new", 32);
  sc.seed = cfg.get_u64("seed", 1);
  const std::string teacher = cfg.get_str("teacher", "self");
  if (teacher == "self") {
    sc.teacher = training::StageConfig::Teacher::kSelfGenerated;
  } else if (teacher == "gold") {
    sc.teacher = training::StageConfig::Teacher::kGold;
  } else {
    throw InvalidArgumentError("teacher must be 'self' or 'gold', got " + teacher);
  }
  const std::string recon = cfg.get_str("recon", "with-ae");
  if (recon == "with-ae") {
    sc.recon = training::StageConfig::Recon::kWithAe;
  } else if (recon == "without-ae") {
    sc.recon = training::StageConfig::Recon::kWithoutAe;
  } else if (recon == "none") {
    sc.recon = training::StageConfig::Recon::kNone;
  } else {
    throw InvalidArgumentError("recon must be with-ae|without-ae|none, got " + recon);
  }
  const std::string align = cfg.get_str("align", "kd");
  if (align == "kd") {
    sc.align = training::StageConfig::Align::kKd;
  } else if (align == "pt") {
    sc.align = training::StageConfig::Align::kPt;
  } else if (align == "none") {
    sc.align = training::StageConfig::Align::kNone;
  } else {
    throw InvalidArgumentError("align must be kd|pt|none, got " + align);
  }
  return sc;
}

int cmd_train_be(const CommonArgs& args) {
  cli::KvConfig cfg = resolve(args);
  const fs::path out = prepare_out(cfg);
  const model::Vocab vocab;

  const std::string ckpt_path = cfg.require_str("ckpt");
  if (!fs::exists(ckpt_path)) throw InvalidArgumentError("missing checkpoint: " + ckpt_path);
  model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);
  const training::StageConfig sc = stage_config_from(cfg);
  const model::SoftTokenF* ae = ckpt.find("AE");
  if (!ae && sc.recon == training::StageConfig::Recon::kWithAe) {
    throw InvalidArgumentError("checkpoint has no AE token; train-ae first or use recon=without-ae");
  }
  static const model::SoftTokenF empty_ae;  // unused when recon != with-ae

  const synthdata::PromptSpec prompt = prompt_from(cfg);
  const int n_queries = cfg.get_int("n_queries", 500);
  const uint64_t qseed = cfg.get_u64("queries_seed", sc.seed);
  synthdata::QuerySet queries = synthdata::make_query_set(prompt.rule, n_queries, qseed, 0.2,
                                                          prompt.token_length > 150 ? 8 : 12);

  cfg.set("rule", prompt.rule.name());
  cfg.set_int("prompt_len", prompt.token_length);
  cfg.save(out / "config.used");
  {
    std::ofstream os(out / "prompt.txt");
    os << prompt.text << '\n';
  }
  synthdata::write_queries_jsonl(out / "queries_train.jsonl", queries.train);
  synthdata::write_queries_jsonl(out / "queries_heldout.jsonl", queries.held_out);

  training::BeResult result =
      training::train_be(ckpt.model, vocab, prompt, queries.train,
                         ae ? *ae : empty_ae, sc);
  result.log.write_csv(out / "be_losses.csv", sc.align == training::StageConfig::Align::kPt ? "pt" : "kd");
  result.trajectories.save(out / "trajectories.btrj");

  std::vector<model::SoftTokenF> tokens = ckpt.soft_tokens;
  std::erase_if(tokens, [](const model::SoftTokenF& t) { return t.name == "BE"; });
  tokens.push_back(result.be);
  model::save_checkpoint(out / "model_be.ckpt", ckpt.model, tokens);
  const double final_total = result.log.steps.empty() ? 0.0 : result.log.steps.back().total;
  std::cout << "train-be: steps=" << sc.steps << " final_total_loss=" << final_total
            << " checkpoint " << (out / "model_be.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  cli::KvConfig cfg = resolve(args);
  const fs::path out = prepare_out(cfg);
  const model::Vocab vocab;

  const std::string ckpt_path = cfg.require_str("ckpt");
  if (!fs::exists(ckpt_path)) throw InvalidArgumentError("missing checkpoint: " + ckpt_path);
  model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);
  const model::SoftTokenF& be = ckpt.require("BE");
  const model::SoftTokenF& ae = ckpt.require("AE");

  synthdata::PromptSpec prompt;
  if (cfg.has("prompt_file")) {
    std::ifstream is(cfg.require_str("prompt_file"));
    if (!is) throw InvalidArgumentError("missing prompt file: " + cfg.require_str("prompt_file"));
    std::string text;
    std::getline(is, text);
    prompt.rule = synthdata::TaskRule::from_name(cfg.get_str("rule", "UPPER"));
    prompt.text = text;
    prompt.token_length = static_cast<int>(text.size());
  } else {
    prompt = prompt_from(cfg);
  }
  const std::vector<int> prompt_ids = vocab.tokenize(prompt.text);

  std::vector<synthdata::LabeledQuery> held_out;
  if (cfg.has("heldout_file")) {
    held_out = synthdata::read_queries_jsonl(cfg.require_str("heldout_file"));
  } else {
    held_out = synthdata::make_query_set(prompt.rule, cfg.get_int("n_queries", 500),
                                         cfg.get_u64("queries_seed", cfg.get_u64("seed", 1)), 0.2,
                                         prompt.token_length > 150 ? 8 : 12)
                   .held_out;
  }
  cfg.save(out / "config.used");

  eval::EvalReport r;
  std::tie(r.recon_exact_match, r.recon_token_acc) =
      eval::eval_reconstruction(ckpt.model, be, ae, prompt_ids);
  r.behavioral_kl = eval::eval_behavioral_kl(ckpt.model, vocab, be, prompt_ids, held_out);
  RngStream base_rng = RngStream::substream(cfg.get_u64("baseline_seed", 9090), seeds::kInit);
  const model::SoftTokenF random_be =
      model::SoftTokenF::gaussian_init("BE", be.width(), ckpt.model.config().d_model, base_rng);
  r.behavioral_kl_baseline =
      eval::eval_behavioral_kl(ckpt.model, vocab, random_be, prompt_ids, held_out);
  r.teacher_task_acc =
      eval::eval_task(ckpt.model, vocab, eval::TaskCondition::full_prompt(prompt_ids), held_out);
  r.student_task_acc =
      eval::eval_task(ckpt.model, vocab, eval::TaskCondition::soft_token(&be), held_out);
  r.no_prompt_task_acc =
      eval::eval_task(ckpt.model, vocab, eval::TaskCondition::no_prompt(), held_out);
  // Retention is defined only for a non-degenerate teacher.
  r.retention =
      r.teacher_task_acc > 0 ? eval::retention_of(r.student_task_acc, r.teacher_task_acc) : 0.0;
  r.validate();

  eval::write_report_kv(out / "eval_report.txt", r);
  eval::append_report_jsonl(out / "eval_report.jsonl", r, prompt.rule.name(),
                            cfg.get_str("config_name", "default"));
  std::cout << "eval: recon_em=" << r.recon_exact_match << " behavioral_kl=" << r.behavioral_kl
            << " retention=" << r.retention << "\n";
  return 0;
}

int cmd_efficiency(const CommonArgs& args) {
  cli::KvConfig cfg = resolve(args);
  const fs::path out = prepare_out(cfg);
  const model::Vocab vocab;

  cfg.save(out / "config.used");

  // Analytic table, reproduced from the published (L_p, L_q) pairs.
  {
    std::ofstream os(out / "efficiency_table.txt");
    os << efficiency::render_efficiency_table();
  }

  if (!cfg.get_bool("bench", true)) {
    std::cout << "efficiency: table written to " << (out / "efficiency_table.txt").string() << "\n";
    return 0;
  }

  model::FrozenModelF bench_model;
  if (cfg.has("ckpt")) {
    bench_model = model::load_checkpoint(cfg.require_str("ckpt")).model;
  } else {
    // Timing does not need trained weights.
    bench_model = model::FrozenModelF::random_init(model_config_from(cfg, vocab),
                                                   cfg.get_u64("seed", 1));
  }
  const int repeats = cfg.get_int("repeats", 100);
  const int L_q = cfg.get_int("L_q", 12);
  const uint64_t seed = cfg.get_u64("seed", 1);

  std::vector<int> prompt_lengths;
  {
    std::istringstream ls(cfg.get_str("prompt_lengths", "50,100,200"));
    std::string tok;
    while (std::getline(ls, tok, ',')) prompt_lengths.push_back(std::stoi(tok));
  }

  std::vector<efficiency::BenchStats> rows;
  rows.push_back(efficiency::benchmark_prefill(bench_model, vocab, 1, L_q, /*soft=*/true, repeats, seed));
  for (int lp : prompt_lengths) {
    rows.push_back(efficiency::benchmark_prefill(bench_model, vocab, lp, L_q, /*soft=*/false, repeats, seed));
  }
  efficiency::write_bench_csv(out / "bench.csv", rows);

  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) pts.emplace_back(r.total_tokens, r.median_ms);
  const efficiency::RhoFit fit = efficiency::fit_rho(pts);
  {
    std::ofstream os(out / "rho_fit.txt");
    os << "alpha_ms=" << fit.alpha << '\n'
       << "beta_ms_per_token=" << fit.beta << '\n'
       << "max_abs_residual_ms=" << fit.max_abs_residual << '\n';
    for (const auto& r : rows) {
      if (r.condition == "full_prompt") {
        os << "rho_at_" << r.total_tokens << "=" << fit.rho_at(r.total_tokens) << '\n';
      }
    }
  }
  std::cout << "efficiency: bench.csv and rho_fit.txt written, alpha=" << fit.alpha
            << "ms beta=" << fit.beta << "ms/token\n";
  return 0;
}

int cmd_sweep_lambda(const CommonArgs& args) {
  cli::KvConfig cfg = resolve(args);
  const fs::path out = prepare_out(cfg);
  const model::Vocab vocab;

  const std::string ckpt_path = cfg.require_str("ckpt");
  if (!fs::exists(ckpt_path)) throw InvalidArgumentError("missing checkpoint: " + ckpt_path);
  model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);
  const model::SoftTokenF& ae = ckpt.require("AE");
  cfg.save(out / "config.used");

  const synthdata::PromptSpec prompt = prompt_from(cfg);
  const std::vector<int> prompt_ids = vocab.tokenize(prompt.text);
  const uint64_t qseed = cfg.get_u64("queries_seed", cfg.get_u64("seed", 1));
  synthdata::QuerySet queries =
      synthdata::make_query_set(prompt.rule, cfg.get_int("n_queries", 300), qseed, 0.2,
                                prompt.token_length > 150 ? 8 : 12);

  const std::vector<double> lambdas = {0.0, 0.1, 0.5, 0.9, 1.0};
  const std::vector<std::string> teachers = {"self", "gold"};

  std::ofstream summary(out / "sweep_summary.csv");
  summary << "lambda,teacher,retention,student_task_acc,teacher_task_acc,behavioral_kl,"
             "recon_exact_match\n";
  for (const std::string& teacher : teachers) {
    for (double lambda : lambdas) {
      cli::KvConfig cell_cfg = cfg;
      cell_cfg.set_double("lambda", lambda);
      cell_cfg.set("teacher", teacher);
      training::StageConfig sc = stage_config_from(cell_cfg);
      std::ostringstream cell_name;
      cell_name << "lambda" << lambda << "_" << teacher;
      const fs::path cell_dir = out / cell_name.str();
      fs::create_directories(cell_dir);
      cell_cfg.set("out", cell_dir.string());
      cell_cfg.save(cell_dir / "config.used");

      training::BeResult r = training::train_be(ckpt.model, vocab, prompt, queries.train, ae, sc);
      r.log.write_csv(cell_dir / "be_losses.csv");

      eval::EvalReport rep;
      std::tie(rep.recon_exact_match, rep.recon_token_acc) =
          eval::eval_reconstruction(ckpt.model, r.be, ae, prompt_ids);
      rep.behavioral_kl =
          eval::eval_behavioral_kl(ckpt.model, vocab, r.be, prompt_ids, queries.held_out);
      rep.teacher_task_acc = eval::eval_task(ckpt.model, vocab,
                                             eval::TaskCondition::full_prompt(prompt_ids),
                                             queries.held_out);
      rep.student_task_acc =
          eval::eval_task(ckpt.model, vocab, eval::TaskCondition::soft_token(&r.be),
                          queries.held_out);
      rep.retention = rep.teacher_task_acc > 0
                          ? eval::retention_of(rep.student_task_acc, rep.teacher_task_acc)
                          : 0.0;
      eval::write_report_kv(cell_dir / "eval_report.txt", rep);
      summary << lambda << ',' << teacher << ',' << rep.retention << ',' << rep.student_task_acc
              << ',' << rep.teacher_task_acc << ',' << rep.behavioral_kl << ','
              << rep.recon_exact_match << '\n';
      summary.flush();
      std::cout << "sweep cell lambda=" << lambda << " teacher=" << teacher
                << ": retention=" << rep.retention << " kl=" << rep.behavioral_kl << "\n";
    }
  }
  std::cout << "sweep-lambda: summary in " << (out / "sweep_summary.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"behavior-equivalent prompt token trainer"};
  app.require_subcommand(1);

  CommonArgs pretrain_args, ae_args, be_args, eval_args, eff_args, sweep_args;
  auto* pretrain = app.add_subcommand("pretrain-base", "train and freeze the toy backbone");
  add_common(pretrain, pretrain_args);
  auto* train_ae = app.add_subcommand("train-ae", "train the reconstruction trigger token");
  add_common(train_ae, ae_args);
  auto* train_be = app.add_subcommand("train-be", "train a prompt-specific behavior token");
  add_common(train_be, be_args);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate reconstruction, KL and task retention");
  add_common(eval_cmd, eval_args);
  auto* efficiency_cmd = app.add_subcommand("efficiency", "analytic prefill model and benchmark");
  add_common(efficiency_cmd, eff_args);
  auto* sweep = app.add_subcommand("sweep-lambda", "lambda x teacher-source grid");
  add_common(sweep, sweep_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return cmd_pretrain_base(pretrain_args);
    if (train_ae->parsed()) return cmd_train_ae(ae_args);
    if (train_be->parsed()) return cmd_train_be(be_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (efficiency_cmd->parsed()) return cmd_efficiency(eff_args);
    if (sweep->parsed()) return cmd_sweep_lambda(sweep_args);
  } catch (const Error& e) {
    std::cerr << e.error_class() << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal-error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
