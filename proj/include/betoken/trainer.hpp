#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "betoken/model.hpp"
#include "betoken/optimizer.hpp"
#include "betoken/synthdata.hpp"
#include "betoken/trajectory.hpp"

namespace betoken::training {

struct StepRecord {
  int step = 0;
  double recon = 0;  // 0 when the term was not evaluated that step
  double align = 0;
  double total = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  void write_csv(const std::filesystem::path& path, const std::string& align_name = "align") const;
};

// --- Stage 0: universal reconstruction trigger ---------------------------------

struct AeConfig {
  double lr = 1e-3;  // AdamW, per the stage-0 recipe
  int steps = 600;
  int batch = 4;
  int grad_accum = 2;
  int min_text = 16;
  int max_text = 100;
  int width = 1;
  uint64_t seed = 1;
};

struct AeResult {
  model::SoftTokenF ae;
  TrainLog log;
  double held_out_loss = 0;
  double baseline_loss = 0;  // same texts scored with a fresh random embedding
  double held_out_token_acc = 0;
};

// Trains e_AE on text spans drawn from the corpus; theta stays frozen
// (checksummed before and after). Once per backbone.
AeResult train_ae(const model::FrozenModelF& m, const model::Vocab& vocab,
                  const std::vector<synthdata::CorpusLine>& corpus, const AeConfig& cfg);

// --- Stages 1+2: prompt-specific behavior token --------------------------------

struct StageConfig {
  double lambda = 0.9;
  double tau = 2.0;
  double lr = 1e-3;
  int steps = 1200;
  int batch = 4;       // queries per micro-step
  int grad_accum = 1;  // micro-steps per optimizer step
  enum class Teacher { kSelfGenerated, kGold };
  Teacher teacher = Teacher::kSelfGenerated;
  enum class Recon { kWithAe, kWithoutAe, kNone };
  Recon recon = Recon::kWithAe;
  enum class Align { kKd, kPt, kNone };
  Align align = Align::kKd;
  int warmup_recon = 0;  // optional sequential variant: recon-only prefix steps
  int be_width = 1;
  int traj_max_new = 32;
  uint64_t seed = 1;

  void validate() const;
};

struct BeResult {
  model::SoftTokenF be;
  TrainLog log;
  TrajectoryCache trajectories;
  int recon_evals = 0;  // how many micro-steps evaluated each graph
  int align_evals = 0;
};

// Algorithm: per step, evaluate the reconstruction loss and the alignment
// loss over a batch of sampled queries, combine with lambda, update e_BE only.
// A zero-weight term is skipped entirely (its graph is never built and its
// random streams are never consumed).
BeResult train_be(const model::FrozenModelF& m, const model::Vocab& vocab,
                  const synthdata::PromptSpec& prompt,
                  const std::vector<synthdata::LabeledQuery>& train_queries,
                  const model::SoftTokenF& ae, const StageConfig& cfg);

// --- base backbone pretraining --------------------------------------------------

struct PretrainConfig {
  model::ModelConfig model;  // vocab_size filled from the vocabulary when 0
  uint64_t seed = 1;
  double lr = 1e-3;
  int warmup_steps = 100;
  int max_steps = 4000;
  int batch = 16;
  double answer_weight = 3.0;  // extra CE weight on the answer span
  int eval_every = 250;
  int eval_queries = 140;
  double gate_acc = 0.99;
};

struct GatePoint {
  int step = 0;
  double loss = 0;
  double acc = 0;
};

struct PretrainResult {
  model::FrozenModelF model;
  std::vector<GatePoint> curve;
  double final_acc = 0;
  bool gate_reached = false;
};

// Trains the backbone from scratch until held-out task accuracy reaches the
// gate, then freezes it. On failure the model is returned unfrozen with the
// full curve for diagnosis.
PretrainResult pretrain_base(const PretrainConfig& cfg, const model::Vocab& vocab,
                             const std::vector<synthdata::CorpusLine>& corpus);

void write_gate_curve_csv(const std::filesystem::path& path, const std::vector<GatePoint>& curve);

}  // namespace betoken::training
