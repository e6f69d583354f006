#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "betoken/model.hpp"

namespace betoken::efficiency {

// Analytic prefill model. L_p system-prompt tokens, L_q query tokens; a
// compressor shrinks the prompt to L_p'. TTFT splits into a fixed overhead
// alpha and a per-token cost beta; rho is the overhead fraction.
struct EfficiencyParams {
  int L_p = 0;
  int L_q = 0;
  double alpha = 0;  // time units
  double beta = 0;   // time units / token

  double rho() const {
    const double denom = alpha + beta * (L_p + L_q);
    if (!(denom > 0)) throw InvalidArgumentError("efficiency: alpha + beta*(L_p+L_q) must be positive");
    return alpha / denom;
  }
};

// L_p' for an r-fold compressor: max{1, ceil(L_p / r)}. The exact-division
// variant keeps the fractional length (used only where published rows are
// computed that way).
double compressed_length(int L_p, double r, bool exact_division = false);

// (L_p' + L_q) / (L_p + L_q)
double norm_flops(double L_p_prime, int L_p, int L_q);

// rho + (1 - rho) * norm; the TTFT ratio of compressed to full prefill.
double ttft_ratio(double norm, double rho);

inline double delta_ttft_pct(double ratio) { return (ratio - 1.0) * 100.0; }

// --- published-table reproduction ------------------------------------------------

struct TableRow {
  std::string setting;  // "RoleLLM" or "GSM8K"
  std::string method;
  double norm = 0;
  double delta_ttft_pct = 0;  // compute-bound case (rho = 0)
};

// The eight analytic rows for (L_p, L_q) = (337, 26) and (1584, 58):
// full prompt, 4x and 12x compressors, and the single-token replacement.
// The 4x rows use exact division, the 12x rows the ceiling form.
std::vector<TableRow> theoretical_efficiency_table();

std::string render_efficiency_table();

// --- wall-clock benchmark ---------------------------------------------------------

struct BenchStats {
  std::string condition;
  int L_p = 0;  // 1 for the soft-token condition
  int L_q = 0;
  int total_tokens = 0;
  double median_ms = 0;
  double iqr_ms = 0;
  int repeats = 0;
};

// One forward pass over the prefill sequence, repeated; median and IQR of
// wall-clock time. Inputs are deterministic given the seed. The soft-token
// condition replaces the prompt span with a single embedding row.
BenchStats benchmark_prefill(const model::FrozenModelF& m, const model::Vocab& vocab, int L_p,
                             int L_q, bool soft_token, int repeats, uint64_t seed,
                             const model::SoftTokenF* be = nullptr, int warmup = 5);

void write_bench_csv(const std::filesystem::path& path, std::span<const BenchStats> rows);

// --- overhead fit -----------------------------------------------------------------

struct RhoFit {
  double alpha = 0;
  double beta = 0;
  double max_abs_residual = 0;

  double rho_at(int total_tokens) const {
    EfficiencyParams p{total_tokens, 0, alpha, beta};
    return p.rho();
  }
};

// Least squares on time = alpha + beta * tokens. Needs >= 3 distinct token
// counts.
RhoFit fit_rho(std::span<const std::pair<double, double>> tokens_time);

}  // namespace betoken::efficiency
