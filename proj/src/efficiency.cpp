#include "betoken/efficiency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "betoken/synthdata.hpp"

namespace betoken::efficiency {

using Clock = std::chrono::steady_clock;

double compressed_length(int L_p, double r, bool exact_division) {
  if (L_p < 1) throw InvalidArgumentError("compressed_length: L_p must be >= 1");
  if (!(r >= 1.0)) throw InvalidArgumentError("compressed_length: r must be >= 1");
  const double raw = static_cast<double>(L_p) / r;
  return std::max(1.0, exact_division ? raw : std::ceil(raw));
}

double norm_flops(double L_p_prime, int L_p, int L_q) {
  if (L_p_prime < 0 || L_p < 0 || L_q < 0) {
    throw InvalidArgumentError("norm_flops: token counts must be non-negative");
  }
  if (L_p + L_q == 0) throw InvalidArgumentError("norm_flops: L_p + L_q must be positive");
  return (L_p_prime + L_q) / static_cast<double>(L_p + L_q);
}

double ttft_ratio(double norm, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgumentError("ttft_ratio: rho must be in [0,1]");
  if (!(norm > 0.0 && norm <= 1.0)) throw InvalidArgumentError("ttft_ratio: norm must be in (0,1]");
  return rho + (1.0 - rho) * norm;
}

std::vector<TableRow> theoretical_efficiency_table() {
  struct Setting {
    const char* name;
    int L_p, L_q;
  };
  const Setting settings[] = {{"RoleLLM", 337, 26}, {"GSM8K", 1584, 58}};
  std::vector<TableRow> rows;
  for (const auto& s : settings) {
    auto add = [&rows, &s](const std::string& method, double L_p_prime) {
      const double n = norm_flops(L_p_prime, s.L_p, s.L_q);
      rows.push_back({s.name, method, n, delta_ttft_pct(ttft_ratio(n, 0.0))});
    };
    add("Full System Prompt", static_cast<double>(s.L_p));
    add("PCC(4x)", compressed_length(s.L_p, 4.0, /*exact_division=*/true));
    add("SelfCP(12x)", compressed_length(s.L_p, 12.0, /*exact_division=*/false));
    add("[BE] Token (" + std::to_string(s.L_p) + "x)", 1.0);
  }
  return rows;
}

std::string render_efficiency_table() {
  std::ostringstream os;
  os << std::fixed;
  os << "Method (x)                 NormFLOPs   dTTFT\n";
  std::string setting;
  for (const auto& r : theoretical_efficiency_table()) {
    if (r.setting != setting) {
      setting = r.setting;
      const char* dims = setting == "RoleLLM" ? "(L_p=337, L_q=26)" : "(L_p=1584, L_q=58)";
      os << setting << " " << dims << "\n";
    }
    os << "  " << std::left << std::setw(25) << r.method << std::right << std::setprecision(3)
       << std::setw(9) << r.norm << "x" << std::setprecision(1) << std::setw(8)
       << r.delta_ttft_pct << "%\n";
  }
  return os.str();
}

BenchStats benchmark_prefill(const model::FrozenModelF& m, const model::Vocab& vocab, int L_p,
                             int L_q, bool soft_token, int repeats, uint64_t seed,
                             const model::SoftTokenF* be, int warmup) {
  if (repeats < 30) throw InvalidArgumentError("benchmark: repeats must be >= 30");
  if (L_q < 1) throw InvalidArgumentError("benchmark: L_q must be >= 1");

  // Deterministic inputs from the seed.
  RngStream rng = RngStream::substream(seed, seeds::kBench);
  std::string query(static_cast<size_t>(L_q), 'a');
  for (auto& c : query) c = static_cast<char>('a' + rng.uniform_int(0, 25));
  const std::vector<int> q_ids = vocab.tokenize(query);

  model::SoftTokenF local_be;
  model::MixedSequence<float> seq;
  if (soft_token) {
    if (!be) {
      // Timing does not depend on the embedding values.
      local_be = model::SoftTokenF::gaussian_init("BE", 1, m.config().d_model, rng);
      be = &local_be;
    }
    seq = model::chat_soft(be, q_ids);
  } else {
    const synthdata::PromptSpec p =
        synthdata::make_prompt(synthdata::TaskRule::upper(), L_p, rng.next_u64());
    seq = model::MixedSequence<float>::hard(model::chat_tokens(vocab.tokenize(p.text), q_ids));
  }

  // Clock granularity estimate, to reject unmeasurably fast configurations.
  double granularity_ms = 0;
  for (int i = 0; i < 8; ++i) {
    auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    granularity_ms =
        std::max(granularity_ms, std::chrono::duration<double, std::milli>(b - a).count());
  }

  for (int i = 0; i < warmup; ++i) (void)model::forward_logits(m, seq);

  std::vector<double> times_ms;
  times_ms.reserve(static_cast<size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = Clock::now();
    (void)model::forward_logits(m, seq);
    const auto t1 = Clock::now();
    times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times_ms.begin(), times_ms.end());
  auto quantile = [&times_ms](double q) {
    const double pos = q * (static_cast<double>(times_ms.size()) - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, times_ms.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return times_ms[lo] * (1 - frac) + times_ms[hi] * frac;
  };
  const double median = quantile(0.5);
  if (median < 50.0 * granularity_ms) {
    throw MeasurementError(
        "benchmark: median time is within 50x of the clock granularity; raise the sequence "
        "length");
  }
  BenchStats stats;
  stats.condition = soft_token ? "be_token" : "full_prompt";
  stats.L_p = soft_token ? 1 : L_p;
  stats.L_q = L_q;
  stats.total_tokens = seq.length();
  stats.median_ms = median;
  stats.iqr_ms = quantile(0.75) - quantile(0.25);
  stats.repeats = repeats;
  return stats;
}

void write_bench_csv(const std::filesystem::path& path, std::span<const BenchStats> rows) {
  std::ofstream os(path);
  if (!os) throw IoError("benchmark: cannot open for writing: " + path.string());
  os << "condition,L_p,L_q,total_tokens,median_ms,iqr_ms\n";
  for (const auto& r : rows) {
    os << r.condition << ',' << r.L_p << ',' << r.L_q << ',' << r.total_tokens << ','
       << r.median_ms << ',' << r.iqr_ms << '\n';
  }
  if (!os) throw IoError("benchmark: write failed: " + path.string());
}

RhoFit fit_rho(std::span<const std::pair<double, double>> tokens_time) {
  if (tokens_time.size() < 3) throw InvalidArgumentError("fit_rho: need at least 3 measurements");
  std::vector<double> xs;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(tokens_time.size());
  for (const auto& [x, y] : tokens_time) {
    if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  if (xs.size() < 3 || std::abs(denom) < 1e-12) {
    throw InvalidArgumentError("fit_rho: need >= 3 distinct token counts, fit is singular");
  }
  RhoFit fit;
  fit.beta = (n * sxy - sx * sy) / denom;
  fit.alpha = (sy - fit.beta * sx) / n;
  for (const auto& [x, y] : tokens_time) {
    fit.max_abs_residual = std::max(fit.max_abs_residual, std::abs(y - (fit.alpha + fit.beta * x)));
  }
  return fit;
}

}  // namespace betoken::efficiency
