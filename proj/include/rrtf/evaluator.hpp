#pragma once

// Functional-correctness evaluation: the unbiased pass@k estimator, the
// sample-execute-count loop, and report rendering.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"
#include "rrtf/executor.hpp"
#include "rrtf/prompts.hpp"
#include "rrtf/sampler.hpp"

namespace rrtf {

/// 1 - C(n-c, k) / C(n, k), evaluated as 1 - prod_{i=n-c+1}^{n} (1 - k/i).
/// Throws std::domain_error unless 0 <= c <= n and 1 <= k <= n.
inline double pass_at_k(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n || k < 1 || k > n)
    throw std::domain_error("pass_at_k requires 0 <= c <= n and 1 <= k <= n (got n=" + std::to_string(n) +
                            ", c=" + std::to_string(c) + ", k=" + std::to_string(k) + ")");
  if (n - c < k) return 1.0;
  double prod = 1.0;
  for (int i = n - c + 1; i <= n; ++i) prod *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return std::clamp(1.0 - prod, 0.0, 1.0);
}

struct DecodingConfig {
  DecodingStrategy strategy = DecodingStrategy::Nucleus;
  double temperature = 0.2;
  double top_p = 0.95;
  int n = 200;
  std::vector<int> k_values = {1, 10, 100};
  int max_new_tokens = 512;
  std::uint64_t seed = 0;

  static DecodingConfig greedy() {
    DecodingConfig d;
    d.strategy = DecodingStrategy::Greedy;
    d.temperature = 0.0;
    d.top_p = 1.0;
    d.n = 1;
    d.k_values = {1};
    return d;
  }

  void validate() const {
    if (n < 1) throw ConfigError("n must be positive");
    if (k_values.empty()) throw ConfigError("k_values must be non-empty");
    for (int k : k_values)
      if (k < 1 || k > n) throw ConfigError("every k must satisfy 1 <= k <= n");
    if (strategy == DecodingStrategy::Greedy && (n != 1 || k_values != std::vector<int>{1}))
      throw ConfigError("greedy decoding implies n = 1 and k = {1}");
    if (strategy == DecodingStrategy::Nucleus && !(temperature > 0.0 && temperature <= 2.0))
      throw ConfigError("nucleus sampling needs a temperature in (0, 2]");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
  }
};

struct EvaluationOptions {
  PromptStyle prompt_style = PromptStyle::PanGu2;
  RunnerSpec runner;
  SandboxOptions sandbox;
  std::size_t workers = 8;
};

/// Mean over rows of pass_at_k(n, c, k); the per-row values are summed in
/// sorted order so the result does not depend on row order.
inline double mean_pass_at_k(const std::vector<PassAtKRow>& rows, int k) {
  if (rows.empty()) return 0.0;
  std::vector<double> values;
  values.reserve(rows.size());
  for (const auto& r : rows) values.push_back(pass_at_k(r.n, r.c, k));
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return std::clamp(sum / static_cast<double>(values.size()), 0.0, 1.0);
}

/// Generates decoding.n samples per problem, runs each through the executor
/// and counts AllPass outcomes as correct. Generation failures count as
/// incorrect samples.
inline PassAtKReport evaluate(const std::vector<ProgrammingProblem>& problems, const GeneratorSpec& generator,
                              const DecodingConfig& decoding, const SandboxLimits& limits,
                              const EvaluationOptions& options = {}) {
  decoding.validate();
  limits.validate();
  for (const auto& p : problems)
    if (p.tests.empty()) throw ContractError("benchmark problem '" + p.id + "' has no tests");

  const auto instance = make_generator(generator);
  const double temperature = decoding.strategy == DecodingStrategy::Greedy ? 0.0 : decoding.temperature;
  const double top_p = decoding.strategy == DecodingStrategy::Greedy ? 1.0 : decoding.top_p;
  const auto n = static_cast<std::size_t>(decoding.n);
  std::vector<std::string> prompts;
  for (const auto& p : problems) prompts.push_back(render_inference_prompt(p, options.prompt_style));

  std::vector<char> correct(problems.size() * n, 0);
  parallel_for(correct.size(), options.workers, [&](std::size_t i) {
    const auto& problem = problems[i / n];
    const int sample = static_cast<int>(i % n);
    std::string raw;
    try {
      raw = instance->complete({prompts[i / n], temperature, top_p, decoding.max_new_tokens,
                                tuple_seed(decoding.seed, problem.id, generator.generator_id, temperature, sample)});
    } catch (const GenerationError&) {
      return;
    }
    const auto outcome = run_candidate(extract_code(raw), problem.tests, limits, options.runner, options.sandbox);
    correct[i] = outcome.situation() == Situation::AllPass;
  });

  PassAtKReport report;
  report.generator_id = generator.generator_id;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    const auto c = std::count(correct.begin() + static_cast<std::ptrdiff_t>(p * n),
                              correct.begin() + static_cast<std::ptrdiff_t>((p + 1) * n), 1);
    report.per_problem.push_back({problems[p].id, decoding.n, static_cast<int>(c)});
  }
  std::sort(report.per_problem.begin(), report.per_problem.end(),
            [](const auto& a, const auto& b) { return a.problem_id < b.problem_id; });
  for (int k : decoding.k_values) report.estimates[k] = mean_pass_at_k(report.per_problem, k);
  report.decoding = {decoding.strategy, temperature, top_p};
  report.extra["n"] = decoding.n;
  report.extra["k_values"] = decoding.k_values;
  report.extra["max_new_tokens"] = decoding.max_new_tokens;
  report.extra["seed"] = decoding.seed;
  return report;
}

// ---------------------------------------------------------------------------
// Report rendering

enum class ReportFormat { Table, Csv };

namespace detail {

inline std::string decoding_label(const DecodingSettings& d) {
  if (d.strategy == DecodingStrategy::Greedy) return "greedy";
  char buf[64];
  std::snprintf(buf, sizeof buf, "T=%g top_p=%g", d.temperature, d.top_p);
  return buf;
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace detail

/// One row per report, one column per k seen in any report (as percentages).
/// Missing cells are rendered as "-".
inline std::string format_reports(const std::vector<PassAtKReport>& reports, ReportFormat format) {
  std::set<int> ks;
  for (const auto& r : reports)
    for (const auto& [k, _] : r.estimates) ks.insert(k);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"model", "decoding", "problems"};
  for (int k : ks) header.push_back("pass@" + std::to_string(k));
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row = {r.generator_id, detail::decoding_label(r.decoding),
                                    std::to_string(r.per_problem.size())};
    for (int k : ks) {
      const auto it = r.estimates.find(k);
      row.push_back(it == r.estimates.end() ? "-" : detail::percent(it->second));
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream os;
  if (format == ReportFormat::Csv) {
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) os << ',';
        const bool quote = row[i].find_first_of(",\"\n") != std::string::npos;
        if (quote) {
          os << '"';
          for (char c : row[i]) os << (c == '"' ? "\"\"" : std::string(1, c));
          os << '"';
        } else {
          os << row[i];
        }
      }
      os << '\n';
    }
    return os.str();
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  auto emit = [&](const std::vector<std::string>& row) {
    os << '|';
    for (std::size_t i = 0; i < row.size(); ++i) {
      // Text columns left-aligned, numbers right-aligned.
      const auto pad = std::string(width[i] - row[i].size(), ' ');
      os << ' ' << (i < 2 ? row[i] + pad : pad + row[i]) << " |";
    }
    os << '\n';
  };
  emit(rows.front());
  os << '|';
  for (auto w : width) os << std::string(w + 2, '-') << '|';
  os << '\n';
  for (std::size_t r = 1; r < rows.size(); ++r) emit(rows[r]);
  return os.str();
}

}  // namespace rrtf
