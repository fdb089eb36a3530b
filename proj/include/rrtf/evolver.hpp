#pragma once

// Instruction evolution: rewriting prompt, lineage-tracked evolution rounds,
// rule-based corpus cleanup, and benchmark overlap detection.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"
#include "rrtf/sampler.hpp"

namespace rrtf {

inline constexpr std::string_view kEvolutionTemplate =
    "I want you to act as a Programming Contest Designer. Your objective is to rewrite a programming task based on "
    "the given task by increasing the difficulty a bit.\n"
    "You can increase the difficulty using, but not limited to, the following methods:\n"
    "{methods}\n"
    "\n"
    "Your response is the rewritten programming task (#Rewritten Task#).\n"
    "The #Rewritten Task# must be reasonable and must be understood and responded by humans, and also solvable "
    "with code. It should not be dependent on the #Given Task#. Your rewriting cannot omit the non-text parts such "
    "as the table and code in #Given Task#:. Also, please do not omit the input in #Given Task#.\n"
    "**The rewritten task and the given task should have the similar length. **\n"
    "**The rewritten task should ask for a function-level code solution.**\n"
    "\"#Given Task#\", \"#Rewritten Task#\", \"given task\", and \"rewritten task\" are NOT allowed to appear in "
    "#Rewritten Task#.\n"
    "#Given Task#\n"
    "{instruction}\n"
    "#Rewritten Task#";

inline const std::vector<std::string>& default_evolution_methods() {
  static const std::vector<std::string> methods = {
      "Add new constraints and requirements to the original problem.",
      "Require the use of a specific data structure.",
      "Increase the number of reasoning steps required to solve the problem.",
      "Add edge cases that the solution must handle.",
  };
  return methods;
}

/// Fills the two template slots in a single left-to-right pass, so
/// placeholder-like text inside the substituted values is left untouched.
inline std::string render_evolution_prompt(std::string_view instruction, const std::vector<std::string>& methods) {
  if (instruction.empty()) throw ContractError("instruction must be non-empty");
  if (methods.empty()) throw ContractError("at least one evolution method is required");
  std::string joined;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (i) joined += '\n';
    joined += methods[i];
  }
  constexpr std::string_view kMethods = "{methods}";
  constexpr std::string_view kInstruction = "{instruction}";
  std::string out;
  std::string_view rest = kEvolutionTemplate;
  while (!rest.empty()) {
    const auto slot = rest.find('{');
    out.append(rest.substr(0, slot));
    if (slot == std::string_view::npos) break;
    rest.remove_prefix(slot);
    if (rest.starts_with(kMethods)) {
      out += joined;
      rest.remove_prefix(kMethods.size());
    } else if (rest.starts_with(kInstruction)) {
      out.append(instruction);
      rest.remove_prefix(kInstruction.size());
    } else {
      out += '{';
      rest.remove_prefix(1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessRules {
  std::size_t min_length = 10;    // code points
  std::size_t max_length = 4096;  // code points
  bool require_alphabetic = true;
  bool drop_exact_duplicates = true;
};

inline constexpr std::string_view kRuleMinLength = "min_length";
inline constexpr std::string_view kRuleMaxLength = "max_length";
inline constexpr std::string_view kRuleNoAlphabetic = "no_alphabetic";
inline constexpr std::string_view kRuleExactDuplicate = "exact_duplicate";

struct RemovalLogEntry {
  std::string id;
  std::string rule;
  std::string detail;
};

struct PreprocessResult {
  std::vector<ProgrammingProblem> kept;
  std::vector<RemovalLogEntry> removed;
};

/// Collapses whitespace runs to one space and trims both ends.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

/// Filters the corpus in order; the first occurrence of a duplicate survives.
inline PreprocessResult preprocess(const std::vector<ProgrammingProblem>& corpus, const PreprocessRules& rules = {}) {
  PreprocessResult result;
  std::map<std::string, std::string> seen;  // normalized instruction -> surviving id
  for (const auto& p : corpus) {
    const auto length = utf8_length(p.instruction);
    if (length < rules.min_length) {
      result.removed.push_back({p.id, std::string(kRuleMinLength),
                                std::to_string(length) + " < " + std::to_string(rules.min_length)});
      continue;
    }
    if (length > rules.max_length) {
      result.removed.push_back({p.id, std::string(kRuleMaxLength),
                                std::to_string(length) + " > " + std::to_string(rules.max_length)});
      continue;
    }
    if (rules.require_alphabetic &&
        std::none_of(p.instruction.begin(), p.instruction.end(), [](char c) {
          const auto u = static_cast<unsigned char>(c);
          return std::isalpha(u) || u >= 0x80;
        })) {
      result.removed.push_back({p.id, std::string(kRuleNoAlphabetic), ""});
      continue;
    }
    if (rules.drop_exact_duplicates) {
      auto [it, inserted] = seen.emplace(normalize_whitespace(p.instruction), p.id);
      if (!inserted) {
        result.removed.push_back({p.id, std::string(kRuleExactDuplicate), "duplicate of '" + it->second + "'"});
        continue;
      }
    }
    result.kept.push_back(p);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Leakage

/// Lower-cased word tokens: maximal runs of ASCII alphanumerics, '_' and
/// non-ASCII bytes.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '_' || u >= 0x80) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Sorted, de-duplicated hashes of the token n-grams. A text shorter than n
/// tokens contributes a single gram made of all its tokens.
inline std::vector<std::uint64_t> ngram_fingerprint(std::string_view text, std::size_t n = 4) {
  const auto tokens = word_tokens(text);
  std::vector<std::uint64_t> grams;
  if (tokens.empty()) return grams;
  const auto width = std::min(n, tokens.size());
  for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
    std::string gram;
    for (std::size_t k = 0; k < width; ++k) {
      if (k) gram += '\x1f';
      gram += tokens[i + k];
    }
    grams.push_back(fnv1a64(gram));
  }
  std::sort(grams.begin(), grams.end());
  grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
  return grams;
}

inline double jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t shared = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] == b[j]) {
      ++shared, ++i, ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(a.size() + b.size() - shared);
}

inline double ngram_jaccard(std::string_view a, std::string_view b, std::size_t n = 4) {
  return jaccard(ngram_fingerprint(a, n), ngram_fingerprint(b, n));
}

struct LeakageHit {
  std::string corpus_id;
  std::string benchmark_id;
  double similarity = 0.0;
};

/// Every (corpus, benchmark) pair with n-gram Jaccard similarity >= threshold,
/// ordered by corpus position then benchmark position.
inline std::vector<LeakageHit> check_leakage(const std::vector<ProgrammingProblem>& corpus,
                                             const std::vector<ProgrammingProblem>& benchmark, double threshold,
                                             std::size_t n = 4) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("threshold must lie in [0, 1]");
  std::vector<std::vector<std::uint64_t>> bench_prints;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> index;
  for (std::size_t b = 0; b < benchmark.size(); ++b) {
    bench_prints.push_back(ngram_fingerprint(benchmark[b].instruction, n));
    for (auto g : bench_prints.back()) index[g].push_back(b);
  }
  std::vector<LeakageHit> hits;
  for (const auto& item : corpus) {
    const auto print = ngram_fingerprint(item.instruction, n);
    std::map<std::size_t, std::size_t> shared;  // benchmark index -> shared grams
    for (auto g : print)
      if (const auto it = index.find(g); it != index.end())
        for (auto b : it->second) ++shared[b];
    for (std::size_t b = 0; b < benchmark.size(); ++b) {
      const auto it = shared.find(b);
      const std::size_t common = it == shared.end() ? 0 : it->second;
      const auto uni = print.size() + bench_prints[b].size() - common;
      const double sim = uni == 0 ? 0.0 : static_cast<double>(common) / static_cast<double>(uni);
      if (sim >= threshold && (common > 0 || threshold <= 0.0))
        hits.push_back({item.id, benchmark[b].id, sim});
    }
  }
  return hits;
}

// ---------------------------------------------------------------------------
// Evolution

struct EvolutionConfig {
  std::vector<std::string> methods = default_evolution_methods();
  int max_depth = 1;
  double temperature = 0.7;
  double top_p = 0.95;
  int max_new_tokens = 1024;
  std::size_t workers = 8;

  void validate() const {
    if (methods.empty()) throw ConfigError("evolution needs at least one method");
    if (max_depth < 1) throw ConfigError("max_depth must be positive");
    if (workers < 1) throw ConfigError("workers must be positive");
  }
};

struct EvolutionResult {
  std::vector<ProgrammingProblem> problems;
  std::vector<FailureRecord> failures;
};

/// Strips surrounding whitespace and an echoed "#Rewritten Task#" header.
inline std::string clean_evolved_instruction(std::string_view raw) {
  auto text = std::string(raw);
  auto trim = [](std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  trim(text);
  constexpr std::string_view kHeader = "#Rewritten Task#";
  if (text.starts_with(kHeader)) {
    text.erase(0, kHeader.size());
    if (!text.empty() && text.front() == ':') text.erase(0, 1);
    trim(text);
  }
  return text;
}

/// Evolves each seed through max_depth successive rewrites (round d rewrites
/// the round d-1 result). Evolved problems inherit the signature and tests of
/// their parent. Output keeps every seed followed by its descendants, in seed
/// order. A generator failure ends that seed's lineage and is recorded.
inline EvolutionResult evolve_corpus(const std::vector<ProgrammingProblem>& seeds, Generator& generator,
                                     const EvolutionConfig& config = {}) {
  config.validate();
  if (seeds.empty()) throw ContractError("evolve_corpus requires at least one seed");

  std::vector<std::vector<ProgrammingProblem>> lineages(seeds.size());
  std::vector<std::optional<FailureRecord>> failures(seeds.size());
  parallel_for(seeds.size(), config.workers, [&](std::size_t i) {
    auto& lineage = lineages[i];
    lineage.push_back(seeds[i]);
    for (int depth = 1; depth <= config.max_depth; ++depth) {
      const auto& parent = lineage.back();
      try {
        const auto prompt = render_evolution_prompt(parent.instruction, config.methods);
        auto instruction = clean_evolved_instruction(
            generator.complete({prompt, config.temperature, config.top_p, config.max_new_tokens, 0}));
        if (instruction.empty()) throw GenerationError("generator returned an empty task");
        if (!is_valid_utf8(instruction)) throw GenerationError("generator returned invalid UTF-8");
        ProgrammingProblem child;
        child.id = seeds[i].id + "-evo" + std::to_string(depth);
        child.instruction = std::move(instruction);
        child.signature = parent.signature;
        child.tests = parent.tests;
        child.provenance = EvolvedProvenance{depth, parent.id};
        lineage.push_back(std::move(child));
      } catch (const Error& e) {
        failures[i] = FailureRecord{"evolve", parent.id, e.what(), json::object()};
        break;
      }
    }
  });

  EvolutionResult result;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (auto& p : lineages[i]) result.problems.push_back(std::move(p));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  return result;
}

}  // namespace rrtf
