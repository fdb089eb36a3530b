#pragma once

// Pipeline stages for the command-line tool. Each stage is prepared from the
// effective configuration first (all validation happens there, before any
// file is touched) and then run.

#include <iostream>
#include <map>
#include <set>

#include "config.hpp"
#include "manifest.hpp"
#include "rrtf/rrtf.hpp"

namespace rrtf::cli {

// ---------------------------------------------------------------------------
// Shared configuration pieces

inline std::size_t workers_of(Config& cfg) { return static_cast<std::size_t>(cfg.integer("workers", 8, 1)); }
inline std::uint64_t seed_of(Config& cfg) { return static_cast<std::uint64_t>(cfg.integer("seed", 0, 0)); }

inline SandboxLimits limits_of(Config& cfg) {
  SandboxLimits l;
  l.wall_timeout_ms = static_cast<int>(cfg.integer("sandbox.wall_timeout_ms", l.wall_timeout_ms, 1));
  l.memory_limit_mb = static_cast<int>(cfg.integer("sandbox.memory_limit_mb", l.memory_limit_mb, 1));
  l.max_output_bytes = static_cast<int>(cfg.integer("sandbox.max_output_bytes", l.max_output_bytes, 1));
  return l;
}

inline RunnerSpec runner_of(Config& cfg) {
  RunnerSpec r;
  r.program = cfg.string("sandbox.runner.program", r.program);
  r.check_args = cfg.list<std::string>("sandbox.runner.check_args", r.check_args);
  r.run_args = cfg.list<std::string>("sandbox.runner.run_args", r.run_args);
  r.file_name = cfg.string("sandbox.runner.file_name", r.file_name);
  r.test_separator = cfg.string("sandbox.runner.test_separator", r.test_separator);
  return r;
}

inline SandboxOptions sandbox_of(Config& cfg) {
  SandboxOptions s;
  if (auto root = cfg.path("paths.sandbox_root")) s.root = *root;
  s.keep_failures = cfg.boolean("sandbox.keep_failures", false);
  return s;
}

inline PromptStyle prompt_style_of(Config& cfg, const std::string& key) {
  try {
    return prompt_style_from_string(cfg.string(key, "pangu2"));
  } catch (const ConfigError& e) {
    cfg.issue(key, e.what());
    return PromptStyle::PanGu2;
  }
}

/// Generator specs by id, from `generators` (inline) or `generators_file`.
inline std::map<std::string, GeneratorSpec> generators_of(Config& cfg) {
  json list;
  if (const auto* inline_list = cfg.find("generators")) {
    list = *inline_list;
  } else if (auto file = cfg.path("generators_file")) {
    try {
      json doc = read_json_file(*file);
      if (doc.is_object() && doc.contains("generators")) doc = doc["generators"];
      json wrapper = {{"generators", doc}};
      resolve_paths(wrapper, file->parent_path());
      list = wrapper["generators"];
    } catch (const ConfigError& e) {
      cfg.issue("generators_file", e.what());
      return {};
    }
  } else {
    cfg.issue("generators_file", "no generators configured (set generators_file or generators)");
    return {};
  }
  std::map<std::string, GeneratorSpec> out;
  if (!list.is_array()) {
    cfg.issue("generators", "expected a list of generator objects");
    return out;
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    try {
      auto g = generator_from_json(list[i]);
      const auto id = g.generator_id;
      if (!out.emplace(id, std::move(g)).second) cfg.issue("generators[" + std::to_string(i) + "]", "duplicate id '" + id + "'");
    } catch (const std::exception& e) {
      cfg.issue("generators[" + std::to_string(i) + "]", e.what());
    }
  }
  return out;
}

inline std::optional<GeneratorSpec> pick_generator(Config& cfg, const std::map<std::string, GeneratorSpec>& gens,
                                                   const std::string& key) {
  const auto id = cfg.string(key, "");
  if (id.empty()) {
    cfg.issue(key, "required generator id is not set");
    return std::nullopt;
  }
  const auto it = gens.find(id);
  if (it == gens.end()) {
    cfg.issue(key, "unknown generator '" + id + "'");
    return std::nullopt;
  }
  return it->second;
}

inline std::map<std::string, ProgrammingProblem> index_problems(const std::vector<ProgrammingProblem>& problems) {
  std::map<std::string, ProgrammingProblem> out;
  for (const auto& p : problems) out.emplace(p.id, p);
  return out;
}

/// Raises a ConfigError naming every input that does not exist.
inline void require_inputs(const std::vector<fs::path>& inputs) {
  std::string missing;
  for (const auto& p : inputs)
    if (!fs::exists(p)) missing += "\n  input file does not exist: " + p.string();
  if (!missing.empty()) throw ConfigError("missing inputs" + missing);
}

// ---------------------------------------------------------------------------
// Stages

struct Stage {
  virtual ~Stage() = default;
  virtual std::string name() const = 0;
  virtual std::vector<fs::path> inputs() const = 0;
  virtual std::vector<fs::path> outputs() const = 0;
  /// Produces the outputs; fills failures and summary in `rec`.
  virtual void run(StageRecord& rec) = 0;
};

class EvolveStage final : public Stage {
 public:
  explicit EvolveStage(Config& cfg) {
    seeds_ = cfg.require_path("paths.seeds", "--seeds");
    out_ = cfg.require_path("paths.corpus", "--out");
    removal_log_ = cfg.path("paths.removal_log");
    const auto gens = generators_of(cfg);
    if (!gens.empty()) generator_ = pick_generator(cfg, gens, "evolution.generator");
    config_.max_depth = static_cast<int>(cfg.integer("evolution.max_depth", 1, 1));
    config_.temperature = cfg.number("evolution.temperature", config_.temperature);
    config_.top_p = cfg.number("evolution.top_p", config_.top_p);
    config_.max_new_tokens = static_cast<int>(cfg.integer("evolution.max_new_tokens", config_.max_new_tokens, 1));
    config_.workers = workers_of(cfg);
    config_.methods = cfg.list<std::string>("evolution.methods", config_.methods);
    methods_file_ = cfg.path("paths.methods");
    rules_.min_length = static_cast<std::size_t>(cfg.integer("preprocess.min_length", 10, 0));
    rules_.max_length = static_cast<std::size_t>(cfg.integer("preprocess.max_length", 4096, 1));
    rules_.require_alphabetic = cfg.boolean("preprocess.require_alphabetic", true);
    rules_.drop_exact_duplicates = cfg.boolean("preprocess.drop_exact_duplicates", true);
    if (config_.methods.empty()) cfg.issue("evolution.methods", "must not be empty");
  }

  std::string name() const override { return "evolve"; }
  std::vector<fs::path> inputs() const override {
    std::vector<fs::path> in{seeds_};
    if (methods_file_) in.push_back(*methods_file_);
    return in;
  }
  std::vector<fs::path> outputs() const override {
    std::vector<fs::path> out{out_};
    if (removal_log_) out.push_back(*removal_log_);
    return out;
  }

  void run(StageRecord& rec) override {
    if (methods_file_) {
      std::ifstream in(*methods_file_);
      std::vector<std::string> methods;
      for (std::string line; std::getline(in, line);)
        if (line.find_first_not_of(" \t\r") != std::string::npos) methods.push_back(line);
      if (methods.empty()) throw ConfigError("methods file '" + methods_file_->string() + "' lists no methods");
      config_.methods = std::move(methods);
    }
    const auto seeds = read_corpus<ProgrammingProblem>(seeds_);
    const auto cleaned = preprocess(seeds, rules_);
    const auto gen = make_generator(*generator_);
    auto evolved = evolve_corpus(cleaned.kept, *gen, config_);
    auto result = preprocess(evolved.problems, rules_);
    write_corpus(result.kept, out_);
    std::vector<RemovalLogEntry> removed = cleaned.removed;
    removed.insert(removed.end(), result.removed.begin(), result.removed.end());
    if (removal_log_) {
      fs::create_directories(removal_log_->parent_path());
      std::ofstream os(*removal_log_, std::ios::binary | std::ios::trunc);
      for (const auto& r : removed)
        os << json{{"v", kSchemaVersion}, {"type", "removal"}, {"id", r.id}, {"rule", r.rule}, {"detail", r.detail}}
                  .dump()
           << '\n';
    }
    rec.failures = evolved.failures;
    rec.summary = {{"seeds", seeds.size()}, {"written", result.kept.size()}, {"removed", removed.size()}};
  }

 private:
  fs::path seeds_, out_;
  std::optional<fs::path> removal_log_, methods_file_;
  std::optional<GeneratorSpec> generator_;
  EvolutionConfig config_;
  PreprocessRules rules_;
};

class LeakageStage final : public Stage {
 public:
  explicit LeakageStage(Config& cfg) {
    corpus_ = cfg.require_path("paths.corpus", "--corpus");
    benchmark_ = cfg.require_path("paths.benchmark", "--benchmark");
    out_ = cfg.path("paths.leakage");
    threshold_ = cfg.number("leakage.threshold", 0.6);
    n_ = static_cast<std::size_t>(cfg.integer("leakage.ngram", 4, 1));
    if (!(threshold_ >= 0.0 && threshold_ <= 1.0)) cfg.issue("leakage.threshold", "must lie in [0, 1]");
  }

  std::string name() const override { return "check-leakage"; }
  std::vector<fs::path> inputs() const override { return {corpus_, benchmark_}; }
  std::vector<fs::path> outputs() const override { return out_ ? std::vector{*out_} : std::vector<fs::path>{}; }

  void run(StageRecord& rec) override {
    const auto corpus = read_corpus<ProgrammingProblem>(corpus_);
    const auto bench = read_corpus<ProgrammingProblem>(benchmark_);
    const auto hits = check_leakage(corpus, bench, threshold_, n_);
    std::string text;
    for (const auto& h : hits)
      text += json{{"v", kSchemaVersion},
                   {"type", "leakage_hit"},
                   {"corpus_id", h.corpus_id},
                   {"benchmark_id", h.benchmark_id},
                   {"similarity", h.similarity}}
                  .dump() +
              "\n";
    if (out_) {
      if (out_->has_parent_path()) fs::create_directories(out_->parent_path());
      std::ofstream(*out_, std::ios::binary | std::ios::trunc) << text;
    } else {
      std::cout << text;
    }
    std::cerr << "check-leakage: " << hits.size() << " flagged pair(s) at threshold " << threshold_ << "\n";
    rec.summary = {{"flagged", hits.size()}, {"threshold", threshold_}};
  }

 private:
  fs::path corpus_, benchmark_;
  std::optional<fs::path> out_;
  double threshold_ = 0.6;
  std::size_t n_ = 4;
};

class SampleStage final : public Stage {
 public:
  explicit SampleStage(Config& cfg) {
    problems_ = cfg.require_path("paths.corpus", "--problems");
    out_ = cfg.require_path("paths.candidates", "--out");
    if (auto plan_file = cfg.path("sampling_file")) {
      try {
        json plan = read_json_file(*plan_file);
        json merged = cfg.find("sampling") ? *cfg.find("sampling") : json::object();
        merge(merged, plan);
        sampling_ = merged;
      } catch (const ConfigError& e) {
        cfg.issue("sampling_file", e.what());
      }
    } else if (const auto* s = cfg.find("sampling")) {
      sampling_ = *s;
    }
    try {
      json plan = sampling_;
      plan.erase("generators");
      plan.erase("prompt_style");
      plan_ = sampling_plan_from_json(plan);
    } catch (const std::exception& e) {
      cfg.issue("sampling", e.what());
    }
    const auto gens = generators_of(cfg);
    std::vector<std::string> ids;
    if (sampling_.contains("generators")) {
      try {
        ids = sampling_["generators"].get<std::vector<std::string>>();
      } catch (const json::exception&) {
        cfg.issue("sampling.generators", "expected a list of generator ids");
      }
    } else {
      for (const auto& [id, _] : gens) ids.push_back(id);
    }
    for (const auto& id : ids) {
      const auto it = gens.find(id);
      if (it == gens.end())
        cfg.issue("sampling.generators", "unknown generator '" + id + "'");
      else
        generators_.push_back(it->second);
    }
    options_.workers = workers_of(cfg);
    options_.seed = seed_of(cfg);
    try {
      options_.prompt_style = prompt_style_from_string(sampling_.value("prompt_style", std::string("pangu2")));
    } catch (const std::exception& e) {
      cfg.issue("sampling.prompt_style", e.what());
    }
  }

  std::string name() const override { return "sample"; }
  std::vector<fs::path> inputs() const override { return {problems_}; }
  std::vector<fs::path> outputs() const override { return {out_}; }

  void run(StageRecord& rec) override {
    const auto problems = read_corpus<ProgrammingProblem>(problems_);
    auto result = sample_responses(problems, generators_, plan_, options_);
    write_corpus(result.responses, out_);
    rec.failures = std::move(result.failures);
    rec.summary = {{"problems", problems.size()}, {"responses", result.responses.size()}};
  }

 private:
  fs::path problems_, out_;
  json sampling_ = json::object();
  SamplingPlan plan_;
  std::vector<GeneratorSpec> generators_;
  SamplingOptions options_;
};

class ExecuteStage final : public Stage {
 public:
  explicit ExecuteStage(Config& cfg) {
    candidates_ = cfg.require_path("paths.candidates", "--candidates");
    problems_ = cfg.require_path("paths.corpus", "--problems");
    out_ = cfg.require_path("paths.outcomes", "--out");
    limits_ = limits_of(cfg);
    runner_ = runner_of(cfg);
    sandbox_ = sandbox_of(cfg);
    workers_ = workers_of(cfg);
    if (find_executable(runner_.program).empty())
      cfg.issue("sandbox.runner.program", "runner executable '" + runner_.program + "' not found on PATH");
  }

  std::string name() const override { return "execute"; }
  std::vector<fs::path> inputs() const override { return {candidates_, problems_}; }
  std::vector<fs::path> outputs() const override { return {out_}; }

  void run(StageRecord& rec) override {
    const auto candidates = read_corpus<CandidateResponse>(candidates_);
    const auto problems = index_problems(read_corpus<ProgrammingProblem>(problems_));
    const auto outcomes = execute_batch(candidates, problems, limits_, workers_, runner_, sandbox_);
    write_corpus(outcomes, out_);
    std::map<std::string, int> counts;
    for (const auto& o : outcomes) {
      if (o.outcome)
        ++counts[std::string(to_string(o.outcome->situation()))];
      else
        rec.failures.push_back({"execute", o.candidate_id, o.error, json::object()});
    }
    rec.summary = {{"candidates", candidates.size()}, {"situations", counts}};
  }

 private:
  fs::path candidates_, problems_, out_;
  SandboxLimits limits_;
  RunnerSpec runner_;
  SandboxOptions sandbox_;
  std::size_t workers_ = 8;
};

class RankStage final : public Stage {
 public:
  explicit RankStage(Config& cfg) {
    candidates_ = cfg.require_path("paths.candidates", "--candidates");
    outcomes_ = cfg.require_path("paths.outcomes", "--outcomes");
    problems_ = cfg.require_path("paths.corpus", "--problems");
    out_ = cfg.require_path("paths.triples", "--out");
    filter_log_ = cfg.path("paths.filter_log");
    json policy = cfg.find("rank.policy") ? *cfg.find("rank.policy") : json::object();
    if (auto file = cfg.path("rank_policy_file")) {
      try {
        merge(policy, read_json_file(*file));
      } catch (const ConfigError& e) {
        cfg.issue("rank_policy_file", e.what());
      }
    }
    try {
      policy_ = rank_policy_from_json(policy);
    } catch (const std::exception& e) {
      cfg.issue("rank.policy", e.what());
    }
  }

  std::string name() const override { return "rank"; }
  std::vector<fs::path> inputs() const override { return {candidates_, outcomes_, problems_}; }
  std::vector<fs::path> outputs() const override {
    std::vector<fs::path> out{out_};
    if (filter_log_) out.push_back(*filter_log_);
    return out;
  }

  void run(StageRecord& rec) override {
    const auto candidates = read_corpus<CandidateResponse>(candidates_);
    const auto outcomes = read_corpus<OutcomeRecord>(outcomes_);
    const auto problems = index_problems(read_corpus<ProgrammingProblem>(problems_));
    const auto result = build_training_triples(group_candidates(candidates, outcomes, problems), policy_);
    write_corpus(result.triples, out_);
    if (filter_log_) write_corpus(result.log, *filter_log_);
    rec.summary = {{"triples", result.triples.size()}, {"filtered", result.log.size()}};
  }

 private:
  fs::path candidates_, outcomes_, problems_, out_;
  std::optional<fs::path> filter_log_;
  RankPolicy policy_;
};

class TrainStage final : public Stage {
 public:
  explicit TrainStage(Config& cfg) {
    triples_ = cfg.require_path("paths.triples", "--triples");
    out_ = cfg.require_path("paths.model", "--out-model");
    init_ = cfg.path("paths.init_model");
    shape_.context_window = static_cast<int>(cfg.integer("model.context_window", shape_.context_window, 1));
    shape_.embedding_dim = static_cast<int>(cfg.integer("model.embedding_dim", shape_.embedding_dim, 1));
    shape_.hidden_dim = static_cast<int>(cfg.integer("model.hidden_dim", shape_.hidden_dim, 1));
    model_seed_ = static_cast<std::uint64_t>(cfg.integer("model.seed", static_cast<std::int64_t>(seed_of(cfg)), 0));
    config_.epochs = static_cast<int>(cfg.integer("train.epochs", config_.epochs, 1));
    config_.batch_size = static_cast<int>(cfg.integer("train.batch_size", config_.batch_size, 1));
    config_.learning_rate = cfg.number("train.learning_rate", config_.learning_rate);
    config_.seed = static_cast<std::uint64_t>(cfg.integer("train.seed", static_cast<std::int64_t>(seed_of(cfg)), 0));
    config_.weights.rank = cfg.number("train.weights.rank", 1.0);
    config_.weights.ft = cfg.number("train.weights.ft", 1.0);
    config_.shuffle = cfg.boolean("train.shuffle", true);
    try {
      config_.validate();
    } catch (const ConfigError& e) {
      cfg.issue("train", e.what());
    }
  }

  std::string name() const override { return "train"; }
  std::vector<fs::path> inputs() const override {
    std::vector<fs::path> in{triples_};
    if (init_) in.push_back(*init_);
    return in;
  }
  std::vector<fs::path> outputs() const override { return {out_}; }

  void run(StageRecord& rec) override {
    const auto triples = read_corpus<TrainingTriple>(triples_);
    const ToyLM init = init_ ? ToyLM::load(*init_) : ToyLM(shape_, model_seed_);
    const auto result = train(triples, init, config_);
    if (out_.has_parent_path()) fs::create_directories(out_.parent_path());
    result.model.save(out_);
    json trace = json::array();
    for (const auto& e : result.trace)
      trace.push_back({{"epoch", e.epoch}, {"total", e.mean_total}, {"rank", e.mean_rank}, {"ft", e.mean_ft}});
    rec.summary = {{"triples", triples.size()}, {"trace", trace}};
  }

 private:
  fs::path triples_, out_;
  std::optional<fs::path> init_;
  ToyLMShape shape_;
  std::uint64_t model_seed_ = 0;
  TrainConfig config_;
};

class EvalStage final : public Stage {
 public:
  explicit EvalStage(Config& cfg) {
    problems_ = cfg.require_path("paths.benchmark", "--problems");
    out_ = cfg.require_path("paths.report", "--out");
    const auto* g = cfg.find("eval.generator");
    if (g && g->is_object()) {
      try {
        generator_ = generator_from_json(*g);
      } catch (const std::exception& e) {
        cfg.issue("eval.generator", e.what());
      }
    } else if (auto file = cfg.path("eval.generator_file")) {
      try {
        json doc = {{"generators", json::array({read_json_file(*file)})}};
        resolve_paths(doc, file->parent_path());
        generator_ = generator_from_json(doc["generators"][0]);
      } catch (const std::exception& e) {
        cfg.issue("eval.generator_file", e.what());
      }
    } else if (g && g->is_string()) {
      generator_ = pick_generator(cfg, generators_of(cfg), "eval.generator");
    } else {
      cfg.issue("eval.generator", "required (a generator object, a generator id, or eval.generator_file)");
    }
    const auto strategy = cfg.string("eval.strategy", "nucleus");
    if (strategy == "greedy") {
      decoding_ = DecodingConfig::greedy();
    } else if (strategy != "nucleus") {
      cfg.issue("eval.strategy", "expected greedy or nucleus");
    } else {
      decoding_.temperature = cfg.number("eval.temperature", decoding_.temperature);
      decoding_.top_p = cfg.number("eval.top_p", decoding_.top_p);
      decoding_.n = static_cast<int>(cfg.integer("eval.n", decoding_.n, 1));
      decoding_.k_values = cfg.list<int>("eval.k", decoding_.k_values);
    }
    decoding_.max_new_tokens = static_cast<int>(cfg.integer("eval.max_new_tokens", decoding_.max_new_tokens, 1));
    decoding_.seed = static_cast<std::uint64_t>(cfg.integer("eval.seed", static_cast<std::int64_t>(seed_of(cfg)), 0));
    try {
      decoding_.validate();
    } catch (const ConfigError& e) {
      cfg.issue("eval", e.what());
    }
    limits_ = limits_of(cfg);
    options_.runner = runner_of(cfg);
    options_.sandbox = sandbox_of(cfg);
    options_.workers = workers_of(cfg);
    options_.prompt_style = prompt_style_of(cfg, "eval.prompt_style");
  }

  std::string name() const override { return "eval"; }
  std::vector<fs::path> inputs() const override {
    std::vector<fs::path> in{problems_};
    if (generator_)
      if (const auto* toy = std::get_if<ToyLMSpec>(&generator_->kind)) in.push_back(toy->model_path);
    return in;
  }
  std::vector<fs::path> outputs() const override { return {out_}; }

  void run(StageRecord& rec) override {
    const auto problems = read_corpus<ProgrammingProblem>(problems_);
    const auto report = evaluate(problems, *generator_, decoding_, limits_, options_);
    write_corpus(std::vector{report}, out_);
    std::cout << format_reports({report}, ReportFormat::Table);
    rec.summary = {{"problems", problems.size()}};
    for (const auto& [k, v] : report.estimates) rec.summary["pass@" + std::to_string(k)] = v;
  }

 private:
  fs::path problems_, out_;
  std::optional<GeneratorSpec> generator_;
  DecodingConfig decoding_;
  SandboxLimits limits_;
  EvaluationOptions options_;
};

class ReportStage final : public Stage {
 public:
  explicit ReportStage(Config& cfg) {
    in_ = cfg.require_path("paths.report", "--in");
    const auto format = cfg.string("report.format", "table");
    if (format == "csv")
      format_ = ReportFormat::Csv;
    else if (format != "table")
      cfg.issue("report.format", "expected table or csv");
  }

  std::string name() const override { return "report"; }
  std::vector<fs::path> inputs() const override { return {in_}; }
  std::vector<fs::path> outputs() const override { return {}; }

  void run(StageRecord&) override {
    std::cout << format_reports(read_corpus<PassAtKReport>(in_), format_);
  }

 private:
  fs::path in_;
  ReportFormat format_ = ReportFormat::Table;
};

}  // namespace rrtf::cli
