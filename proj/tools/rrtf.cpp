// rrtf: command-line front end for the ranking-feedback training pipeline.

#include <unistd.h>

#include <CLI11.hpp>
#include <functional>
#include <iostream>
#include <memory>

#include "config.hpp"
#include "manifest.hpp"
#include "rrtf/desk_fixture.hpp"
#include "stages.hpp"

namespace {

using namespace rrtf;
using namespace rrtf::cli;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<int> workers;
  std::optional<std::int64_t> seed;
};

/// One flag that overlays a config key when given.
struct Binding {
  std::string key;
  std::function<std::optional<json>()> value;
  bool is_path = false;
};

class Bindings {
 public:
  template <class T>
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help,
           bool is_path = false) {
    auto slot = std::make_shared<std::optional<T>>();
    app->add_option(flag, *slot, help);
    bindings_.push_back({key, [slot]() -> std::optional<json> {
                           if (*slot) return json(**slot);
                           return std::nullopt;
                         },
                         is_path});
  }

  void path(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    add<std::string>(app, flag, key, help, true);
  }

  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    auto slot = std::make_shared<bool>(false);
    app->add_flag(name, *slot, help);
    bindings_.push_back({key, [slot]() -> std::optional<json> {
                           if (*slot) return json(true);
                           return std::nullopt;
                         },
                         false});
  }

  void custom(const std::string& key, std::function<std::optional<json>()> value) {
    bindings_.push_back({key, std::move(value), false});
  }

  void apply(json& layer) const {
    const auto cwd = fs::current_path();
    for (const auto& b : bindings_) {
      auto v = b.value();
      if (!v) continue;
      if (b.is_path) v = absolute_from(cwd, v->get<std::string>());
      set_key(layer, b.key, *v);
    }
  }

 private:
  std::vector<Binding> bindings_;
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_file, "JSON config file");
  app->add_option("--set", common.sets, "Override a config key (key=value, value parsed as JSON when possible)");
  app->add_option("--workers", common.workers, "Worker threads")->check(CLI::PositiveNumber);
  app->add_option("--seed", common.seed, "Base seed")->check(CLI::NonNegativeNumber);
}

/// File, then --set overlays, then flags.
json effective_config(const Common& common, const Bindings& bindings) {
  json root = json::object();
  if (!common.config_file.empty()) {
    const fs::path file = fs::absolute(common.config_file);
    root = read_json_file(file);
    if (!root.is_object()) throw ConfigError(file.string() + ": top level must be an object");
    resolve_paths(root, file.parent_path());
  }
  json sets = json::object();
  for (const auto& s : common.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_key(sets, s.substr(0, eq), parse_override_value(s.substr(eq + 1)));
  }
  resolve_paths(sets, fs::current_path());
  merge(root, sets);
  json flags = json::object();
  if (common.workers) flags["workers"] = *common.workers;
  if (common.seed) flags["seed"] = *common.seed;
  bindings.apply(flags);
  merge(root, flags);
  return root;
}

using StageFactory = std::function<std::unique_ptr<Stage>(Config&)>;

template <class S>
StageFactory factory() {
  return [](Config& cfg) { return std::make_unique<S>(cfg); };
}

/// Runs stages in order with every stage validated before the first runs.
/// Returns the process exit code.
int run_stages(const std::vector<StageFactory>& factories, const json& config_root, const Invocation& inv) {
  Config cfg(config_root);
  std::vector<std::unique_ptr<Stage>> stages;
  for (const auto& f : factories) stages.push_back(f(cfg));
  cfg.raise_if_any();

  std::set<fs::path> produced;
  std::vector<fs::path> missing;
  for (const auto& s : stages) {
    for (const auto& in : s->inputs())
      if (!produced.count(in) && !fs::exists(in)) missing.push_back(in);
    for (const auto& out : s->outputs()) produced.insert(out);
  }
  require_inputs(missing);

  for (const auto& s : stages) {
    StageRecord rec{s->name(), s->inputs(), s->outputs(), {}, json::object()};
    try {
      s->run(rec);
    } catch (const std::exception& e) {
      rec.failures.push_back({s->name(), "", e.what(), json::object()});
      write_manifests(rec, inv, config_root, "failed");
      std::cerr << "rrtf " << s->name() << ": error: " << e.what() << "\n";
      return 1;
    }
    const auto status = rec.failures.empty() ? "ok" : "partial";
    write_manifests(rec, inv, config_root, status);
    if (!rec.failures.empty())
      std::cerr << "rrtf " << s->name() << ": " << rec.failures.size() << " item(s) failed; see manifest\n";
  }
  return 0;
}

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--k: '" + item + "' is not an integer");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ranking-feedback training pipeline for code models"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Common common;
  Bindings bindings;
  std::vector<StageFactory> plan;
  std::function<int()> direct;

  auto* evolve = app.add_subcommand("evolve", "Evolve seed problems into a richer corpus");
  bindings.path(evolve, "--seeds", "paths.seeds", "Seed problems (JSONL)");
  bindings.path(evolve, "--out", "paths.corpus", "Evolved corpus (JSONL)");
  bindings.add<int>(evolve, "--depth", "evolution.max_depth", "Evolution rounds per seed");
  bindings.path(evolve, "--methods", "paths.methods", "Text file with one evolution method per line");
  bindings.path(evolve, "--removal-log", "paths.removal_log", "Preprocessing removal log (JSONL)");
  evolve->callback([&] { plan = {factory<EvolveStage>()}; });

  auto* leak = app.add_subcommand("check-leakage", "Flag corpus problems similar to benchmark problems");
  bindings.path(leak, "--corpus", "paths.corpus", "Corpus (JSONL)");
  bindings.path(leak, "--benchmark", "paths.benchmark", "Benchmark problems (JSONL)");
  bindings.add<double>(leak, "--threshold", "leakage.threshold", "Jaccard threshold");
  bindings.path(leak, "--out", "paths.leakage", "Flagged pairs (JSONL); stdout when omitted");
  leak->callback([&] { plan = {factory<LeakageStage>()}; });

  auto* sample = app.add_subcommand("sample", "Sample teacher and student responses");
  bindings.path(sample, "--problems", "paths.corpus", "Problems (JSONL)");
  bindings.path(sample, "--generators", "generators_file", "Generator definitions (JSON)");
  bindings.path(sample, "--plan", "sampling_file", "Sampling plan (JSON)");
  bindings.path(sample, "--out", "paths.candidates", "Candidate responses (JSONL)");
  sample->callback([&] { plan = {factory<SampleStage>()}; });

  auto* execute = app.add_subcommand("execute", "Run candidates against their tests in the sandbox");
  bindings.path(execute, "--candidates", "paths.candidates", "Candidate responses (JSONL)");
  bindings.path(execute, "--problems", "paths.corpus", "Problems (JSONL)");
  bindings.path(execute, "--out", "paths.outcomes", "Execution outcomes (JSONL)");
  bindings.add<int>(execute, "--timeout-ms", "sandbox.wall_timeout_ms", "Wall-clock limit per process");
  bindings.add<int>(execute, "--memory-mb", "sandbox.memory_limit_mb", "Address-space limit per process");
  bindings.flag(execute, "--keep-failures", "sandbox.keep_failures", "Keep sandbox directories of failed runs");
  execute->callback([&] { plan = {factory<ExecuteStage>()}; });

  auto* rank = app.add_subcommand("rank", "Score outcomes and build training triples");
  bindings.path(rank, "--candidates", "paths.candidates", "Candidate responses (JSONL)");
  bindings.path(rank, "--outcomes", "paths.outcomes", "Execution outcomes (JSONL)");
  bindings.path(rank, "--problems", "paths.corpus", "Problems (JSONL)");
  bindings.path(rank, "--out", "paths.triples", "Training triples (JSONL)");
  bindings.path(rank, "--filter-log", "paths.filter_log", "Filtered problems (JSONL)");
  bindings.path(rank, "--policy", "rank_policy_file", "Rank policy (JSON)");
  rank->callback([&] { plan = {factory<RankStage>()}; });

  auto* trainer = app.add_subcommand("train", "Train the toy model on triples");
  bindings.path(trainer, "--triples", "paths.triples", "Training triples (JSONL)");
  bindings.path(trainer, "--out-model", "paths.model", "Model file to write");
  bindings.path(trainer, "--init-model", "paths.init_model", "Start from this model instead of a fresh one");
  bindings.add<int>(trainer, "--epochs", "train.epochs", "Epochs");
  bindings.add<double>(trainer, "--lr", "train.learning_rate", "Learning rate");
  bindings.add<int>(trainer, "--batch-size", "train.batch_size", "Batch size");
  bindings.add<std::int64_t>(trainer, "--train-seed", "train.seed", "Shuffle seed (defaults to --seed)");
  trainer->callback([&] { plan = {factory<TrainStage>()}; });

  auto* eval = app.add_subcommand("eval", "Measure pass@k on a benchmark");
  bindings.path(eval, "--problems", "paths.benchmark", "Benchmark problems (JSONL)");
  bindings.path(eval, "--generator", "eval.generator_file", "Generator definition (JSON)");
  bindings.path(eval, "--out", "paths.report", "Report (JSONL)");
  bindings.add<int>(eval, "--n", "eval.n", "Samples per problem");
  std::string k_text;
  eval->add_option("--k", k_text, "Comma-separated k values, e.g. 1,10,100");
  bindings.custom("eval.k", [&]() -> std::optional<json> {
    if (k_text.empty()) return std::nullopt;
    return json(parse_k_list(k_text));
  });
  bindings.add<double>(eval, "--temperature", "eval.temperature", "Sampling temperature");
  bindings.add<double>(eval, "--top-p", "eval.top_p", "Nucleus mass");
  bindings.add<std::string>(eval, "--strategy", "eval.strategy", "greedy or nucleus");
  bindings.add<int>(eval, "--max-new-tokens", "eval.max_new_tokens", "Generation budget");
  bindings.add<std::string>(eval, "--prompt-style", "eval.prompt_style", "pangu2, starcoder or wizardcoder");
  eval->callback([&] { plan = {factory<EvalStage>()}; });

  auto* report = app.add_subcommand("report", "Print pass@k reports as a table or CSV");
  bindings.path(report, "--in", "paths.report", "Report (JSONL)");
  bindings.add<std::string>(report, "--format", "report.format", "table or csv");
  report->callback([&] { plan = {factory<ReportStage>()}; });

  auto* pipeline = app.add_subcommand("pipeline", "Run evolve, sample, execute, rank, train and eval");
  pipeline->callback([&] {
    plan = {factory<EvolveStage>(), factory<SampleStage>(), factory<ExecuteStage>(),
            factory<RankStage>(),   factory<TrainStage>(),  factory<EvalStage>()};
  });

  auto* fixture_cmd = app.add_subcommand("make-fixture", "Write a small self-contained demo workspace");
  std::string fixture_dir;
  int fixture_count = 8, fixture_depth = 1;
  fixture_cmd->add_option("--out-dir", fixture_dir, "Directory to create")->required();
  fixture_cmd->add_option("--count", fixture_count, "Problems")->check(CLI::Range(1, 20));
  fixture_cmd->add_option("--depth", fixture_depth, "Evolution rounds")->check(CLI::Range(1, 5));
  fixture_cmd->callback([&] {
    direct = [&] {
      const auto path = fixture::write_desk_fixture(fixture_dir, fixture_count, fixture_depth);
      std::cout << path.string() << "\n";
      return 0;
    };
  });

  for (auto* sub : {evolve, leak, sample, execute, rank, trainer, eval, report, pipeline}) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "rrtf: " << e.what() << "\n";
    return 2;
  }

  try {
    if (direct) return direct();
    Invocation inv{std::vector<std::string>(argv, argv + argc), fs::current_path().string()};
    return run_stages(plan, effective_config(common, bindings), inv);
  } catch (const ConfigError& e) {
    std::cerr << "rrtf: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rrtf: error: " << e.what() << "\n";
    return 1;
  }
}
