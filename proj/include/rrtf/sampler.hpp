#pragma once

// Response generators (scripted mock, HTTP completion endpoint, built-in toy
// model) and the offline, parallel sampling of candidate responses.
//
// HTTP wire contract (POST to the endpoint URL, JSON both ways):
//   request:  {"model": str, "prompt": str, "temperature": num,
//              "top_p": num, "max_tokens": int}
//   response: {"text": str}  or  {"choices": [{"text": str}]}
//             or {"choices": [{"message": {"content": str}}]}
// Transport errors, 429 and 5xx are retried with exponential backoff; any
// other non-2xx status or an unparseable body fails immediately.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <bit>
#include <map>
#include <numeric>
#include <tuple>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"
#include "rrtf/executor.hpp"
#include "rrtf/prompts.hpp"
#include "rrtf/toy_model.hpp"
#include "rrtf/trainer.hpp"

namespace rrtf {

struct CompletionRequest {
  std::string prompt;
  double temperature = 0.0;
  double top_p = 1.0;
  int max_new_tokens = 512;
  std::uint64_t seed = 0;  // only stochastic local generators use it
};

class Generator {
 public:
  virtual ~Generator() = default;
  /// Returns the raw completion or throws GenerationError. Implementations
  /// must be safe to call from several threads at once.
  virtual std::string complete(const CompletionRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Generator kinds

/// Deterministic response table keyed by (prompt hash, temperature). An entry
/// without a temperature matches any temperature.
struct MockScript {
  struct Entry {
    std::uint64_t prompt_hash = 0;
    std::optional<double> temperature;
    std::string text;
  };
  std::vector<Entry> entries;
  std::optional<std::string> fallback;

  void add(std::string_view prompt, std::optional<double> temperature, std::string text) {
    entries.push_back({fnv1a64(prompt), temperature, std::move(text)});
  }
};

struct HttpCompletionSpec {
  std::string endpoint;  // http://host:port/path
  std::string model;
  std::string auth_env;  // name of the environment variable holding a bearer token
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_initial_ms = 250;
  double backoff_multiplier = 2.0;
};

struct ToyLMSpec {
  std::string model_path;
  std::shared_ptr<const ToyLM> model;  // used instead of model_path when set
};

struct GeneratorSpec {
  std::string generator_id;
  Role role = Role::Student;
  std::variant<MockScript, HttpCompletionSpec, ToyLMSpec> kind;
};

class MockGenerator final : public Generator {
 public:
  explicit MockGenerator(MockScript script) : script_(std::move(script)) {}

  std::string complete(const CompletionRequest& request) override {
    const auto h = fnv1a64(request.prompt);
    for (const auto& e : script_.entries)
      if (e.prompt_hash == h && (!e.temperature || std::abs(*e.temperature - request.temperature) < 1e-9))
        return e.text;
    if (script_.fallback) return *script_.fallback;
    char temp[32];
    std::snprintf(temp, sizeof temp, "%g", request.temperature);
    throw GenerationError("mock has no response for (prompt-hash " + hex64(h) + ", temperature " + temp + ")");
  }

 private:
  MockScript script_;
};

class HttpCompletionGenerator final : public Generator {
 public:
  explicit HttpCompletionGenerator(HttpCompletionSpec spec) : spec_(std::move(spec)) {
    const auto scheme_end = spec_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an absolute URL: " + spec_.endpoint);
    const auto path_start = spec_.endpoint.find('/', scheme_end + 3);
    base_ = spec_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : spec_.endpoint.substr(path_start);
    if (spec_.max_retries < 0 || spec_.timeout_ms <= 0) throw ConfigError("invalid HTTP generator limits");
  }

  std::string complete(const CompletionRequest& request) override {
    httplib::Headers headers;
    if (!spec_.auth_env.empty()) {
      const char* token = std::getenv(spec_.auth_env.c_str());
      if (!token) throw GenerationError("auth environment variable '" + spec_.auth_env + "' is not set");
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    const json body = {{"model", spec_.model},
                       {"prompt", request.prompt},
                       {"temperature", request.temperature},
                       {"top_p", request.top_p},
                       {"max_tokens", request.max_new_tokens}};
    const auto payload = body.dump();

    std::string last_error;
    double delay = spec_.backoff_initial_ms;
    for (int attempt = 0; attempt <= spec_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(delay)));
        delay *= spec_.backoff_multiplier;
      }
      httplib::Client client(base_);
      const auto timeout = std::chrono::milliseconds(spec_.timeout_ms);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      auto res = client.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status) + ": " + excerpt(res->body);
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw GenerationError("HTTP " + std::to_string(res->status) + ": " + excerpt(res->body));
      return parse_reply(res->body);
    }
    throw GenerationError("gave up after " + std::to_string(spec_.max_retries + 1) + " attempts; " + last_error);
  }

 private:
  static std::string excerpt(const std::string& body) { return truncate_output(body, 256); }

  static std::string parse_reply(const std::string& body) {
    json j;
    try {
      j = json::parse(body);
    } catch (const std::exception&) {
      throw GenerationError("malformed reply: " + excerpt(body));
    }
    if (j.is_object()) {
      if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
      if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
        const auto& c = j["choices"][0];
        if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
        if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string())
          return c["message"]["content"].get<std::string>();
      }
    }
    throw GenerationError("malformed reply: " + excerpt(body));
  }

  HttpCompletionSpec spec_;
  std::string base_;
  std::string path_;
};

class ToyLMGenerator final : public Generator {
 public:
  explicit ToyLMGenerator(std::shared_ptr<const ToyLM> model) : model_(std::move(model)) {}

  std::string complete(const CompletionRequest& request) override {
    const auto context = encode_prompt(request.prompt);
    DecodeOptions opts{request.temperature, request.top_p, request.max_new_tokens, request.seed};
    return detokenize(generate(*model_, context, opts));
  }

 private:
  std::shared_ptr<const ToyLM> model_;
};

inline std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec) {
  return std::visit(
      [](const auto& kind) -> std::unique_ptr<Generator> {
        using K = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<K, MockScript>) {
          return std::make_unique<MockGenerator>(kind);
        } else if constexpr (std::is_same_v<K, HttpCompletionSpec>) {
          return std::make_unique<HttpCompletionGenerator>(kind);
        } else {
          auto model = kind.model ? kind.model : std::make_shared<const ToyLM>(ToyLM::load(kind.model_path));
          return std::make_unique<ToyLMGenerator>(std::move(model));
        }
      },
      spec.kind);
}

/// One-shot completion through a generator spec.
inline std::string complete(const GeneratorSpec& generator, const std::string& prompt, double temperature,
                            double top_p, int max_new_tokens, std::uint64_t seed = 0) {
  return make_generator(generator)->complete({prompt, temperature, top_p, max_new_tokens, seed});
}

// ---------------------------------------------------------------------------
// Config parsing

inline GeneratorSpec generator_from_json(const json& j) {
  GeneratorSpec g;
  g.generator_id = j.at("id").get<std::string>();
  if (g.generator_id.empty()) throw ConfigError("generator id must be non-empty");
  const auto role = j.value("role", std::string("student"));
  if (role != "teacher" && role != "student") throw ConfigError("generator role must be teacher|student");
  g.role = role == "teacher" ? Role::Teacher : Role::Student;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "mock") {
    MockScript script;
    for (const auto& e : j.value("responses", json::array())) {
      MockScript::Entry entry;
      if (e.contains("prompt"))
        entry.prompt_hash = fnv1a64(e["prompt"].get<std::string>());
      else
        entry.prompt_hash = std::stoull(e.at("prompt_hash").get<std::string>(), nullptr, 16);
      if (e.contains("temperature") && !e["temperature"].is_null()) entry.temperature = e["temperature"].get<double>();
      entry.text = e.at("text").get<std::string>();
      script.entries.push_back(std::move(entry));
    }
    if (j.contains("fallback")) script.fallback = j["fallback"].get<std::string>();
    g.kind = std::move(script);
  } else if (kind == "http") {
    HttpCompletionSpec h;
    h.endpoint = j.at("endpoint").get<std::string>();
    h.model = j.value("model", std::string{});
    h.auth_env = j.value("auth_env", std::string{});
    h.timeout_ms = j.value("timeout_ms", h.timeout_ms);
    h.max_retries = j.value("max_retries", h.max_retries);
    h.backoff_initial_ms = j.value("backoff_initial_ms", h.backoff_initial_ms);
    h.backoff_multiplier = j.value("backoff_multiplier", h.backoff_multiplier);
    g.kind = std::move(h);
  } else if (kind == "toy_lm") {
    g.kind = ToyLMSpec{j.at("model").get<std::string>(), nullptr};
  } else {
    throw ConfigError("unknown generator kind '" + kind + "' (expected mock|http|toy_lm)");
  }
  return g;
}

struct SamplingPlan {
  std::vector<double> temperatures = {0.2, 0.8, 1.2};
  double top_p = 0.95;
  int samples_per_temperature = 1;
  int max_new_tokens = 512;

  void validate() const {
    if (temperatures.empty()) throw ConfigError("sampling plan needs at least one temperature");
    for (double t : temperatures)
      if (!(t >= 0.0 && t <= 2.0)) throw ConfigError("temperatures must lie in [0, 2]");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (samples_per_temperature < 1) throw ConfigError("samples_per_temperature must be positive");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
  }
};

inline SamplingPlan sampling_plan_from_json(const json& j) {
  SamplingPlan p;
  if (j.contains("temperatures")) p.temperatures = j["temperatures"].get<std::vector<double>>();
  p.top_p = j.value("top_p", p.top_p);
  p.samples_per_temperature = j.value("samples_per_temperature", p.samples_per_temperature);
  p.max_new_tokens = j.value("max_new_tokens", p.max_new_tokens);
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Sampling

struct SamplingOptions {
  std::size_t workers = 8;
  std::uint64_t seed = 0;
  PromptStyle prompt_style = PromptStyle::PanGu2;
};

struct SamplingResult {
  std::vector<CandidateResponse> responses;
  std::vector<FailureRecord> failures;
};

inline std::string format_temperature(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

inline std::string candidate_id(const std::string& problem_id, const std::string& generator_id, double temperature,
                                int sample_index) {
  return problem_id + "/" + generator_id + "/t" + format_temperature(temperature) + "/" +
         std::to_string(sample_index);
}

/// Seed for one sampling tuple; independent of scheduling.
inline std::uint64_t tuple_seed(std::uint64_t base, const std::string& problem_id, const std::string& generator_id,
                                double temperature, int sample_index) {
  std::uint64_t s = mix64(base);
  s = mix64(s ^ fnv1a64(problem_id));
  s = mix64(s ^ fnv1a64(generator_id));
  s = mix64(s ^ std::bit_cast<std::uint64_t>(temperature));
  return mix64(s ^ static_cast<std::uint64_t>(sample_index));
}

/// Draws plan.samples_per_temperature responses for every (problem,
/// generator, temperature). Failed calls are logged, never fatal. Output is
/// sorted by (problem_id, generator_id, temperature, sample index).
inline SamplingResult sample_responses(const std::vector<ProgrammingProblem>& problems,
                                       const std::vector<GeneratorSpec>& generators, const SamplingPlan& plan,
                                       const SamplingOptions& options = {}) {
  plan.validate();
  std::set<std::string> ids;
  bool has_teacher = false, has_student = false;
  for (const auto& g : generators) {
    if (!ids.insert(g.generator_id).second) throw ConfigError("duplicate generator id '" + g.generator_id + "'");
    (g.role == Role::Teacher ? has_teacher : has_student) = true;
  }
  if (!has_teacher || !has_student)
    throw ConfigError("sampling needs at least one teacher and one student generator");

  std::vector<std::unique_ptr<Generator>> instances;
  for (const auto& g : generators) instances.push_back(make_generator(g));

  struct Task {
    std::size_t problem, generator;
    double temperature;
    int sample;
  };
  std::vector<Task> tasks;
  for (std::size_t p = 0; p < problems.size(); ++p)
    for (std::size_t g = 0; g < generators.size(); ++g)
      for (double t : plan.temperatures)
        for (int s = 0; s < plan.samples_per_temperature; ++s) tasks.push_back({p, g, t, s});

  std::vector<std::optional<CandidateResponse>> slots(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::vector<std::string> prompts(problems.size());
  for (std::size_t p = 0; p < problems.size(); ++p)
    prompts[p] = render_inference_prompt(problems[p], options.prompt_style);

  parallel_for(tasks.size(), options.workers, [&](std::size_t i) {
    const auto& task = tasks[i];
    const auto& problem = problems[task.problem];
    const auto& gen = generators[task.generator];
    CompletionRequest req{prompts[task.problem], task.temperature, plan.top_p, plan.max_new_tokens,
                          tuple_seed(options.seed, problem.id, gen.generator_id, task.temperature, task.sample)};
    try {
      std::string raw = instances[task.generator]->complete(req);
      if (!is_valid_utf8(raw)) throw GenerationError("response is not valid UTF-8");
      CandidateResponse c;
      c.id = candidate_id(problem.id, gen.generator_id, task.temperature, task.sample);
      c.problem_id = problem.id;
      c.source = {gen.role, gen.generator_id};
      c.sample_index = task.sample;
      c.extracted_code = extract_code(raw);
      c.raw_text = std::move(raw);
      c.temperature = task.temperature;
      c.top_p = plan.top_p;
      slots[i] = std::move(c);
    } catch (const GenerationError& e) {
      errors[i] = e.what();
    }
  });

  SamplingResult result;
  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const auto& t = tasks[i];
    return std::tie(problems[t.problem].id, generators[t.generator].generator_id, t.temperature, t.sample);
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  for (auto i : order) {
    if (slots[i]) {
      result.responses.push_back(std::move(*slots[i]));
    } else {
      const auto& t = tasks[i];
      result.failures.push_back({"sample",
                                 candidate_id(problems[t.problem].id, generators[t.generator].generator_id,
                                              t.temperature, t.sample),
                                 errors[i],
                                 json::object()});
    }
  }
  return result;
}

}  // namespace rrtf
