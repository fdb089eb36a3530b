#pragma once

// Domain records shared by every pipeline stage, plus their line-delimited
// JSON serialization. Each record is one JSON object per line carrying
// "v" (schema version) and "type". Fields the reader does not recognize are
// kept in `extra` and written back unchanged.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrtf/common.hpp"

namespace rrtf {

using json = nlohmann::json;

struct TestCase {
  std::string code;
  int weight = 1;

  bool operator==(const TestCase&) const = default;
};

struct SeedProvenance {
  bool operator==(const SeedProvenance&) const = default;
};

struct EvolvedProvenance {
  int depth = 1;
  std::string parent_id;

  bool operator==(const EvolvedProvenance&) const = default;
};

using Provenance = std::variant<SeedProvenance, EvolvedProvenance>;

struct ProgrammingProblem {
  std::string id;
  std::string instruction;
  std::string signature;
  std::vector<TestCase> tests;
  Provenance provenance = SeedProvenance{};
  json extra = json::object();

  bool operator==(const ProgrammingProblem&) const = default;
};

enum class Role { Teacher, Student };

inline std::string_view to_string(Role r) { return r == Role::Teacher ? "teacher" : "student"; }

struct ResponseSource {
  Role role = Role::Student;
  std::string generator_id;

  bool operator==(const ResponseSource&) const = default;
};

struct CandidateResponse {
  std::string id;
  std::string problem_id;
  ResponseSource source;
  int sample_index = 0;
  std::string raw_text;
  std::string extracted_code;
  double temperature = 0.0;
  double top_p = 1.0;
  json extra = json::object();

  bool operator==(const CandidateResponse&) const = default;
};

// The four execution situations, ordered from worst to best.
enum class Situation { CompileError = 0, RuntimeError = 1, PartialPass = 2, AllPass = 3 };

inline std::string_view to_string(Situation s) {
  switch (s) {
    case Situation::CompileError: return "compile_error";
    case Situation::RuntimeError: return "runtime_error";
    case Situation::PartialPass: return "partial_pass";
    case Situation::AllPass: return "all_pass";
  }
  return "?";
}

inline Situation situation_from_string(std::string_view s) {
  if (s == "compile_error") return Situation::CompileError;
  if (s == "runtime_error") return Situation::RuntimeError;
  if (s == "partial_pass") return Situation::PartialPass;
  if (s == "all_pass") return Situation::AllPass;
  throw Error("unknown situation '" + std::string(s) + "'");
}

/// Result of running one candidate against its tests. `passed` and `total`
/// are meaningful for PartialPass and AllPass; for the error situations they
/// still record how far execution got.
class ExecutionOutcome {
 public:
  ExecutionOutcome() = default;

  static ExecutionOutcome compile_error(std::string stderr_excerpt, std::int64_t wall_ms = 0, int total = 0) {
    return {Situation::CompileError, 0, total, wall_ms, std::move(stderr_excerpt)};
  }
  static ExecutionOutcome runtime_error(std::string stderr_excerpt, std::int64_t wall_ms = 0, int total = 0) {
    return {Situation::RuntimeError, 0, total, wall_ms, std::move(stderr_excerpt)};
  }
  static ExecutionOutcome partial_pass(int passed, int total, std::int64_t wall_ms = 0,
                                       std::string stderr_excerpt = {}) {
    if (!(0 < passed && passed < total))
      throw ContractError("PartialPass requires 0 < passed < total");
    return {Situation::PartialPass, passed, total, wall_ms, std::move(stderr_excerpt)};
  }
  static ExecutionOutcome all_pass(int total, std::int64_t wall_ms = 0, std::string stderr_excerpt = {}) {
    if (total < 1) throw ContractError("AllPass requires total >= 1");
    return {Situation::AllPass, total, total, wall_ms, std::move(stderr_excerpt)};
  }

  Situation situation() const { return situation_; }
  int passed() const { return passed_; }
  int total() const { return total_; }
  std::int64_t wall_time_ms() const { return wall_time_ms_; }
  const std::string& stderr_excerpt() const { return stderr_excerpt_; }

  bool operator==(const ExecutionOutcome&) const = default;

 private:
  ExecutionOutcome(Situation s, int passed, int total, std::int64_t wall_ms, std::string err)
      : situation_(s), passed_(passed), total_(total), wall_time_ms_(wall_ms), stderr_excerpt_(std::move(err)) {}

  Situation situation_ = Situation::RuntimeError;
  int passed_ = 0;
  int total_ = 0;
  std::int64_t wall_time_ms_ = 0;
  std::string stderr_excerpt_;
};

/// Outcome file row: either an outcome or the reason none could be produced.
struct OutcomeRecord {
  std::string candidate_id;
  std::optional<ExecutionOutcome> outcome;
  std::string error;
  json extra = json::object();

  bool operator==(const OutcomeRecord&) const = default;
};

struct EncodedText {
  std::string text;
  std::vector<int> tokens;

  bool operator==(const EncodedText&) const = default;
};

struct TrainingTriple {
  std::string problem_id;
  std::string prompt;
  std::vector<int> prompt_tokens;
  EncodedText y_tea;
  EncodedText y_stu;
  double r_tea = 0.0;
  double r_stu = 0.0;
  json extra = json::object();

  bool operator==(const TrainingTriple&) const = default;
};

enum class DecodingStrategy { Greedy, Nucleus };

struct DecodingSettings {
  DecodingStrategy strategy = DecodingStrategy::Nucleus;
  double temperature = 0.2;
  double top_p = 0.95;

  bool operator==(const DecodingSettings&) const = default;
};

struct PassAtKRow {
  std::string problem_id;
  int n = 0;
  int c = 0;

  bool operator==(const PassAtKRow&) const = default;
};

struct PassAtKReport {
  std::string generator_id;
  std::vector<PassAtKRow> per_problem;
  std::map<int, double> estimates;
  DecodingSettings decoding;
  json extra = json::object();

  bool operator==(const PassAtKReport&) const = default;
};

/// Why a problem group produced no training triple.
struct FilterLogEntry {
  std::string problem_id;
  std::string reason;  // "teacher_worse" or "missing_role"
  std::optional<double> teacher_score;
  std::optional<double> student_score;
  json extra = json::object();

  bool operator==(const FilterLogEntry&) const = default;
};

/// A generator call or evolution step that did not produce output.
struct FailureRecord {
  std::string stage;
  std::string key;  // identifies the failed tuple, e.g. "p1/teacher-a/0.2/0"
  std::string message;
  json extra = json::object();

  bool operator==(const FailureRecord&) const = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> known, json& extra) {
  extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "v" || k == "type") continue;
    if (std::find(known.begin(), known.end(), k) == known.end()) extra[k] = it.value();
  }
}

inline json header(std::string_view type) {
  json j = json::object();
  j["v"] = kSchemaVersion;
  j["type"] = type;
  return j;
}

inline void merge_extra(json& j, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it)
    if (!j.contains(it.key())) j[it.key()] = it.value();
}

inline json outcome_to_json(const ExecutionOutcome& o) {
  json j = json::object();
  j["situation"] = to_string(o.situation());
  j["passed"] = o.passed();
  j["total"] = o.total();
  j["wall_time_ms"] = o.wall_time_ms();
  j["stderr_excerpt"] = o.stderr_excerpt();
  return j;
}

inline ExecutionOutcome outcome_from_json(const json& j) {
  const auto s = situation_from_string(j.at("situation").get<std::string>());
  const int passed = j.at("passed").get<int>();
  const int total = j.at("total").get<int>();
  const auto wall = j.at("wall_time_ms").get<std::int64_t>();
  if (wall < 0) throw Error("wall_time_ms must be non-negative");
  auto err = j.at("stderr_excerpt").get<std::string>();
  switch (s) {
    case Situation::CompileError: return ExecutionOutcome::compile_error(std::move(err), wall, total);
    case Situation::RuntimeError: return ExecutionOutcome::runtime_error(std::move(err), wall, total);
    case Situation::PartialPass: return ExecutionOutcome::partial_pass(passed, total, wall, std::move(err));
    case Situation::AllPass:
      if (passed != total) throw Error("all_pass requires passed == total");
      return ExecutionOutcome::all_pass(total, wall, std::move(err));
  }
  throw Error("unreachable");
}

inline json encoded_to_json(const EncodedText& e) { return json{{"text", e.text}, {"tokens", e.tokens}}; }

inline EncodedText encoded_from_json(const json& j) {
  EncodedText e{j.at("text").get<std::string>(), j.at("tokens").get<std::vector<int>>()};
  if (e.tokens.empty()) throw Error("token sequence must be non-empty");
  return e;
}

inline std::string decoding_name(DecodingStrategy s) { return s == DecodingStrategy::Greedy ? "greedy" : "nucleus"; }

inline DecodingStrategy decoding_from_name(const std::string& s) {
  if (s == "greedy") return DecodingStrategy::Greedy;
  if (s == "nucleus") return DecodingStrategy::Nucleus;
  throw Error("unknown decoding strategy '" + s + "'");
}

}  // namespace detail

template <class T>
struct RecordTraits;

template <>
struct RecordTraits<ProgrammingProblem> {
  static constexpr std::string_view kType = "problem";

  static json to_json(const ProgrammingProblem& p) {
    json j = detail::header(kType);
    j["id"] = p.id;
    j["instruction"] = p.instruction;
    j["signature"] = p.signature;
    json tests = json::array();
    for (const auto& t : p.tests) tests.push_back(json{{"code", t.code}, {"weight", t.weight}});
    j["tests"] = std::move(tests);
    if (const auto* e = std::get_if<EvolvedProvenance>(&p.provenance))
      j["provenance"] = json{{"kind", "evolved"}, {"depth", e->depth}, {"parent_id", e->parent_id}};
    else
      j["provenance"] = json{{"kind", "seed"}};
    detail::merge_extra(j, p.extra);
    return j;
  }

  static ProgrammingProblem from_json(const json& j) {
    ProgrammingProblem p;
    detail::check_keys(j, {"id", "instruction", "signature", "tests", "provenance"}, p.extra);
    p.id = j.at("id").get<std::string>();
    if (p.id.empty()) throw Error("id must be non-empty");
    p.instruction = j.at("instruction").get<std::string>();
    p.signature = j.value("signature", std::string{});
    for (const auto& t : j.value("tests", json::array())) {
      TestCase tc{t.at("code").get<std::string>(), t.value("weight", 1)};
      if (tc.code.empty()) throw Error("test code must be non-empty");
      if (tc.weight < 1) throw Error("test weight must be positive");
      p.tests.push_back(std::move(tc));
    }
    const auto& prov = j.at("provenance");
    const auto kind = prov.at("kind").get<std::string>();
    if (kind == "seed") {
      p.provenance = SeedProvenance{};
    } else if (kind == "evolved") {
      EvolvedProvenance e{prov.at("depth").get<int>(), prov.at("parent_id").get<std::string>()};
      if (e.depth < 1) throw Error("evolved depth must be >= 1");
      p.provenance = std::move(e);
    } else {
      throw Error("unknown provenance kind '" + kind + "'");
    }
    return p;
  }
};

template <>
struct RecordTraits<CandidateResponse> {
  static constexpr std::string_view kType = "candidate";

  static json to_json(const CandidateResponse& c) {
    json j = detail::header(kType);
    j["id"] = c.id;
    j["problem_id"] = c.problem_id;
    j["source"] = json{{"role", to_string(c.source.role)}, {"generator_id", c.source.generator_id}};
    j["sample_index"] = c.sample_index;
    j["raw_text"] = c.raw_text;
    j["extracted_code"] = c.extracted_code;
    j["temperature"] = c.temperature;
    j["top_p"] = c.top_p;
    detail::merge_extra(j, c.extra);
    return j;
  }

  static CandidateResponse from_json(const json& j) {
    CandidateResponse c;
    detail::check_keys(j, {"id", "problem_id", "source", "sample_index", "raw_text", "extracted_code",
                           "temperature", "top_p"},
                       c.extra);
    c.id = j.at("id").get<std::string>();
    c.problem_id = j.at("problem_id").get<std::string>();
    const auto role = j.at("source").at("role").get<std::string>();
    if (role != "teacher" && role != "student") throw Error("unknown role '" + role + "'");
    c.source.role = role == "teacher" ? Role::Teacher : Role::Student;
    c.source.generator_id = j.at("source").at("generator_id").get<std::string>();
    c.sample_index = j.value("sample_index", 0);
    c.raw_text = j.at("raw_text").get<std::string>();
    c.extracted_code = j.at("extracted_code").get<std::string>();
    c.temperature = j.at("temperature").get<double>();
    c.top_p = j.at("top_p").get<double>();
    if (c.temperature < 0.0 || c.temperature > 2.0) throw Error("temperature must lie in [0, 2]");
    if (c.top_p <= 0.0 || c.top_p > 1.0) throw Error("top_p must lie in (0, 1]");
    return c;
  }
};

template <>
struct RecordTraits<OutcomeRecord> {
  static constexpr std::string_view kType = "outcome";

  static json to_json(const OutcomeRecord& o) {
    json j = detail::header(kType);
    j["candidate_id"] = o.candidate_id;
    if (o.outcome) j["outcome"] = detail::outcome_to_json(*o.outcome);
    if (!o.error.empty()) j["error"] = o.error;
    detail::merge_extra(j, o.extra);
    return j;
  }

  static OutcomeRecord from_json(const json& j) {
    OutcomeRecord o;
    detail::check_keys(j, {"candidate_id", "outcome", "error"}, o.extra);
    o.candidate_id = j.at("candidate_id").get<std::string>();
    if (j.contains("outcome")) o.outcome = detail::outcome_from_json(j.at("outcome"));
    o.error = j.value("error", std::string{});
    if (!o.outcome && o.error.empty()) throw Error("outcome record needs 'outcome' or 'error'");
    return o;
  }
};

template <>
struct RecordTraits<TrainingTriple> {
  static constexpr std::string_view kType = "triple";

  static json to_json(const TrainingTriple& t) {
    json j = detail::header(kType);
    j["problem_id"] = t.problem_id;
    j["prompt"] = t.prompt;
    j["prompt_tokens"] = t.prompt_tokens;
    j["y_tea"] = detail::encoded_to_json(t.y_tea);
    j["y_stu"] = detail::encoded_to_json(t.y_stu);
    j["r_tea"] = t.r_tea;
    j["r_stu"] = t.r_stu;
    detail::merge_extra(j, t.extra);
    return j;
  }

  static TrainingTriple from_json(const json& j) {
    TrainingTriple t;
    detail::check_keys(j, {"problem_id", "prompt", "prompt_tokens", "y_tea", "y_stu", "r_tea", "r_stu"}, t.extra);
    t.problem_id = j.at("problem_id").get<std::string>();
    t.prompt = j.at("prompt").get<std::string>();
    t.prompt_tokens = j.at("prompt_tokens").get<std::vector<int>>();
    t.y_tea = detail::encoded_from_json(j.at("y_tea"));
    t.y_stu = detail::encoded_from_json(j.at("y_stu"));
    t.r_tea = j.at("r_tea").get<double>();
    t.r_stu = j.at("r_stu").get<double>();
    if (t.r_tea < t.r_stu) throw Error("triple requires r_tea >= r_stu");
    return t;
  }
};

template <>
struct RecordTraits<PassAtKReport> {
  static constexpr std::string_view kType = "report";

  static json to_json(const PassAtKReport& r) {
    json j = detail::header(kType);
    j["generator_id"] = r.generator_id;
    json rows = json::array();
    for (const auto& row : r.per_problem) rows.push_back(json{{"problem_id", row.problem_id}, {"n", row.n}, {"c", row.c}});
    j["per_problem"] = std::move(rows);
    json est = json::object();
    for (const auto& [k, v] : r.estimates) est[std::to_string(k)] = v;
    j["estimates"] = std::move(est);
    j["decoding"] = json{{"strategy", detail::decoding_name(r.decoding.strategy)},
                         {"temperature", r.decoding.temperature},
                         {"top_p", r.decoding.top_p}};
    detail::merge_extra(j, r.extra);
    return j;
  }

  static PassAtKReport from_json(const json& j) {
    PassAtKReport r;
    detail::check_keys(j, {"generator_id", "per_problem", "estimates", "decoding"}, r.extra);
    r.generator_id = j.value("generator_id", std::string{});
    for (const auto& row : j.at("per_problem")) {
      PassAtKRow pr{row.at("problem_id").get<std::string>(), row.at("n").get<int>(), row.at("c").get<int>()};
      if (pr.c < 0 || pr.c > pr.n) throw Error("row requires 0 <= c <= n");
      r.per_problem.push_back(std::move(pr));
    }
    for (auto it = j.at("estimates").begin(); it != j.at("estimates").end(); ++it) {
      const double v = it.value().get<double>();
      if (v < 0.0 || v > 1.0) throw Error("estimate outside [0, 1]");
      r.estimates[std::stoi(it.key())] = v;
    }
    const auto& d = j.at("decoding");
    r.decoding.strategy = detail::decoding_from_name(d.at("strategy").get<std::string>());
    r.decoding.temperature = d.at("temperature").get<double>();
    r.decoding.top_p = d.at("top_p").get<double>();
    return r;
  }
};

template <>
struct RecordTraits<FilterLogEntry> {
  static constexpr std::string_view kType = "filter";

  static json to_json(const FilterLogEntry& f) {
    json j = detail::header(kType);
    j["problem_id"] = f.problem_id;
    j["reason"] = f.reason;
    j["teacher_score"] = f.teacher_score ? json(*f.teacher_score) : json(nullptr);
    j["student_score"] = f.student_score ? json(*f.student_score) : json(nullptr);
    detail::merge_extra(j, f.extra);
    return j;
  }

  static FilterLogEntry from_json(const json& j) {
    FilterLogEntry f;
    detail::check_keys(j, {"problem_id", "reason", "teacher_score", "student_score"}, f.extra);
    f.problem_id = j.at("problem_id").get<std::string>();
    f.reason = j.at("reason").get<std::string>();
    if (j.contains("teacher_score") && !j["teacher_score"].is_null()) f.teacher_score = j["teacher_score"].get<double>();
    if (j.contains("student_score") && !j["student_score"].is_null()) f.student_score = j["student_score"].get<double>();
    return f;
  }
};

template <>
struct RecordTraits<FailureRecord> {
  static constexpr std::string_view kType = "failure";

  static json to_json(const FailureRecord& f) {
    json j = detail::header(kType);
    j["stage"] = f.stage;
    j["key"] = f.key;
    j["message"] = f.message;
    detail::merge_extra(j, f.extra);
    return j;
  }

  static FailureRecord from_json(const json& j) {
    FailureRecord f;
    detail::check_keys(j, {"stage", "key", "message"}, f.extra);
    f.stage = j.at("stage").get<std::string>();
    f.key = j.at("key").get<std::string>();
    f.message = j.at("message").get<std::string>();
    return f;
  }
};

template <class T>
concept Record = requires(const T& t, const json& j) {
  { RecordTraits<T>::to_json(t) } -> std::same_as<json>;
  { RecordTraits<T>::from_json(j) } -> std::same_as<T>;
};

template <class T>
concept IdentifiedRecord = Record<T> && requires(const T& t) {
  { t.id } -> std::convertible_to<std::string>;
};

// ---------------------------------------------------------------------------
// Corpus files

/// One problem found while reading or writing a corpus file. `index` is the
/// 1-based line number when reading and the 0-based record index when writing.
struct CorpusIssue {
  std::size_t index = 0;
  std::string message;
};

class CorpusError : public Error {
 public:
  CorpusError(std::string path, std::vector<CorpusIssue> issues)
      : Error(describe(path, issues)), path_(std::move(path)), issues_(std::move(issues)) {}

  const std::string& path() const { return path_; }
  const std::vector<CorpusIssue>& issues() const { return issues_; }

 private:
  static std::string describe(const std::string& path, const std::vector<CorpusIssue>& issues) {
    std::ostringstream os;
    os << path << ": " << issues.size() << " problem(s)";
    for (const auto& i : issues) os << "\n  [" << i.index << "] " << i.message;
    return os.str();
  }

  std::string path_;
  std::vector<CorpusIssue> issues_;
};

/// Serializes one record to its canonical single-line form (no newline).
template <Record T>
std::string to_line(const T& record) {
  return RecordTraits<T>::to_json(record).dump(-1, ' ', false, json::error_handler_t::strict);
}

template <Record T>
T from_line(std::string_view line) {
  if (!is_valid_utf8(line)) throw Error("invalid UTF-8");
  const json j = json::parse(line);
  if (!j.is_object()) throw Error("record is not a JSON object");
  if (!j.contains("v") || j["v"] != kSchemaVersion)
    throw Error("unsupported schema version (expected v=" + std::to_string(kSchemaVersion) + ")");
  if (!j.contains("type") || j["type"] != RecordTraits<T>::kType)
    throw Error("expected record type '" + std::string(RecordTraits<T>::kType) + "'");
  return RecordTraits<T>::from_json(j);
}

/// Writes one record per line. Duplicate ids and unserializable text are
/// collected and reported together; nothing is written in that case.
template <Record T>
std::size_t write_corpus(std::span<const T> records, const std::filesystem::path& path) {
  std::vector<CorpusIssue> issues;
  std::string buffer;
  if constexpr (IdentifiedRecord<T>) {
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto [it, inserted] = seen.emplace(records[i].id, i);
      if (!inserted)
        issues.push_back({i, "duplicate id '" + records[i].id + "' (first at record " + std::to_string(it->second) + ")"});
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      buffer += to_line(records[i]);
      buffer += '\n';
    } catch (const std::exception& e) {
      issues.push_back({i, std::string("serialization failed: ") + e.what()});
    }
  }
  if (!issues.empty()) throw CorpusError(path.string(), std::move(issues));
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  out.flush();
  if (!out) throw Error("write to '" + path.string() + "' failed");
  return records.size();
}

template <Record T>
std::size_t write_corpus(const std::vector<T>& records, const std::filesystem::path& path) {
  return write_corpus(std::span<const T>(records), path);
}

/// Reads every line; malformed lines are collected (with 1-based line numbers)
/// and raised together as a CorpusError. Blank lines are ignored.
template <Record T>
std::vector<T> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  std::vector<T> out;
  std::vector<CorpusIssue> issues;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(from_line<T>(line));
    } catch (const std::exception& e) {
      issues.push_back({lineno, e.what()});
    }
  }
  if constexpr (IdentifiedRecord<T>) {
    std::set<std::string> seen;
    for (const auto& r : out)
      if (!seen.insert(r.id).second) issues.push_back({0, "duplicate id '" + r.id + "'"});
  }
  if (!issues.empty()) throw CorpusError(path.string(), std::move(issues));
  return out;
}

}  // namespace rrtf
