#pragma once

// Turns execution outcomes into rank scores and training triples.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"
#include "rrtf/prompts.hpp"
#include "rrtf/tokenizer.hpp"

namespace rrtf {

struct RankPolicy {
  // Indexed by Situation: compile error, runtime error, partial pass, all pass.
  std::array<double, 4> situation_scores = {0.0, 1.0, 2.0, 3.0};
  double teacher_tiebreak_bonus = 0.5;

  double situation_score(Situation s) const { return situation_scores[static_cast<std::size_t>(s)]; }

  void validate() const {
    double min_gap = INFINITY;
    for (std::size_t i = 1; i < situation_scores.size(); ++i) {
      const double gap = situation_scores[i] - situation_scores[i - 1];
      if (!(gap > 0.0)) throw ConfigError("situation scores must be strictly increasing");
      min_gap = std::min(min_gap, gap);
    }
    if (!(teacher_tiebreak_bonus > 0.0 && teacher_tiebreak_bonus < min_gap))
      throw ConfigError("teacher_tiebreak_bonus must lie strictly between 0 and the smallest score gap");
  }
};

inline RankPolicy rank_policy_from_json(const json& j) {
  RankPolicy p;
  if (j.contains("situation_scores")) {
    const auto& s = j["situation_scores"];
    p.situation_scores = {s.at("compile_error").get<double>(), s.at("runtime_error").get<double>(),
                          s.at("partial_pass").get<double>(), s.at("all_pass").get<double>()};
  }
  p.teacher_tiebreak_bonus = j.value("teacher_tiebreak_bonus", p.teacher_tiebreak_bonus);
  p.validate();
  return p;
}

/// situation score, plus the tie-break bonus for teacher responses.
inline double score(const ExecutionOutcome& outcome, Role source, const RankPolicy& policy = {}) {
  return policy.situation_score(outcome.situation()) + (source == Role::Teacher ? policy.teacher_tiebreak_bonus : 0.0);
}

struct RankedCandidate {
  CandidateResponse candidate;
  ExecutionOutcome outcome;
};

/// All executed candidates for one problem, in sampling order.
struct ProblemGroup {
  std::string problem_id;
  std::string prompt;
  std::vector<RankedCandidate> members;
};

struct RankResult {
  std::vector<TrainingTriple> triples;
  std::vector<FilterLogEntry> log;
};

inline constexpr std::string_view kFilterTeacherWorse = "teacher_worse";
inline constexpr std::string_view kFilterMissingRole = "missing_role";

/// Joins candidates with their outcomes and training prompts. Candidates
/// whose execution produced no outcome are left out. Groups are ordered by
/// problem_id; members keep their order from `candidates`.
inline std::vector<ProblemGroup> group_candidates(const std::vector<CandidateResponse>& candidates,
                                                  const std::vector<OutcomeRecord>& outcomes,
                                                  const std::map<std::string, ProgrammingProblem>& problems) {
  std::map<std::string, const ExecutionOutcome*> by_id;
  for (const auto& o : outcomes)
    if (o.outcome) by_id[o.candidate_id] = &*o.outcome;
  std::map<std::string, ProblemGroup> groups;
  for (const auto& c : candidates) {
    const auto it = by_id.find(c.id);
    if (it == by_id.end()) continue;
    auto& g = groups[c.problem_id];
    if (g.problem_id.empty()) {
      g.problem_id = c.problem_id;
      const auto p = problems.find(c.problem_id);
      if (p == problems.end()) throw ContractError("candidate '" + c.id + "' refers to unknown problem");
      g.prompt = render_inference_prompt(p->second, PromptStyle::PanGu2);
    }
    g.members.push_back({c, *it->second});
  }
  std::vector<ProblemGroup> out;
  for (auto& [_, g] : groups) out.push_back(std::move(g));
  return out;
}

/// One triple per problem: the highest-ranked teacher response against the
/// highest-ranked student response (earliest member wins ties). Problems where
/// the teacher's situation score is below the student's are filtered; groups
/// lacking either role are skipped. Both outcomes go to the log.
inline RankResult build_training_triples(const std::vector<ProblemGroup>& groups, const RankPolicy& policy = {}) {
  policy.validate();
  RankResult result;
  for (const auto& g : groups) {
    const RankedCandidate* best[2] = {nullptr, nullptr};  // teacher, student
    double best_rank[2] = {0.0, 0.0};
    for (const auto& m : g.members) {
      const int slot = m.candidate.source.role == Role::Teacher ? 0 : 1;
      const double r = score(m.outcome, m.candidate.source.role, policy);
      if (!best[slot] || r > best_rank[slot]) {
        best[slot] = &m;
        best_rank[slot] = r;
      }
    }
    if (!best[0] || !best[1]) {
      FilterLogEntry e{g.problem_id, std::string(kFilterMissingRole), std::nullopt, std::nullopt, json::object()};
      if (best[0]) e.teacher_score = best_rank[0];
      if (best[1]) e.student_score = best_rank[1];
      result.log.push_back(std::move(e));
      continue;
    }
    const double tea_quality = policy.situation_score(best[0]->outcome.situation());
    const double stu_quality = policy.situation_score(best[1]->outcome.situation());
    if (tea_quality < stu_quality) {
      result.log.push_back(
          {g.problem_id, std::string(kFilterTeacherWorse), best_rank[0], best_rank[1], json::object()});
      continue;
    }
    TrainingTriple t;
    t.problem_id = g.problem_id;
    t.prompt = g.prompt;
    t.prompt_tokens = encode_prompt(g.prompt);
    t.y_tea = {best[0]->candidate.extracted_code, encode_response(best[0]->candidate.extracted_code)};
    t.y_stu = {best[1]->candidate.extracted_code, encode_response(best[1]->candidate.extracted_code)};
    t.r_tea = best_rank[0];
    t.r_stu = best_rank[1];
    result.triples.push_back(std::move(t));
  }
  return result;
}

}  // namespace rrtf
