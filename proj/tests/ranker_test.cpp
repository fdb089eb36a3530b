#include <gtest/gtest.h>

#include <random>

#include "rrtf/ranker.hpp"

namespace rrtf {
namespace {

ExecutionOutcome outcome_of(Situation s, int total = 3) {
  switch (s) {
    case Situation::CompileError: return ExecutionOutcome::compile_error("", 0, total);
    case Situation::RuntimeError: return ExecutionOutcome::runtime_error("", 0, total);
    case Situation::PartialPass: return ExecutionOutcome::partial_pass(1, total);
    case Situation::AllPass: return ExecutionOutcome::all_pass(total);
  }
  throw std::logic_error("bad situation");
}

RankedCandidate member(const std::string& problem, Role role, int index, Situation s) {
  CandidateResponse c;
  c.id = problem + "/" + std::string(to_string(role)) + "/" + std::to_string(index);
  c.problem_id = problem;
  c.source = {role, std::string(to_string(role))};
  c.sample_index = index;
  c.extracted_code = "code " + c.id;
  return {c, outcome_of(s)};
}

ProblemGroup group(const std::string& id, std::vector<RankedCandidate> members) {
  return {id, "prompt for " + id, std::move(members)};
}

TEST(Score, Examples) {
  EXPECT_EQ(score(ExecutionOutcome::all_pass(3), Role::Student), 3.0);
  EXPECT_EQ(score(ExecutionOutcome::all_pass(3), Role::Teacher), 3.5);
  EXPECT_EQ(score(ExecutionOutcome::compile_error(""), Role::Student), 0.0);
  EXPECT_EQ(score(ExecutionOutcome::partial_pass(1, 3), Role::Teacher), 2.5);
}

TEST(Score, MonotoneInSituation) {
  for (auto role : {Role::Teacher, Role::Student}) {
    EXPECT_LT(score(outcome_of(Situation::CompileError), role), score(outcome_of(Situation::RuntimeError), role));
    EXPECT_LT(score(outcome_of(Situation::RuntimeError), role), score(outcome_of(Situation::PartialPass), role));
    EXPECT_LT(score(outcome_of(Situation::PartialPass), role), score(outcome_of(Situation::AllPass), role));
  }
}

TEST(Score, PartialFractionDoesNotMatter) {
  EXPECT_EQ(score(ExecutionOutcome::partial_pass(1, 10), Role::Student),
            score(ExecutionOutcome::partial_pass(9, 10), Role::Student));
}

TEST(Triples, TeacherAllPassStudentRuntimeError) {
  const auto r = build_training_triples({group("p", {member("p", Role::Teacher, 0, Situation::AllPass),
                                                     member("p", Role::Student, 0, Situation::RuntimeError)})});
  ASSERT_EQ(r.triples.size(), 1u);
  EXPECT_EQ(r.triples[0].r_tea, 3.5);
  EXPECT_EQ(r.triples[0].r_stu, 1.0);
  EXPECT_EQ(r.triples[0].y_tea.text, "code p/teacher/0");
  EXPECT_EQ(r.triples[0].y_tea.tokens, encode_response("code p/teacher/0"));
  EXPECT_EQ(r.triples[0].prompt_tokens, encode_prompt("prompt for p"));
  EXPECT_TRUE(r.log.empty());
}

TEST(Triples, TeacherWorseIsFilteredAndLogged) {
  const auto r = build_training_triples({group("p", {member("p", Role::Teacher, 0, Situation::RuntimeError),
                                                     member("p", Role::Student, 0, Situation::AllPass)})});
  EXPECT_TRUE(r.triples.empty());
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0].reason, kFilterTeacherWorse);
  EXPECT_EQ(r.log[0].teacher_score, 1.5);
  EXPECT_EQ(r.log[0].student_score, 3.0);
}

TEST(Triples, EqualSituationKeptThanksToBonus) {
  const auto r = build_training_triples({group("p", {member("p", Role::Teacher, 0, Situation::AllPass),
                                                     member("p", Role::Student, 0, Situation::AllPass)})});
  ASSERT_EQ(r.triples.size(), 1u);
  EXPECT_EQ(r.triples[0].r_tea, 3.5);
  EXPECT_EQ(r.triples[0].r_stu, 3.0);
}

TEST(Triples, MissingRoleIsSkippedAndLogged) {
  const auto r = build_training_triples({group("p", {member("p", Role::Student, 0, Situation::AllPass)})});
  EXPECT_TRUE(r.triples.empty());
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0].reason, kFilterMissingRole);
  EXPECT_FALSE(r.log[0].teacher_score.has_value());
}

TEST(Triples, EarliestMemberWinsTies) {
  const auto r = build_training_triples({group("p", {member("p", Role::Student, 0, Situation::PartialPass),
                                                     member("p", Role::Teacher, 0, Situation::AllPass),
                                                     member("p", Role::Teacher, 1, Situation::AllPass),
                                                     member("p", Role::Student, 1, Situation::PartialPass),
                                                     member("p", Role::Student, 2, Situation::CompileError)})});
  ASSERT_EQ(r.triples.size(), 1u);
  EXPECT_EQ(r.triples[0].y_tea.text, "code p/teacher/0");
  EXPECT_EQ(r.triples[0].y_stu.text, "code p/student/0");
}

TEST(Triples, GroupingJoinsOutcomesAndOrdersByProblem) {
  std::map<std::string, ProgrammingProblem> problems;
  for (const auto* id : {"b", "a"}) {
    ProgrammingProblem p;
    p.id = id;
    p.instruction = "Do the thing.";
    p.signature = "def f():";
    p.tests = {{"assert True", 1}};
    problems[id] = p;
  }
  std::vector<CandidateResponse> cands;
  std::vector<OutcomeRecord> outcomes;
  for (const auto* id : {"b", "a"})
    for (auto role : {Role::Teacher, Role::Student}) {
      auto m = member(id, role, 0, Situation::AllPass);
      cands.push_back(m.candidate);
      outcomes.push_back({m.candidate.id, m.outcome, "", json::object()});
    }
  outcomes.back() = {outcomes.back().candidate_id, std::nullopt, "sandbox failed", json::object()};
  const auto groups = group_candidates(cands, outcomes, problems);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].problem_id, "a");
  EXPECT_EQ(groups[0].members.size(), 1u);
  EXPECT_EQ(groups[1].members.size(), 2u);
  EXPECT_EQ(groups[1].prompt, render_inference_prompt(problems["b"], PromptStyle::PanGu2));
}

TEST(Policy, Validation) {
  RankPolicy p;
  EXPECT_NO_THROW(p.validate());
  p.teacher_tiebreak_bonus = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p.teacher_tiebreak_bonus = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.situation_scores = {0.0, 2.0, 1.0, 3.0};
  EXPECT_THROW(p.validate(), ConfigError);
  const auto q = rank_policy_from_json(
      json{{"situation_scores", {{"compile_error", 0}, {"runtime_error", 10}, {"partial_pass", 20}, {"all_pass", 30}}},
           {"teacher_tiebreak_bonus", 5}});
  EXPECT_EQ(q.situation_score(Situation::AllPass), 30.0);
  EXPECT_EQ(q.teacher_tiebreak_bonus, 5.0);
}

// Independent selection: explicit scan per role with the raw formula.
struct Expected {
  bool skipped = false;
  bool filtered = false;
  std::string tea, stu;
};

Expected brute_force(const ProblemGroup& g) {
  const double base[] = {0, 1, 2, 3};
  Expected e;
  int bt = -1, bs = -1;
  double rt = -1, rs = -1;
  for (int i = 0; i < static_cast<int>(g.members.size()); ++i) {
    const auto& m = g.members[static_cast<std::size_t>(i)];
    const double s = base[static_cast<int>(m.outcome.situation())];
    if (m.candidate.source.role == Role::Teacher) {
      if (s + 0.5 > rt) rt = s + 0.5, bt = i;
    } else if (s > rs) {
      rs = s, bs = i;
    }
  }
  if (bt < 0 || bs < 0) return e.skipped = true, e;
  e.filtered = rt - 0.5 < rs;
  e.tea = g.members[static_cast<std::size_t>(bt)].candidate.extracted_code;
  e.stu = g.members[static_cast<std::size_t>(bs)].candidate.extracted_code;
  return e;
}

std::vector<ProblemGroup> random_groups(std::mt19937_64& rng, int count) {
  std::vector<ProblemGroup> groups;
  for (int g = 0; g < count; ++g) {
    const auto id = "p" + std::to_string(g);
    std::vector<RankedCandidate> members;
    for (int i = 0, n = static_cast<int>(rng() % 7); i < n; ++i)
      members.push_back(member(id, rng() % 2 ? Role::Teacher : Role::Student, i, static_cast<Situation>(rng() % 4)));
    groups.push_back(group(id, std::move(members)));
  }
  return groups;
}

TEST(Triples, RandomGroupsMatchBruteForce) {
  std::mt19937_64 rng(99);
  const auto groups = random_groups(rng, 2000);
  const auto r = build_training_triples(groups);
  std::size_t t = 0, filtered = 0, skipped = 0;
  for (const auto& g : groups) {
    const auto e = brute_force(g);
    if (e.skipped || e.filtered) {
      ++(e.skipped ? skipped : filtered);
      continue;
    }
    ASSERT_LT(t, r.triples.size());
    const auto& tr = r.triples[t++];
    EXPECT_EQ(tr.problem_id, g.problem_id);
    EXPECT_EQ(tr.y_tea.text, e.tea);
    EXPECT_EQ(tr.y_stu.text, e.stu);
    EXPECT_GT(tr.r_tea, tr.r_stu);
  }
  EXPECT_EQ(t, r.triples.size());
  EXPECT_EQ(r.triples.size() + r.log.size(), groups.size());
  EXPECT_EQ(std::count_if(r.log.begin(), r.log.end(), [](const auto& l) { return l.reason == kFilterTeacherWorse; }),
            static_cast<long>(filtered));
  EXPECT_EQ(std::count_if(r.log.begin(), r.log.end(), [](const auto& l) { return l.reason == kFilterMissingRole; }),
            static_cast<long>(skipped));
  EXPECT_GT(filtered, 100u);
  EXPECT_GT(skipped, 100u);
}

TEST(Triples, SelectionInvariantUnderPositiveScaling) {
  std::mt19937_64 rng(5);
  const auto groups = random_groups(rng, 1000);
  const auto base = build_training_triples(groups);
  for (double factor : {0.01, 7.0, 1000.0}) {
    RankPolicy scaled;
    for (auto& s : scaled.situation_scores) s *= factor;
    scaled.teacher_tiebreak_bonus *= factor;
    const auto r = build_training_triples(groups, scaled);
    ASSERT_EQ(r.triples.size(), base.triples.size());
    ASSERT_EQ(r.log.size(), base.log.size());
    for (std::size_t i = 0; i < r.triples.size(); ++i) {
      EXPECT_EQ(r.triples[i].problem_id, base.triples[i].problem_id);
      EXPECT_EQ(r.triples[i].y_tea, base.triples[i].y_tea);
      EXPECT_EQ(r.triples[i].y_stu, base.triples[i].y_stu);
      EXPECT_NEAR(r.triples[i].r_tea, factor * base.triples[i].r_tea, 1e-9 * factor);
    }
    for (std::size_t i = 0; i < r.log.size(); ++i) {
      EXPECT_EQ(r.log[i].problem_id, base.log[i].problem_id);
      EXPECT_EQ(r.log[i].reason, base.log[i].reason);
    }
  }
}

}  // namespace
}  // namespace rrtf
