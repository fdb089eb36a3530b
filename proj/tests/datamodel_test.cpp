#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "rrtf/datamodel.hpp"

namespace rrtf {
namespace {

namespace fs = std::filesystem;

class Corpus : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("rrtf_dm_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  }

  fs::path dir_;
};

ProgrammingProblem problem(std::string id, std::string instruction = "Return the sum of a and b.") {
  ProgrammingProblem p;
  p.id = std::move(id);
  p.instruction = std::move(instruction);
  p.signature = "def add(a, b):";
  p.tests = {{"assert add(1, 2) == 3", 1}, {"assert add(0, 0) == 0", 2}};
  return p;
}

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"a", "Z", " ", "\n", "\t", "\"", "\\", "{", "}", "é", "日本", "🙂",
                                                   "def", "x", "0", "\x01"};
  std::string s;
  const auto len = rng() % 12;
  for (std::size_t i = 0; i < len; ++i) s += pieces[rng() % pieces.size()];
  return s;
}

ProgrammingProblem random_problem(std::mt19937_64& rng, int index) {
  ProgrammingProblem p;
  p.id = "id-" + std::to_string(index) + "/" + random_text(rng);
  p.instruction = random_text(rng);
  p.signature = random_text(rng);
  for (auto n = rng() % 4; n > 0; --n) p.tests.push_back({"t" + random_text(rng), static_cast<int>(1 + rng() % 5)});
  if (rng() % 2) p.provenance = EvolvedProvenance{static_cast<int>(1 + rng() % 4), "parent" + random_text(rng)};
  if (rng() % 3 == 0) p.extra["future_field"] = random_text(rng);
  return p;
}

CandidateResponse random_candidate(std::mt19937_64& rng, int index) {
  CandidateResponse c;
  c.id = "c" + std::to_string(index);
  c.problem_id = random_text(rng);
  c.source = {rng() % 2 ? Role::Teacher : Role::Student, "gen" + random_text(rng)};
  c.sample_index = static_cast<int>(rng() % 10);
  c.raw_text = random_text(rng);
  c.extracted_code = random_text(rng);
  c.temperature = static_cast<double>(rng() % 2001) / 1000.0;
  c.top_p = static_cast<double>(1 + rng() % 1000) / 1000.0;
  return c;
}

TEST_F(Corpus, EmptyListWritesEmptyFile) {
  EXPECT_EQ(write_corpus(std::vector<ProgrammingProblem>{}, dir_ / "e.jsonl"), 0u);
  EXPECT_EQ(slurp(dir_ / "e.jsonl"), "");
  EXPECT_TRUE(read_corpus<ProgrammingProblem>(dir_ / "e.jsonl").empty());
}

TEST_F(Corpus, ThreeProblemsRoundTrip) {
  std::vector<ProgrammingProblem> xs = {problem("a"), problem("b"), problem("c")};
  xs[1].provenance = EvolvedProvenance{1, "a"};
  EXPECT_EQ(write_corpus(xs, dir_ / "p.jsonl"), 3u);
  const auto text = slurp(dir_ / "p.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(read_corpus<ProgrammingProblem>(dir_ / "p.jsonl"), xs);
}

TEST_F(Corpus, EveryLineCarriesSchemaVersionAndType) {
  write_corpus(std::vector{problem("a")}, dir_ / "p.jsonl");
  const auto j = json::parse(slurp(dir_ / "p.jsonl"));
  EXPECT_EQ(j["v"], 1);
  EXPECT_EQ(j["type"], "problem");
}

TEST_F(Corpus, DuplicateIdRejectedAtWriteTime) {
  const std::vector xs = {problem("a"), problem("dup"), problem("dup")};
  try {
    write_corpus(xs, dir_ / "d.jsonl");
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("dup"), std::string::npos);
    ASSERT_EQ(e.issues().size(), 1u);
    EXPECT_EQ(e.issues()[0].index, 2u);
  }
  EXPECT_FALSE(fs::exists(dir_ / "d.jsonl"));
}

TEST_F(Corpus, CorruptLineReportedByNumber) {
  const std::vector xs = {problem("a"), problem("b"), problem("c"), problem("d"), problem("e")};
  write_corpus(xs, dir_ / "p.jsonl");
  std::istringstream in(slurp(dir_ / "p.jsonl"));
  std::string line, out;
  for (int i = 1; std::getline(in, line); ++i) out += (i == 3 ? line.substr(0, line.size() / 2) : line) + "\n";
  std::ofstream(dir_ / "p.jsonl", std::ios::binary) << out;
  try {
    read_corpus<ProgrammingProblem>(dir_ / "p.jsonl");
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    ASSERT_EQ(e.issues().size(), 1u);
    EXPECT_EQ(e.issues()[0].index, 3u);
  }
}

TEST_F(Corpus, AllBadLinesCollected) {
  std::ofstream(dir_ / "p.jsonl", std::ios::binary) << to_line(problem("a")) << "\nnot json\n\n"
                                                    << R"({"v":2,"type":"problem"})" << "\n"
                                                    << R"({"v":1,"type":"candidate"})" << "\n";
  try {
    read_corpus<ProgrammingProblem>(dir_ / "p.jsonl");
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    ASSERT_EQ(e.issues().size(), 3u);
    EXPECT_EQ(e.issues()[0].index, 2u);
    EXPECT_EQ(e.issues()[1].index, 4u);
    EXPECT_EQ(e.issues()[2].index, 5u);
  }
}

TEST_F(Corpus, MissingFileIsAnError) {
  EXPECT_THROW(read_corpus<ProgrammingProblem>(dir_ / "nope.jsonl"), Error);
}

TEST_F(Corpus, UnwritablePathIsAnError) {
  std::ofstream(dir_ / "file") << "x";
  EXPECT_THROW(write_corpus(std::vector{problem("a")}, dir_ / "file" / "sub.jsonl"), Error);
}

TEST_F(Corpus, InvalidUtf8RejectedOnWriteWithIndex) {
  const std::vector xs = {problem("a"), problem("b", "bad \xff byte")};
  try {
    write_corpus(xs, dir_ / "u.jsonl");
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    ASSERT_EQ(e.issues().size(), 1u);
    EXPECT_EQ(e.issues()[0].index, 1u);
  }
}

TEST_F(Corpus, InvalidUtf8RejectedOnRead) {
  auto line = to_line(problem("a"));
  line.insert(line.find("Return"), "\xc3\x28");
  std::ofstream(dir_ / "u.jsonl", std::ios::binary) << line << "\n";
  EXPECT_THROW(read_corpus<ProgrammingProblem>(dir_ / "u.jsonl"), CorpusError);
}

TEST_F(Corpus, UnknownFieldsPreserved) {
  auto line = to_line(problem("a"));
  line.insert(1, R"("added_later":{"k":[1,2]},)");
  std::ofstream(dir_ / "f.jsonl", std::ios::binary) << line << "\n";
  const auto back = read_corpus<ProgrammingProblem>(dir_ / "f.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].extra["added_later"]["k"], json::array({1, 2}));
  write_corpus(back, dir_ / "g.jsonl");
  EXPECT_EQ(json::parse(slurp(dir_ / "g.jsonl"))["added_later"], json::parse(line)["added_later"]);
}

TEST_F(Corpus, ByteDeterministic) {
  std::mt19937_64 rng(1);
  std::vector<ProgrammingProblem> xs;
  for (int i = 0; i < 50; ++i) xs.push_back(random_problem(rng, i));
  write_corpus(xs, dir_ / "a.jsonl");
  write_corpus(xs, dir_ / "b.jsonl");
  EXPECT_EQ(slurp(dir_ / "a.jsonl"), slurp(dir_ / "b.jsonl"));
}

TEST_F(Corpus, RandomProblemsRoundTrip) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ProgrammingProblem> xs;
    for (int i = 0, n = static_cast<int>(rng() % 20); i < n; ++i) xs.push_back(random_problem(rng, i));
    write_corpus(xs, dir_ / "r.jsonl");
    EXPECT_EQ(read_corpus<ProgrammingProblem>(dir_ / "r.jsonl"), xs);
  }
}

TEST_F(Corpus, RandomCandidatesRoundTrip) {
  std::mt19937_64 rng(8);
  std::vector<CandidateResponse> xs;
  for (int i = 0; i < 200; ++i) xs.push_back(random_candidate(rng, i));
  write_corpus(xs, dir_ / "c.jsonl");
  EXPECT_EQ(read_corpus<CandidateResponse>(dir_ / "c.jsonl"), xs);
}

TEST_F(Corpus, OtherRecordTypesRoundTrip) {
  const std::vector<OutcomeRecord> outcomes = {
      {"c1", ExecutionOutcome::compile_error("SyntaxError", 4, 3), "", json::object()},
      {"c2", ExecutionOutcome::partial_pass(1, 3, 12), "", json::object()},
      {"c3", ExecutionOutcome::all_pass(3, 9), "", json::object()},
      {"c4", ExecutionOutcome::runtime_error("[timeout]", 10000, 3), "", json::object()},
      {"c5", std::nullopt, "unknown problem", json::object()}};
  write_corpus(outcomes, dir_ / "o.jsonl");
  EXPECT_EQ(read_corpus<OutcomeRecord>(dir_ / "o.jsonl"), outcomes);

  TrainingTriple t{"p", "x", {256, 120}, {"a", {97, 257}}, {"b", {98, 257}}, 3.5, 1.0, json::object()};
  write_corpus(std::vector{t}, dir_ / "t.jsonl");
  EXPECT_EQ(read_corpus<TrainingTriple>(dir_ / "t.jsonl"), std::vector{t});

  PassAtKReport r{"m", {{"p1", 5, 2}, {"p2", 5, 0}}, {{1, 0.2}, {2, 0.35}}, {DecodingStrategy::Nucleus, 0.2, 0.95},
                  json::object()};
  write_corpus(std::vector{r}, dir_ / "r.jsonl");
  EXPECT_EQ(read_corpus<PassAtKReport>(dir_ / "r.jsonl"), std::vector{r});

  const std::vector<FilterLogEntry> log = {{"p", "teacher_worse", 1.5, 3.0, json::object()},
                                           {"q", "missing_role", std::nullopt, 2.0, json::object()}};
  write_corpus(log, dir_ / "l.jsonl");
  EXPECT_EQ(read_corpus<FilterLogEntry>(dir_ / "l.jsonl"), log);
}

TEST(Outcome, SituationInvariantsEnforced) {
  EXPECT_THROW(ExecutionOutcome::partial_pass(0, 3), ContractError);
  EXPECT_THROW(ExecutionOutcome::partial_pass(3, 3), ContractError);
  EXPECT_THROW(ExecutionOutcome::all_pass(0), ContractError);
  EXPECT_EQ(ExecutionOutcome::partial_pass(2, 3).passed(), 2);
}

TEST(Outcome, RejectsInvalidRecordsOnRead) {
  EXPECT_THROW(from_line<OutcomeRecord>(
                   R"({"v":1,"type":"outcome","candidate_id":"c","outcome":{"situation":"partial_pass","passed":0,"total":3,"wall_time_ms":0,"stderr_excerpt":""}})"),
               std::exception);
  EXPECT_THROW(from_line<ProgrammingProblem>(
                   R"({"v":1,"type":"problem","id":"a","instruction":"i","tests":[{"code":""}],"provenance":{"kind":"seed"}})"),
               std::exception);
}

TEST(Situation, NamesRoundTrip) {
  for (auto s : {Situation::CompileError, Situation::RuntimeError, Situation::PartialPass, Situation::AllPass})
    EXPECT_EQ(situation_from_string(to_string(s)), s);
}

}  // namespace
}  // namespace rrtf
