#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "oracles.hpp"
#include "rrtf/evaluator.hpp"

namespace rrtf {
namespace {

std::string read_golden(const std::string& name) {
  std::ifstream is(std::string(RRTF_GOLDEN_DIR) + "/" + name, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

ProgrammingProblem add_problem() {
  ProgrammingProblem p;
  p.id = "add";
  p.instruction = "Add two ints.";
  p.signature = "def add(a, b):";
  p.tests = {{"assert add(1, 2) == 3", 1}, {"assert add(-1, 1) == 0", 1}};
  return p;
}

ProgrammingProblem mul_problem() {
  ProgrammingProblem p;
  p.id = "mul";
  p.instruction = "Multiply two ints.";
  p.signature = "def mul(a, b):";
  p.tests = {{"assert mul(2, 3) == 6", 1}, {"assert mul(0, 5) == 0", 1}};
  return p;
}

EvaluationOptions eval_options() {
  EvaluationOptions o;
  o.sandbox.root = std::filesystem::temp_directory_path() / "rrtf-eval-test";
  o.workers = 4;
  return o;
}

// Solves add, answers mul with add's body.
GeneratorSpec half_right_mock() {
  MockScript s;
  const auto code = "```python\ndef add(a, b):\n    return a + b\n\ndef mul(a, b):\n    return a + b\n```";
  s.add(render_inference_prompt(add_problem(), PromptStyle::PanGu2), std::nullopt, code);
  s.add(render_inference_prompt(mul_problem(), PromptStyle::PanGu2), std::nullopt, "def mul(a, b):\n    return a + b\n");
  return {"half", Role::Student, s};
}

TEST(PassAtK, Examples) {
  EXPECT_EQ(pass_at_k(200, 0, 1), 0.0);
  EXPECT_EQ(pass_at_k(200, 200, 1), 1.0);
  EXPECT_NEAR(pass_at_k(5, 2, 2), 0.7, 1e-15);
  EXPECT_NEAR(oracle::pass_at_k_enumerated(5, 2, 2), 0.7, 1e-15);
}

TEST(PassAtK, MatchesSubsetEnumeration) {
  for (int n = 1; n <= 12; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k)
        EXPECT_NEAR(pass_at_k(n, c, k), oracle::pass_at_k_enumerated(n, c, k), 1e-12) << n << " " << c << " " << k;
}

TEST(PassAtK, MonotoneInKAndC) {
  for (int n : {1, 7, 50, 200})
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) {
        const double v = pass_at_k(n, c, k);
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        if (k < n) {
          ASSERT_LE(v, pass_at_k(n, c, k + 1));
        }
        if (c < n) {
          ASSERT_LE(v, pass_at_k(n, c + 1, k));
        }
      }
}

TEST(PassAtK, Boundaries) {
  for (int n = 1; n <= 200; n += 13) {
    for (int c = 1; c <= n; ++c) EXPECT_EQ(pass_at_k(n, c, n), 1.0);
    for (int k = 1; k <= n; ++k) EXPECT_EQ(pass_at_k(n, 0, k), 0.0);
  }
}

TEST(PassAtK, LargeNStaysFinite) {
  for (int c = 0; c <= 200; ++c)
    for (int k : {1, 10, 100}) EXPECT_TRUE(std::isfinite(pass_at_k(200, c, k)));
  EXPECT_NEAR(pass_at_k(200, 1, 1), 1.0 / 200.0, 1e-15);
  EXPECT_NEAR(pass_at_k(200, 1, 100), 0.5, 1e-15);
}

TEST(PassAtK, DomainErrors) {
  EXPECT_THROW(pass_at_k(5, 2, 6), std::domain_error);
  EXPECT_THROW(pass_at_k(5, 6, 1), std::domain_error);
  EXPECT_THROW(pass_at_k(5, -1, 1), std::domain_error);
  EXPECT_THROW(pass_at_k(5, 2, 0), std::domain_error);
  EXPECT_THROW(pass_at_k(0, 0, 1), std::domain_error);
}

TEST(Prompt, PanGu2Golden) {
  const auto text = render_inference_prompt(add_problem(), PromptStyle::PanGu2);
  EXPECT_EQ(text, read_golden("prompt_pangu2.txt"));
  EXPECT_EQ(text, "\"\"\"\nAdd two ints.\n\"\"\"\ndef add(a, b):");
}

TEST(Prompt, StarCoderGolden) {
  const auto text = render_inference_prompt(add_problem(), PromptStyle::StarCoder);
  EXPECT_EQ(text, read_golden("prompt_starcoder.txt"));
  EXPECT_LT(text.find("def add"), text.find("Add two ints."));
  EXPECT_NE(text.find("    Add two ints."), std::string::npos);
}

TEST(Prompt, WizardCoderGolden) {
  const auto text = render_inference_prompt(add_problem(), PromptStyle::WizardCoder);
  EXPECT_EQ(text, read_golden("prompt_wizardcoder.txt"));
  EXPECT_TRUE(text.starts_with("Below is an instruction that describes a task"));
  EXPECT_NE(text.find("\n### Instruction:\n"), std::string::npos);
  EXPECT_NE(text.find("\n### Response:"), std::string::npos);
}

TEST(Prompt, MissingSignature) {
  auto p = add_problem();
  p.signature.clear();
  EXPECT_EQ(render_inference_prompt(p, PromptStyle::PanGu2), "\"\"\"\nAdd two ints.\n\"\"\"");
  EXPECT_THROW(render_inference_prompt(p, PromptStyle::StarCoder), ContractError);
  EXPECT_THROW(render_inference_prompt(p, PromptStyle::WizardCoder), ContractError);
}

TEST(Prompt, MultiLineDocstringIndented) {
  auto p = add_problem();
  p.instruction = "Line one.\n\nLine two.";
  EXPECT_EQ(render_inference_prompt(p, PromptStyle::StarCoder),
            "def add(a, b):\n    \"\"\"\n    Line one.\n\n    Line two.\n    \"\"\"");
}

TEST(Evaluate, HalfSolvedBenchmark) {
  DecodingConfig d;
  d.n = 4;
  d.k_values = {1};
  const auto r = evaluate({add_problem(), mul_problem()}, half_right_mock(), d, {}, eval_options());
  ASSERT_EQ(r.per_problem.size(), 2u);
  EXPECT_EQ(r.per_problem[0], (PassAtKRow{"add", 4, 4}));
  EXPECT_EQ(r.per_problem[1], (PassAtKRow{"mul", 4, 0}));
  EXPECT_DOUBLE_EQ(r.estimates.at(1), 0.5);
  EXPECT_EQ(r.extra["n"], 4);
}

TEST(Evaluate, GenerationFailureCountsAsIncorrect) {
  DecodingConfig d;
  d.n = 2;
  d.k_values = {1, 2};
  auto p = add_problem();
  p.id = "unscripted";
  p.instruction = "Not in the mock table.";
  const auto r = evaluate({add_problem(), p}, half_right_mock(), d, {}, eval_options());
  EXPECT_EQ(r.per_problem[1], (PassAtKRow{"unscripted", 2, 0}));
  EXPECT_DOUBLE_EQ(r.estimates.at(2), 0.5);
}

TEST(Evaluate, GreedyIsDeterministic) {
  auto model = std::make_shared<const ToyLM>(ToyLMShape{kByteVocabSize, 8, 8, 16}, 2);
  GeneratorSpec toy{"toy", Role::Student, ToyLMSpec{"", model}};
  auto d = DecodingConfig::greedy();
  d.max_new_tokens = 24;
  const auto a = evaluate({add_problem(), mul_problem()}, toy, d, {}, eval_options());
  const auto b = evaluate({add_problem(), mul_problem()}, toy, d, {}, eval_options());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.decoding.strategy, DecodingStrategy::Greedy);
  EXPECT_EQ(a.decoding.temperature, 0.0);
}

TEST(Evaluate, EstimatesMonotoneInK) {
  // Toy sampler at high temperature; correctness is rare but counts vary.
  MockScript s;
  s.add(render_inference_prompt(add_problem(), PromptStyle::PanGu2), 1.2, "def add(a, b):\n    return a + b\n");
  s.fallback = "def add(a, b):\n    return 0\n";
  DecodingConfig d;
  d.temperature = 1.2;
  d.n = 4;
  d.k_values = {1, 2, 4};
  const auto r = evaluate({add_problem(), mul_problem()}, {"m", Role::Student, s}, d, {}, eval_options());
  EXPECT_LE(r.estimates.at(1), r.estimates.at(2));
  EXPECT_LE(r.estimates.at(2), r.estimates.at(4));
  for (int k : {1, 2, 4}) {
    double expected = 0.0;
    for (const auto& row : r.per_problem) expected += oracle::pass_at_k_enumerated(row.n, row.c, k);
    EXPECT_NEAR(r.estimates.at(k), expected / 2.0, 1e-12);
  }
}

TEST(Evaluate, RejectsInvalidDecoding) {
  DecodingConfig d;
  d.n = 4;
  d.k_values = {1, 8};
  EXPECT_THROW(evaluate({add_problem()}, half_right_mock(), d, {}, eval_options()), ConfigError);
  auto g = DecodingConfig::greedy();
  g.n = 3;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(MeanPassAtK, PermutationInvariant) {
  std::mt19937_64 rng(4);
  std::vector<PassAtKRow> rows;
  for (int i = 0; i < 164; ++i) rows.push_back({"p" + std::to_string(i), 200, static_cast<int>(rng() % 201)});
  const double base = mean_pass_at_k(rows, 10);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(mean_pass_at_k(rows, 10), base);
  }
}

TEST(Report, TableAndCsv) {
  PassAtKReport a{"pangu-toy", {{"p", 200, 3}}, {{1, 0.6164}, {10, 0.7955}, {100, 0.9176}},
                  {DecodingStrategy::Nucleus, 0.2, 0.95}, json::object()};
  PassAtKReport b{"greedy,model", {{"p", 1, 1}}, {{1, 0.5}}, {DecodingStrategy::Greedy, 0.0, 1.0}, json::object()};
  EXPECT_EQ(format_reports({a, b}, ReportFormat::Csv),
            "model,decoding,problems,pass@1,pass@10,pass@100\n"
            "pangu-toy,T=0.2 top_p=0.95,1,61.64,79.55,91.76\n"
            "\"greedy,model\",greedy,1,50.00,-,-\n");
  EXPECT_EQ(format_reports({a}, ReportFormat::Table),
            "| model     | decoding         | problems | pass@1 | pass@10 | pass@100 |\n"
            "|-----------|------------------|----------|--------|---------|----------|\n"
            "| pangu-toy | T=0.2 top_p=0.95 |        1 |  61.64 |   79.55 |    91.76 |\n");
}

}  // namespace
}  // namespace rrtf
