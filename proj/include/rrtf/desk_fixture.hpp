#pragma once

// A small synthetic corpus for exercising the whole pipeline on a laptop.
//
// Problem i asks for fNN(x) = x + C_i. The scripted teacher always answers
// correctly. The scripted student is correct on a quarter of the problems
// (in a different style) and hits each of the three failure situations on
// the rest, so every execution situation shows up.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrtf/datamodel.hpp"
#include "rrtf/evolver.hpp"
#include "rrtf/prompts.hpp"

namespace rrtf::fixture {

struct DeskProblem {
  ProgrammingProblem problem;
  std::string teacher_code;
  std::string student_code;
  Situation student_situation = Situation::AllPass;
};

inline int desk_constant(int i) { return 11 + 3 * i; }

inline std::vector<DeskProblem> desk_problems(int count = 20) {
  std::vector<DeskProblem> out;
  for (int i = 0; i < count; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "f%02d", i);
    const std::string fn = name;
    const int c = desk_constant(i);
    const auto cs = std::to_string(c);
    DeskProblem d;
    d.problem.id = "desk-" + fn.substr(1);
    d.problem.instruction = "Return x plus " + cs + ".";
    d.problem.signature = "def " + fn + "(x):";
    d.problem.tests = {{"assert " + fn + "(0) == " + cs, 1},
                       {"assert " + fn + "(1) == " + std::to_string(c + 1), 1},
                       {"assert " + fn + "(-3) == " + std::to_string(c - 3), 1}};
    d.teacher_code = "def " + fn + "(x):\n    return x + " + cs + "\n";
    switch (i % 4) {
      case 0:
        d.student_code = "def " + fn + "(x):\n    return " + cs + " + x\n";
        d.student_situation = Situation::AllPass;
        break;
      case 1:
        d.student_code = "def " + fn + "(x):\n    return x - " + cs + "\n";
        d.student_situation = Situation::RuntimeError;
        break;
      case 2:
        d.student_code = "def " + fn + "(x):\n    return x + " + cs + " if x > 0 else 0\n";
        d.student_situation = Situation::PartialPass;
        break;
      default:
        d.student_code = "def " + fn + "(x)\n    return x + " + cs + "\n";
        d.student_situation = Situation::CompileError;
        break;
    }
    out.push_back(std::move(d));
  }
  return out;
}

/// Wraps code the way a chat model typically answers.
inline std::string fenced(const std::string& code) { return "Here is a solution:\n```python\n" + code + "```\n"; }

/// What the scripted evolver answers for a given task.
inline std::string evolved_instruction(const std::string& instruction) {
  return instruction + " The input x may be negative or zero.";
}

/// Writes seeds, benchmark, generator configs and a pipeline config into dir.
/// Returns the pipeline config path.
inline std::filesystem::path write_desk_fixture(const std::filesystem::path& dir, int count = 8,
                                                int max_depth = 1) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto desk = desk_problems(count);
  std::vector<ProgrammingProblem> seeds;
  for (const auto& d : desk) seeds.push_back(d.problem);
  write_corpus(seeds, dir / "seeds.jsonl");
  write_corpus(seeds, dir / "benchmark.jsonl");

  const auto& methods = default_evolution_methods();
  json evolver = {{"id", "evolver"}, {"role", "teacher"}, {"kind", "mock"}, {"responses", json::array()}};
  json teacher = {{"id", "teacher"}, {"role", "teacher"}, {"kind", "mock"}, {"responses", json::array()}};
  json student = {{"id", "student"}, {"role", "student"}, {"kind", "mock"}, {"responses", json::array()}};
  for (const auto& d : desk) {
    // Every problem in the lineage shares the parent's signature and tests, so
    // the teacher/student answers are the same for all depths.
    auto instruction = d.problem.instruction;
    for (int depth = 0; depth <= max_depth; ++depth) {
      ProgrammingProblem p = d.problem;
      p.instruction = instruction;
      const auto prompt = render_inference_prompt(p, PromptStyle::PanGu2);
      teacher["responses"].push_back({{"prompt", prompt}, {"text", fenced(d.teacher_code)}});
      student["responses"].push_back({{"prompt", prompt}, {"text", fenced(d.student_code)}});
      if (depth < max_depth) {
        const auto next = evolved_instruction(instruction);
        evolver["responses"].push_back({{"prompt", render_evolution_prompt(instruction, methods)}, {"text", next}});
        instruction = next;
      }
    }
  }
  const json generators = {{"generators", json::array({evolver, teacher, student})}};
  std::ofstream(dir / "generators.json") << generators.dump(2) << '\n';

  const json pipeline = {
      {"seed", 7},
      {"workers", 4},
      {"generators_file", "generators.json"},
      {"paths",
       {{"seeds", "seeds.jsonl"},
        {"corpus", "out/corpus.jsonl"},
        {"candidates", "out/candidates.jsonl"},
        {"outcomes", "out/outcomes.jsonl"},
        {"triples", "out/triples.jsonl"},
        {"filter_log", "out/filter_log.jsonl"},
        {"model", "out/model.bin"},
        {"benchmark", "benchmark.jsonl"},
        {"report", "out/report.jsonl"},
        {"sandbox_root", "out/sandbox"}}},
      {"evolution", {{"generator", "evolver"}, {"max_depth", max_depth}}},
      {"sampling", {{"generators", {"teacher", "student"}}, {"temperatures", {0.2}}, {"samples_per_temperature", 1}}},
      {"sandbox", {{"wall_timeout_ms", 10000}, {"memory_limit_mb", 512}, {"max_output_bytes", 65536}}},
      {"model", {{"context_window", 32}, {"embedding_dim", 16}, {"hidden_dim", 64}, {"seed", 1}}},
      {"train", {{"epochs", 8}, {"batch_size", 4}, {"learning_rate", 0.05}}},
      {"eval",
       {{"generator", json{{"id", "toy-student"}, {"kind", "toy_lm"}, {"model", "out/model.bin"}}},
        {"strategy", "greedy"},
        {"max_new_tokens", 64}}},
  };
  const auto path = dir / "pipeline.json";
  std::ofstream(path) << pipeline.dump(2) << '\n';
  return path;
}

}  // namespace rrtf::fixture
