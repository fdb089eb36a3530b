#pragma once

// Inference prompt layouts. Training samples use the same layout as the
// PanGu2 style: a triple-quoted docstring followed by the signature.

#include <string>
#include <string_view>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"

namespace rrtf {

enum class PromptStyle { PanGu2, StarCoder, WizardCoder };

inline PromptStyle prompt_style_from_string(std::string_view s) {
  if (s == "pangu2") return PromptStyle::PanGu2;
  if (s == "starcoder") return PromptStyle::StarCoder;
  if (s == "wizardcoder") return PromptStyle::WizardCoder;
  throw ConfigError("unknown prompt style '" + std::string(s) + "' (expected pangu2|starcoder|wizardcoder)");
}

namespace detail {

// Prefixes every non-empty line with the indent.
inline std::string indent_lines(std::string_view text, std::string_view indent) {
  std::string out;
  bool line_start = true;
  for (char c : text) {
    if (line_start && c != '\n') out += indent;
    out += c;
    line_start = c == '\n';
  }
  return out;
}

}  // namespace detail

/// Renders the generation prompt for a problem. PanGu2 works without a
/// signature (the docstring block stands alone); the other two styles need one.
inline std::string render_inference_prompt(const ProgrammingProblem& problem, PromptStyle style) {
  const std::string& doc = problem.instruction;
  const std::string& sig = problem.signature;
  switch (style) {
    case PromptStyle::PanGu2: {
      std::string out = "\"\"\"\n" + doc + "\n\"\"\"";
      if (!sig.empty()) out += "\n" + sig;
      return out;
    }
    case PromptStyle::StarCoder:
      if (sig.empty()) throw ContractError("StarCoder prompt style requires a function signature");
      return sig + "\n    \"\"\"\n" + detail::indent_lines(doc, "    ") + "\n    \"\"\"";
    case PromptStyle::WizardCoder:
      if (sig.empty()) throw ContractError("WizardCoder prompt style requires a function signature");
      return "Below is an instruction that describes a task, paired with an input that provides further context. "
             "Write a response that appropriately completes the request.\n"
             "### Instruction:\n"
             "Create a Python Script for this problem:\n" +
             sig + "\n    \"\"\"\n" + detail::indent_lines(doc, "    ") + "\n    \"\"\"\n\n### Response:";
  }
  throw ContractError("unknown prompt style");
}

}  // namespace rrtf
