#pragma once

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by two markers.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rrtf {

inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kByteVocabSize = 258;

/// [BOS, bytes..., EOS]
inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size() + 2);
  out.push_back(kBos);
  for (unsigned char c : text) out.push_back(c);
  out.push_back(kEos);
  return out;
}

/// Inverse of tokenize; marker ids are dropped, anything else out of the
/// byte range is ignored.
inline std::string detokenize(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens)
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  return out;
}

// Training and generation split a tokenized pair as
//   context  = [BOS, prompt bytes...]
//   response = [response bytes..., EOS]
// so the model learns to stop.
inline std::vector<int> encode_prompt(std::string_view prompt) {
  auto t = tokenize(prompt);
  t.pop_back();
  return t;
}

inline std::vector<int> encode_response(std::string_view response) {
  auto t = tokenize(response);
  t.erase(t.begin());
  return t;
}

}  // namespace rrtf
