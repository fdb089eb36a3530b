#pragma once

// Reference computations used only by tests. Each one takes a different
// route from the library code it checks.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "rrtf/toy_model.hpp"

namespace rrtf::oracle {

/// Probability that a uniformly random k-subset of n samples (c correct)
/// contains at least one correct one, by enumerating all subsets.
inline double pass_at_k_enumerated(int n, int c, int k) {
  std::uint64_t hit = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != k) continue;
    ++total;
    // Samples [0, c) are the correct ones.
    if (mask & ((1u << c) - 1u)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

inline std::set<std::string> word_ngrams(const std::string& text, std::size_t n) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || ch == '_' || u >= 0x80) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  std::set<std::string> grams;
  if (words.empty()) return grams;
  const auto w = std::min(n, words.size());
  for (std::size_t i = 0; i + w <= words.size(); ++i) {
    std::string g;
    for (std::size_t k = 0; k < w; ++k) g += words[i + k] + " ";
    grams.insert(g);
  }
  return grams;
}

/// Jaccard similarity of word n-gram sets via std::set intersection/union.
inline double ngram_jaccard(const std::string& a, const std::string& b, std::size_t n = 4) {
  const auto ga = word_ngrams(a, n);
  const auto gb = word_ngrams(b, n);
  std::set<std::string> uni = ga;
  uni.insert(gb.begin(), gb.end());
  if (uni.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& g : ga) inter += gb.count(g);
  return static_cast<double>(inter) / static_cast<double>(uni.size());
}

/// log P(next | context) computed straight from the flat parameter layout,
/// one position at a time, without any of the library's forward code.
inline double next_token_log_prob(const ToyLM& model, const std::vector<int>& context, int next) {
  const auto& s = model.shape();
  const auto p = model.parameters();
  const int W = s.context_window, D = s.embedding_dim, H = s.hidden_dim, V = s.vocab_size;
  std::vector<double> u;
  for (int k = W; k >= 1; --k) {
    const long idx = static_cast<long>(context.size()) - k;
    const int tok = idx >= 0 ? context[static_cast<std::size_t>(idx)] : 256;
    for (int d = 0; d < D; ++d) u.push_back(p[static_cast<std::size_t>(tok * D + d)]);
  }
  const std::size_t w1 = static_cast<std::size_t>(V) * D;
  const std::size_t b1 = w1 + static_cast<std::size_t>(H) * W * D;
  const std::size_t w2 = b1 + H;
  const std::size_t b2 = w2 + static_cast<std::size_t>(V) * H;
  std::vector<double> h(H);
  for (int i = 0; i < H; ++i) {
    long double acc = p[b1 + i];
    for (int j = 0; j < W * D; ++j) acc += p[w1 + static_cast<std::size_t>(i) * W * D + j] * u[j];
    h[i] = std::tanh(static_cast<double>(acc));
  }
  std::vector<long double> logits(V);
  long double mx = -1e300;
  for (int v = 0; v < V; ++v) {
    long double acc = p[b2 + v];
    for (int i = 0; i < H; ++i) acc += p[w2 + static_cast<std::size_t>(v) * H + i] * h[i];
    logits[v] = acc;
    mx = std::max(mx, acc);
  }
  long double z = 0;
  for (int v = 0; v < V; ++v) z += std::exp(logits[v] - mx);
  return static_cast<double>(logits[next] - mx - std::log(z));
}

/// Sum over response positions, each from a separate forward pass.
inline double response_log_prob_sum(const ToyLM& model, const std::vector<int>& x, const std::vector<int>& y) {
  std::vector<int> ctx = x;
  double total = 0.0;
  for (int tok : y) {
    total += next_token_log_prob(model, ctx, tok);
    ctx.push_back(tok);
  }
  return total;
}

}  // namespace rrtf::oracle
