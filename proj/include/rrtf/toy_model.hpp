#pragma once

// Fixed-window autoregressive categorical model.
//
//   u      = [emb(s[j-W]), ..., emb(s[j-1])]        (positions < 0 use BOS)
//   hidden = tanh(W1 u + b1)
//   logits = W2 hidden + b2
//   P(s[j] | s[<j]) = softmax(logits)
//
// All parameters live in one flat vector so optimizers, gradient checks and
// serialization treat them uniformly.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rrtf/common.hpp"
#include "rrtf/tokenizer.hpp"

namespace rrtf {

struct ToyLMShape {
  int vocab_size = kByteVocabSize;
  int context_window = 8;
  int embedding_dim = 32;
  int hidden_dim = 64;

  bool operator==(const ToyLMShape&) const = default;

  std::size_t input_dim() const { return static_cast<std::size_t>(context_window) * embedding_dim; }

  void validate() const {
    if (vocab_size < 1 || context_window < 1 || embedding_dim < 1 || hidden_dim < 1)
      throw ConfigError("toy model dimensions must be positive");
  }
};

class ToyLM {
 public:
  ToyLM(ToyLMShape shape, std::uint64_t seed) : shape_(shape), seed_(seed) {
    shape_.validate();
    params_.assign(b2_offset() + shape_.vocab_size, 0.0);
    std::mt19937_64 rng(seed);
    auto uniform = [&](double scale) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
      return (2.0 * u - 1.0) * scale;
    };
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(shape_.input_dim()));
    const double w2_scale = 1.0 / std::sqrt(static_cast<double>(shape_.hidden_dim));
    for (std::size_t i = 0; i < w1_offset(); ++i) params_[i] = uniform(0.5);
    for (std::size_t i = w1_offset(); i < b1_offset(); ++i) params_[i] = uniform(w1_scale);
    for (std::size_t i = w2_offset(); i < b2_offset(); ++i) params_[i] = uniform(w2_scale);
  }

  const ToyLMShape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }
  int vocab_size() const { return shape_.vocab_size; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // Flat layout: embedding [V x D], w1 [H x W*D], b1 [H], w2 [V x H], b2 [V].
  std::size_t w1_offset() const {
    return static_cast<std::size_t>(shape_.vocab_size) * shape_.embedding_dim;
  }
  std::size_t b1_offset() const { return w1_offset() + shape_.hidden_dim * shape_.input_dim(); }
  std::size_t w2_offset() const { return b1_offset() + shape_.hidden_dim; }
  std::size_t b2_offset() const {
    return w2_offset() + static_cast<std::size_t>(shape_.vocab_size) * shape_.hidden_dim;
  }

  /// Zeroes the output layer so every position predicts the uniform
  /// distribution.
  void zero_output_layer() { std::fill(params_.begin() + w2_offset(), params_.end(), 0.0); }

  bool operator==(const ToyLM&) const = default;

  void save(const std::filesystem::path& path) const;
  static ToyLM load(const std::filesystem::path& path);

 private:
  ToyLM(ToyLMShape shape, std::uint64_t seed, std::vector<double> params)
      : shape_(shape), seed_(seed), params_(std::move(params)) {}

  ToyLMShape shape_;
  std::uint64_t seed_;
  std::vector<double> params_;
};

namespace detail {

inline constexpr char kModelMagic[8] = {'R', 'R', 'T', 'F', 'T', 'O', 'Y', '\0'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error("truncated model file");
  return v;
}

}  // namespace detail

// File layout (little-endian): magic[8], u32 version, u32 vocab, u32 window,
// u32 embedding, u32 hidden, u64 seed, u64 parameter count, f64 parameters.
inline void ToyLM::save(const std::filesystem::path& path) const {
  static_assert(std::endian::native == std::endian::little, "model files are little-endian");
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(detail::kModelMagic, sizeof detail::kModelMagic);
  detail::write_pod(os, detail::kModelFormatVersion);
  for (int dim : {shape_.vocab_size, shape_.context_window, shape_.embedding_dim, shape_.hidden_dim})
    detail::write_pod(os, static_cast<std::uint32_t>(dim));
  detail::write_pod(os, static_cast<std::uint64_t>(seed_));
  detail::write_pod(os, static_cast<std::uint64_t>(params_.size()));
  os.write(reinterpret_cast<const char*>(params_.data()), static_cast<std::streamsize>(params_.size() * sizeof(double)));
  if (!os) throw Error("write to '" + path.string() + "' failed");
}

inline ToyLM ToyLM::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open model '" + path.string() + "'");
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, detail::kModelMagic, sizeof magic) != 0)
    throw Error("'" + path.string() + "' is not a toy model file");
  if (detail::read_pod<std::uint32_t>(is) != detail::kModelFormatVersion)
    throw Error("unsupported model format version");
  ToyLMShape shape;
  shape.vocab_size = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  shape.context_window = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  shape.embedding_dim = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  shape.hidden_dim = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  shape.validate();
  const auto seed = detail::read_pod<std::uint64_t>(is);
  const auto count = detail::read_pod<std::uint64_t>(is);
  ToyLM probe(shape, 0, {});
  const auto expected = probe.b2_offset() + static_cast<std::size_t>(shape.vocab_size);
  if (count != expected) throw Error("model parameter count does not match declared shape");
  std::vector<double> params(count);
  is.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw Error("truncated model file");
  return ToyLM(shape, seed, std::move(params));
}

/// Scratch buffers for one forward/backward position.
struct PositionState {
  std::vector<int> context;
  std::vector<double> input;
  std::vector<double> hidden;
  std::vector<double> log_probs;

  explicit PositionState(const ToyLMShape& s)
      : context(s.context_window), input(s.input_dim()), hidden(s.hidden_dim), log_probs(s.vocab_size) {}
};

/// Fills state.context with the W tokens preceding position j of seq.
inline void gather_context(std::span<const int> seq, std::size_t j, PositionState& state) {
  const auto window = state.context.size();
  for (std::size_t k = 0; k < window; ++k) {
    const auto back = window - k;  // distance from j
    state.context[k] = j >= back ? seq[j - back] : kBos;
  }
}

/// Forward pass for one position given state.context; leaves log-softmax in
/// state.log_probs.
inline void forward_position(const ToyLM& model, PositionState& state) {
  const auto& s = model.shape();
  const auto p = model.parameters();
  const auto D = static_cast<std::size_t>(s.embedding_dim);
  const auto H = static_cast<std::size_t>(s.hidden_dim);
  const auto V = static_cast<std::size_t>(s.vocab_size);
  const auto in_dim = s.input_dim();

  for (std::size_t k = 0; k < state.context.size(); ++k) {
    const double* row = p.data() + static_cast<std::size_t>(state.context[k]) * D;
    std::copy(row, row + D, state.input.begin() + static_cast<std::ptrdiff_t>(k * D));
  }
  const double* w1 = p.data() + model.w1_offset();
  const double* b1 = p.data() + model.b1_offset();
  for (std::size_t h = 0; h < H; ++h) {
    double acc = b1[h];
    const double* row = w1 + h * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * state.input[i];
    state.hidden[h] = std::tanh(acc);
  }
  const double* w2 = p.data() + model.w2_offset();
  const double* b2 = p.data() + model.b2_offset();
  double max_logit = -INFINITY;
  for (std::size_t v = 0; v < V; ++v) {
    double acc = b2[v];
    const double* row = w2 + v * H;
    for (std::size_t h = 0; h < H; ++h) acc += row[h] * state.hidden[h];
    state.log_probs[v] = acc;
    max_logit = std::max(max_logit, acc);
  }
  double sum = 0.0;
  for (std::size_t v = 0; v < V; ++v) sum += std::exp(state.log_probs[v] - max_logit);
  const double lse = max_logit + std::log(sum);
  for (std::size_t v = 0; v < V; ++v) state.log_probs[v] -= lse;
}

/// Adds coeff * d log P(target | context) / d params to grad, using the
/// activations left in state by forward_position.
inline void backward_position(const ToyLM& model, const PositionState& state, int target, double coeff,
                              std::span<double> grad) {
  const auto& s = model.shape();
  const auto p = model.parameters();
  const auto D = static_cast<std::size_t>(s.embedding_dim);
  const auto H = static_cast<std::size_t>(s.hidden_dim);
  const auto V = static_cast<std::size_t>(s.vocab_size);
  const auto in_dim = s.input_dim();

  // d log softmax[target] / d logits = onehot(target) - softmax
  std::vector<double> g_hidden(H, 0.0);
  const double* w2 = p.data() + model.w2_offset();
  double* gw2 = grad.data() + model.w2_offset();
  double* gb2 = grad.data() + model.b2_offset();
  for (std::size_t v = 0; v < V; ++v) {
    const double g = coeff * ((static_cast<int>(v) == target ? 1.0 : 0.0) - std::exp(state.log_probs[v]));
    gb2[v] += g;
    const double* row = w2 + v * H;
    double* grow = gw2 + v * H;
    for (std::size_t h = 0; h < H; ++h) {
      grow[h] += g * state.hidden[h];
      g_hidden[h] += g * row[h];
    }
  }
  const double* w1 = p.data() + model.w1_offset();
  double* gw1 = grad.data() + model.w1_offset();
  double* gb1 = grad.data() + model.b1_offset();
  std::vector<double> g_input(in_dim, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    const double g = g_hidden[h] * (1.0 - state.hidden[h] * state.hidden[h]);
    if (g == 0.0) continue;
    gb1[h] += g;
    const double* row = w1 + h * in_dim;
    double* grow = gw1 + h * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      grow[i] += g * state.input[i];
      g_input[i] += g * row[i];
    }
  }
  for (std::size_t k = 0; k < state.context.size(); ++k) {
    double* gemb = grad.data() + static_cast<std::size_t>(state.context[k]) * D;
    for (std::size_t d = 0; d < D; ++d) gemb[d] += g_input[k * D + d];
  }
}

/// Next-token distribution after the given context (probabilities, not logs).
inline std::vector<double> next_token_distribution(const ToyLM& model, std::span<const int> context) {
  PositionState state(model.shape());
  gather_context(context, context.size(), state);
  forward_position(model, state);
  std::vector<double> probs(state.log_probs.size());
  std::transform(state.log_probs.begin(), state.log_probs.end(), probs.begin(), [](double l) { return std::exp(l); });
  return probs;
}

}  // namespace rrtf
