#pragma once

// Rank + fine-tune objective over the toy model, and the SGD training loop.
//
//   p_i    = sum_t log P(y_i,t | x, y_i,<t) / |y_i|
//   L_rank = (r_tea - r_stu) * max(0, p_stu - p_tea)        (r_tea > r_stu)
//   L_ft   = -sum_t log P(y_tea,t | x, y_tea,<t)
//   L      = L_rank + L_ft
//
// The derivative of max(0, z) is taken as 0 at z = 0.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"
#include "rrtf/toy_model.hpp"

namespace rrtf {

namespace detail {

inline void check_tokens(const ToyLM& model, std::span<const int> tokens, const char* what) {
  for (int t : tokens)
    if (t < 0 || t >= model.vocab_size())
      throw ContractError(std::string(what) + " contains token " + std::to_string(t) +
                          " outside the model vocabulary (size " + std::to_string(model.vocab_size()) + ")");
}

inline std::vector<int> concat(std::span<const int> x, std::span<const int> y) {
  std::vector<int> seq(x.begin(), x.end());
  seq.insert(seq.end(), y.begin(), y.end());
  return seq;
}

/// Sum of response-token log probabilities; when grad is non-empty also adds
/// coeff * d(sum)/d(params) into it.
inline double sequence_log_prob(const ToyLM& model, std::span<const int> x, std::span<const int> y, double coeff,
                                std::span<double> grad) {
  const auto seq = concat(x, y);
  PositionState state(model.shape());
  double total = 0.0;
  for (std::size_t j = x.size(); j < seq.size(); ++j) {
    gather_context(seq, j, state);
    forward_position(model, state);
    total += state.log_probs[static_cast<std::size_t>(seq[j])];
    if (!grad.empty() && coeff != 0.0) backward_position(model, state, seq[j], coeff, grad);
  }
  return total;
}

}  // namespace detail

/// Mean per-token log probability of y given x. Always <= 0.
inline double log_prob_length_normalized(const ToyLM& model, std::span<const int> x, std::span<const int> y) {
  if (y.empty()) throw ContractError("response token sequence must be non-empty");
  detail::check_tokens(model, x, "prompt");
  detail::check_tokens(model, y, "response");
  return detail::sequence_log_prob(model, x, y, 0.0, {}) / static_cast<double>(y.size());
}

/// Token-level cross-entropy of the teacher response (un-normalized sum).
inline double ft_loss(const ToyLM& model, std::span<const int> x, std::span<const int> y_tea) {
  if (y_tea.empty()) throw ContractError("teacher token sequence must be non-empty");
  detail::check_tokens(model, x, "prompt");
  detail::check_tokens(model, y_tea, "teacher response");
  return -detail::sequence_log_prob(model, x, y_tea, 0.0, {});
}

inline double rank_loss(double p_tea, double p_stu, double r_tea, double r_stu) {
  if (!(r_tea > r_stu)) throw ContractError("rank_loss requires r_tea > r_stu");
  return (r_tea - r_stu) * std::max(0.0, p_stu - p_tea);
}

struct LossWeights {
  double rank = 1.0;
  double ft = 1.0;
};

struct LossBreakdown {
  double rank = 0.0;
  double ft = 0.0;
  double total = 0.0;
  double p_tea = 0.0;
  double p_stu = 0.0;
};

/// Evaluates L = w_rank * L_rank + w_ft * L_ft on one triple. If grad is
/// non-empty (size = parameter count) the exact gradient is added into it.
///
/// A triple with r_tea == r_stu contributes no rank term: the sum in L_rank
/// ranges over pairs with r_tea > r_stu only.
inline LossBreakdown total_loss(const TrainingTriple& triple, const ToyLM& model, std::span<double> grad = {},
                                LossWeights weights = {}) {
  const auto& x = triple.prompt_tokens;
  const auto& yt = triple.y_tea.tokens;
  const auto& ys = triple.y_stu.tokens;
  if (yt.empty() || ys.empty()) throw ContractError("triple token sequences must be non-empty");
  if (triple.r_tea < triple.r_stu) throw ContractError("triple requires r_tea >= r_stu");
  if (!grad.empty() && grad.size() != model.parameters().size())
    throw ContractError("gradient buffer size does not match model parameter count");
  detail::check_tokens(model, x, "prompt");
  detail::check_tokens(model, yt, "teacher response");
  detail::check_tokens(model, ys, "student response");

  LossBreakdown out;
  const double lt = static_cast<double>(yt.size());
  const double ls = static_cast<double>(ys.size());
  const double sum_tea = detail::sequence_log_prob(model, x, yt, 0.0, {});
  const double sum_stu = detail::sequence_log_prob(model, x, ys, 0.0, {});
  out.p_tea = sum_tea / lt;
  out.p_stu = sum_stu / ls;
  out.ft = -sum_tea;
  const double margin = triple.r_tea - triple.r_stu;
  const bool rank_active = margin > 0.0 && out.p_stu > out.p_tea;
  out.rank = margin > 0.0 ? rank_loss(out.p_tea, out.p_stu, triple.r_tea, triple.r_stu) : 0.0;
  out.total = weights.rank * out.rank + weights.ft * out.ft;

  if (!grad.empty()) {
    // dL/d(sum_tea) and dL/d(sum_stu)
    double coeff_tea = -weights.ft;
    double coeff_stu = 0.0;
    if (rank_active) {
      coeff_tea -= weights.rank * margin / lt;
      coeff_stu += weights.rank * margin / ls;
    }
    detail::sequence_log_prob(model, x, yt, coeff_tea, grad);
    if (coeff_stu != 0.0) detail::sequence_log_prob(model, x, ys, coeff_stu, grad);
  }
  return out;
}

struct TrainConfig {
  int epochs = 6;
  int batch_size = 512;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  LossWeights weights;
  bool shuffle = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be a finite non-negative number");
  }
};

/// Mean losses over the triples seen in one epoch, each evaluated just before
/// the update of the batch containing it.
struct EpochStats {
  int epoch = 0;
  double mean_total = 0.0;
  double mean_rank = 0.0;
  double mean_ft = 0.0;
};

struct TrainResult {
  ToyLM model;
  std::vector<EpochStats> trace;
};

/// Loss averaged over a set of triples without updating anything.
inline EpochStats evaluate_losses(std::span<const TrainingTriple> triples, const ToyLM& model,
                                  LossWeights weights = {}) {
  EpochStats s;
  for (const auto& t : triples) {
    const auto l = total_loss(t, model, {}, weights);
    s.mean_total += l.total;
    s.mean_rank += l.rank;
    s.mean_ft += l.ft;
  }
  if (!triples.empty()) {
    const double n = static_cast<double>(triples.size());
    s.mean_total /= n;
    s.mean_rank /= n;
    s.mean_ft /= n;
  }
  return s;
}

/// Plain minibatch SGD; each batch step moves along the mean gradient of its
/// triples. Deterministic given config.seed.
inline TrainResult train(std::span<const TrainingTriple> triples, ToyLM model, const TrainConfig& config) {
  config.validate();
  if (triples.empty()) throw ContractError("train requires at least one triple");
  for (const auto& t : triples) {
    try {
      detail::check_tokens(model, t.prompt_tokens, "prompt");
      detail::check_tokens(model, t.y_tea.tokens, "teacher response");
      detail::check_tokens(model, t.y_stu.tokens, "student response");
    } catch (const ContractError& e) {
      throw ContractError("vocabulary mismatch in triple for problem '" + t.problem_id + "': " + e.what());
    }
  }

  std::vector<std::size_t> order(triples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);
  std::vector<double> grad(model.parameters().size());
  TrainResult result{std::move(model), {}};
  auto params = result.model.parameters();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch + 1;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const auto l = total_loss(triples[order[b]], result.model, grad, config.weights);
        stats.mean_total += l.total;
        stats.mean_rank += l.rank;
        stats.mean_ft += l.ft;
      }
      if (config.learning_rate > 0.0) {
        const double step = config.learning_rate / static_cast<double>(stop - start);
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step * grad[i];
      }
    }
    const double n = static_cast<double>(order.size());
    stats.mean_total /= n;
    stats.mean_rank /= n;
    stats.mean_ft /= n;
    result.trace.push_back(stats);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodeOptions {
  double temperature = 0.0;  // 0 selects greedy decoding
  double top_p = 1.0;
  int max_new_tokens = 512;
  std::uint64_t seed = 0;
};

/// Continues `context` until EOS or max_new_tokens. The EOS token is not
/// included in the result.
inline std::vector<int> generate(const ToyLM& model, std::span<const int> context, const DecodeOptions& opts) {
  detail::check_tokens(model, context, "context");
  std::vector<int> seq(context.begin(), context.end());
  std::vector<int> out;
  std::mt19937_64 rng(opts.seed);
  PositionState state(model.shape());
  std::vector<std::pair<double, int>> ranked(static_cast<std::size_t>(model.vocab_size()));
  for (int step = 0; step < opts.max_new_tokens; ++step) {
    gather_context(seq, seq.size(), state);
    forward_position(model, state);
    int next = 0;
    if (opts.temperature <= 0.0) {
      next = static_cast<int>(std::max_element(state.log_probs.begin(), state.log_probs.end()) - state.log_probs.begin());
    } else {
      // Temperature-scaled softmax, then nucleus truncation.
      double max_l = -INFINITY;
      for (double l : state.log_probs) max_l = std::max(max_l, l / opts.temperature);
      double sum = 0.0;
      for (std::size_t v = 0; v < ranked.size(); ++v) {
        const double w = std::exp(state.log_probs[v] / opts.temperature - max_l);
        ranked[v] = {w, static_cast<int>(v)};
        sum += w;
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      double kept = 0.0;
      std::size_t cut = 0;
      while (cut < ranked.size()) {
        kept += ranked[cut].first / sum;
        ++cut;
        if (kept >= opts.top_p) break;
      }
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * (kept * sum);
      double acc = 0.0;
      next = ranked[cut - 1].second;
      for (std::size_t i = 0; i < cut; ++i) {
        acc += ranked[i].first;
        if (u < acc) {
          next = ranked[i].second;
          break;
        }
      }
    }
    if (next == kEos) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

}  // namespace rrtf
