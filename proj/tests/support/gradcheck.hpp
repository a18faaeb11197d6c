#pragma once

// Central finite-difference check of compute_grads on the micro model, in
// 64-bit arithmetic.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "cidg/training.hpp"

namespace cidg::testing {

inline ModelConfig micro_config() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 16;
  c.max_positions = 16;
  return c;
}

/// Three pairs; one source ends in PAD and one target ends in PAD.
inline std::vector<SeqPair> micro_batch(Rng& rng) {
  std::vector<SeqPair> batch(3);
  const auto word = [&rng] { return static_cast<TokenId>(4 + rng.below(12)); };
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t src = 4 + rng.below(4), tgt = 2 + rng.below(3);
    for (std::size_t i = 0; i < src; ++i) batch[b].source.push_back(word());
    for (std::size_t i = 0; i < tgt; ++i) batch[b].target.push_back(word());
    batch[b].target.push_back(tok::kEos);
  }
  batch[1].source.push_back(tok::kPad);
  batch[1].source.push_back(tok::kPad);
  batch[2].target.push_back(tok::kPad);
  return batch;
}

/// Token-weighted mean NLL computed from plain forward passes.
inline double batch_loss(const Params<double>& params, const std::vector<SeqPair>& batch) {
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& p : batch) {
    const auto logits = forward(params, p.source, shift_right(p.target));
    const std::size_t n =
        static_cast<std::size_t>(std::count_if(p.target.begin(), p.target.end(), [](TokenId t) { return t != tok::kPad; }));
    sum += nll_loss(logits, p.target) * static_cast<double>(n);
    tokens += n;
  }
  return sum / static_cast<double>(tokens);
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  std::set<std::string> tensors;  // tensors that received at least one sample
  std::string worst;  // description of the worst sample
};

/// |a - n| / max(|a|, |n|), or 0 when both are exactly zero.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

/// Every tensor gets one sample first; the rest are drawn uniformly.
inline GradCheckResult run_gradcheck(std::uint64_t seed, std::size_t samples, double h, double tol) {
  Rng rng(seed);
  Params<double> params = init_model(micro_config(), seed).cast<double>();
  // Spread the weights so every sublayer is far from the near-linear regime
  // of a 0.02-scale initialization.
  for (auto& t : params.tensors)
    for (auto& v : t.values) v += 0.3 * rng.normal();
  const auto batch = micro_batch(rng);
  const auto grads = compute_grads(params, std::span<const SeqPair>(batch));

  GradCheckResult r;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t slot = s < params.tensors.size() ? s : rng.below(params.tensors.size());
    auto& values = params.tensors[slot].values;
    const std::size_t idx = rng.below(values.size());
    const double saved = values[idx];
    values[idx] = saved + h;
    const double up = batch_loss(params, batch);
    values[idx] = saved - h;
    const double down = batch_loss(params, batch);
    values[idx] = saved;

    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.grads.tensors[slot].values[idx];
    const double err = relative_error(analytic, numeric);
    ++r.checked;
    r.tensors.insert(params.tensors[slot].spec.name);
    if (err >= tol) ++r.failures;
    if (err >= r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = params.tensors[slot].spec.name + "[" + std::to_string(idx) + "] analytic " +
                std::to_string(analytic) + " numeric " + std::to_string(numeric);
    }
  }
  return r;
}

}  // namespace cidg::testing
