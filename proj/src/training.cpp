#include "cidg/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace cidg {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw TrainingError("learning_rate must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw TrainingError("warmup_ratio must lie in [0, 1)");
  if (batch_size < 1) throw TrainingError("batch_size must be at least 1");
  if (weight_decay < 0.0) throw TrainingError("weight_decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw TrainingError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw TrainingError("adam_eps must be positive");
  if (grad_clip_norm < 0.0) throw TrainingError("grad_clip_norm must be non-negative");
  if (max_src_len < 1) throw TrainingError("max_src_len must be positive");
}

namespace {

// Adds the loss of one pair to `sum` and writes d(sum)/d(logits) * scale.
template <typename T>
std::size_t accumulate_nll(const Matrix<T>& logits, std::span<const TokenId> target, TokenId pad, double& sum,
                           Matrix<T>* dlogits, double scale) {
  if (logits.rows != target.size()) throw TrainingError("logits rows do not match target length");
  std::size_t count = 0;
  if (dlogits) *dlogits = Matrix<T>(logits.rows, logits.cols);
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (target[j] == pad) continue;
    const auto lp = log_softmax(logits.row(j), logits.cols);
    const auto t = static_cast<std::size_t>(target[j]);
    if (t >= logits.cols) throw TrainingError("target id out of range");
    sum -= lp[t];
    ++count;
    if (dlogits) {
      T* g = dlogits->row(j);
      for (std::size_t v = 0; v < logits.cols; ++v) g[v] = static_cast<T>(std::exp(lp[v]) * scale);
      g[t] -= static_cast<T>(scale);
    }
  }
  return count;
}

std::size_t non_pad(std::span<const TokenId> target) {
  return static_cast<std::size_t>(std::count_if(target.begin(), target.end(), [](TokenId t) { return t != tok::kPad; }));
}

}  // namespace

template <typename T>
double nll_loss(const Matrix<T>& logits, std::span<const TokenId> target, TokenId pad_id) {
  double sum = 0.0;
  const std::size_t n = accumulate_nll<T>(logits, target, pad_id, sum, nullptr, 0.0);
  if (n == 0) throw TrainingError("target has no non-PAD positions");
  return sum / static_cast<double>(n);
}

std::vector<TokenId> shift_right(std::span<const TokenId> target) {
  std::vector<TokenId> in{tok::kBos};
  if (!target.empty()) in.insert(in.end(), target.begin(), target.end() - 1);
  return in;
}

template <typename T>
BatchGradients<T> compute_grads(const Params<T>& params, std::span<const SeqPair> batch, Rng* dropout_rng) {
  if (batch.empty()) throw TrainingError("batch is empty");
  BatchGradients<T> out;
  out.grads = Params<T>::zeros(params.config);
  for (const auto& pair : batch) out.tokens += non_pad(pair.target);
  if (out.tokens == 0) throw TrainingError("batch targets are all PAD");
  const double scale = 1.0 / static_cast<double>(out.tokens);

  double sum = 0.0;
  Matrix<T> dlogits;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SeqPair& pair = batch[i];
    const auto target_in = shift_right(pair.target);
    const auto trace = forward_trace(params, pair.source, target_in, dropout_rng);
    double pair_sum = 0.0;
    accumulate_nll(trace.logits, pair.target, tok::kPad, pair_sum, &dlogits, scale);
    if (!std::isfinite(pair_sum))
      throw TrainingError("non-finite loss on batch pair " + std::to_string(i) + " (" + to_string(pair.kind) +
                          ", source length " + std::to_string(pair.source.size()) + ")");
    sum += pair_sum;
    backward(params, trace, dlogits, out.grads);
  }
  out.loss = sum * scale;
  return out;
}

OptimizerState OptimizerState::for_params(const Params<float>& params) {
  OptimizerState s;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.values.size(), 0.0f);
    s.v.emplace_back(t.values.size(), 0.0f);
  }
  return s;
}

void adamw_step(OptimizerState& state, Params<float>& params, const Params<float>& grads, double lr,
                const TrainConfig& cfg) {
  if (state.m.size() != params.tensors.size() || grads.tensors.size() != params.tensors.size())
    throw TrainingError("optimizer state, parameters and gradients disagree on tensor count");
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    const std::size_t n = params.tensors[t].values.size();
    if (grads.tensors[t].values.size() != n || state.m[t].size() != n || state.v[t].size() != n)
      throw TrainingError("shape mismatch in tensor " + params.tensors[t].spec.name);
  }
  if (lr < 0.0) throw TrainingError("learning rate must be non-negative");

  double sq = 0.0;
  for (const auto& t : grads.tensors)
    for (float g : t.values) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  const double clip = cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;

  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t].values;
    const auto& g = grads.tensors[t].values;
    auto& m = state.m[t];
    auto& v = state.v[t];
    const double decay = params.tensors[t].spec.role == ParamRole::Weight ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip;
      double pi = static_cast<double>(p[i]);
      pi -= lr * decay * pi;
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      pi -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      p[i] = static_cast<float>(pi);
    }
  }
}

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg) {
  // The small offset keeps products like 0.03 * 100 from rounding up to 4.
  return static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps) - 1e-9));
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  const std::size_t warm = warmup_steps(total_steps, cfg);
  const double peak = cfg.learning_rate;
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm);
}

PairSource dialogue_pairs(const std::vector<DialogueExample>& examples, const std::vector<std::string>* instructions,
                          const Vocabulary& vocab, TrainingMode mode, std::size_t max_src_len) {
  if (mode == TrainingMode::Full && !instructions)
    throw TrainingError("multi-task training needs an instruction for every example");
  if (instructions && instructions->size() != examples.size())
    throw TrainingError("instruction count does not match example count");
  return [&examples, instructions, &vocab, mode, max_src_len](std::size_t i, Rng& rng) {
    const TaskCase task = sample_case(rng, mode);
    const std::string_view instr = instructions ? std::string_view((*instructions)[i]) : std::string_view();
    return format_case(examples[i], instr, task, vocab, max_src_len);
  };
}

PairSource instgen_pairs(const std::vector<InstructionTriplet>& triplets, const Vocabulary& vocab,
                         std::size_t max_src_len) {
  return [&triplets, &vocab, max_src_len](std::size_t i, Rng&) {
    const auto& t = triplets[i];
    return format_instgen(t.input, t.output, t.instruction, vocab, max_src_len);
  };
}

TrainResult train(Params<float>& params, std::size_t dataset_size, const PairSource& make_pair,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset_size == 0) throw TrainingError("training dataset is empty");

  const std::size_t steps_per_epoch = (dataset_size + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = steps_per_epoch * cfg.epochs;
  Rng rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng* drop = params.config.dropout > 0.0 ? &dropout_rng : nullptr;
  OptimizerState opt = OptimizerState::for_params(params);

  TrainResult result;
  std::vector<std::size_t> order(dataset_size);
  std::vector<SeqPair> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = dataset_size; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);

    double loss_sum = 0.0;
    std::size_t tokens = 0, pairs = 0;
    for (std::size_t start = 0; start < dataset_size; start += cfg.batch_size) {
      const std::size_t end = std::min(dataset_size, start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(make_pair(order[i], rng));
        ++result.kind_counts[static_cast<std::size_t>(batch.back().kind)];
      }
      pairs += batch.size();
      BatchGradients<float> bg;
      try {
        bg = compute_grads(params, std::span<const SeqPair>(batch), drop);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(result.steps) + ": " +
                            e.what());
      }
      loss_sum += bg.loss * static_cast<double>(bg.tokens);
      tokens += bg.tokens;
      adamw_step(opt, params, bg.grads, lr_at(result.steps, total, cfg), cfg);
      ++result.steps;
    }
    const double epoch_loss = loss_sum / static_cast<double>(tokens);
    if (!std::isfinite(epoch_loss)) throw TrainingError("non-finite epoch loss at epoch " + std::to_string(epoch + 1));
    result.epoch_loss.push_back(epoch_loss);
    result.epoch_pairs.push_back(pairs);
    if (on_epoch) on_epoch(epoch + 1, epoch_loss);
  }
  return result;
}

TrainResult train(Params<float>& params, const std::vector<LabeledExample>& dataset, const Vocabulary& vocab,
                  const TrainConfig& cfg, TrainingMode mode, const EpochCallback& on_epoch) {
  std::vector<DialogueExample> examples;
  std::vector<std::string> instructions;
  for (const auto& ex : dataset) {
    examples.push_back(ex.example);
    instructions.push_back(ex.instruction);
  }
  return train(params, dataset.size(), dialogue_pairs(examples, &instructions, vocab, mode, cfg.max_src_len), cfg,
               on_epoch);
}

TrainResult train(Params<float>& params, const std::vector<InstructionTriplet>& dataset, const Vocabulary& vocab,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return train(params, dataset.size(), instgen_pairs(dataset, vocab, cfg.max_src_len), cfg, on_epoch);
}

template double nll_loss(const Matrix<float>&, std::span<const TokenId>, TokenId);
template double nll_loss(const Matrix<double>&, std::span<const TokenId>, TokenId);
template BatchGradients<float> compute_grads(const Params<float>&, std::span<const SeqPair>, Rng*);
template BatchGradients<double> compute_grads(const Params<double>&, std::span<const SeqPair>, Rng*);

}  // namespace cidg
