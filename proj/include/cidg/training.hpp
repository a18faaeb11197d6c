#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cidg/corpus.hpp"
#include "cidg/model.hpp"
#include "cidg/taskformat.hpp"
#include "cidg/tokenizer.hpp"

namespace cidg {

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  double learning_rate = 5e-4;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double warmup_ratio = 0.03;
  double weight_decay = 1e-6;
  double adam_eps = 1e-8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  std::size_t max_src_len = 512;
  std::uint64_t seed = 42;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Mean over non-PAD target positions of -log softmax(logits_j)[target_j].
/// Throws TrainingError when every target position is PAD.
template <typename T>
double nll_loss(const Matrix<T>& logits, std::span<const TokenId> target, TokenId pad_id = tok::kPad);

template <typename T>
struct BatchGradients {
  double loss = 0.0;  // mean per-token NLL over the batch
  std::size_t tokens = 0;  // non-PAD target positions
  Params<T> grads;
};

/// Exact gradient of the batch-mean loss, where the mean runs over every
/// non-PAD target token in the batch. Targets may carry trailing PAD. Pairs
/// are evaluated one at a time, which is equivalent to running a padded batch.
template <typename T>
BatchGradients<T> compute_grads(const Params<T>& params, std::span<const SeqPair> batch, Rng* dropout_rng = nullptr);

/// Decoder input for a target: BOS followed by all but the last target token.
std::vector<TokenId> shift_right(std::span<const TokenId> target);

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  static OptimizerState for_params(const Params<float>& params);
};

/// One AdamW update. Order per scalar: global-norm clip of the gradient,
/// decoupled decay p -= lr*wd*p (Weight tensors only), moment update, bias
/// correction, p -= lr * m_hat / (sqrt(v_hat) + eps).
void adamw_step(OptimizerState& state, Params<float>& params, const Params<float>& grads, double lr,
                const TrainConfig& cfg);

/// ceil(warmup_ratio * total_steps).
std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg);

/// Linear warmup 0 -> peak over [0, warmup], then linear decay peak -> 0 over
/// [warmup, total]. Update number s (0-based) uses lr_at(s, ...).
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

/// Renders the training pair for dataset item `index`. May draw from `rng`.
using PairSource = std::function<SeqPair(std::size_t index, Rng& rng)>;

/// Pairs for the dialogue model. `instructions` may be null only in
/// ResponseOnly mode. The referenced vectors must outlive the source.
PairSource dialogue_pairs(const std::vector<DialogueExample>& examples, const std::vector<std::string>* instructions,
                          const Vocabulary& vocab, TrainingMode mode, std::size_t max_src_len);

/// Fill-in-the-blank pairs for the instruction generator.
PairSource instgen_pairs(const std::vector<InstructionTriplet>& triplets, const Vocabulary& vocab,
                         std::size_t max_src_len);

struct TrainResult {
  std::vector<double> epoch_loss;  // token-weighted mean NLL per epoch
  std::vector<std::size_t> epoch_pairs;  // pairs consumed per epoch
  std::array<std::size_t, kPairKindCount> kind_counts{};  // indexed by PairKind
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Per epoch: seeded Fisher-Yates shuffle, one pair per item, teacher-forced
/// batches of batch_size, one AdamW update per batch at lr_at(step).
TrainResult train(Params<float>& params, std::size_t dataset_size, const PairSource& make_pair,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

TrainResult train(Params<float>& params, const std::vector<LabeledExample>& dataset, const Vocabulary& vocab,
                  const TrainConfig& cfg, TrainingMode mode, const EpochCallback& on_epoch = {});

TrainResult train(Params<float>& params, const std::vector<InstructionTriplet>& dataset, const Vocabulary& vocab,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace cidg
