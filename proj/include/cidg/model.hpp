#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cidg/common.hpp"
#include "cidg/tensor.hpp"

namespace cidg {

class ModelError : public Error {
 public:
  using Error::Error;
};

struct ModelConfig {
  std::size_t vocab_size = 2048;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_positions = 512;
  double dropout = 0.0;

  /// Throws ModelError on an inconsistent configuration.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form parameter count:
///   V*d                                  token embedding (tied output head)
/// + 2*P*d                                encoder and decoder positions
/// + Le*(4*d*d + 2*d*f + f + d + 4*d)     attention, feed-forward, 2 norms
/// + Ld*(8*d*d + 2*d*f + f + d + 6*d)     self+cross attention, ff, 3 norms
/// + 2*d                                  final decoder norm
std::size_t count_params(const ModelConfig& config);

/// Decides weight decay; only Weight tensors are decayed.
enum class ParamRole { Embedding, Weight, Bias, NormGain, NormOffset };

struct TensorSpec {
  std::string name;
  ParamRole role;
  std::vector<std::size_t> shape;

  std::size_t numel() const;
};

/// Canonical tensor order. Initialization draws and checkpoint records follow
/// it:
///   embed.token, embed.enc_pos, embed.dec_pos,
///   enc.<i>.{ln1.gain, ln1.offset, attn.q, attn.k, attn.v, attn.o,
///            ln2.gain, ln2.offset, ff.w1, ff.b1, ff.w2, ff.b2},
///   dec.<i>.{ln1.*, self.{q,k,v,o}, ln2.*, cross.{q,k,v,o}, ln3.*, ff.*},
///   dec.final_norm.gain, dec.final_norm.offset
/// Projections are stored (in x out) so that y = x W.
std::vector<TensorSpec> tensor_inventory(const ModelConfig& config);

struct AttnSlots { std::size_t q, k, v, o; };
struct FfnSlots { std::size_t w1, b1, w2, b2; };
struct NormSlots { std::size_t gain, offset; };
struct EncoderSlots { NormSlots ln1; AttnSlots attn; NormSlots ln2; FfnSlots ffn; };
struct DecoderSlots { NormSlots ln1; AttnSlots self_attn; NormSlots ln2; AttnSlots cross_attn; NormSlots ln3; FfnSlots ffn; };

/// Index of every tensor within the canonical order.
struct ParamLayout {
  std::size_t token_embedding = 0;
  std::size_t enc_positions = 1;
  std::size_t dec_positions = 2;
  std::vector<EncoderSlots> encoder;
  std::vector<DecoderSlots> decoder;
  NormSlots final_norm{};

  static ParamLayout for_config(const ModelConfig& config);
};

template <typename T>
struct ParamTensor {
  TensorSpec spec;
  std::vector<T> values;
};

/// Parameters (or gradients) of the encoder-decoder.
template <typename T>
struct Params {
  ModelConfig config;
  ParamLayout layout;
  std::vector<ParamTensor<T>> tensors;

  /// All-zero tensors with the shapes implied by `config`.
  static Params zeros(const ModelConfig& config);

  T* data(std::size_t slot) { return tensors[slot].values.data(); }
  const T* data(std::size_t slot) const { return tensors[slot].values.data(); }
  std::size_t count() const;

  template <typename U>
  Params<U> cast() const {
    Params<U> out;
    out.config = config;
    out.layout = layout;
    for (const auto& t : tensors) out.tensors.push_back({t.spec, std::vector<U>(t.values.begin(), t.values.end())});
    return out;
  }
};

/// Weights and embeddings ~ Normal(0, 0.02) drawn in canonical order from
/// Rng(seed); biases and norm offsets 0; norm gains 1.
Params<float> init_model(const ModelConfig& config, std::uint64_t seed);

// Per-sublayer intermediates kept for the backward pass.
template <typename T>
struct NormTrace {
  Matrix<T> out, xhat;
  std::vector<T> rstd;
};

template <typename T>
struct AttnTrace {
  Matrix<T> q, k, v, mixed, out;
  std::vector<Matrix<T>> probs;  // per head, query rows x key rows
  std::vector<std::size_t> visible;  // keys visible to each query row
  std::vector<T> drop;  // dropout scale per output element, empty when off
};

template <typename T>
struct FfnTrace {
  Matrix<T> pre, hidden, out;
  std::vector<T> drop;
};

template <typename T>
struct EncoderLayerTrace {
  NormTrace<T> ln1;
  AttnTrace<T> attn;
  NormTrace<T> ln2;
  FfnTrace<T> ffn;
};

template <typename T>
struct DecoderLayerTrace {
  NormTrace<T> ln1;
  AttnTrace<T> self_attn;
  NormTrace<T> ln2;
  AttnTrace<T> cross_attn;
  NormTrace<T> ln3;
  FfnTrace<T> ffn;
};

template <typename T>
struct ForwardTrace {
  std::vector<TokenId> source;
  std::vector<TokenId> target_in;
  std::size_t source_len = 0;  // source length without trailing PAD
  std::vector<EncoderLayerTrace<T>> encoder;
  Matrix<T> enc_out;
  std::vector<DecoderLayerTrace<T>> decoder;
  NormTrace<T> final_norm;
  Matrix<T> logits;  // target_in.size() x vocab_size
};

/// Pre-norm encoder-decoder forward pass. Row j of the logits predicts target
/// position j from target_in[0..j] and the non-PAD source. Dropout is applied
/// only when `dropout_rng` is given and the configured rate is positive.
template <typename T>
ForwardTrace<T> forward_trace(const Params<T>& params, std::span<const TokenId> source,
                              std::span<const TokenId> target_in, Rng* dropout_rng = nullptr);

template <typename T>
Matrix<T> forward(const Params<T>& params, std::span<const TokenId> source, std::span<const TokenId> target_in) {
  return forward_trace(params, source, target_in).logits;
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
template <typename T>
void backward(const Params<T>& params, const ForwardTrace<T>& trace, const Matrix<T>& dlogits, Params<T>& grads);

/// Step-by-step decoder producing the same logits, bit for bit, as the
/// matching rows of `forward`. Copies share the encoder state.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Params<T>& params, std::span<const TokenId> source);

  /// Feeds the decoder input at the current position and returns the logits
  /// predicting the following token.
  std::vector<T> step(TokenId token);
  std::size_t position() const { return position_; }

 private:
  struct EncoderState {
    std::size_t source_len = 0;
    std::vector<Matrix<T>> cross_k, cross_v;
  };

  const Params<T>* params_;
  std::shared_ptr<const EncoderState> encoder_;
  std::vector<Matrix<T>> self_k_, self_v_;
  std::size_t position_ = 0;
};

/// Log-softmax of one logits row, accumulated in double.
template <typename T>
std::vector<double> log_softmax(const T* logits, std::size_t n);

}  // namespace cidg
