#include "cidg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cidg {

namespace {

constexpr double kNormEps = 1e-5;
constexpr TokenId kPadId = 0;
constexpr TokenId kBosId = 2;

TensorSpec spec(std::string name, ParamRole role, std::vector<std::size_t> shape) {
  return {std::move(name), role, std::move(shape)};
}

void push_norm(std::vector<TensorSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back(spec(prefix + ".gain", ParamRole::NormGain, {d}));
  out.push_back(spec(prefix + ".offset", ParamRole::NormOffset, {d}));
}

void push_attn(std::vector<TensorSpec>& out, const std::string& prefix, std::size_t d) {
  for (const char* p : {".q", ".k", ".v", ".o"}) out.push_back(spec(prefix + p, ParamRole::Weight, {d, d}));
}

void push_ffn(std::vector<TensorSpec>& out, const std::string& prefix, std::size_t d, std::size_t f) {
  out.push_back(spec(prefix + ".w1", ParamRole::Weight, {d, f}));
  out.push_back(spec(prefix + ".b1", ParamRole::Bias, {f}));
  out.push_back(spec(prefix + ".w2", ParamRole::Weight, {f, d}));
  out.push_back(spec(prefix + ".b2", ParamRole::Bias, {d}));
}

void check_ids(std::span<const TokenId> ids, std::size_t vocab, const char* what) {
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw ModelError(std::string(what) + " token id " + std::to_string(id) + " out of range for vocabulary of " +
                       std::to_string(vocab));
}

// Length of the source without its trailing PAD run. PAD inside the real
// tokens is rejected.
std::size_t source_length(std::span<const TokenId> source) {
  std::size_t len = source.size();
  while (len > 0 && source[len - 1] == kPadId) --len;
  if (len == 0) throw ModelError("source has no non-PAD tokens");
  for (std::size_t i = 0; i < len; ++i)
    if (source[i] == kPadId) throw ModelError("PAD may only appear as a trailing run in the source");
  return len;
}

template <typename T>
void embed(const Params<T>& p, std::size_t pos_slot, std::span<const TokenId> ids, Matrix<T>& x) {
  const std::size_t d = p.config.d_model;
  x = Matrix<T>(ids.size(), d);
  const T* emb = p.data(p.layout.token_embedding);
  const T* pos = p.data(pos_slot);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const T* e = emb + static_cast<std::size_t>(ids[i]) * d;
    const T* q = pos + i * d;
    T* o = x.row(i);
    for (std::size_t j = 0; j < d; ++j) o[j] = e[j] + q[j];
  }
}

template <typename T>
void norm_forward(const Matrix<T>& x, const T* gain, const T* offset, NormTrace<T>& tr) {
  const std::size_t n = x.cols;
  tr.out = Matrix<T>(x.rows, n);
  tr.xhat = Matrix<T>(x.rows, n);
  tr.rstd.assign(x.rows, T(0));
  for (std::size_t i = 0; i < x.rows; ++i) {
    const T* r = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += static_cast<double>(r[j]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = static_cast<double>(r[j]) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kNormEps);
    tr.rstd[i] = static_cast<T>(rstd);
    T* xh = tr.xhat.row(i);
    T* o = tr.out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = static_cast<T>((static_cast<double>(r[j]) - mean) * rstd);
      o[j] = gain[j] * xh[j] + offset[j];
    }
  }
}

// dx += d(norm)/dx applied to dy.
template <typename T>
void norm_backward(const Matrix<T>& dy, const NormTrace<T>& tr, const T* gain, T* dgain, T* doffset, Matrix<T>& dx) {
  const std::size_t n = dy.cols;
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const T* g = dy.row(i);
    const T* xh = tr.xhat.row(i);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dgain[j] += g[j] * xh[j];
      doffset[j] += g[j];
      dxhat[j] = static_cast<double>(g[j]) * static_cast<double>(gain[j]);
      m1 += dxhat[j];
      m2 += dxhat[j] * static_cast<double>(xh[j]);
    }
    m1 /= static_cast<double>(n);
    m2 /= static_cast<double>(n);
    const double rstd = static_cast<double>(tr.rstd[i]);
    T* o = dx.row(i);
    for (std::size_t j = 0; j < n; ++j)
      o[j] += static_cast<T>(rstd * (dxhat[j] - m1 - static_cast<double>(xh[j]) * m2));
  }
}

// Attention of one query row over keys [0, visible). `probs` receives the
// per-head weights (head h at h * visible).
template <typename T>
void attend_row(const T* q, const Matrix<T>& k, const Matrix<T>& v, std::size_t visible, std::size_t heads,
                std::vector<T>& probs, T* out) {
  const std::size_t d = k.cols;
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  probs.assign(heads * visible, T(0));
  std::fill(out, out + d, T(0));
  for (std::size_t h = 0; h < heads; ++h) {
    T* ph = probs.data() + h * visible;
    const T* qh = q + h * dh;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < visible; ++j) {
      ph[j] = dot(qh, k.row(j) + h * dh, dh) * scale;
      mx = std::max(mx, ph[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      const double e = std::exp(static_cast<double>(ph[j] - mx));
      ph[j] = static_cast<T>(e);
      sum += e;
    }
    T* oh = out + h * dh;
    for (std::size_t j = 0; j < visible; ++j) {
      ph[j] = static_cast<T>(static_cast<double>(ph[j]) / sum);
      const T pj = ph[j];
      const T* vj = v.row(j) + h * dh;
      for (std::size_t c = 0; c < dh; ++c) oh[c] += pj * vj[c];
    }
  }
}

template <typename T>
void make_dropout(Rng* rng, double rate, Matrix<T>& out, std::vector<T>& drop) {
  drop.clear();
  if (!rng || rate <= 0.0) return;
  drop.resize(out.data.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < drop.size(); ++i) {
    drop[i] = rng->uniform() < rate ? T(0) : keep_scale;
    out.data[i] *= drop[i];
  }
}

template <typename T>
void attn_forward(const Params<T>& p, const AttnSlots& s, const Matrix<T>& xq, const Matrix<T>& xkv,
                  std::size_t key_len, bool causal, AttnTrace<T>& tr, Rng* rng) {
  const std::size_t d = p.config.d_model;
  const std::size_t heads = p.config.n_heads;
  matmul(xq, p.data(s.q), d, tr.q);
  matmul(xkv, p.data(s.k), d, tr.k);
  matmul(xkv, p.data(s.v), d, tr.v);
  tr.probs.assign(heads, Matrix<T>(xq.rows, xkv.rows));
  tr.visible.assign(xq.rows, 0);
  tr.mixed = Matrix<T>(xq.rows, d);
  std::vector<T> scratch;
  for (std::size_t i = 0; i < xq.rows; ++i) {
    const std::size_t vis = causal ? std::min(i + 1, key_len) : key_len;
    tr.visible[i] = vis;
    attend_row(tr.q.row(i), tr.k, tr.v, vis, heads, scratch, tr.mixed.row(i));
    for (std::size_t h = 0; h < heads; ++h)
      std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(h * vis),
                scratch.begin() + static_cast<std::ptrdiff_t>((h + 1) * vis), tr.probs[h].row(i));
  }
  matmul(tr.mixed, p.data(s.o), d, tr.out);
  make_dropout(rng, p.config.dropout, tr.out, tr.drop);
}

// Returns nothing; adds into dxq and dxkv (which may alias).
template <typename T>
void attn_backward(const Params<T>& p, const AttnSlots& s, const AttnTrace<T>& tr, const Matrix<T>& xq,
                   const Matrix<T>& xkv, const Matrix<T>& dout, Params<T>& grads, Matrix<T>& dxq, Matrix<T>& dxkv) {
  const std::size_t d = p.config.d_model;
  const std::size_t heads = p.config.n_heads;
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Matrix<T> g = dout;
  if (!tr.drop.empty())
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= tr.drop[i];

  accum_at_b(tr.mixed, g, grads.data(s.o));
  Matrix<T> dmixed(g.rows, d);
  accum_matmul_bt(g, p.data(s.o), dmixed);

  Matrix<T> dq(xq.rows, d), dk(xkv.rows, d), dv(xkv.rows, d);
  std::vector<T> dp;
  for (std::size_t i = 0; i < xq.rows; ++i) {
    const std::size_t vis = tr.visible[i];
    dp.assign(vis, T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      const T* ph = tr.probs[h].row(i);
      const T* gm = dmixed.row(i) + h * dh;
      T sum = T(0);
      for (std::size_t j = 0; j < vis; ++j) {
        dp[j] = dot(gm, tr.v.row(j) + h * dh, dh);
        sum += ph[j] * dp[j];
        T* dvj = dv.row(j) + h * dh;
        for (std::size_t c = 0; c < dh; ++c) dvj[c] += ph[j] * gm[c];
      }
      T* dqi = dq.row(i) + h * dh;
      const T* qi = tr.q.row(i) + h * dh;
      for (std::size_t j = 0; j < vis; ++j) {
        const T ds = ph[j] * (dp[j] - sum) * scale;
        if (ds == T(0)) continue;
        const T* kj = tr.k.row(j) + h * dh;
        T* dkj = dk.row(j) + h * dh;
        for (std::size_t c = 0; c < dh; ++c) {
          dqi[c] += ds * kj[c];
          dkj[c] += ds * qi[c];
        }
      }
    }
  }
  accum_at_b(xq, dq, grads.data(s.q));
  accum_matmul_bt(dq, p.data(s.q), dxq);
  accum_at_b(xkv, dk, grads.data(s.k));
  accum_matmul_bt(dk, p.data(s.k), dxkv);
  accum_at_b(xkv, dv, grads.data(s.v));
  accum_matmul_bt(dv, p.data(s.v), dxkv);
}

template <typename T>
void ffn_forward(const Params<T>& p, const FfnSlots& s, const Matrix<T>& x, FfnTrace<T>& tr, Rng* rng) {
  const std::size_t d = p.config.d_model;
  const std::size_t f = p.config.d_ff;
  matmul(x, p.data(s.w1), f, tr.pre);
  const T* b1 = p.data(s.b1);
  tr.hidden = Matrix<T>(x.rows, f);
  for (std::size_t i = 0; i < x.rows; ++i) {
    T* pre = tr.pre.row(i);
    T* hid = tr.hidden.row(i);
    for (std::size_t j = 0; j < f; ++j) {
      pre[j] += b1[j];
      hid[j] = pre[j] > T(0) ? pre[j] : T(0);
    }
  }
  matmul(tr.hidden, p.data(s.w2), d, tr.out);
  const T* b2 = p.data(s.b2);
  for (std::size_t i = 0; i < x.rows; ++i) {
    T* o = tr.out.row(i);
    for (std::size_t j = 0; j < d; ++j) o[j] += b2[j];
  }
  make_dropout(rng, p.config.dropout, tr.out, tr.drop);
}

template <typename T>
void ffn_backward(const Params<T>& p, const FfnSlots& s, const FfnTrace<T>& tr, const Matrix<T>& x,
                  const Matrix<T>& dout, Params<T>& grads, Matrix<T>& dx) {
  const std::size_t f = p.config.d_ff;
  Matrix<T> g = dout;
  if (!tr.drop.empty())
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= tr.drop[i];
  accum_at_b(tr.hidden, g, grads.data(s.w2));
  T* db2 = grads.data(s.b2);
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j) db2[j] += g(i, j);
  Matrix<T> dpre(g.rows, f);
  accum_matmul_bt(g, p.data(s.w2), dpre);
  T* db1 = grads.data(s.b1);
  for (std::size_t i = 0; i < g.rows; ++i) {
    const T* pre = tr.pre.row(i);
    T* r = dpre.row(i);
    for (std::size_t j = 0; j < f; ++j) {
      if (!(pre[j] > T(0))) r[j] = T(0);
      db1[j] += r[j];
    }
  }
  accum_at_b(x, dpre, grads.data(s.w1));
  accum_matmul_bt(dpre, p.data(s.w1), dx);
}

template <typename T>
void add_into(Matrix<T>& x, const Matrix<T>& y) {
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += y.data[i];
}

template <typename T>
void encode_source(const Params<T>& p, std::span<const TokenId> source, std::size_t source_len,
                   std::vector<EncoderLayerTrace<T>>& layers, Matrix<T>& x, Rng* rng) {
  embed(p, p.layout.enc_positions, source, x);
  layers.assign(p.config.n_enc_layers, {});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const EncoderSlots& s = p.layout.encoder[l];
    auto& tr = layers[l];
    norm_forward(x, p.data(s.ln1.gain), p.data(s.ln1.offset), tr.ln1);
    attn_forward(p, s.attn, tr.ln1.out, tr.ln1.out, source_len, false, tr.attn, rng);
    add_into(x, tr.attn.out);
    norm_forward(x, p.data(s.ln2.gain), p.data(s.ln2.offset), tr.ln2);
    ffn_forward(p, s.ffn, tr.ln2.out, tr.ffn, rng);
    add_into(x, tr.ffn.out);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 4) throw ModelError("vocab_size must be at least 4");
  if (d_model == 0 || n_heads == 0) throw ModelError("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) throw ModelError("d_model must be divisible by n_heads");
  if (d_ff == 0) throw ModelError("d_ff must be positive");
  if (max_positions == 0) throw ModelError("max_positions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ModelError("dropout must lie in [0, 1)");
}

std::size_t count_params(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t enc_layer = 4 * d * d + 2 * d * f + f + d + 4 * d;
  const std::size_t dec_layer = 8 * d * d + 2 * d * f + f + d + 6 * d;
  return c.vocab_size * d + 2 * c.max_positions * d + c.n_enc_layers * enc_layer + c.n_dec_layers * dec_layer + 2 * d;
}

std::size_t TensorSpec::numel() const {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::vector<TensorSpec> tensor_inventory(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, f = c.d_ff;
  std::vector<TensorSpec> out;
  out.push_back(spec("embed.token", ParamRole::Embedding, {c.vocab_size, d}));
  out.push_back(spec("embed.enc_pos", ParamRole::Embedding, {c.max_positions, d}));
  out.push_back(spec("embed.dec_pos", ParamRole::Embedding, {c.max_positions, d}));
  for (std::size_t l = 0; l < c.n_enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    push_norm(out, p + ".ln1", d);
    push_attn(out, p + ".attn", d);
    push_norm(out, p + ".ln2", d);
    push_ffn(out, p + ".ff", d, f);
  }
  for (std::size_t l = 0; l < c.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    push_norm(out, p + ".ln1", d);
    push_attn(out, p + ".self", d);
    push_norm(out, p + ".ln2", d);
    push_attn(out, p + ".cross", d);
    push_norm(out, p + ".ln3", d);
    push_ffn(out, p + ".ff", d, f);
  }
  push_norm(out, "dec.final_norm", d);
  return out;
}

ParamLayout ParamLayout::for_config(const ModelConfig& c) {
  ParamLayout layout;
  std::size_t next = 3;
  auto norm = [&] { NormSlots s{next, next + 1}; next += 2; return s; };
  auto attn = [&] { AttnSlots s{next, next + 1, next + 2, next + 3}; next += 4; return s; };
  auto ffn = [&] { FfnSlots s{next, next + 1, next + 2, next + 3}; next += 4; return s; };
  for (std::size_t l = 0; l < c.n_enc_layers; ++l) {
    EncoderSlots s;
    s.ln1 = norm();
    s.attn = attn();
    s.ln2 = norm();
    s.ffn = ffn();
    layout.encoder.push_back(s);
  }
  for (std::size_t l = 0; l < c.n_dec_layers; ++l) {
    DecoderSlots s;
    s.ln1 = norm();
    s.self_attn = attn();
    s.ln2 = norm();
    s.cross_attn = attn();
    s.ln3 = norm();
    s.ffn = ffn();
    layout.decoder.push_back(s);
  }
  layout.final_norm = norm();
  return layout;
}

template <typename T>
Params<T> Params<T>::zeros(const ModelConfig& config) {
  Params<T> p;
  p.config = config;
  p.layout = ParamLayout::for_config(config);
  for (auto& s : tensor_inventory(config)) {
    const std::size_t n = s.numel();
    p.tensors.push_back({std::move(s), std::vector<T>(n, T(0))});
  }
  return p;
}

template <typename T>
std::size_t Params<T>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

Params<float> init_model(const ModelConfig& config, std::uint64_t seed) {
  auto p = Params<float>::zeros(config);
  Rng rng(seed);
  for (auto& t : p.tensors) {
    switch (t.spec.role) {
      case ParamRole::Embedding:
      case ParamRole::Weight:
        for (auto& v : t.values) v = static_cast<float>(0.02 * rng.normal());
        break;
      case ParamRole::NormGain:
        std::fill(t.values.begin(), t.values.end(), 1.0f);
        break;
      case ParamRole::Bias:
      case ParamRole::NormOffset:
        break;
    }
  }
  return p;
}

template <typename T>
ForwardTrace<T> forward_trace(const Params<T>& p, std::span<const TokenId> source, std::span<const TokenId> target_in,
                              Rng* rng) {
  const ModelConfig& c = p.config;
  if (source.empty()) throw ModelError("source is empty");
  if (target_in.empty()) throw ModelError("decoder input is empty");
  if (target_in[0] != kBosId) throw ModelError("decoder input must start with BOS");
  if (source.size() > c.max_positions || target_in.size() > c.max_positions)
    throw ModelError("sequence length exceeds max_positions (" + std::to_string(c.max_positions) + ")");
  check_ids(source, c.vocab_size, "source");
  check_ids(target_in, c.vocab_size, "decoder input");

  ForwardTrace<T> tr;
  tr.source.assign(source.begin(), source.end());
  tr.target_in.assign(target_in.begin(), target_in.end());
  tr.source_len = source_length(source);
  encode_source(p, source, tr.source_len, tr.encoder, tr.enc_out, rng);

  Matrix<T> y;
  embed(p, p.layout.dec_positions, target_in, y);
  tr.decoder.assign(c.n_dec_layers, {});
  for (std::size_t l = 0; l < c.n_dec_layers; ++l) {
    const DecoderSlots& s = p.layout.decoder[l];
    auto& lt = tr.decoder[l];
    norm_forward(y, p.data(s.ln1.gain), p.data(s.ln1.offset), lt.ln1);
    attn_forward(p, s.self_attn, lt.ln1.out, lt.ln1.out, target_in.size(), true, lt.self_attn, rng);
    add_into(y, lt.self_attn.out);
    norm_forward(y, p.data(s.ln2.gain), p.data(s.ln2.offset), lt.ln2);
    attn_forward(p, s.cross_attn, lt.ln2.out, tr.enc_out, tr.source_len, false, lt.cross_attn, rng);
    add_into(y, lt.cross_attn.out);
    norm_forward(y, p.data(s.ln3.gain), p.data(s.ln3.offset), lt.ln3);
    ffn_forward(p, s.ffn, lt.ln3.out, lt.ffn, rng);
    add_into(y, lt.ffn.out);
  }
  norm_forward(y, p.data(p.layout.final_norm.gain), p.data(p.layout.final_norm.offset), tr.final_norm);
  matmul_bt(tr.final_norm.out, p.data(p.layout.token_embedding), c.vocab_size, tr.logits);
  return tr;
}

template <typename T>
void backward(const Params<T>& p, const ForwardTrace<T>& tr, const Matrix<T>& dlogits, Params<T>& g) {
  const ModelConfig& c = p.config;
  const std::size_t d = c.d_model;
  const std::size_t tgt = tr.target_in.size();
  if (dlogits.rows != tgt || dlogits.cols != c.vocab_size) throw ModelError("dlogits shape mismatch");

  // Tied head: logits = h E^T.
  accum_at_b(dlogits, tr.final_norm.out, g.data(p.layout.token_embedding));
  Matrix<T> dh;
  matmul(dlogits, p.data(p.layout.token_embedding), d, dh);

  Matrix<T> dy(tgt, d);
  norm_backward(dh, tr.final_norm, p.data(p.layout.final_norm.gain), g.data(p.layout.final_norm.gain),
                g.data(p.layout.final_norm.offset), dy);

  Matrix<T> denc(tr.enc_out.rows, d);
  for (std::size_t l = c.n_dec_layers; l-- > 0;) {
    const DecoderSlots& s = p.layout.decoder[l];
    const auto& lt = tr.decoder[l];

    Matrix<T> dsub(tgt, d);
    ffn_backward(p, s.ffn, lt.ffn, lt.ln3.out, dy, g, dsub);
    norm_backward(dsub, lt.ln3, p.data(s.ln3.gain), g.data(s.ln3.gain), g.data(s.ln3.offset), dy);

    dsub = Matrix<T>(tgt, d);
    attn_backward(p, s.cross_attn, lt.cross_attn, lt.ln2.out, tr.enc_out, dy, g, dsub, denc);
    norm_backward(dsub, lt.ln2, p.data(s.ln2.gain), g.data(s.ln2.gain), g.data(s.ln2.offset), dy);

    dsub = Matrix<T>(tgt, d);
    attn_backward(p, s.self_attn, lt.self_attn, lt.ln1.out, lt.ln1.out, dy, g, dsub, dsub);
    norm_backward(dsub, lt.ln1, p.data(s.ln1.gain), g.data(s.ln1.gain), g.data(s.ln1.offset), dy);
  }
  {
    T* demb = g.data(p.layout.token_embedding);
    T* dpos = g.data(p.layout.dec_positions);
    for (std::size_t i = 0; i < tgt; ++i) {
      T* e = demb + static_cast<std::size_t>(tr.target_in[i]) * d;
      T* q = dpos + i * d;
      const T* r = dy.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        e[j] += r[j];
        q[j] += r[j];
      }
    }
  }

  const std::size_t src = tr.source.size();
  Matrix<T>& dx = denc;
  for (std::size_t l = c.n_enc_layers; l-- > 0;) {
    const EncoderSlots& s = p.layout.encoder[l];
    const auto& lt = tr.encoder[l];
    Matrix<T> dsub(src, d);
    ffn_backward(p, s.ffn, lt.ffn, lt.ln2.out, dx, g, dsub);
    norm_backward(dsub, lt.ln2, p.data(s.ln2.gain), g.data(s.ln2.gain), g.data(s.ln2.offset), dx);
    dsub = Matrix<T>(src, d);
    attn_backward(p, s.attn, lt.attn, lt.ln1.out, lt.ln1.out, dx, g, dsub, dsub);
    norm_backward(dsub, lt.ln1, p.data(s.ln1.gain), g.data(s.ln1.gain), g.data(s.ln1.offset), dx);
  }
  T* demb = g.data(p.layout.token_embedding);
  T* dpos = g.data(p.layout.enc_positions);
  for (std::size_t i = 0; i < src; ++i) {
    T* e = demb + static_cast<std::size_t>(tr.source[i]) * d;
    T* q = dpos + i * d;
    const T* r = dx.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      e[j] += r[j];
      q[j] += r[j];
    }
  }
}

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const Params<T>& params, std::span<const TokenId> source)
    : params_(&params) {
  const ModelConfig& c = params.config;
  if (source.empty()) throw ModelError("source is empty");
  if (source.size() > c.max_positions)
    throw ModelError("sequence length exceeds max_positions (" + std::to_string(c.max_positions) + ")");
  check_ids(source, c.vocab_size, "source");

  auto state = std::make_shared<EncoderState>();
  state->source_len = source_length(source);
  std::vector<EncoderLayerTrace<T>> layers;
  Matrix<T> enc_out;
  encode_source(params, source, state->source_len, layers, enc_out, nullptr);
  for (const auto& s : params.layout.decoder) {
    Matrix<T> k, v;
    matmul(enc_out, params.data(s.cross_attn.k), c.d_model, k);
    matmul(enc_out, params.data(s.cross_attn.v), c.d_model, v);
    state->cross_k.push_back(std::move(k));
    state->cross_v.push_back(std::move(v));
  }
  encoder_ = std::move(state);
  self_k_.assign(c.n_dec_layers, Matrix<T>(0, c.d_model));
  self_v_.assign(c.n_dec_layers, Matrix<T>(0, c.d_model));
}

template <typename T>
std::vector<T> IncrementalDecoder<T>::step(TokenId token) {
  const Params<T>& p = *params_;
  const ModelConfig& c = p.config;
  const std::size_t d = c.d_model;
  if (position_ >= c.max_positions)
    throw ModelError("decoder position exceeds max_positions (" + std::to_string(c.max_positions) + ")");
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size)
    throw ModelError("decoder input token id " + std::to_string(token) + " out of range");

  Matrix<T> x(1, d);
  {
    const T* e = p.data(p.layout.token_embedding) + static_cast<std::size_t>(token) * d;
    const T* q = p.data(p.layout.dec_positions) + position_ * d;
    for (std::size_t j = 0; j < d; ++j) x.data[j] = e[j] + q[j];
  }
  NormTrace<T> nt;
  Matrix<T> q, k, v, mixed(1, d), out;
  std::vector<T> scratch;
  auto append_row = [](Matrix<T>& m, const Matrix<T>& r) {
    m.data.insert(m.data.end(), r.data.begin(), r.data.end());
    ++m.rows;
  };
  for (std::size_t l = 0; l < c.n_dec_layers; ++l) {
    const DecoderSlots& s = p.layout.decoder[l];
    norm_forward(x, p.data(s.ln1.gain), p.data(s.ln1.offset), nt);
    matmul(nt.out, p.data(s.self_attn.q), d, q);
    matmul(nt.out, p.data(s.self_attn.k), d, k);
    matmul(nt.out, p.data(s.self_attn.v), d, v);
    append_row(self_k_[l], k);
    append_row(self_v_[l], v);
    attend_row(q.row(0), self_k_[l], self_v_[l], position_ + 1, c.n_heads, scratch, mixed.row(0));
    matmul(mixed, p.data(s.self_attn.o), d, out);
    add_into(x, out);

    norm_forward(x, p.data(s.ln2.gain), p.data(s.ln2.offset), nt);
    matmul(nt.out, p.data(s.cross_attn.q), d, q);
    attend_row(q.row(0), encoder_->cross_k[l], encoder_->cross_v[l], encoder_->source_len, c.n_heads, scratch,
               mixed.row(0));
    matmul(mixed, p.data(s.cross_attn.o), d, out);
    add_into(x, out);

    norm_forward(x, p.data(s.ln3.gain), p.data(s.ln3.offset), nt);
    FfnTrace<T> ft;
    ffn_forward(p, s.ffn, nt.out, ft, nullptr);
    add_into(x, ft.out);
  }
  norm_forward(x, p.data(p.layout.final_norm.gain), p.data(p.layout.final_norm.offset), nt);
  Matrix<T> logits;
  matmul_bt(nt.out, p.data(p.layout.token_embedding), c.vocab_size, logits);
  ++position_;
  return std::move(logits.data);
}

template <typename T>
std::vector<double> log_softmax(const T* logits, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

template struct Params<float>;
template struct Params<double>;
template ForwardTrace<float> forward_trace(const Params<float>&, std::span<const TokenId>, std::span<const TokenId>,
                                           Rng*);
template ForwardTrace<double> forward_trace(const Params<double>&, std::span<const TokenId>,
                                            std::span<const TokenId>, Rng*);
template void backward(const Params<float>&, const ForwardTrace<float>&, const Matrix<float>&, Params<float>&);
template void backward(const Params<double>&, const ForwardTrace<double>&, const Matrix<double>&, Params<double>&);
template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;
template std::vector<double> log_softmax(const float*, std::size_t);
template std::vector<double> log_softmax(const double*, std::size_t);

}  // namespace cidg
