#include "cidg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cidg {

namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(Kind::Truncated, "checkpoint is truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},     {"d_model", c.d_model},         {"n_heads", c.n_heads},
          {"n_enc_layers", c.n_enc_layers}, {"n_dec_layers", c.n_dec_layers}, {"d_ff", c.d_ff},
          {"max_positions", c.max_positions}, {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_enc_layers = j.at("n_enc_layers").get<std::size_t>();
  c.n_dec_layers = j.at("n_dec_layers").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"warmup_ratio", c.warmup_ratio},
          {"weight_decay", c.weight_decay},   {"adam_eps", c.adam_eps},
          {"adam_beta1", c.adam_beta1},       {"adam_beta2", c.adam_beta2},
          {"grad_clip_norm", c.grad_clip_norm}, {"max_src_len", c.max_src_len},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.warmup_ratio = j.at("warmup_ratio").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  c.max_src_len = j.at("max_src_len").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.params.config.vocab_size != ckpt.vocab.size())
    throw CheckpointError(Kind::Inconsistent, "model vocab_size " + std::to_string(ckpt.params.config.vocab_size) +
                                                  " does not match vocabulary size " +
                                                  std::to_string(ckpt.vocab.size()));
  const json header = {{"model_config", to_json(ckpt.params.config)},
                       {"train_config", to_json(ckpt.train)},
                       {"metadata",
                        {{"kind", ckpt.meta.kind},
                         {"mode", ckpt.meta.mode},
                         {"seed", ckpt.meta.seed},
                         {"epochs_completed", ckpt.meta.epochs_completed},
                         {"final_loss", ckpt.meta.final_loss}}},
                       {"tensor_count", ckpt.params.tensors.size()},
                       {"vocabulary", ckpt.vocab.to_text()}};
  const std::string blob = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out += blob;
  for (const auto& t : ckpt.params.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.spec.name.size()));
    out += t.spec.name;
    put_u32(out, static_cast<std::uint32_t>(t.spec.shape.size()));
    for (auto dim : t.spec.shape) put_u32(out, static_cast<std::uint32_t>(dim));
    for (float v : t.values) put_f32(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(Kind::NotACheckpoint, "not a checkpoint (bad magic bytes)");
  Reader in(bytes);
  in.str(4);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::UnsupportedVersion, "unsupported checkpoint version " + std::to_string(version));

  const std::string blob = in.str(in.u32());
  Checkpoint ckpt;
  ModelConfig config;
  std::size_t tensor_count = 0;
  try {
    const json header = json::parse(blob);
    config = model_config_from_json(header.at("model_config"));
    ckpt.train = train_config_from_json(header.at("train_config"));
    const json& meta = header.at("metadata");
    ckpt.meta.kind = meta.at("kind").get<std::string>();
    ckpt.meta.mode = meta.at("mode").get<std::string>();
    ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.meta.epochs_completed = meta.at("epochs_completed").get<std::size_t>();
    ckpt.meta.final_loss = meta.at("final_loss").get<double>();
    tensor_count = header.at("tensor_count").get<std::size_t>();
    std::string vocab_text = header.at("vocabulary").get<std::string>();
    if (!vocab_text.empty() && vocab_text.back() == '\n') vocab_text.pop_back();
    ckpt.vocab = Vocabulary::from_text(vocab_text);
    config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::Inconsistent, std::string("invalid checkpoint header: ") + e.what());
  }
  if (config.vocab_size != ckpt.vocab.size())
    throw CheckpointError(Kind::Inconsistent, "model vocab_size does not match stored vocabulary");

  ckpt.params = Params<float>::zeros(config);
  if (tensor_count != ckpt.params.tensors.size())
    throw CheckpointError(Kind::Inconsistent, "checkpoint holds " + std::to_string(tensor_count) +
                                                  " tensors, config implies " +
                                                  std::to_string(ckpt.params.tensors.size()));
  for (auto& t : ckpt.params.tensors) {
    const std::string name = in.str(in.u32());
    if (name != t.spec.name)
      throw CheckpointError(Kind::Inconsistent, "expected tensor '" + t.spec.name + "', found '" + name + "'");
    const std::uint32_t rank = in.u32();
    std::vector<std::size_t> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(in.u32());
    if (shape != t.spec.shape) throw CheckpointError(Kind::Inconsistent, "shape mismatch for tensor '" + name + "'");
    for (auto& v : t.values) v = in.f32();
  }
  if (!in.done()) throw CheckpointError(Kind::Inconsistent, "trailing bytes after the last tensor");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(Kind::Io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot read checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace cidg
