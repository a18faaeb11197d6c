#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "cidg/model.hpp"
#include "cidg/tokenizer.hpp"
#include "cidg/training.hpp"

namespace cidg {

inline constexpr char kCheckpointMagic[4] = {'C', 'I', 'D', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { Io, NotACheckpoint, UnsupportedVersion, Truncated, Inconsistent };

  CheckpointError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointMeta {
  std::string kind;  // "instgen" or "dialog"
  std::string mode;  // training mode label
  std::uint64_t seed = 0;
  std::size_t epochs_completed = 0;
  double final_loss = 0.0;

  bool operator==(const CheckpointMeta&) const = default;
};

/// Self-contained model snapshot. Layout on disk:
///   "CIDG" | u32 version | u32 header length | header JSON (UTF-8)
///   | per tensor: u32 name length, name, u32 rank, u32 dims..., f32 values
/// All integers and floats little-endian. The header carries the model and
/// training configs, metadata, the tensor count and the vocabulary text.
struct Checkpoint {
  TrainConfig train;
  Vocabulary vocab;
  Params<float> params;
  CheckpointMeta meta;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace cidg
