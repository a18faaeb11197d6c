#include "cidg/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cidg/corpus.hpp"

namespace cidg {

namespace {

std::string strip(std::string_view s) { return trim(std::string(s)); }

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double to_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  return out;
}

std::string real_text(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

InstructionMode parse_instruction_mode(std::string_view text) {
  std::string s(text);
  for (auto& c : s)
    if (c == '_') c = '-';
  if (s == "none") return InstructionMode::None;
  if (s == "fixed") return InstructionMode::Fixed;
  if (s == "generated-naive") return InstructionMode::GeneratedNaive;
  if (s == "generated-iterative") return InstructionMode::GeneratedIterative;
  if (s == "oracle") return InstructionMode::Oracle;
  throw ConfigError("unknown instruction mode '" + std::string(text) +
                    "' (expected none, fixed, generated-naive, generated-iterative or oracle)");
}

std::string to_string(InstructionMode mode) {
  switch (mode) {
    case InstructionMode::None: return "none";
    case InstructionMode::Fixed: return "fixed";
    case InstructionMode::GeneratedNaive: return "generated-naive";
    case InstructionMode::GeneratedIterative: return "generated-iterative";
    case InstructionMode::Oracle: return "oracle";
  }
  return "?";
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  if (const char* root = std::getenv("CIDG_DATA_DIR"); root && *root) c.data_dir = root;
  return c;
}

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : data_dir / p;
}

TrainConfig RunConfig::instgen_train() const {
  TrainConfig t = train;
  t.epochs = instgen_epochs;
  t.seed = seed;
  return t;
}

TrainConfig RunConfig::dialog_train() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

void RunConfig::validate() const {
  model.validate();
  instgen_train().validate();
  dialog_train().validate();
  decode.validate();
  if (decode.max_len > model.max_positions)
    throw ConfigError("decode.max_len exceeds model.max_positions");
  if (train.max_src_len > model.max_positions)
    throw ConfigError("train.max_src_len exceeds model.max_positions");
  if (mode == InstructionMode::Fixed && (fixed_instructions.size() < 3 || fixed_instructions.size() > 5))
    throw ConfigError("fixed mode needs 3 to 5 fixed instructions, got " + std::to_string(fixed_instructions.size()));
  for (const auto& s : fixed_instructions)
    if (trim(s).empty()) throw ConfigError("fixed_instruction entries must be non-empty");
}

void apply_setting(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string v = strip(raw);
  const std::string k = strip(key);
  if (k == "data_dir") c.data_dir = v;
  else if (k == "dialogues") c.dialogues = v;
  else if (k == "test_dialogues") c.test_dialogues = v;
  else if (k == "triplets") c.triplets = v;
  else if (k == "labeled") c.labeled = v;
  else if (k == "instgen_checkpoint") c.instgen_checkpoint = v;
  else if (k == "dialog_checkpoint") c.dialog_checkpoint = v;
  else if (k == "generations") c.generations = v;
  else if (k == "report") c.report = v;
  else if (k == "mode") c.mode = parse_instruction_mode(v);
  else if (k == "seed") c.seed = to_u64(k, v);
  else if (k == "fixed_instruction") c.fixed_instructions.push_back(v);
  else if (k == "vocab_min_freq") c.vocab_min_freq = to_size(k, v);
  else if (k == "instgen_epochs") c.instgen_epochs = to_size(k, v);
  else if (k == "model.vocab_size") c.model.vocab_size = to_size(k, v);
  else if (k == "model.d_model") c.model.d_model = to_size(k, v);
  else if (k == "model.n_heads") c.model.n_heads = to_size(k, v);
  else if (k == "model.n_enc_layers") c.model.n_enc_layers = to_size(k, v);
  else if (k == "model.n_dec_layers") c.model.n_dec_layers = to_size(k, v);
  else if (k == "model.d_ff") c.model.d_ff = to_size(k, v);
  else if (k == "model.max_positions") c.model.max_positions = to_size(k, v);
  else if (k == "model.dropout") c.model.dropout = to_real(k, v);
  else if (k == "train.learning_rate") c.train.learning_rate = to_real(k, v);
  else if (k == "train.epochs") c.train.epochs = to_size(k, v);
  else if (k == "train.batch_size") c.train.batch_size = to_size(k, v);
  else if (k == "train.warmup_ratio") c.train.warmup_ratio = to_real(k, v);
  else if (k == "train.weight_decay") c.train.weight_decay = to_real(k, v);
  else if (k == "train.grad_clip_norm") c.train.grad_clip_norm = to_real(k, v);
  else if (k == "train.max_src_len") c.train.max_src_len = to_size(k, v);
  else if (k == "decode.beam_size") c.decode.beam_size = to_size(k, v);
  else if (k == "decode.no_repeat_ngram") c.decode.no_repeat_ngram = to_size(k, v);
  else if (k == "decode.max_len") c.decode.max_len = to_size(k, v);
  else if (k == "decode.length_alpha") c.decode.length_alpha = to_real(k, v);
  else throw ConfigError("unknown config key '" + k + "'");
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool fixed_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key == "fixed_instruction" && !fixed_seen) {
      base.fixed_instructions.clear();
      fixed_seen = true;
    }
    try {
      apply_setting(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  os << "data_dir = " << c.data_dir.string() << "\n"
     << "dialogues = " << c.dialogues.string() << "\n"
     << "test_dialogues = " << c.test_dialogues.string() << "\n"
     << "triplets = " << c.triplets.string() << "\n"
     << "labeled = " << c.labeled.string() << "\n"
     << "instgen_checkpoint = " << c.instgen_checkpoint.string() << "\n"
     << "dialog_checkpoint = " << c.dialog_checkpoint.string() << "\n"
     << "generations = " << c.generations.string() << "\n"
     << "report = " << c.report.string() << "\n"
     << "mode = " << to_string(c.mode) << "\n"
     << "seed = " << c.seed << "\n";
  for (const auto& s : c.fixed_instructions) os << "fixed_instruction = " << s << "\n";
  os << "vocab_min_freq = " << c.vocab_min_freq << "\n"
     << "instgen_epochs = " << c.instgen_epochs << "\n"
     << "model.vocab_size = " << c.model.vocab_size << "\n"
     << "model.d_model = " << c.model.d_model << "\n"
     << "model.n_heads = " << c.model.n_heads << "\n"
     << "model.n_enc_layers = " << c.model.n_enc_layers << "\n"
     << "model.n_dec_layers = " << c.model.n_dec_layers << "\n"
     << "model.d_ff = " << c.model.d_ff << "\n"
     << "model.max_positions = " << c.model.max_positions << "\n"
     << "model.dropout = " << real_text(c.model.dropout) << "\n"
     << "train.learning_rate = " << real_text(c.train.learning_rate) << "\n"
     << "train.epochs = " << c.train.epochs << "\n"
     << "train.batch_size = " << c.train.batch_size << "\n"
     << "train.warmup_ratio = " << real_text(c.train.warmup_ratio) << "\n"
     << "train.weight_decay = " << real_text(c.train.weight_decay) << "\n"
     << "train.grad_clip_norm = " << real_text(c.train.grad_clip_norm) << "\n"
     << "train.max_src_len = " << c.train.max_src_len << "\n"
     << "decode.beam_size = " << c.decode.beam_size << "\n"
     << "decode.no_repeat_ngram = " << c.decode.no_repeat_ngram << "\n"
     << "decode.max_len = " << c.decode.max_len << "\n"
     << "decode.length_alpha = " << real_text(c.decode.length_alpha) << "\n";
  return os.str();
}

}  // namespace cidg
