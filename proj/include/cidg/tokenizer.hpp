#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cidg/common.hpp"

namespace cidg {

// Fixed ids shared by every vocabulary.
namespace tok {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kGenResp = 4;
inline constexpr TokenId kGenInst = 5;
inline constexpr TokenId kMask0 = 6;
inline constexpr TokenId kCtx = 7;
inline constexpr TokenId kRsp = 8;
inline constexpr TokenId kIns = 9;
inline constexpr TokenId kPer = 10;
inline constexpr TokenId kSep = 11;
inline constexpr TokenId kSpkA = 12;
inline constexpr TokenId kSpkB = 13;
inline constexpr std::size_t kSpecialCount = 14;

inline constexpr std::array<std::string_view, kSpecialCount> kSpecialTokens = {
    "<pad>", "<unk>",  "<bos>",  "<eos>",  "<gen_resp>", "<gen_inst>", "<mask_0>",
    "[CTX]", "[RSP]",  "[INS]",  "[PER]",  "[SEP]",      "[SPKA]",     "[SPKB]"};

inline constexpr bool is_special(TokenId id) {
  return id >= 0 && static_cast<std::size_t>(id) < kSpecialCount;
}
}  // namespace tok

/// Lowercases ASCII letters, splits every ASCII punctuation character into its
/// own token and splits on whitespace. Bytes >= 0x80 are kept as word bytes.
/// The output never contains a special or marker literal, since each of those
/// contains punctuation.
std::vector<std::string> normalize(std::string_view text);

/// Word-level vocabulary with the fixed special block at ids 0-13.
class Vocabulary {
 public:
  /// Specials only.
  Vocabulary();

  /// Takes an explicit token list (id = position). Throws Error when the
  /// special block is wrong or a token repeats.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  /// UNK for unknown tokens.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line, line number = id.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Admits normalized tokens with count >= min_freq in descending frequency
/// (ties lexicographic) until the vocabulary holds max_size entries.
Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_freq, std::size_t max_size);

/// Normalizes and looks up; unknown words map to UNK. No BOS/EOS framing.
std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text);

/// Like encode, but whitespace-delimited words that are exactly a marker
/// literal ("[CTX]", "<gen_resp>", ...) map to their marker id. Used for text
/// that was produced by serialize_context.
std::vector<TokenId> encode_markup(const Vocabulary& vocab, std::string_view text);

/// Drops special and marker tokens, joins the rest with single spaces.
/// Throws Error on an out-of-range id.
std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids);

}  // namespace cidg
