#include "cidg/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace cidg {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

std::vector<std::string> normalize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else if (c >= 'A' && c <= 'Z') {
      word.push_back(static_cast<char>(c - 'A' + 'a'));
    } else {
      word.push_back(ch);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.empty()) tokens.assign(tok::kSpecialTokens.begin(), tok::kSpecialTokens.end());
  if (tokens.size() < tok::kSpecialCount) throw Error("vocabulary is missing the special token block");
  for (std::size_t i = 0; i < tok::kSpecialCount; ++i) {
    if (tokens[i] != tok::kSpecialTokens[i])
      throw Error("vocabulary id " + std::to_string(i) + " must be " + std::string(tok::kSpecialTokens[i]) +
                  ", found '" + tokens[i] + "'");
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw Error("vocabulary token " + std::to_string(i) + " is empty");
    if (!index_.emplace(tokens[i], static_cast<TokenId>(i)).second)
      throw Error("vocabulary token '" + tokens[i] + "' appears twice");
  }
  tokens_ = std::move(tokens);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? tok::kUnk : it->second;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(std::move(line));
    pos = nl + 1;
  }
  if (tokens.empty()) throw Error("vocabulary text is empty");
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary " + path.string());
  out << to_text();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_freq, std::size_t max_size) {
  if (max_size < tok::kSpecialCount)
    throw Error("max_size must be at least " + std::to_string(tok::kSpecialCount));
  if (min_freq < 1) throw Error("min_freq must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& w : normalize(text)) ++counts[w];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, n] : counts)
    if (n >= min_freq) ranked.emplace_back(w, n);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens(tok::kSpecialTokens.begin(), tok::kSpecialTokens.end());
  for (auto& [w, n] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(w);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& w : normalize(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::vector<TokenId> encode_markup(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && is_space(static_cast<unsigned char>(text[pos]))) ++pos;
    std::size_t end = pos;
    while (end < text.size() && !is_space(static_cast<unsigned char>(text[end]))) ++end;
    if (end == pos) break;
    const std::string_view word = text.substr(pos, end - pos);
    const auto marker = std::find(tok::kSpecialTokens.begin() + tok::kGenResp, tok::kSpecialTokens.end(), word);
    if (marker != tok::kSpecialTokens.end()) {
      ids.push_back(static_cast<TokenId>(marker - tok::kSpecialTokens.begin()));
    } else {
      for (const auto& w : normalize(word)) ids.push_back(vocab.id(w));
    }
    pos = end;
  }
  return ids;
}

std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& t = vocab.token(id);
    if (tok::is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace cidg
