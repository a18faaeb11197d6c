#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cidg/corpus.hpp"
#include "cidg/decoding.hpp"
#include "cidg/tokenizer.hpp"

namespace cidg {

/// Running conversation with the dialogue model. The user speaks as A and the
/// model as B; every model turn uses iterative inference.
class ChatSession {
 public:
  ChatSession(const SequenceScorer& model, const Vocabulary& vocab, DecodeConfig decode, std::size_t max_src_len);

  /// Adds the user turn and the model reply. On a decoding or formatting
  /// error the user turn is withdrawn and the error rethrown.
  Generation respond(const std::string& user_text);

  void reset() { turns_.clear(); }
  /// Single persona sentence; empty text clears it.
  void set_persona(const std::string& text);

  /// Context the model would see for its next turn.
  DialogueExample pending_example() const;
  const std::vector<Turn>& turns() const { return turns_; }
  const std::vector<std::string>& persona() const { return persona_; }

 private:
  const SequenceScorer* model_;
  const Vocabulary* vocab_;
  DecodeConfig decode_;
  std::size_t max_src_len_;
  std::vector<std::string> persona_;
  std::vector<Turn> turns_;
};

/// Line protocol: plain lines are user turns; `/reset`, `/persona <text>` and
/// `/quit` are commands. Each model turn prints an `instruction:` line and a
/// `bot:` line. Errors are printed and the session continues.
void run_chat(ChatSession& session, std::istream& in, std::ostream& out);

}  // namespace cidg
