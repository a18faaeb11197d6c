#include "cidg/chat.hpp"

#include <utility>

namespace cidg {

ChatSession::ChatSession(const SequenceScorer& model, const Vocabulary& vocab, DecodeConfig decode,
                         std::size_t max_src_len)
    : model_(&model), vocab_(&vocab), decode_(std::move(decode)), max_src_len_(max_src_len) {
  decode_.validate();
}

void ChatSession::set_persona(const std::string& text) {
  persona_.clear();
  if (!trim(text).empty()) persona_.push_back(trim(text));
}

DialogueExample ChatSession::pending_example() const {
  DialogueExample ex;
  ex.dialogue_id = "chat";
  ex.turn_index = turns_.size();
  ex.persona = persona_;
  ex.turns = turns_;
  return ex;
}

Generation ChatSession::respond(const std::string& user_text) {
  turns_.push_back({Speaker::A, user_text});
  try {
    Generation g = generate_iterative(*model_, pending_example(), *vocab_, decode_, max_src_len_);
    turns_.push_back({Speaker::B, g.response});
    return g;
  } catch (...) {
    turns_.pop_back();
    throw;
  }
}

void run_chat(ChatSession& session, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string text = trim(line);
    if (text.empty()) continue;
    if (text == "/quit") break;
    if (text == "/reset") {
      session.reset();
      out << "[context cleared]\n";
      continue;
    }
    if (text == "/persona" || text.rfind("/persona ", 0) == 0) {
      session.set_persona(text.substr(8));
      out << (session.persona().empty() ? "[persona cleared]\n" : "[persona set]\n");
      continue;
    }
    if (text.front() == '/') {
      out << "unknown command " << text << " (commands: /reset, /persona <text>, /quit)\n";
      continue;
    }
    try {
      const Generation g = session.respond(text);
      out << "instruction: " << g.instruction.value_or("") << "\n";
      out << "bot: " << g.response << "\n";
    } catch (const Error& e) {
      out << "error: " << e.what() << "\n";
    }
    out.flush();
  }
}

}  // namespace cidg
