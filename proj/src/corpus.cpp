#include "cidg/corpus.hpp"

#include <fstream>
#include <map>
#include <set>
#include <utility>

#include <json.hpp>

namespace cidg {

namespace {

using nlohmann::json;

std::string speaker_name(Speaker s) { return s == Speaker::A ? "A" : "B"; }

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw CorpusError(std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_string()) throw CorpusError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

json parse_object(const std::string& line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CorpusError(std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw CorpusError("record is not a JSON object");
  return obj;
}

// Applies `parse` to every non-blank line, tagging errors with the line number.
template <typename Record, typename Parse>
std::vector<Record> load_lines(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    try {
      records.push_back(parse(line));
    } catch (const CorpusError& e) {
      throw CorpusError(path.string() + ": " + e.what(), line_no);
    }
  }
  return records;
}

template <typename Record>
void save_lines(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& r : records) out << to_json_line(r) << '\n';
  if (!out) throw CorpusError("write failed for " + path.string());
}

}  // namespace

std::string trim(const std::string& text) {
  const char* ws = " \t\r\n\f\v";
  const auto first = text.find_first_not_of(ws);
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(ws);
  return text.substr(first, last - first + 1);
}

void validate(const Dialogue& d) {
  if (d.id.empty()) throw CorpusError("dialogue id is empty");
  if (d.turns.size() < 2)
    throw CorpusError("dialogue '" + d.id + "' has " + std::to_string(d.turns.size()) +
                      " turns; at least 2 required");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const Speaker expected = i % 2 == 0 ? Speaker::A : Speaker::B;
    if (d.turns[i].speaker != expected)
      throw CorpusError("dialogue '" + d.id + "' turn " + std::to_string(i) + ": expected speaker " +
                        speaker_name(expected));
    if (trim(d.turns[i].text).empty())
      throw CorpusError("dialogue '" + d.id + "' turn " + std::to_string(i) + " has empty text");
  }
}

void validate(const InstructionTriplet& t) {
  if (trim(t.instruction).empty()) throw CorpusError("triplet instruction is empty");
  if (trim(t.output).empty()) throw CorpusError("triplet output is empty");
}

Dialogue parse_dialogue(const std::string& line) {
  const json obj = parse_object(line);
  Dialogue d;
  d.id = require_string(obj, "id");
  if (auto it = obj.find("persona"); it != obj.end()) {
    if (!it->is_array()) throw CorpusError("field 'persona' must be an array");
    for (const auto& p : *it) {
      if (!p.is_string()) throw CorpusError("persona entries must be strings");
      d.persona.push_back(p.get<std::string>());
    }
  }
  const json& turns = require(obj, "turns");
  if (!turns.is_array()) throw CorpusError("field 'turns' must be an array");
  for (const auto& t : turns) {
    if (!t.is_object()) throw CorpusError("turn must be an object");
    const std::string speaker = require_string(t, "speaker");
    if (speaker != "A" && speaker != "B") throw CorpusError("speaker must be \"A\" or \"B\"");
    d.turns.push_back({speaker == "A" ? Speaker::A : Speaker::B, require_string(t, "text")});
  }
  validate(d);
  return d;
}

std::string to_json_line(const Dialogue& d) {
  json turns = json::array();
  for (const auto& t : d.turns) turns.push_back({{"speaker", speaker_name(t.speaker)}, {"text", t.text}});
  json obj = {{"id", d.id}, {"persona", d.persona}, {"turns", std::move(turns)}};
  return obj.dump();
}

InstructionTriplet parse_triplet(const std::string& line) {
  const json obj = parse_object(line);
  InstructionTriplet t{require_string(obj, "instruction"), require_string(obj, "input"),
                       require_string(obj, "output")};
  validate(t);
  return t;
}

std::string to_json_line(const InstructionTriplet& t) {
  return json{{"instruction", t.instruction}, {"input", t.input}, {"output", t.output}}.dump();
}

LabelRecord parse_label(const std::string& line) {
  const json obj = parse_object(line);
  LabelRecord r;
  r.dialogue_id = require_string(obj, "dialogue_id");
  const json& idx = require(obj, "turn_index");
  if (!idx.is_number_unsigned() && !(idx.is_number_integer() && idx.get<long long>() >= 0))
    throw CorpusError("field 'turn_index' must be a non-negative integer");
  r.turn_index = idx.get<std::size_t>();
  r.instruction = require_string(obj, "instruction");
  if (trim(r.instruction).empty()) throw CorpusError("instruction is empty");
  if (auto it = obj.find("fallback"); it != obj.end()) {
    if (!it->is_boolean()) throw CorpusError("field 'fallback' must be a boolean");
    r.fallback = it->get<bool>();
  }
  return r;
}

std::string to_json_line(const LabelRecord& r) {
  return json{{"dialogue_id", r.dialogue_id},
              {"turn_index", r.turn_index},
              {"instruction", r.instruction},
              {"fallback", r.fallback}}
      .dump();
}

std::vector<Dialogue> load_dialogues(const std::filesystem::path& path) {
  auto dialogues = load_lines<Dialogue>(path, parse_dialogue);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < dialogues.size(); ++i)
    if (!seen.insert(dialogues[i].id).second)
      throw CorpusError(path.string() + ": duplicate dialogue id '" + dialogues[i].id + "'");
  return dialogues;
}

std::vector<InstructionTriplet> load_triplets(const std::filesystem::path& path) {
  return load_lines<InstructionTriplet>(path, parse_triplet);
}

std::vector<LabelRecord> load_labels(const std::filesystem::path& path) {
  return load_lines<LabelRecord>(path, parse_label);
}

void save_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  save_lines(path, dialogues);
}

void save_triplets(const std::filesystem::path& path, const std::vector<InstructionTriplet>& triplets) {
  save_lines(path, triplets);
}

void save_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& labels) {
  save_lines(path, labels);
}

std::vector<DialogueExample> expand_examples(const std::vector<Dialogue>& dialogues) {
  std::vector<DialogueExample> out;
  for (const auto& d : dialogues) {
    for (std::size_t t = 1; t < d.turns.size(); ++t) {
      DialogueExample ex;
      ex.dialogue_id = d.id;
      ex.turn_index = t;
      ex.persona = d.persona;
      ex.turns.assign(d.turns.begin(), d.turns.begin() + static_cast<std::ptrdiff_t>(t));
      ex.response = d.turns[t].text;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<LabeledExample> attach_instructions(const std::vector<DialogueExample>& examples,
                                                const std::vector<std::string>& instructions) {
  if (examples.size() != instructions.size())
    throw CorpusError("length mismatch: " + std::to_string(examples.size()) + " examples, " +
                      std::to_string(instructions.size()) + " instructions");
  std::vector<LabeledExample> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (trim(instructions[i]).empty())
      throw CorpusError("empty instruction at position " + std::to_string(i));
    out.push_back({examples[i], instructions[i]});
  }
  return out;
}

std::vector<LabeledExample> join_labels(const std::vector<DialogueExample>& examples,
                                        const std::vector<LabelRecord>& labels) {
  std::map<std::pair<std::string, std::size_t>, const LabelRecord*> by_key;
  for (const auto& r : labels) {
    if (!by_key.emplace(std::pair{r.dialogue_id, r.turn_index}, &r).second)
      throw CorpusError("duplicate label for " + r.dialogue_id + "#" + std::to_string(r.turn_index));
  }
  std::vector<std::string> instructions;
  instructions.reserve(examples.size());
  for (const auto& ex : examples) {
    auto it = by_key.find({ex.dialogue_id, ex.turn_index});
    if (it == by_key.end())
      throw CorpusError("no label for " + ex.dialogue_id + "#" + std::to_string(ex.turn_index));
    instructions.push_back(it->second->instruction);
  }
  if (labels.size() != examples.size())
    throw CorpusError(std::to_string(labels.size() - examples.size()) +
                      " label(s) do not resolve to a dialogue turn");
  return attach_instructions(examples, instructions);
}

}  // namespace cidg
