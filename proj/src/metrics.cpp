#include "cidg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "cidg/tokenizer.hpp"

namespace cidg {

namespace {

using Tokens = std::vector<std::string>;
using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const Tokens& tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

std::vector<Tokens> tokenize_all(std::span<const std::string> texts) {
  std::vector<Tokens> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(metric_tokenize(t));
  return out;
}

double bleu_tokens(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int k) {
  double log_sum = 0.0;
  for (int n = 1; n <= k; ++n) {
    std::size_t matched = 0, total = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const auto h = ngram_counts(hyps[i], static_cast<std::size_t>(n));
      const auto r = ngram_counts(refs[i], static_cast<std::size_t>(n));
      for (const auto& [gram, count] : h) {
        total += count;
        const auto it = r.find(gram);
        if (it != r.end()) matched += std::min(count, it->second);
      }
    }
    if (total == 0) return 0.0;
    const double p = matched == 0 ? 1.0 / (2.0 * static_cast<double>(total))
                                  : static_cast<double>(matched) / static_cast<double>(total);
    log_sum += std::log(p);
  }
  std::size_t c = 0, r = 0;
  for (const auto& h : hyps) c += h.size();
  for (const auto& t : refs) r += t.size();
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)));
  return bp * std::exp(log_sum / k);
}

double distinct_tokens(const std::vector<Tokens>& hyps, int n) {
  std::set<Ngram> seen;
  std::size_t total = 0;
  for (const auto& h : hyps) {
    for (const auto& [gram, count] : ngram_counts(h, static_cast<std::size_t>(n))) {
      seen.insert(gram);
      total += count;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(seen.size()) / static_cast<double>(total);
}

void check_inputs(std::span<const std::string> hyps, std::span<const std::string> refs) {
  if (hyps.empty()) throw MetricError("no hypotheses to score");
  if (hyps.size() != refs.size())
    throw MetricError("got " + std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) +
                      " references");
}

void check_order(int n) {
  if (n != 1 && n != 2) throw MetricError("n-gram order must be 1 or 2, got " + std::to_string(n));
}

}  // namespace

std::vector<std::string> metric_tokenize(std::string_view text) { return normalize(text); }

double bleu_k(std::span<const std::string> hypotheses, std::span<const std::string> references, int k) {
  check_order(k);
  check_inputs(hypotheses, references);
  return bleu_tokens(tokenize_all(hypotheses), tokenize_all(references), k);
}

double distinct_n(std::span<const std::string> hypotheses, int n) {
  check_order(n);
  if (hypotheses.empty()) throw MetricError("no hypotheses to score");
  return distinct_tokens(tokenize_all(hypotheses), n);
}

EvalReport evaluate(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  check_inputs(hypotheses, references);
  const auto hyps = tokenize_all(hypotheses);
  const auto refs = tokenize_all(references);
  EvalReport r;
  r.bleu1 = bleu_tokens(hyps, refs, 1);
  r.bleu2 = bleu_tokens(hyps, refs, 2);
  r.distinct1 = distinct_tokens(hyps, 1);
  r.distinct2 = distinct_tokens(hyps, 2);
  r.hypotheses = hyps.size();
  for (const auto& h : hyps) r.hypothesis_tokens += h.size();
  for (const auto& t : refs) r.reference_tokens += t.size();
  return r;
}

nlohmann::json EvalReport::to_json() const {
  return {{"bleu1", bleu1},
          {"bleu2", bleu2},
          {"distinct1", distinct1},
          {"distinct2", distinct2},
          {"counts",
           {{"hypotheses", hypotheses},
            {"reference_tokens", reference_tokens},
            {"hypothesis_tokens", hypothesis_tokens}}}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.bleu1 = j.at("bleu1").get<double>();
    r.bleu2 = j.at("bleu2").get<double>();
    r.distinct1 = j.at("distinct1").get<double>();
    r.distinct2 = j.at("distinct2").get<double>();
    const auto& c = j.at("counts");
    r.hypotheses = c.at("hypotheses").get<std::size_t>();
    r.reference_tokens = c.at("reference_tokens").get<std::size_t>();
    r.hypothesis_tokens = c.at("hypothesis_tokens").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw MetricError(std::string("malformed report: ") + e.what());
  }
}

std::string format_report_table(const EvalReport& report, std::string_view label) {
  char row[160];
  std::string out;
  std::snprintf(row, sizeof row, "%-22s %8s %8s %10s %10s\n", "", "BLEU-1", "BLEU-2", "Distinct-1", "Distinct-2");
  out += row;
  std::snprintf(row, sizeof row, "%-22.22s %8.4f %8.4f %10.4f %10.4f\n", std::string(label).c_str(), report.bleu1,
                report.bleu2, report.distinct1, report.distinct2);
  out += row;
  return out;
}

}  // namespace cidg
