#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cidg/common.hpp"

namespace cidg {

class MetricError : public Error {
 public:
  using Error::Error;
};

/// Same normalization as the model tokenizer, without vocabulary lookup.
std::vector<std::string> metric_tokenize(std::string_view text);

/// Corpus-level BLEU-k (k = 1 or 2) with clipped n-gram precision and
/// brevity penalty min(1, exp(1 - r/c)). A zero precision p_n is replaced by
/// 1 / (2 * H_n), H_n being the hypothesis n-gram total; the score is 0 when
/// some H_n is 0.
double bleu_k(std::span<const std::string> hypotheses, std::span<const std::string> references, int k);

/// Distinct n-grams over all n-grams, pooled across hypotheses. 0 for an
/// empty pool.
double distinct_n(std::span<const std::string> hypotheses, int n);

struct EvalReport {
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  std::size_t hypotheses = 0;
  std::size_t reference_tokens = 0;
  std::size_t hypothesis_tokens = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate(std::span<const std::string> hypotheses, std::span<const std::string> references);

/// Four-column console table.
std::string format_report_table(const EvalReport& report, std::string_view label);

}  // namespace cidg
