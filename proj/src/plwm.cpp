#include "multimatch/plwm.hpp"

#include "multimatch/error.hpp"

namespace multimatch {

const char* to_string(Category c) {
  switch (c) {
    case Category::NotUseful: return "not_useful";
    case Category::UsefulDifficult: return "useful_difficult";
    case Category::UsefulEasy: return "useful_easy";
  }
  return "?";
}

void PlwmConfig::validate() const {
  require(w_d > 0.0, "w_d must be positive");
  if (num_heads != 3)
    fail(ErrorKind::UnsupportedConfig, "pseudo-label weighting requires exactly three heads");
}

std::array<std::size_t, 2> generating_heads(std::size_t h) {
  require(h < 3, "target head out of range");
  switch (h) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
  }
}

PlwmDecision combine(std::size_t target_head, const FilterTrace& trace, std::size_t label_i,
                     std::size_t label_j, double w_d) {
  PlwmDecision d;
  d.target_head = target_head;
  d.trace = trace;
  if (!trace.free_multi) return d;
  if (trace.multi_i && trace.multi_j) {
    if (trace.agree) {
      d.category = Category::UsefulEasy;
      d.weight = 1.0;
      d.pseudo_label = label_i;
    }
    return d;
  }
  if (trace.multi_i != trace.multi_j) {
    d.category = Category::UsefulDifficult;
    d.weight = w_d;
    d.pseudo_label = trace.multi_i ? label_i : label_j;
  }
  return d;
}

PlwmDecision decide(std::size_t target_head, const HeadPredictions& weak, std::size_t row,
                    std::size_t sample_id, const ApmLedger& ledger, const GammaState& gamma,
                    std::span<const ThresholdState> thresholds, const PlwmConfig& config) {
  config.validate();
  if (weak.num_heads() != 3 || thresholds.size() != 3)
    fail(ErrorKind::UnsupportedConfig, "pseudo-label weighting requires exactly three heads");
  require(row < weak.num_samples(), "row out of range");
  const auto [i, j] = generating_heads(target_head);
  const std::size_t label_i = weak.labels[i][row];
  const std::size_t label_j = weak.labels[j][row];

  FilterTrace trace;
  trace.multi_i = apm_high_confidence(ledger, gamma, i, sample_id, label_i);
  trace.multi_j = apm_high_confidence(ledger, gamma, j, sample_id, label_j);
  trace.agree = label_i == label_j;
  trace.free_multi =
      thresholds[i].passes(weak.probs[i].row(row)) || thresholds[j].passes(weak.probs[j].row(row));
  return combine(target_head, trace, label_i, label_j, config.w_d);
}

BatchDecisions decide_batch(std::size_t target_head, const HeadPredictions& weak,
                            std::span<const std::size_t> sample_ids, const ApmLedger& ledger,
                            const GammaState& gamma, std::span<const ThresholdState> thresholds,
                            const PlwmConfig& config) {
  require(sample_ids.size() == weak.num_samples(), "one sample id per prediction row");
  BatchDecisions out;
  out.decisions.reserve(sample_ids.size());
  for (std::size_t r = 0; r < sample_ids.size(); ++r) {
    out.decisions.push_back(
        decide(target_head, weak, r, sample_ids[r], ledger, gamma, thresholds, config));
    out.tally.add(out.decisions.back().category);
  }
  return out;
}

}  // namespace multimatch
