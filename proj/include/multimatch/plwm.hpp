#pragma once

// Pseudo-label weighting for three-head co-training. For a target head h the
// two other heads i, j generate the pseudo-label, and the sample weight is
//
//   W_h = [ 1   * (multi_i AND multi_j AND agree)
//         + w_d * (multi_i XOR multi_j) ] * (free_i OR free_j)
//
// where multi_k is the APM high-confidence indicator of head k for its own
// label, agree is [label_i == label_j], and free_k is the self-adaptive
// confidence filter of head k.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "multimatch/apm.hpp"
#include "multimatch/model.hpp"
#include "multimatch/thresholds.hpp"

namespace multimatch {

enum class Category { NotUseful = 0, UsefulDifficult = 1, UsefulEasy = 2 };

const char* to_string(Category c);

struct FilterTrace {
  bool agree = false;
  bool multi_i = false;
  bool multi_j = false;
  bool free_multi = false;
};

struct PlwmDecision {
  std::size_t target_head = 0;
  std::optional<std::size_t> pseudo_label;
  Category category = Category::NotUseful;
  double weight = 0.0;
  FilterTrace trace;
};

struct PlwmConfig {
  double w_d = 3.0;
  std::size_t num_heads = 3;

  void validate() const;
};

// The two generating heads for target head h, in increasing order.
std::array<std::size_t, 2> generating_heads(std::size_t h);

// Applies the weighting rule to already-evaluated indicators.
PlwmDecision combine(std::size_t target_head, const FilterTrace& trace, std::size_t label_i,
                     std::size_t label_j, double w_d);

// Decision for one sample (row `row` of the weak-view predictions, ledger id
// `sample_id`). Reads only the predictions of the two generating heads.
PlwmDecision decide(std::size_t target_head, const HeadPredictions& weak, std::size_t row,
                    std::size_t sample_id, const ApmLedger& ledger, const GammaState& gamma,
                    std::span<const ThresholdState> thresholds, const PlwmConfig& config);

struct CategoryTally {
  std::array<std::size_t, 3> counts{};

  std::size_t operator[](Category c) const { return counts[static_cast<std::size_t>(c)]; }
  void add(Category c) { ++counts[static_cast<std::size_t>(c)]; }
  std::size_t total() const { return counts[0] + counts[1] + counts[2]; }
  CategoryTally& operator+=(const CategoryTally& o) {
    for (std::size_t k = 0; k < 3; ++k) counts[k] += o.counts[k];
    return *this;
  }
};

struct BatchDecisions {
  std::vector<PlwmDecision> decisions;
  CategoryTally tally;
};

BatchDecisions decide_batch(std::size_t target_head, const HeadPredictions& weak,
                            std::span<const std::size_t> sample_ids, const ApmLedger& ledger,
                            const GammaState& gamma, std::span<const ThresholdState> thresholds,
                            const PlwmConfig& config);

}  // namespace multimatch
