#pragma once

// Builders that put the library's state objects into a chosen configuration.

#include <vector>

#include "multimatch/apm.hpp"
#include "multimatch/model.hpp"
#include "multimatch/plwm.hpp"
#include "multimatch/thresholds.hpp"

namespace fixture {

using namespace multimatch;

// One unlabeled sample, three heads, three classes, target head 0 (so heads
// 1 and 2 generate). The indicators of heads 1 and 2 are set directly.
struct PlwmScenario {
  HeadPredictions weak;
  ApmLedger ledger{3, 1, 3, 1.0};
  GammaState gamma{3, 3, 5.0, 0.0};
  std::vector<ThresholdState> thresholds;
  std::size_t label_i = 0, label_j = 0;
};

inline std::vector<double> logits_for(std::size_t label) {
  std::vector<double> z(3, 0.0);
  z[label] = 4.0;
  return z;
}

inline PlwmScenario make_scenario(bool agree, bool multi_i, bool multi_j, bool free_multi) {
  PlwmScenario s;
  s.label_i = 0;
  s.label_j = agree ? 0 : 1;
  std::vector<Matrix> logits;
  for (std::size_t label : {2ul, s.label_i, s.label_j})
    logits.push_back(Matrix::from_rows({logits_for(label)}));
  s.weak = HeadPredictions::from_logits(logits);

  // lambda_m = 1: one ledger update sets APM to the pseudo-margin, which is
  // +4 for the favoured class and -4 against it; gamma starts at 0.
  s.ledger.update(1, 0, logits_for(multi_i ? s.label_i : (s.label_i + 2) % 3));
  s.ledger.update(2, 0, logits_for(multi_j ? s.label_j : (s.label_j + 2) % 3));

  // A fresh state has tau = 1/3 and the confident rows pass. With lambda 0
  // and one update on certain rows, tau becomes 1 and nothing passes.
  for (int h = 0; h < 3; ++h) {
    ThresholdState t(3, 0.0);
    if (!free_multi) t.update(Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
    s.thresholds.push_back(t);
  }
  return s;
}

inline PlwmDecision decide_scenario(const PlwmScenario& s, double w_d) {
  PlwmConfig cfg;
  cfg.w_d = w_d;
  return decide(0, s.weak, 0, 0, s.ledger, s.gamma, s.thresholds, cfg);
}

}  // namespace fixture
