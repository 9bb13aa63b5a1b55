#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "multimatch/error.hpp"
#include "multimatch/plwm.hpp"
#include "oracles.hpp"

using namespace multimatch;

TEST_CASE("all sixteen indicator combinations") {
  for (double w_d : {3.0, 1.5})
    for (int bits = 0; bits < 16; ++bits) {
      const bool agree = bits & 1, mi = bits & 2, mj = bits & 4, fm = bits & 8;
      CAPTURE(bits);
      const auto truth = oracle::plwm_truth(agree, mi, mj, fm, w_d);

      FilterTrace trace{agree, mi, mj, fm};
      auto c = combine(0, trace, 0, agree ? 0 : 1, w_d);
      CHECK(c.weight == truth.weight);
      CHECK(static_cast<int>(c.category) == truth.category);

      auto s = fixture::make_scenario(agree, mi, mj, fm);
      auto d = fixture::decide_scenario(s, w_d);
      CHECK(d.trace.agree == agree);
      CHECK(d.trace.multi_i == mi);
      CHECK(d.trace.multi_j == mj);
      CHECK(d.trace.free_multi == fm);
      CHECK(d.weight == truth.weight);
      CHECK(static_cast<int>(d.category) == truth.category);
      CHECK(d.pseudo_label.has_value() == (truth.weight > 0));
    }
}

TEST_CASE("the pseudo-label comes from the confident head") {
  auto s = fixture::make_scenario(false, false, true, true);
  auto d = fixture::decide_scenario(s, 3.0);
  REQUIRE(d.pseudo_label);
  CHECK(*d.pseudo_label == s.label_j);
  s = fixture::make_scenario(false, true, false, true);
  d = fixture::decide_scenario(s, 3.0);
  REQUIRE(d.pseudo_label);
  CHECK(*d.pseudo_label == s.label_i);
}

TEST_CASE("the target head's own prediction is never read") {
  oracle::for_cases(64, 61, [](oracle::Gen& g, std::size_t k) {
    auto s = fixture::make_scenario(k & 1, k & 2, k & 4, k & 8);
    const auto before = fixture::decide_scenario(s, 3.0);
    std::vector<Matrix> logits = s.weak.logits;
    for (double& v : logits[0].values()) v = g.uniform(-9, 9);
    s.weak = HeadPredictions::from_logits(logits);
    const auto after = fixture::decide_scenario(s, 3.0);
    CHECK(after.weight == before.weight);
    CHECK(after.pseudo_label == before.pseudo_label);
  });
}

TEST_CASE("generating heads") {
  CHECK(generating_heads(0) == std::array<std::size_t, 2>{1, 2});
  CHECK(generating_heads(1) == std::array<std::size_t, 2>{0, 2});
  CHECK(generating_heads(2) == std::array<std::size_t, 2>{0, 1});
  CHECK_THROWS_AS(generating_heads(3), Error);
}

TEST_CASE("other head counts are unsupported") {
  PlwmConfig cfg;
  cfg.num_heads = 4;
  try {
    cfg.validate();
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnsupportedConfig);
  }
}

TEST_CASE("batch tallies add up") {
  auto s = fixture::make_scenario(true, true, true, true);
  std::vector<std::size_t> ids{0};
  auto batch = decide_batch(0, s.weak, ids, s.ledger, s.gamma, s.thresholds, PlwmConfig{});
  CHECK(batch.tally.total() == 1);
  CHECK(batch.tally[Category::UsefulEasy] == 1);
}
