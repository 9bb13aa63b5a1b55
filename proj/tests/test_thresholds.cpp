#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "multimatch/error.hpp"
#include "multimatch/thresholds.hpp"
#include "oracles.hpp"

using namespace multimatch;

TEST_CASE("initial thresholds are exactly 1/C") {
  for (std::size_t C : {2u, 3u, 4u, 7u}) {
    ThresholdState s(C, 0.999);
    CHECK(s.global() == 1.0 / static_cast<double>(C));
    for (double p : s.local()) CHECK(p == 1.0 / static_cast<double>(C));
    for (double t : s.class_thresholds()) CHECK(t == 1.0 / static_cast<double>(C));
  }
}

TEST_CASE("EMA updates match the closed-form sums") {
  oracle::for_cases(1000, 41, [](oracle::Gen& g, std::size_t) {
    const std::size_t C = 2 + g.index(6);
    const double lambda = g.coin() ? 0.999 : g.uniform(0.5, 0.9999);
    ThresholdState s(C, lambda);
    std::vector<std::vector<std::vector<double>>> stream;
    const std::size_t T = 1 + g.index(30);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<std::vector<double>> batch(1 + g.index(8));
      for (auto& q : batch) q = g.simplex(C);
      stream.push_back(batch);
      REQUIRE(s.update(Matrix::from_rows(batch)));
    }
    const auto truth = oracle::freematch_closed_form(stream, C, lambda);
    CHECK(std::abs(s.global() - truth.tau) <= 1e-12);
    double pmax = 0;
    for (std::size_t c = 0; c < C; ++c) {
      CHECK(std::abs(s.local()[c] - truth.p[c]) <= 1e-12);
      pmax = std::max(pmax, truth.p[c]);
    }
    for (std::size_t c = 0; c < C; ++c)
      CHECK(std::abs(s.class_threshold(c) - truth.p[c] / pmax * truth.tau) <= 1e-12);
    CHECK(s.step() == T);
  });
}

TEST_CASE("an empty batch leaves the state untouched") {
  ThresholdState s(3, 0.9);
  CHECK_FALSE(s.update(Matrix(0, 3)));
  CHECK(s.step() == 0);
  CHECK(s.global() == 1.0 / 3.0);
}

TEST_CASE("passing is strict") {
  ThresholdState s(2, 0.999);
  // tau(c) = 0.5 for both classes at start.
  CHECK_FALSE(s.passes(std::vector<double>{0.5, 0.5}));
  CHECK(s.passes(std::vector<double>{0.5000001, 0.4999999}));
}

TEST_CASE("threshold state round trip") {
  ThresholdState s(3, 0.99);
  s.update(Matrix::from_rows({{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}}));
  std::stringstream ss;
  s.save(ss);
  auto back = ThresholdState::load(ss);
  CHECK(back.global() == s.global());
  CHECK(back.step() == 1);
  for (std::size_t c = 0; c < 3; ++c) CHECK(back.local()[c] == s.local()[c]);
}

TEST_CASE("bad decay is rejected") {
  CHECK_THROWS_AS(ThresholdState(3, 1.5), Error);
  CHECK_THROWS_AS(ThresholdState(1, 0.9), Error);
}
