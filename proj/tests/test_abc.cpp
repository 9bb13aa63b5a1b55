#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "multimatch/abc.hpp"
#include "multimatch/error.hpp"
#include "oracles.hpp"

using namespace multimatch;

namespace {

Matrix random_features(oracle::Gen& g, std::size_t n, std::size_t d) {
  Matrix m(n, d);
  for (double& v : m.values()) v = g.uniform(-2, 2);
  return m;
}

}  // namespace

TEST_CASE("mask probabilities are min count over class count") {
  const std::vector<std::size_t> counts{1000, 316, 100, 32, 10};
  auto beta = abc_mask_prob(counts);
  for (std::size_t c = 0; c < counts.size(); ++c) CHECK(beta[c] == 10.0 / static_cast<double>(counts[c]));
  CHECK(beta.back() == 1.0);
  const std::vector<std::size_t> balanced{7, 7, 7};
  for (double b : abc_mask_prob(balanced)) CHECK(b == 1.0);
  const std::vector<std::size_t> empty_class{5, 0};
  CHECK_THROWS_AS(abc_mask_prob(empty_class), Error);
}

TEST_CASE("with balanced counts the loss is the plain mean cross-entropy") {
  oracle::for_cases(50, 71, [](oracle::Gen& g, std::size_t k) {
    const std::size_t C = 2 + g.index(4), d = 1 + g.index(6), n = 1 + g.index(10);
    const std::vector<std::size_t> counts(C, 20);
    Rng rng(k);
    AbcBalancer abc(d, counts, 1.0, rng);
    const Matrix x = random_features(g, n, d);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = g.index(C);
    auto out = abc.loss(x, y, rng);
    CHECK(out.kept == n);

    // Independent evaluation of the auxiliary layer.
    double expect = 0;
    const auto& layer = abc.layer();
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> z(C);
      for (std::size_t c = 0; c < C; ++c) {
        z[c] = layer.bias[c];
        for (std::size_t i = 0; i < d; ++i) z[c] += layer.weight(c, i) * x(r, i);
      }
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0;
      for (double v : z) s += std::exp(v - m);
      expect += -(z[y[r]] - m - std::log(s));
    }
    expect /= static_cast<double>(n);
    CHECK(std::abs(out.loss - expect) <= 1e-12);
  });
}

TEST_CASE("expected kept counts are balanced") {
  const std::vector<std::size_t> counts{1000, 10};
  Rng init(1);
  AbcBalancer abc(2, counts, 1.0, init);
  std::vector<std::size_t> labels(1000, 0);
  labels.resize(1010, 1);
  Rng rng(2);
  double kept0 = 0, kept1 = 0;
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    auto keep = abc.draw_mask(labels, rng);
    for (std::size_t r = 0; r < labels.size(); ++r)
      if (keep[r]) (labels[r] == 0 ? kept0 : kept1) += 1;
  }
  kept0 /= draws;
  kept1 /= draws;
  CHECK(kept1 == 10.0);
  CHECK(std::abs(kept0 - kept1) / kept1 <= 0.05);
}

TEST_CASE("auxiliary layer gradients match central differences") {
  oracle::Gen g(72);
  const std::size_t C = 3, d = 4, n = 5;
  const std::vector<std::size_t> counts{10, 10, 10};
  Rng rng(3);
  AbcBalancer abc(d, counts, 1.0, rng);
  const Matrix x = random_features(g, n, d);
  const std::vector<std::size_t> y{0, 1, 2, 1, 0};
  const std::vector<bool> keep{true, false, true, true, true};
  auto out = abc.loss_with_mask(x, y, keep);
  CHECK(out.kept == 4);

  const double h = 1e-6;
  auto& w = abc.mutable_params().heads[0].weight;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < d; ++i) {
      const double keep_w = w(c, i);
      w(c, i) = keep_w + h;
      const double up = abc.loss_with_mask(x, y, keep).loss;
      w(c, i) = keep_w - h;
      const double down = abc.loss_with_mask(x, y, keep).loss;
      w(c, i) = keep_w;
      CHECK(out.layer_grad.heads[0].weight(c, i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    }
  for (std::size_t i = 0; i < d; ++i) CHECK(out.feature_grad(1, i) == 0.0);
}

TEST_CASE("nothing kept gives zero loss and zero gradients") {
  const std::vector<std::size_t> counts{4, 4};
  Rng rng(4);
  AbcBalancer abc(3, counts, 1.0, rng);
  Matrix x(2, 3, 1.0);
  const std::vector<std::size_t> y{0, 1};
  auto out = abc.loss_with_mask(x, y, {false, false});
  CHECK(out.loss == 0.0);
  CHECK(out.kept == 0);
  for (double v : out.feature_grad.values()) CHECK(v == 0.0);
}

TEST_CASE("balancer round trip") {
  const std::vector<std::size_t> counts{30, 3};
  Rng rng(5);
  AbcBalancer abc(4, counts, 1.0, rng);
  std::stringstream ss;
  abc.save(ss);
  auto back = AbcBalancer::load(ss);
  CHECK(back.params() == abc.params());
  CHECK(back.beta()[0] == abc.beta()[0]);

  AbcBalancer off;
  std::stringstream so;
  off.save(so);
  CHECK_FALSE(AbcBalancer::load(so).enabled());
}
