#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "multimatch/error.hpp"
#include "multimatch/model.hpp"
#include "oracles.hpp"

using namespace multimatch;

namespace {

std::vector<double> flatten(const Parameters& p) {
  std::vector<double> out;
  p.for_each([&](double v, bool) { out.push_back(v); });
  return out;
}

void assign(Model& m, const std::vector<double>& x) {
  std::size_t k = 0;
  m.mutable_params().for_each([&](double& v, bool) { v = x[k++]; });
}

Matrix random_matrix(oracle::Gen& g, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.values()) v = g.uniform(-1, 1);
  return m;
}

}  // namespace

TEST_CASE("forward shapes and probabilities") {
  Rng rng(1);
  ModelConfig cfg;
  Model m(cfg, rng);
  Matrix x(5, cfg.input_dim, 0.3);
  auto pass = m.forward(x);
  REQUIRE(pass.preds.num_heads() == 3);
  CHECK(pass.preds.num_samples() == 5);
  CHECK(pass.preds.num_classes() == 4);
  CHECK(pass.features().cols() == 32);
  CHECK_THROWS_AS(m.forward(Matrix(2, 3)), Error);
}

TEST_CASE("weights start inside the init bound with zero biases") {
  Rng rng(2);
  ModelConfig cfg;
  cfg.hidden_dims = {8, 6};
  cfg.weight_init_scale = 0.5;
  Model m(cfg, rng);
  for (const auto* group : {&m.params().backbone, &m.params().heads})
    for (const auto& layer : *group) {
      const double bound = 0.5 / std::sqrt(static_cast<double>(layer.in_dim()));
      for (double w : layer.weight.values()) CHECK(std::abs(w) <= bound);
      for (double b : layer.bias) CHECK(b == 0.0);
    }
}

TEST_CASE("analytic gradients match central differences") {
  oracle::for_cases(20, 21, [](oracle::Gen& g, std::size_t k) {
    ModelConfig cfg;
    cfg.input_dim = 2 + g.index(5);
    cfg.num_classes = 2 + g.index(3);
    cfg.num_heads = 1 + g.index(3);
    cfg.hidden_dims.clear();
    const std::size_t depth = g.index(3);
    for (std::size_t d = 0; d < depth; ++d) cfg.hidden_dims.push_back(2 + g.index(7));
    cfg.activation = k % 2 ? Activation::Tanh : Activation::Relu;
    Rng rng(k);
    Model model(cfg, rng);
    const std::size_t n = 1 + g.index(4);
    const Matrix x = random_matrix(g, n, cfg.input_dim);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = g.index(cfg.num_classes);
    const Matrix r = random_matrix(g, n, cfg.feature_dim());

    auto loss = [&](const Model& m) {
      auto pass = m.forward(x);
      double total = 0;
      for (std::size_t h = 0; h < cfg.num_heads; ++h)
        for (std::size_t b = 0; b < n; ++b)
          total += cross_entropy(y[b], pass.preds.probs[h].row(b)) / static_cast<double>(n);
      const Matrix& f = pass.features();
      for (std::size_t i = 0; i < f.size(); ++i) total += f.values()[i] * r.values()[i];
      return total;
    };

    auto pass = model.forward(x);
    std::vector<Matrix> head_grads;
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      Matrix gr = pass.preds.probs[h];
      for (std::size_t b = 0; b < n; ++b) {
        gr(b, y[b]) -= 1.0;
        for (double& v : gr.row(b)) v /= static_cast<double>(n);
      }
      head_grads.push_back(gr);
    }
    const auto analytic = flatten(model.backward(pass.cache, head_grads, &r));

    Model probe = model;
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& theta) {
          assign(probe, theta);
          return loss(probe);
        },
        flatten(model.params()), 1e-6);

    double worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3});
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
    }
    CHECK(worst < 1e-4);
  });
}

TEST_CASE("heads without a loss receive no gradient") {
  Rng rng(3);
  ModelConfig cfg;
  Model m(cfg, rng);
  Matrix x(3, cfg.input_dim, 0.7);
  auto pass = m.forward(x);
  std::vector<Matrix> grads{Matrix(3, 4, 0.1), Matrix(), Matrix()};
  auto g = m.backward(pass.cache, grads);
  for (double v : g.heads[1].weight.values()) CHECK(v == 0.0);
  bool nonzero = false;
  for (double v : g.heads[0].weight.values()) nonzero |= v != 0.0;
  CHECK(nonzero);
}

TEST_CASE("backward on a stale cache is rejected") {
  Rng rng(4);
  Model m(ModelConfig{}, rng);
  auto pass = m.forward(Matrix(1, 16, 1.0));
  m.mutable_params();
  std::vector<Matrix> grads(3, Matrix(1, 4, 0.1));
  CHECK_THROWS_AS(m.backward(pass.cache, grads), Error);
}

TEST_CASE("model text round trip is exact") {
  Rng rng(5);
  ModelConfig cfg;
  cfg.activation = Activation::Tanh;
  cfg.hidden_dims = {7, 5};
  Model m(cfg, rng);
  std::stringstream ss;
  m.save(ss);
  Model back = Model::load(ss);
  CHECK(back.params() == m.params());
  CHECK(back.config().activation == Activation::Tanh);
}

TEST_CASE("sgd follows momentum with decoupled decay on weights only") {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims.clear();
  cfg.num_classes = 2;
  cfg.num_heads = 1;
  Rng rng(6);
  Model m(cfg, rng);
  OptimizerConfig oc;
  oc.learning_rate = 0.1;
  oc.momentum = 0.5;
  oc.weight_decay = 0.01;
  SgdOptimizer opt(oc);

  auto grads = Parameters::zeros_like(m.params());
  grads.heads[0].weight(0, 0) = 1.0;
  grads.heads[0].bias[1] = 2.0;
  const double w0 = m.params().heads[0].weight(0, 0);
  const double w1 = m.params().heads[0].weight(1, 1);

  opt.apply_update(m, grads);
  opt.apply_update(m, grads);
  // v1 = g, v2 = 1.5 g
  double w = w0;
  w = w - 0.1 * 0.01 * w - 0.1 * 1.0;
  w = w - 0.1 * 0.01 * w - 0.1 * 1.5;
  CHECK(m.params().heads[0].weight(0, 0) == doctest::Approx(w).epsilon(1e-14));
  CHECK(m.params().heads[0].weight(1, 1) == doctest::Approx(w1 * 0.999 * 0.999).epsilon(1e-14));
  CHECK(m.params().heads[0].bias[1] == doctest::Approx(-0.1 * 2.0 - 0.1 * 3.0).epsilon(1e-14));
}

TEST_CASE("non-finite gradients raise divergence and leave the model untouched") {
  Rng rng(7);
  Model m(ModelConfig{}, rng);
  const auto before = m.params();
  SgdOptimizer opt(OptimizerConfig{});
  auto grads = Parameters::zeros_like(m.params());
  grads.backbone[0].bias[0] = std::numeric_limits<double>::infinity();
  try {
    opt.apply_update(m, grads);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
  }
  CHECK(m.params() == before);
}

TEST_CASE("optimizer state round trip") {
  Rng rng(8);
  Model a(ModelConfig{}, rng);
  SgdOptimizer oa(OptimizerConfig{});
  auto grads = Parameters::zeros_like(a.params());
  grads.for_each([](double& v, bool) { v = 0.01; });
  oa.apply_update(a, grads);
  std::stringstream ss;
  oa.save(ss);
  SgdOptimizer ob(OptimizerConfig{});
  ob.load(ss, a.params());
  Model a2 = a, b2 = a;
  oa.apply_update(a2, grads);
  ob.apply_update(b2, grads);
  CHECK(a2.params() == b2.params());
}

TEST_CASE("config validation") {
  ModelConfig cfg;
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = ModelConfig{};
  cfg.num_heads = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(parse_activation("tanh") == Activation::Tanh);
  CHECK_THROWS_AS(parse_activation("gelu"), Error);
}
