#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "multimatch/error.hpp"
#include "multimatch/trainer.hpp"
#include "oracles.hpp"

using namespace multimatch;
namespace fs = std::filesystem;

namespace {

Split small_split(std::uint64_t seed, std::size_t unlabeled_per_class = 25) {
  auto task = make_gaussian_task(4, 16, 3.5);
  Rng rng(seed);
  return make_split(task, SplitSpec::balanced(4, 10, unlabeled_per_class, 40, 80), rng);
}

TrainConfig train_config(Algorithm a, std::uint64_t seed = 1) {
  TrainConfig t;
  t.algorithm = a;
  t.seed = seed;
  t.epochs = 3;
  t.batch_size = 16;
  return t;
}

Augmentor augmentor() { return Augmentor::for_task(make_gaussian_task(4, 16, 3.5)); }

const Algorithm kAll[] = {Algorithm::SupervisedOnly, Algorithm::FixMatch,
                          Algorithm::FreeMatch,      Algorithm::MultiheadCotrain,
                          Algorithm::MarginMatchSimplified, Algorithm::MultiMatch};

HeadPredictions preds_from(const std::vector<std::vector<std::vector<double>>>& logits) {
  std::vector<Matrix> m;
  for (const auto& h : logits) m.push_back(Matrix::from_rows(h));
  return HeadPredictions::from_logits(m);
}

}  // namespace

TEST_CASE("algorithm names round trip") {
  for (auto a : kAll) CHECK(parse_algorithm(to_string(a)) == a);
  CHECK_THROWS_AS(parse_algorithm("mixmatch"), Error);
  CHECK(heads_for(Algorithm::FixMatch, 3) == 1);
  CHECK(heads_for(Algorithm::SupervisedOnly, 3) == 3);
}

TEST_CASE("unsupervised loss is normalised by the whole unlabeled batch") {
  auto strong = preds_from({{{1, 0}, {0, 2}, {0.5, 0.5}}});
  std::vector<std::vector<PlwmDecision>> d(1, std::vector<PlwmDecision>(3));
  d[0][0].weight = 1.0;
  d[0][0].pseudo_label = 0;
  d[0][2].weight = 3.0;
  d[0][2].pseudo_label = 1;
  auto out = unsupervised_loss(strong, d);
  const double expect = (cross_entropy(0, strong.probs[0].row(0)) +
                         3.0 * cross_entropy(1, strong.probs[0].row(2))) / 3.0;
  CHECK(out.per_head[0] == doctest::Approx(expect).epsilon(1e-14));
  for (double g : out.logit_grads[0].row(1)) CHECK(g == 0.0);
  CHECK(out.logit_grads[0](2, 1) == doctest::Approx(3.0 * (strong.probs[0](2, 1) - 1.0) / 3.0));
}

TEST_CASE("fixmatch gate is strict at tau") {
  TrainConfig cfg = train_config(Algorithm::FixMatch);
  cfg.fixmatch_tau = 0.5;
  auto weak = preds_from({{{0, 0}, {1, 0}}});  // probabilities 0.5 and ~0.73
  StateBundle state{{}, ApmLedger(1, 2, 2, 0.9), GammaState(1, 2, 5, 0.0), 0.0, {}};
  const std::vector<std::size_t> ids{0, 1};
  auto d = select_pseudo_labels(cfg, weak, ids, state);
  CHECK(d[0][0].weight == 0.0);
  CHECK(d[0][1].weight == 1.0);
  CHECK(*d[0][1].pseudo_label == 0);
}

TEST_CASE("multihead co-training keeps exactly the agreed samples") {
  TrainConfig cfg = train_config(Algorithm::MultiheadCotrain);
  auto weak = preds_from({{{1, 0}, {1, 0}}, {{1, 0}, {0, 1}}, {{1, 0}, {1, 0}}});
  StateBundle state{{}, ApmLedger(3, 2, 2, 0.9), GammaState(3, 2, 5, 0.0), 0.0, {}};
  const std::vector<std::size_t> ids{0, 1};
  auto d = select_pseudo_labels(cfg, weak, ids, state);
  for (std::size_t h = 0; h < 3; ++h) CHECK(d[h][0].weight == 1.0);
  CHECK(d[0][1].weight == 0.0);  // heads 1, 2 disagree
  CHECK(d[1][1].weight == 1.0);  // heads 0, 2 agree on class 0
  CHECK(*d[1][1].pseudo_label == 0);
  CHECK(d[2][1].weight == 0.0);
}

TEST_CASE("epochs cover the unlabeled set once, last batch partial") {
  Trainer t(ModelConfig{}, train_config(Algorithm::MultiMatch), small_split(1, 25), augmentor());
  // 100 unlabeled, batch 16: 7 steps, the last one holds 4 samples.
  CHECK(t.steps_per_epoch() == 7);
  std::size_t decisions = 0;
  for (int s = 0; s < 7; ++s) {
    auto rep = t.train_step();
    CHECK(rep.epoch_end == (s == 6));
    decisions += rep.per_head[0].decisions;
  }
  CHECK(decisions == 100);
  CHECK(t.epochs_done() == 1);
}

TEST_CASE("multimatch with w_u = 0 is step-identical to supervised_only") {
  auto cfg_mm = train_config(Algorithm::MultiMatch, 7);
  cfg_mm.w_u = 0.0;
  Trainer mm(ModelConfig{}, cfg_mm, small_split(7), augmentor());
  Trainer so(ModelConfig{}, train_config(Algorithm::SupervisedOnly, 7), small_split(7), augmentor());
  CHECK(mm.model().params() == so.model().params());
  for (int s = 0; s < 3 * 7; ++s) {
    auto a = mm.train_step();
    auto b = so.train_step();
    CHECK(a.loss_sup == b.loss_sup);
    REQUIRE(mm.model().params() == so.model().params());
  }
}

TEST_CASE("fixed-seed runs are bit-reproducible") {
  for (auto alg : kAll) {
    CAPTURE(to_string(alg));
    auto cfg = train_config(alg, 3);
    cfg.abc = alg == Algorithm::MultiMatch;
    Trainer a(ModelConfig{}, cfg, small_split(3), augmentor());
    Trainer b(ModelConfig{}, cfg, small_split(3), augmentor());
    auto ma = a.run();
    auto mb = b.run();
    CHECK(a.model().params() == b.model().params());
    REQUIRE(ma.size() == mb.size());
    for (std::size_t e = 0; e < ma.size(); ++e) {
      CHECK(ma[e].loss_unsup == mb[e].loss_unsup);
      CHECK(ma[e].test_error == mb[e].test_error);
      CHECK(ma[e].pseudo.masked == mb[e].pseudo.masked);
    }
  }
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const auto path = fs::temp_directory_path() / "mm_resume.ckpt";
  for (auto alg : kAll) {
    CAPTURE(to_string(alg));
    auto cfg = train_config(alg, 5);
    cfg.abc = alg == Algorithm::MultiMatch || alg == Algorithm::FixMatch;
    Trainer full(ModelConfig{}, cfg, small_split(5), augmentor());
    full.run_epoch();
    full.save_checkpoint(path);
    auto tail_full = full.run();

    Trainer resumed(ModelConfig{}, cfg, small_split(5), augmentor());
    resumed.load_checkpoint(path);
    CHECK(resumed.epochs_done() == 1);
    auto tail_resumed = resumed.run();
    CHECK(resumed.model().params() == full.model().params());
    REQUIRE(tail_full.size() == tail_resumed.size());
    for (std::size_t e = 0; e < tail_full.size(); ++e) {
      CHECK(tail_full[e].epoch == tail_resumed[e].epoch);
      CHECK(tail_full[e].loss_sup == tail_resumed[e].loss_sup);
      CHECK(tail_full[e].val_error == tail_resumed[e].val_error);
      CHECK(tail_full[e].gamma_mean == tail_resumed[e].gamma_mean);
    }
  }
  fs::remove(path);
}

TEST_CASE("checkpoints are refused mid-epoch and for a different algorithm") {
  const auto path = fs::temp_directory_path() / "mm_midepoch.ckpt";
  Trainer t(ModelConfig{}, train_config(Algorithm::MultiMatch), small_split(1), augmentor());
  t.train_step();
  CHECK_THROWS_AS(t.save_checkpoint(path), Error);
  t.run_epoch();
  t.save_checkpoint(path);
  Trainer other(ModelConfig{}, train_config(Algorithm::FreeMatch), small_split(1), augmentor());
  CHECK_THROWS_AS(other.load_checkpoint(path), Error);
  fs::remove(path);
}

TEST_CASE("enabling ABC adds exactly one cross-entropy term with balanced counts") {
  auto off_cfg = train_config(Algorithm::MultiMatch, 9);
  auto on_cfg = off_cfg;
  on_cfg.abc = true;
  Trainer off(ModelConfig{}, off_cfg, small_split(9), augmentor());
  Trainer on(ModelConfig{}, on_cfg, small_split(9), augmentor());
  for (double b : on.abc().beta()) CHECK(b == 1.0);
  auto a = off.train_step();
  auto b = on.train_step();
  CHECK(a.loss_sup == b.loss_sup);
  CHECK(a.loss_unsup == b.loss_unsup);
  CHECK(b.abc_loss > 0.0);
  CHECK(std::abs((b.total - a.total) - b.abc_loss) <= 1e-12);
}

TEST_CASE("a diverging run raises a divergence error") {
  auto cfg = train_config(Algorithm::FixMatch);
  cfg.optimizer.learning_rate = 1e300;
  cfg.optimizer.momentum = 0.0;
  Trainer t(ModelConfig{}, cfg, small_split(1), augmentor());
  try {
    t.run();
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
  }
}

TEST_CASE("traces are written as CSV") {
  std::ostringstream decisions, gamma;
  Trainer t(ModelConfig{}, train_config(Algorithm::MultiMatch), small_split(2), augmentor());
  t.set_decision_trace(&decisions);
  t.set_gamma_trace(&gamma);
  t.run_epoch();
  const auto d = decisions.str();
  CHECK(d.rfind("step,head,sample_id,category,weight,pseudo_label,true_label\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : d) lines += ch == '\n';
  CHECK(lines == 1 + 3 * 100);
  CHECK(gamma.str().rfind("epoch,head,class,gamma\n", 0) == 0);
}

TEST_CASE("training lowers the supervised loss") {
  Trainer t(ModelConfig{}, train_config(Algorithm::SupervisedOnly), small_split(4), augmentor());
  auto m = t.run();
  CHECK(m.back().loss_sup < m.front().loss_sup);
  CHECK(m.back().test_error < 0.5);
}
