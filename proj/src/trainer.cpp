#include "multimatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "multimatch/error.hpp"
#include "textio.hpp"

namespace multimatch {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kLabeledOrderStream = 2;
constexpr std::uint64_t kLabeledAugStream = 3;
constexpr std::uint64_t kUnlabeledOrderStream = 4;
constexpr std::uint64_t kUnlabeledAugStream = 5;
constexpr std::uint64_t kAbcMaskStream = 6;
constexpr std::uint64_t kAbcInitStream = 7;

bool single_head(Algorithm a) {
  return a == Algorithm::FixMatch || a == Algorithm::FreeMatch ||
         a == Algorithm::MarginMatchSimplified;
}

PlwmDecision gate(std::size_t head, std::size_t label, bool keep) {
  PlwmDecision d;
  d.target_head = head;
  if (keep) {
    d.pseudo_label = label;
    d.weight = 1.0;
    d.category = Category::UsefulEasy;
  }
  return d;
}

bool all_zero(const Matrix& m) {
  auto v = m.values();
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::SupervisedOnly: return "supervised_only";
    case Algorithm::FixMatch: return "fixmatch";
    case Algorithm::FreeMatch: return "freematch";
    case Algorithm::MultiheadCotrain: return "multihead_cotrain";
    case Algorithm::MarginMatchSimplified: return "marginmatch_simplified";
    case Algorithm::MultiMatch: return "multimatch";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& s) {
  for (auto a : {Algorithm::SupervisedOnly, Algorithm::FixMatch, Algorithm::FreeMatch,
                 Algorithm::MultiheadCotrain, Algorithm::MarginMatchSimplified,
                 Algorithm::MultiMatch})
    if (s == to_string(a)) return a;
  fail(ErrorKind::Config, "unknown algorithm '" + s + "'");
}

std::size_t heads_for(Algorithm a, std::size_t configured) {
  return single_head(a) ? 1 : configured;
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be at least 1");
  require(mu >= 1, "mu must be at least 1");
  require(w_u >= 0.0 && std::isfinite(w_u), "w_u must be >= 0");
  require(fixmatch_tau >= 0.0 && fixmatch_tau <= 1.0, "fixmatch_tau must be in [0, 1]");
  require(w_d > 0.0, "w_d must be positive");
  require(percentile_f > 0.0 && percentile_f < 100.0, "percentile_f must be in (0, 100)");
  require(lambda_f >= 0.0 && lambda_f <= 1.0, "lambda_f must be in [0, 1]");
  require(lambda_m >= 0.0 && lambda_m <= 1.0, "lambda_m must be in [0, 1]");
  require(abc_loss_weight >= 0.0, "abc_loss_weight must be >= 0");
  optimizer.validate();
}

SupervisedLoss supervised_loss(const HeadPredictions& preds, std::span<const std::size_t> labels) {
  require(labels.size() == preds.num_samples() && !labels.empty(),
          "one label per labeled prediction row");
  SupervisedLoss out;
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (std::size_t h = 0; h < preds.num_heads(); ++h) {
    const Matrix& p = preds.probs[h];
    Matrix g(p.rows(), p.cols());
    double loss = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      loss += cross_entropy(labels[r], p.row(r));
      for (std::size_t c = 0; c < p.cols(); ++c)
        g(r, c) = (p(r, c) - (c == labels[r] ? 1.0 : 0.0)) * inv;
    }
    out.per_head.push_back(loss * inv);
    out.logit_grads.push_back(std::move(g));
  }
  return out;
}

UnsupervisedLoss unsupervised_loss(const HeadPredictions& strong,
                                   std::span<const std::vector<PlwmDecision>> decisions) {
  require(decisions.size() == strong.num_heads(), "one decision list per head");
  UnsupervisedLoss out;
  const std::size_t n = strong.num_samples();
  const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
  for (std::size_t h = 0; h < strong.num_heads(); ++h) {
    require(decisions[h].size() == n, "one decision per unlabeled row");
    const Matrix& p = strong.probs[h];
    Matrix g(p.rows(), p.cols());
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto& d = decisions[h][r];
      if (d.weight == 0.0) continue;
      const std::size_t y = *d.pseudo_label;
      loss += d.weight * cross_entropy(y, p.row(r));
      const double scale = d.weight * inv;
      for (std::size_t c = 0; c < p.cols(); ++c)
        g(r, c) = (p(r, c) - (c == y ? 1.0 : 0.0)) * scale;
    }
    out.per_head.push_back(loss * inv);
    out.logit_grads.push_back(std::move(g));
  }
  return out;
}

std::vector<std::vector<PlwmDecision>> select_pseudo_labels(
    const TrainConfig& config, const HeadPredictions& weak,
    std::span<const std::size_t> sample_ids, const StateBundle& state) {
  const std::size_t H = weak.num_heads();
  const std::size_t n = weak.num_samples();
  std::vector<std::vector<PlwmDecision>> out(H);
  switch (config.algorithm) {
    case Algorithm::SupervisedOnly:
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t r = 0; r < n; ++r) out[h].push_back(gate(h, 0, false));
      break;
    case Algorithm::FixMatch:
      for (std::size_t r = 0; r < n; ++r) {
        auto q = weak.probs[0].row(r);
        const std::size_t y = weak.labels[0][r];
        out[0].push_back(gate(0, y, q[y] > config.fixmatch_tau));
      }
      break;
    case Algorithm::FreeMatch:
      for (std::size_t r = 0; r < n; ++r)
        out[0].push_back(
            gate(0, weak.labels[0][r], state.thresholds[0].passes(weak.probs[0].row(r))));
      break;
    case Algorithm::MarginMatchSimplified:
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t y = weak.labels[0][r];
        out[0].push_back(
            gate(0, y, state.ledger.value(0, sample_ids[r], y) > state.margin_gamma));
      }
      break;
    case Algorithm::MultiheadCotrain:
      if (H != 3)
        fail(ErrorKind::UnsupportedConfig, "multihead co-training requires exactly three heads");
      for (std::size_t h = 0; h < 3; ++h) {
        const auto [i, j] = generating_heads(h);
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t yi = weak.labels[i][r];
          out[h].push_back(gate(h, yi, yi == weak.labels[j][r]));
        }
      }
      break;
    case Algorithm::MultiMatch: {
      const PlwmConfig plwm{config.w_d, H};
      for (std::size_t h = 0; h < H; ++h)
        out[h] = decide_batch(h, weak, sample_ids, state.ledger, state.gamma, state.thresholds,
                              plwm)
                     .decisions;
      break;
    }
  }
  return out;
}

Trainer::Trainer(ModelConfig model_config, TrainConfig config, Split split, Augmentor augmentor)
    : model_config_(std::move(model_config)),
      config_(std::move(config)),
      split_(std::move(split)),
      augmentor_(augmentor),
      num_heads_(heads_for(config_.algorithm, model_config_.num_heads)),
      model_(Model::zeros([&] {
        auto m = model_config_;
        m.num_heads = num_heads_;
        return m;
      }())),
      optimizer_(config_.optimizer),
      abc_optimizer_(config_.optimizer),
      labeled_order_rng_(Rng(config_.seed).fork(kLabeledOrderStream)),
      labeled_aug_rng_(Rng(config_.seed).fork(kLabeledAugStream)),
      unlabeled_order_rng_(Rng(config_.seed).fork(kUnlabeledOrderStream)),
      unlabeled_aug_rng_(Rng(config_.seed).fork(kUnlabeledAugStream)),
      abc_rng_(Rng(config_.seed).fork(kAbcMaskStream)) {
  config_.validate();
  augmentor_.validate();
  model_config_.num_heads = num_heads_;
  require(!split_.labeled.empty(), "the labeled set is empty");
  if (config_.algorithm == Algorithm::MultiMatch) PlwmConfig{config_.w_d, num_heads_}.validate();
  if (config_.algorithm == Algorithm::MultiheadCotrain && num_heads_ != 3)
    fail(ErrorKind::UnsupportedConfig, "multihead co-training requires exactly three heads");

  Rng init = Rng(config_.seed).fork(kInitStream);
  model_ = Model(model_config_, init);

  const std::size_t C = model_config_.num_classes;
  for (const Dataset* set : {&split_.labeled, &split_.unlabeled, &split_.validation, &split_.test})
    for (const auto& s : *set) {
      require(s.true_label < C, "sample label out of range");
      require(s.features.size() == model_config_.input_dim, "sample width mismatch");
    }
  for (std::size_t i = 0; i < split_.unlabeled.size(); ++i)
    require(split_.unlabeled[i].id == i, "unlabeled ids must be dense and ordered");

  for (std::size_t h = 0; h < num_heads_; ++h)
    state_.thresholds.emplace_back(C, config_.lambda_f);
  state_.ledger = ApmLedger(num_heads_, split_.unlabeled.size(), C, config_.lambda_m);
  state_.gamma = GammaState(num_heads_, C, config_.percentile_f, config_.gamma_min);
  state_.margin_gamma = config_.gamma_min.value_or(0.0);

  if (config_.abc) {
    Rng abc_init = Rng(config_.seed).fork(kAbcInitStream);
    const auto counts = class_counts(split_.labeled, C);
    abc_ = AbcBalancer(model_config_.feature_dim(), counts, model_config_.weight_init_scale,
                       abc_init);
  }

  labeled_order_.resize(split_.labeled.size());
  for (std::size_t i = 0; i < labeled_order_.size(); ++i) labeled_order_[i] = i;
  unlabeled_order_.resize(split_.unlabeled.size());
  for (std::size_t i = 0; i < unlabeled_order_.size(); ++i) unlabeled_order_[i] = i;
}

std::size_t Trainer::steps_per_epoch() const noexcept {
  const std::size_t ub = config_.mu * config_.batch_size;
  if (!split_.unlabeled.empty()) return (split_.unlabeled.size() + ub - 1) / ub;
  return (split_.labeled.size() + config_.batch_size - 1) / config_.batch_size;
}

double Trainer::learning_rate() const {
  const double lr = config_.optimizer.learning_rate;
  if (config_.optimizer.schedule == LrSchedule::Constant) return lr;
  const double total = static_cast<double>(std::max<std::size_t>(1, config_.epochs * steps_per_epoch()));
  return lr * std::max(0.0, 1.0 - static_cast<double>(steps_done_) / total);
}

void Trainer::begin_epoch() {
  unlabeled_order_rng_.shuffle(unlabeled_order_);
  unlabeled_pos_ = 0;
  epoch_loss_sup_ = 0.0;
  epoch_loss_unsup_ = 0.0;
  epoch_steps_ = 0;
  epoch_pseudo_ = {};
  epoch_categories_ = {};
  in_epoch_ = true;
}

Batch Trainer::next_labeled_batch() {
  Batch b;
  b.indices.reserve(config_.batch_size);
  while (b.indices.size() < config_.batch_size) {
    if (labeled_pos_ == 0) labeled_order_rng_.shuffle(labeled_order_);
    b.indices.push_back(labeled_order_[labeled_pos_]);
    labeled_pos_ = (labeled_pos_ + 1) % labeled_order_.size();
  }
  return b;
}

void Trainer::update_state(const HeadPredictions& weak, std::span<const std::size_t> ids) {
  switch (config_.algorithm) {
    case Algorithm::MultiMatch: {
      for (std::size_t h = 0; h < num_heads_; ++h) {
        for (std::size_t r = 0; r < ids.size(); ++r)
          state_.ledger.update(h, ids[r], weak.logits[h].row(r));
        state_.thresholds[h].update(weak.probs[h]);
      }
      std::vector<std::size_t> labels(num_heads_);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        for (std::size_t h = 0; h < num_heads_; ++h) labels[h] = weak.labels[h][r];
        record_agreement(state_.gamma, state_.ledger, ids[r], labels);
      }
      break;
    }
    case Algorithm::FreeMatch:
      state_.thresholds[0].update(weak.probs[0]);
      break;
    case Algorithm::MarginMatchSimplified:
      for (std::size_t r = 0; r < ids.size(); ++r) {
        state_.ledger.update(0, ids[r], weak.logits[0].row(r));
        state_.margin_reservoir.push_back(
            state_.ledger.value(0, ids[r], weak.labels[0][r]));
      }
      break;
    default:
      break;
  }
}

void Trainer::end_epoch() {
  ++epochs_done_;
  const std::size_t C = model_config_.num_classes;
  if (config_.algorithm == Algorithm::MultiMatch) {
    state_.gamma.recompute();
    if (gamma_trace_)
      for (std::size_t h = 0; h < num_heads_; ++h)
        for (std::size_t c = 0; c < C; ++c)
          *gamma_trace_ << epochs_done_ << ',' << h << ',' << c << ','
                        << textio::format_double(state_.gamma.threshold(h, c)) << '\n';
  } else if (config_.algorithm == Algorithm::MarginMatchSimplified) {
    if (!state_.margin_reservoir.empty()) {
      double g = percentile_lower(state_.margin_reservoir, config_.percentile_f);
      if (config_.gamma_min) g = std::max(*config_.gamma_min, g);
      state_.margin_gamma = g;
      state_.margin_reservoir.clear();
    }
    if (gamma_trace_)
      for (std::size_t c = 0; c < C; ++c)
        *gamma_trace_ << epochs_done_ << ",0," << c << ','
                      << textio::format_double(state_.margin_gamma) << '\n';
  }
  in_epoch_ = false;
}

StepReport Trainer::train_step() {
  if (!in_epoch_) begin_epoch();
  StepReport rep;
  rep.step = steps_done_ + 1;
  rep.epoch = epochs_done_ + 1;
  const double lr = learning_rate();

  // Labeled weak view.
  const Batch lb = next_labeled_batch();
  std::vector<std::size_t> labels;
  Dataset lsamples;
  for (std::size_t i : lb.indices) {
    lsamples.push_back(split_.labeled[i]);
    labels.push_back(split_.labeled[i].true_label);
  }
  const Matrix xl = augment_batch(lsamples, augmentor_, View::Weak, labeled_aug_rng_);
  const ForwardPass fl = model_.forward(xl);
  const SupervisedLoss sup = supervised_loss(fl.preds, labels);
  rep.loss_sup = sup.per_head;
  rep.loss_unsup.assign(num_heads_, 0.0);
  rep.per_head.assign(num_heads_, {});

  // Unlabeled weak and strong views.
  const std::size_t ub = config_.mu * config_.batch_size;
  const std::size_t begin = std::min(unlabeled_pos_, unlabeled_order_.size());
  const std::size_t end = std::min(begin + ub, unlabeled_order_.size());
  unlabeled_pos_ = end;
  const bool ssl = config_.algorithm != Algorithm::SupervisedOnly && end > begin;

  std::vector<std::size_t> ids(unlabeled_order_.begin() + static_cast<std::ptrdiff_t>(begin),
                               unlabeled_order_.begin() + static_cast<std::ptrdiff_t>(end));
  ForwardPass fw, fs;
  std::vector<std::vector<PlwmDecision>> decisions;
  UnsupervisedLoss unsup;
  if (ssl) {
    Dataset usamples;
    for (std::size_t id : ids) usamples.push_back(split_.unlabeled[id]);
    const Matrix xw = augment_batch(usamples, augmentor_, View::Weak, unlabeled_aug_rng_);
    const Matrix xs = augment_batch(usamples, augmentor_, View::Strong, unlabeled_aug_rng_);
    fw = model_.forward(xw);
    fs = model_.forward(xs);
    decisions = select_pseudo_labels(config_, fw.preds, ids, state_);
    unsup = unsupervised_loss(fs.preds, decisions);
    rep.loss_unsup = unsup.per_head;
    for (std::size_t h = 0; h < num_heads_; ++h) {
      std::vector<std::size_t> truth;
      for (std::size_t id : ids) truth.push_back(split_.unlabeled[id].true_label);
      rep.per_head[h] = accumulate(decisions[h], truth);
      for (const auto& d : decisions[h]) rep.categories.add(d.category);
    }
  }

  // Auxiliary balanced classifier on labeled rows plus pseudo-labeled rows
  // of reference head 0.
  Matrix abc_grad_l, abc_grad_u;
  AbcLoss abc_out;
  if (abc_.enabled()) {
    const Matrix& feat_l = fl.features();
    std::vector<std::size_t> abc_labels = labels;
    std::vector<std::size_t> urows;
    if (ssl)
      for (std::size_t r = 0; r < ids.size(); ++r)
        if (decisions[0][r].weight > 0.0) {
          urows.push_back(r);
          abc_labels.push_back(*decisions[0][r].pseudo_label);
        }
    Matrix feats(feat_l.rows() + urows.size(), feat_l.cols());
    for (std::size_t r = 0; r < feat_l.rows(); ++r)
      std::copy(feat_l.row(r).begin(), feat_l.row(r).end(), feats.row(r).begin());
    for (std::size_t k = 0; k < urows.size(); ++k) {
      auto src = fs.features().row(urows[k]);
      std::copy(src.begin(), src.end(), feats.row(feat_l.rows() + k).begin());
    }
    abc_out = abc_.loss(feats, abc_labels, abc_rng_);
    rep.abc_loss = abc_out.loss;
    const double w = config_.abc_loss_weight;
    abc_grad_l = Matrix(feat_l.rows(), feat_l.cols());
    for (std::size_t r = 0; r < feat_l.rows(); ++r)
      for (std::size_t i = 0; i < feat_l.cols(); ++i)
        abc_grad_l(r, i) = w * abc_out.feature_grad(r, i);
    if (ssl) {
      abc_grad_u = Matrix(ids.size(), feat_l.cols());
      for (std::size_t k = 0; k < urows.size(); ++k)
        for (std::size_t i = 0; i < feat_l.cols(); ++i)
          abc_grad_u(urows[k], i) = w * abc_out.feature_grad(feat_l.rows() + k, i);
    }
  }

  double sum_sup = 0.0, sum_unsup = 0.0;
  for (double v : rep.loss_sup) sum_sup += v;
  for (double v : rep.loss_unsup) sum_unsup += v;
  rep.total = sum_sup + config_.w_u * sum_unsup;
  if (abc_.enabled()) rep.total += config_.abc_loss_weight * rep.abc_loss;
  if (!std::isfinite(rep.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << rep.step << " (epoch " << rep.epoch
        << "): supervised " << sum_sup << ", unsupervised " << sum_unsup << ", abc "
        << rep.abc_loss;
    fail(ErrorKind::Divergence, msg.str());
  }

  Gradients grads =
      model_.backward(fl.cache, sup.logit_grads, abc_.enabled() ? &abc_grad_l : nullptr);
  if (ssl) {
    std::vector<Matrix> scaled = std::move(unsup.logit_grads);
    bool any = abc_.enabled() && !all_zero(abc_grad_u);
    for (auto& g : scaled) {
      for (double& v : g.values()) v *= config_.w_u;
      any = any || !all_zero(g);
    }
    if (any)
      grads.add_scaled(
          model_.backward(fs.cache, scaled, abc_.enabled() ? &abc_grad_u : nullptr), 1.0);
  }
  optimizer_.apply_update(model_, grads, lr);
  if (abc_.enabled()) {
    Parameters g = std::move(abc_out.layer_grad);
    for (auto& layer : g.heads) {
      for (double& v : layer.weight.values()) v *= config_.abc_loss_weight;
      for (double& v : layer.bias) v *= config_.abc_loss_weight;
    }
    abc_optimizer_.apply_update(abc_.mutable_params(), g, lr);
  }

  if (ssl) update_state(fw.preds, ids);

  if (decision_trace_ && ssl)
    for (std::size_t h = 0; h < num_heads_; ++h)
      for (std::size_t r = 0; r < ids.size(); ++r) {
        const auto& d = decisions[h][r];
        *decision_trace_ << rep.step << ',' << h << ',' << ids[r] << ',' << to_string(d.category)
                         << ',' << textio::format_double(d.weight) << ','
                         << (d.pseudo_label ? std::to_string(*d.pseudo_label) : std::string())
                         << ',' << split_.unlabeled[ids[r]].true_label << '\n';
      }

  ++steps_done_;
  ++epoch_steps_;
  epoch_loss_sup_ += sum_sup;
  epoch_loss_unsup_ += sum_unsup;
  for (const auto& t : rep.per_head) epoch_pseudo_ += t;
  epoch_categories_ += rep.categories;

  if (epoch_steps_ >= steps_per_epoch()) {
    end_epoch();
    rep.epoch_end = true;
  }
  return rep;
}

EpochMetrics Trainer::run_epoch() {
  StepReport rep;
  do {
    rep = train_step();
  } while (!rep.epoch_end);
  EpochMetrics m;
  m.epoch = epochs_done_;
  m.loss_sup = epoch_loss_sup_ / static_cast<double>(epoch_steps_);
  m.loss_unsup = epoch_loss_unsup_ / static_cast<double>(epoch_steps_);
  m.pseudo = epoch_pseudo_;
  m.categories = epoch_categories_;
  m.val_error = split_.validation.empty() ? 0.0 : evaluate(split_.validation);
  m.test_error = split_.test.empty() ? 0.0 : evaluate(split_.test);
  for (std::size_t h = 0; h < num_heads_; ++h) {
    double total = 0.0;
    for (std::size_t c = 0; c < model_config_.num_classes; ++c)
      total += config_.algorithm == Algorithm::MarginMatchSimplified
                   ? state_.margin_gamma
                   : state_.gamma.threshold(h, c);
    m.gamma_mean.push_back(total / static_cast<double>(model_config_.num_classes));
  }
  return m;
}

std::vector<EpochMetrics> Trainer::run() {
  std::vector<EpochMetrics> out;
  while (epochs_done_ < config_.epochs) out.push_back(run_epoch());
  return out;
}

std::vector<std::size_t> Trainer::predict(std::span<const Sample> samples) const {
  if (samples.empty()) return {};
  const ForwardPass pass = model_.forward(stack_features(samples));
  if (abc_.enabled()) return abc_.predict(pass.features());
  const Matrix z = ensemble_logits(pass.preds);
  std::vector<std::size_t> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out[r] = argmax(z.row(r));
  return out;
}

double Trainer::evaluate(std::span<const Sample> samples) const {
  require(!samples.empty(), "cannot evaluate on an empty dataset");
  const auto pred = predict(samples);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) wrong += pred[i] != samples[i].true_label;
  return static_cast<double>(wrong) / static_cast<double>(samples.size());
}

void Trainer::set_decision_trace(std::ostream* os) {
  decision_trace_ = os;
  if (os) *os << "step,head,sample_id,category,weight,pseudo_label,true_label\n";
}

void Trainer::set_gamma_trace(std::ostream* os) {
  gamma_trace_ = os;
  if (os) *os << "epoch,head,class,gamma\n";
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  if (in_epoch_)
    fail(ErrorKind::ContractViolation, "checkpoints are only taken at epoch boundaries");
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot write " + path.string());
  os << "multimatch-checkpoint 1\n";
  os << "algorithm " << to_string(config_.algorithm) << '\n';
  os << "epochs_done " << epochs_done_ << '\n';
  os << "steps_done " << steps_done_ << '\n';
  os << "labeled_pos " << labeled_pos_ << '\n';
  os << "labeled_order " << labeled_order_.size();
  for (auto i : labeled_order_) os << ' ' << i;
  os << '\n';
  os << "unlabeled_order " << unlabeled_order_.size();
  for (auto i : unlabeled_order_) os << ' ' << i;
  os << '\n';
  for (const Rng* rng : {&labeled_order_rng_, &labeled_aug_rng_, &unlabeled_order_rng_,
                         &unlabeled_aug_rng_, &abc_rng_}) {
    os << "rng ";
    rng->save(os);
    os << '\n';
  }
  model_.save(os);
  optimizer_.save(os);
  abc_.save(os);
  abc_optimizer_.save(os);
  os << "threshold_states " << state_.thresholds.size() << '\n';
  for (const auto& t : state_.thresholds) t.save(os);
  state_.ledger.save(os);
  state_.gamma.save(os);
  os << "margin_gamma " << textio::format_double(state_.margin_gamma) << '\n';
  os << "margin_reservoir " << state_.margin_reservoir.size() << '\n';
  textio::write_values(os, state_.margin_reservoir);
  if (!os) fail(ErrorKind::Io, "failed writing " + path.string());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot read " + path.string());
  textio::expect(is, "multimatch-checkpoint");
  if (textio::read_size(is) != 1) fail(ErrorKind::Io, "unsupported checkpoint version");
  textio::expect(is, "algorithm");
  if (textio::read_token(is) != to_string(config_.algorithm))
    fail(ErrorKind::Io, "checkpoint was written by a different algorithm");
  textio::expect(is, "epochs_done");
  const std::size_t epochs_done = textio::read_size(is);
  textio::expect(is, "steps_done");
  const std::size_t steps_done = textio::read_size(is);
  textio::expect(is, "labeled_pos");
  const std::size_t labeled_pos = textio::read_size(is);
  textio::expect(is, "labeled_order");
  std::vector<std::size_t> labeled_order(textio::read_size(is));
  for (auto& i : labeled_order) i = textio::read_size(is);
  textio::expect(is, "unlabeled_order");
  std::vector<std::size_t> unlabeled_order(textio::read_size(is));
  for (auto& i : unlabeled_order) i = textio::read_size(is);
  if (labeled_order.size() != split_.labeled.size() ||
      unlabeled_order.size() != split_.unlabeled.size())
    fail(ErrorKind::Io, "checkpoint does not match the data split");
  for (Rng* rng : {&labeled_order_rng_, &labeled_aug_rng_, &unlabeled_order_rng_,
                   &unlabeled_aug_rng_, &abc_rng_}) {
    textio::expect(is, "rng");
    rng->load(is);
  }
  Model model = Model::load(is);
  const auto& mc = model.config();
  if (mc.input_dim != model_config_.input_dim || mc.hidden_dims != model_config_.hidden_dims ||
      mc.num_classes != model_config_.num_classes || mc.num_heads != num_heads_)
    fail(ErrorKind::Io, "checkpoint model does not match the run config");
  optimizer_.load(is, model.params());
  AbcBalancer abc = AbcBalancer::load(is);
  if (abc.enabled() != config_.abc)
    fail(ErrorKind::Io, "checkpoint auxiliary classifier does not match the run config");
  abc_optimizer_.load(is, abc.params());
  textio::expect(is, "threshold_states");
  std::vector<ThresholdState> thresholds;
  for (std::size_t k = textio::read_size(is); k > 0; --k)
    thresholds.push_back(ThresholdState::load(is));
  StateBundle state;
  state.thresholds = std::move(thresholds);
  state.ledger = ApmLedger::load(is);
  state.gamma = GammaState::load(is);
  textio::expect(is, "margin_gamma");
  state.margin_gamma = textio::read_double(is);
  textio::expect(is, "margin_reservoir");
  state.margin_reservoir.resize(textio::read_size(is));
  textio::read_values(is, state.margin_reservoir);

  model_ = std::move(model);
  abc_ = std::move(abc);
  state_ = std::move(state);
  epochs_done_ = epochs_done;
  steps_done_ = steps_done;
  labeled_pos_ = labeled_pos;
  labeled_order_ = std::move(labeled_order);
  unlabeled_order_ = std::move(unlabeled_order);
  in_epoch_ = false;
}

}  // namespace multimatch
