#include "multimatch/apm.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <ostream>

#include "multimatch/error.hpp"
#include "multimatch/numkit.hpp"
#include "textio.hpp"

namespace multimatch {

double pseudo_margin(std::span<const double> logits, std::size_t c) {
  require(logits.size() >= 2, "pseudo-margin needs at least two classes");
  require(c < logits.size(), "class out of range");
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != c) other = std::max(other, logits[i]);
  return logits[c] - other;
}

ApmLedger::ApmLedger(std::size_t num_heads, std::size_t num_samples, std::size_t num_classes,
                     double lambda_m)
    : heads_(num_heads),
      samples_(num_samples),
      classes_(num_classes),
      lambda_(lambda_m),
      apm_(num_heads * num_samples * num_classes, 0.0),
      counts_(num_heads * num_samples, 0) {
  require(num_classes >= 2, "APM ledger needs at least two classes");
  require(lambda_m >= 0.0 && lambda_m <= 1.0, "APM EMA decay must be in [0, 1]");
}

std::size_t ApmLedger::slot(std::size_t head, std::size_t sample_id) const {
  require(head < heads_ && sample_id < samples_, "APM ledger index out of range");
  return head * samples_ + sample_id;
}

void ApmLedger::update(std::size_t head, std::size_t sample_id, std::span<const double> logits) {
  require(logits.size() == classes_, "logit width does not match the ledger");
  const std::size_t s = slot(head, sample_id);
  const double t = static_cast<double>(counts_[s]);
  const double mix = lambda_ / (1.0 + t);
  double* apm = apm_.data() + s * classes_;
  for (std::size_t c = 0; c < classes_; ++c)
    apm[c] = pseudo_margin(logits, c) * mix + apm[c] * (1.0 - mix);
  ++counts_[s];
}

double ApmLedger::value(std::size_t head, std::size_t sample_id, std::size_t c) const {
  require(c < classes_, "class out of range");
  return apm_[slot(head, sample_id) * classes_ + c];
}

std::span<const double> ApmLedger::values(std::size_t head, std::size_t sample_id) const {
  return {apm_.data() + slot(head, sample_id) * classes_, classes_};
}

std::size_t ApmLedger::update_count(std::size_t head, std::size_t sample_id) const {
  return counts_[slot(head, sample_id)];
}

void ApmLedger::save(std::ostream& os) const {
  os << "apm " << heads_ << ' ' << samples_ << ' ' << classes_ << ' '
     << textio::format_double(lambda_) << '\n';
  for (std::size_t i = 0; i < counts_.size(); ++i) os << (i ? " " : "") << counts_[i];
  os << '\n';
  textio::write_values(os, apm_);
}

ApmLedger ApmLedger::load(std::istream& is) {
  textio::expect(is, "apm");
  const std::size_t h = textio::read_size(is);
  const std::size_t n = textio::read_size(is);
  const std::size_t c = textio::read_size(is);
  ApmLedger ledger(h, n, c, textio::read_double(is));
  for (auto& k : ledger.counts_) k = textio::read_size(is);
  textio::read_values(is, ledger.apm_);
  return ledger;
}

GammaState::GammaState(std::size_t num_heads, std::size_t num_classes, double percent,
                       std::optional<double> gamma_min)
    : heads_(num_heads),
      classes_(num_classes),
      percent_(percent),
      gamma_min_(gamma_min),
      gamma_(num_heads * num_classes, gamma_min.value_or(0.0)),
      reservoirs_(num_heads * num_classes) {
  require(percent > 0.0 && percent < 100.0, "percentile must be in (0, 100)");
}

std::size_t GammaState::index(std::size_t head, std::size_t c) const {
  require(head < heads_ && c < classes_, "gamma index out of range");
  return head * classes_ + c;
}

double GammaState::threshold(std::size_t head, std::size_t c) const {
  return gamma_[index(head, c)];
}

std::span<const double> GammaState::reservoir(std::size_t head, std::size_t c) const {
  return reservoirs_[index(head, c)];
}

void GammaState::record(std::size_t head, std::size_t c, double apm_value) {
  reservoirs_[index(head, c)].push_back(apm_value);
}

void GammaState::recompute() {
  for (std::size_t i = 0; i < gamma_.size(); ++i) {
    auto& pool = reservoirs_[i];
    if (pool.empty()) continue;
    double g = percentile_lower(pool, percent_);
    if (gamma_min_) g = std::max(*gamma_min_, g);
    gamma_[i] = g;
    pool.clear();
  }
}

void GammaState::save(std::ostream& os) const {
  os << "gamma " << heads_ << ' ' << classes_ << ' ' << textio::format_double(percent_) << ' '
     << (gamma_min_ ? textio::format_double(*gamma_min_) : std::string("none")) << '\n';
  textio::write_values(os, gamma_);
  for (const auto& pool : reservoirs_) {
    os << pool.size() << (pool.empty() ? "" : " ");
    textio::write_values(os, pool);
  }
}

GammaState GammaState::load(std::istream& is) {
  textio::expect(is, "gamma");
  const std::size_t h = textio::read_size(is);
  const std::size_t c = textio::read_size(is);
  const double percent = textio::read_double(is);
  const auto bound = textio::read_token(is);
  std::optional<double> gamma_min;
  if (bound != "none") gamma_min = textio::parse_double(bound);
  GammaState g(h, c, percent, gamma_min);
  textio::read_values(is, g.gamma_);
  for (auto& pool : g.reservoirs_) {
    pool.resize(textio::read_size(is));
    textio::read_values(is, pool);
  }
  return g;
}

bool apm_high_confidence(const ApmLedger& ledger, const GammaState& gamma, std::size_t head,
                         std::size_t sample_id, std::size_t c) {
  return ledger.value(head, sample_id, c) > gamma.threshold(head, c);
}

void record_agreement(GammaState& gamma, const ApmLedger& ledger, std::size_t sample_id,
                      std::span<const std::size_t> head_labels) {
  if (head_labels.size() != 3)
    fail(ErrorKind::UnsupportedConfig, "agreement sets are defined for exactly three heads");
  for (std::size_t h = 0; h < 3; ++h) {
    const std::size_t i = (h + 1) % 3;
    const std::size_t j = (h + 2) % 3;
    const std::size_t a = std::min(i, j);
    const std::size_t b = std::max(i, j);
    if (head_labels[a] != head_labels[b]) continue;
    const std::size_t c = head_labels[a];
    gamma.record(h, c, ledger.value(a, sample_id, c));
    gamma.record(h, c, ledger.value(b, sample_id, c));
  }
}

}  // namespace multimatch
