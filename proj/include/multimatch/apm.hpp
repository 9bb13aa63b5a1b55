#pragma once

// Pseudo-margins, Average Pseudo-Margin (APM) bookkeeping, and the
// class-wise APM thresholds estimated from head-agreement sets.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace multimatch {

// z_c - max_{i != c} z_i. Positive iff c is the strict argmax.
double pseudo_margin(std::span<const double> logits, std::size_t c);

// Per (head, sample, class) APM with a per (head, sample) update counter.
// Each update applies, for every class,
//   APM <- PM * lambda_m / (1 + t) + APM * (1 - lambda_m / (1 + t))
// with t the number of previous updates of that (head, sample).
class ApmLedger {
 public:
  ApmLedger() = default;
  ApmLedger(std::size_t num_heads, std::size_t num_samples, std::size_t num_classes,
            double lambda_m);

  std::size_t num_heads() const noexcept { return heads_; }
  std::size_t num_samples() const noexcept { return samples_; }
  std::size_t num_classes() const noexcept { return classes_; }
  double lambda() const noexcept { return lambda_; }

  void update(std::size_t head, std::size_t sample_id, std::span<const double> logits);

  double value(std::size_t head, std::size_t sample_id, std::size_t c) const;
  std::span<const double> values(std::size_t head, std::size_t sample_id) const;
  std::size_t update_count(std::size_t head, std::size_t sample_id) const;

  void save(std::ostream& os) const;
  static ApmLedger load(std::istream& is);

 private:
  std::size_t slot(std::size_t head, std::size_t sample_id) const;

  std::size_t heads_ = 0;
  std::size_t samples_ = 0;
  std::size_t classes_ = 0;
  double lambda_ = 0.999;
  std::vector<double> apm_;
  std::vector<std::size_t> counts_;
};

// Class-wise APM thresholds gamma[h][c] with per-epoch reservoirs of APM
// values from samples on which the heads other than h agree on class c.
class GammaState {
 public:
  GammaState() = default;
  // gamma_min = nullopt disables the lower bound. Thresholds start at the
  // lower bound, or at 0 when it is disabled.
  GammaState(std::size_t num_heads, std::size_t num_classes, double percent,
             std::optional<double> gamma_min);

  std::size_t num_heads() const noexcept { return heads_; }
  std::size_t num_classes() const noexcept { return classes_; }
  double percent() const noexcept { return percent_; }
  std::optional<double> gamma_min() const noexcept { return gamma_min_; }

  double threshold(std::size_t head, std::size_t c) const;
  std::span<const double> reservoir(std::size_t head, std::size_t c) const;

  void record(std::size_t head, std::size_t c, double apm_value);
  // gamma = max(gamma_min, percentile_f(reservoir)) for every non-empty
  // reservoir; empty reservoirs keep their gamma. Clears all reservoirs.
  void recompute();

  void save(std::ostream& os) const;
  static GammaState load(std::istream& is);

 private:
  std::size_t index(std::size_t head, std::size_t c) const;

  std::size_t heads_ = 0;
  std::size_t classes_ = 0;
  double percent_ = 5.0;
  std::optional<double> gamma_min_;
  std::vector<double> gamma_;
  std::vector<std::vector<double>> reservoirs_;
};

// APM[h][sample][c] > gamma[h][c], strictly.
bool apm_high_confidence(const ApmLedger& ledger, const GammaState& gamma, std::size_t head,
                         std::size_t sample_id, std::size_t c);

// Feeds the gamma reservoirs from one sample's weak-view labels: for every
// target head h whose two other heads agree on class c, both of their APM
// values for c are recorded into reservoir (h, c). Requires three heads.
void record_agreement(GammaState& gamma, const ApmLedger& ledger, std::size_t sample_id,
                      std::span<const std::size_t> head_labels);

}  // namespace multimatch
