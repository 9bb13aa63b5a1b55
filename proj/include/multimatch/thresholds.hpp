#pragma once

// Self-adaptive confidence thresholds: a global EMA of the batch mean
// max-confidence and a per-class EMA of mean class probability, combined as
//   tau_t(c) = p_t(c) / max_c' p_t(c') * tau_t
// A prediction passes when max(q) > tau_t(argmax q).

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "multimatch/numkit.hpp"

namespace multimatch {

class ThresholdState {
 public:
  // tau_0 = p_0(c) = 1/C.
  ThresholdState(std::size_t num_classes, double lambda);

  std::size_t num_classes() const noexcept { return local_.size(); }
  double lambda() const noexcept { return lambda_; }
  double global() const noexcept { return global_; }
  std::span<const double> local() const noexcept { return local_; }
  std::size_t step() const noexcept { return step_; }

  // One EMA step from a batch of probability rows. Returns false (and leaves
  // the state untouched) for an empty batch.
  bool update(const Matrix& weak_probs);

  std::vector<double> class_thresholds() const;
  double class_threshold(std::size_t c) const;

  // Strict: max(q) > tau_t(argmax q).
  bool passes(std::span<const double> probs) const;

  void save(std::ostream& os) const;
  static ThresholdState load(std::istream& is);

 private:
  double lambda_;
  double global_;
  std::vector<double> local_;
  std::size_t step_ = 0;
};

}  // namespace multimatch
