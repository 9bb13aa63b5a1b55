#include "multimatch/thresholds.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "multimatch/error.hpp"
#include "textio.hpp"

namespace multimatch {

ThresholdState::ThresholdState(std::size_t num_classes, double lambda)
    : lambda_(lambda),
      global_(1.0 / static_cast<double>(num_classes)),
      local_(num_classes, 1.0 / static_cast<double>(num_classes)) {
  require(num_classes >= 2, "threshold state needs at least two classes");
  require(lambda >= 0.0 && lambda <= 1.0, "threshold EMA decay must be in [0, 1]");
}

bool ThresholdState::update(const Matrix& weak_probs) {
  if (weak_probs.rows() == 0) return false;
  require(weak_probs.cols() == local_.size(), "probability width does not match class count");
  const double n = static_cast<double>(weak_probs.rows());
  double mean_max = 0.0;
  std::vector<double> mean_class(local_.size(), 0.0);
  for (std::size_t r = 0; r < weak_probs.rows(); ++r) {
    auto q = weak_probs.row(r);
    mean_max += *std::max_element(q.begin(), q.end());
    for (std::size_t c = 0; c < q.size(); ++c) mean_class[c] += q[c];
  }
  mean_max /= n;
  global_ = lambda_ * global_ + (1.0 - lambda_) * mean_max;
  for (std::size_t c = 0; c < local_.size(); ++c)
    local_[c] = lambda_ * local_[c] + (1.0 - lambda_) * (mean_class[c] / n);
  ++step_;
  return true;
}

double ThresholdState::class_threshold(std::size_t c) const {
  require(c < local_.size(), "class out of range");
  const double top = *std::max_element(local_.begin(), local_.end());
  return local_[c] / top * global_;
}

std::vector<double> ThresholdState::class_thresholds() const {
  std::vector<double> out(local_.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = class_threshold(c);
  return out;
}

bool ThresholdState::passes(std::span<const double> probs) const {
  const std::size_t c = argmax(probs);
  return probs[c] > class_threshold(c);
}

void ThresholdState::save(std::ostream& os) const {
  os << "thresholds " << local_.size() << ' ' << step_ << ' '
     << textio::format_double(lambda_) << ' ' << textio::format_double(global_) << '\n';
  textio::write_values(os, local_);
}

ThresholdState ThresholdState::load(std::istream& is) {
  textio::expect(is, "thresholds");
  const std::size_t C = textio::read_size(is);
  const std::size_t step = textio::read_size(is);
  const double lambda = textio::read_double(is);
  ThresholdState s(C, lambda);
  s.step_ = step;
  s.global_ = textio::read_double(is);
  textio::read_values(is, s.local_);
  return s;
}

}  // namespace multimatch
