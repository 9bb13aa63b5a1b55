#pragma once

// Auxiliary balanced classifier: one extra linear layer on the backbone
// features, trained on a Bernoulli subsample that keeps a sample of class c
// with probability beta_c = min_k N_k / N_c.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "multimatch/model.hpp"
#include "multimatch/numkit.hpp"

namespace multimatch {

std::vector<double> abc_mask_prob(std::span<const std::size_t> class_counts);

struct AbcLoss {
  double loss = 0.0;
  std::size_t kept = 0;
  std::vector<bool> keep;
  Parameters layer_grad;  // heads[0] holds the auxiliary layer gradient
  Matrix feature_grad;    // dLoss / dfeatures, rows match the input
};

class AbcBalancer {
 public:
  AbcBalancer() = default;
  AbcBalancer(std::size_t feature_dim, std::span<const std::size_t> class_counts,
              double weight_init_scale, Rng& rng);

  bool enabled() const noexcept { return !params_.heads.empty(); }
  std::size_t num_classes() const noexcept { return beta_.size(); }
  std::span<const double> beta() const noexcept { return beta_; }

  const AffineLayer& layer() const { return params_.heads.front(); }
  Parameters& mutable_params() noexcept { return params_; }
  const Parameters& params() const noexcept { return params_; }

  std::vector<bool> draw_mask(std::span<const std::size_t> labels, Rng& rng) const;

  // Mean cross-entropy over kept rows (0 with zero gradients if none kept).
  AbcLoss loss(const Matrix& features, std::span<const std::size_t> labels, Rng& rng) const;
  AbcLoss loss_with_mask(const Matrix& features, std::span<const std::size_t> labels,
                         const std::vector<bool>& keep) const;

  Matrix logits(const Matrix& features) const;
  std::vector<std::size_t> predict(const Matrix& features) const;

  void save(std::ostream& os) const;
  static AbcBalancer load(std::istream& is);

 private:
  Parameters params_;
  std::vector<double> beta_;
};

}  // namespace multimatch
