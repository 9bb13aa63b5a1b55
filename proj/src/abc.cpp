#include "multimatch/abc.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "multimatch/error.hpp"
#include "textio.hpp"

namespace multimatch {

std::vector<double> abc_mask_prob(std::span<const std::size_t> class_counts) {
  require(!class_counts.empty(), "no class counts");
  for (auto n : class_counts) require(n >= 1, "class counts must be at least 1");
  const double rarest = static_cast<double>(*std::min_element(class_counts.begin(), class_counts.end()));
  std::vector<double> beta(class_counts.size());
  for (std::size_t c = 0; c < beta.size(); ++c)
    beta[c] = rarest / static_cast<double>(class_counts[c]);
  return beta;
}

AbcBalancer::AbcBalancer(std::size_t feature_dim, std::span<const std::size_t> class_counts,
                         double weight_init_scale, Rng& rng)
    : beta_(abc_mask_prob(class_counts)) {
  require(feature_dim >= 1, "feature_dim must be positive");
  AffineLayer layer{Matrix(class_counts.size(), feature_dim),
                    std::vector<double>(class_counts.size(), 0.0)};
  const double bound = weight_init_scale / std::sqrt(static_cast<double>(feature_dim));
  for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
  params_.heads.push_back(std::move(layer));
}

std::vector<bool> AbcBalancer::draw_mask(std::span<const std::size_t> labels, Rng& rng) const {
  std::vector<bool> keep(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    require(labels[r] < beta_.size(), "label out of range");
    keep[r] = rng.bernoulli(beta_[labels[r]]);
  }
  return keep;
}

AbcLoss AbcBalancer::loss(const Matrix& features, std::span<const std::size_t> labels,
                          Rng& rng) const {
  return loss_with_mask(features, labels, draw_mask(labels, rng));
}

AbcLoss AbcBalancer::loss_with_mask(const Matrix& features, std::span<const std::size_t> labels,
                                    const std::vector<bool>& keep) const {
  require(enabled(), "auxiliary classifier is disabled");
  require(labels.size() == features.rows() && keep.size() == features.rows(),
          "one label and mask bit per feature row");
  const AffineLayer& layer = params_.heads.front();
  require(features.cols() == layer.in_dim(), "feature width mismatch");

  AbcLoss out;
  out.keep = keep;
  out.layer_grad = Parameters::zeros_like(params_);
  out.feature_grad = Matrix(features.rows(), features.cols());
  out.kept = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
  if (out.kept == 0) return out;

  const double inv = 1.0 / static_cast<double>(out.kept);
  const Matrix z = logits(features);
  AffineLayer& g = out.layer_grad.heads.front();
  for (std::size_t r = 0; r < features.rows(); ++r) {
    if (!keep[r]) continue;
    auto p = softmax(z.row(r));
    out.loss += cross_entropy(labels[r], p) * inv;
    p[labels[r]] -= 1.0;
    auto x = features.row(r);
    auto dx = out.feature_grad.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) {
      const double gc = p[c] * inv;
      auto w = layer.weight.row(c);
      auto dw = g.weight.row(c);
      for (std::size_t i = 0; i < x.size(); ++i) {
        dw[i] += gc * x[i];
        dx[i] += gc * w[i];
      }
      g.bias[c] += gc;
    }
  }
  return out;
}

Matrix AbcBalancer::logits(const Matrix& features) const {
  require(enabled(), "auxiliary classifier is disabled");
  const AffineLayer& layer = params_.heads.front();
  Matrix z(features.rows(), layer.out_dim());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto x = features.row(r);
    for (std::size_t c = 0; c < layer.out_dim(); ++c) {
      auto w = layer.weight.row(c);
      double acc = layer.bias[c];
      for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
      z(r, c) = acc;
    }
  }
  return z;
}

std::vector<std::size_t> AbcBalancer::predict(const Matrix& features) const {
  const Matrix z = logits(features);
  std::vector<std::size_t> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out[r] = argmax(z.row(r));
  return out;
}

void AbcBalancer::save(std::ostream& os) const {
  if (!enabled()) {
    os << "abc 0\n";
    return;
  }
  const AffineLayer& layer = params_.heads.front();
  os << "abc 1 " << layer.out_dim() << ' ' << layer.in_dim() << '\n';
  textio::write_values(os, beta_);
  textio::write_values(os, layer.weight.values());
  textio::write_values(os, layer.bias);
}

AbcBalancer AbcBalancer::load(std::istream& is) {
  textio::expect(is, "abc");
  AbcBalancer abc;
  if (textio::read_size(is) == 0) return abc;
  const std::size_t classes = textio::read_size(is);
  const std::size_t dim = textio::read_size(is);
  abc.beta_.resize(classes);
  textio::read_values(is, abc.beta_);
  AffineLayer layer{Matrix(classes, dim), std::vector<double>(classes)};
  textio::read_values(is, layer.weight.values());
  textio::read_values(is, layer.bias);
  abc.params_.heads.push_back(std::move(layer));
  return abc;
}

}  // namespace multimatch
