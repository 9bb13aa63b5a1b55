#pragma once

// Shared-backbone classifier with H independent linear heads.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "multimatch/numkit.hpp"

namespace multimatch {

enum class Activation { Relu, Tanh };

const char* to_string(Activation a);
Activation parse_activation(const std::string& s);

struct ModelConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims{32};
  std::size_t num_classes = 4;
  std::size_t num_heads = 3;
  Activation activation = Activation::Relu;
  double weight_init_scale = 1.0;

  void validate() const;
  // Width of the features the heads read (input_dim for a linear model).
  std::size_t feature_dim() const noexcept {
    return hidden_dims.empty() ? input_dim : hidden_dims.back();
  }
};

struct AffineLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  std::size_t count() const noexcept { return weight.size() + bias.size(); }

  friend bool operator==(const AffineLayer&, const AffineLayer&) = default;
};

// Parameter set of a model; gradients share the same layout.
struct Parameters {
  std::vector<AffineLayer> backbone;
  std::vector<AffineLayer> heads;

  std::size_t count() const noexcept;
  bool all_finite() const noexcept;
  void add_scaled(const Parameters& other, double scale);
  static Parameters zeros_like(const Parameters& shape);

  // Visits every (value, is_weight) slot in a fixed order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto* group : {&backbone, &heads})
      for (auto& layer : *group) {
        for (double& w : layer.weight.values()) fn(w, true);
        for (double& b : layer.bias) fn(b, false);
      }
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto* group : {&backbone, &heads})
      for (const auto& layer : *group) {
        for (double w : layer.weight.values()) fn(w, true);
        for (double b : layer.bias) fn(b, false);
      }
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

using Gradients = Parameters;

// Per-head logits, probabilities and argmax labels for one batch.
struct HeadPredictions {
  std::vector<Matrix> logits;  // one (samples x classes) matrix per head
  std::vector<Matrix> probs;
  std::vector<std::vector<std::size_t>> labels;

  static HeadPredictions from_logits(std::vector<Matrix> head_logits);

  std::size_t num_heads() const noexcept { return logits.size(); }
  std::size_t num_samples() const noexcept {
    return logits.empty() ? 0 : logits.front().rows();
  }
  std::size_t num_classes() const noexcept {
    return logits.empty() ? 0 : logits.front().cols();
  }
};

struct ForwardCache {
  std::uint64_t model_id = 0;
  std::uint64_t version = 0;
  Matrix input;
  std::vector<Matrix> pre;   // backbone pre-activations
  std::vector<Matrix> post;  // backbone activations
};

struct ForwardPass {
  HeadPredictions preds;
  ForwardCache cache;

  const Matrix& features() const {
    return cache.post.empty() ? cache.input : cache.post.back();
  }
};

class Model {
 public:
  // Uniform init in [-s, s], s = weight_init_scale / sqrt(fan_in); zero biases.
  Model(ModelConfig config, Rng& rng);
  static Model zeros(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const Parameters& params() const noexcept { return params_; }
  // Mutable access invalidates outstanding forward caches.
  Parameters& mutable_params() noexcept {
    ++version_;
    return params_;
  }

  ForwardPass forward(const Matrix& features) const;

  // head_logit_grads holds dLoss/dlogits per head; an empty matrix means no
  // loss on that head. feature_grad adds an upstream gradient on the
  // backbone output (used by the auxiliary balanced classifier).
  Gradients backward(const ForwardCache& cache, std::span<const Matrix> head_logit_grads,
                     const Matrix* feature_grad = nullptr) const;

  void save(std::ostream& os) const;
  static Model load(std::istream& is);

 private:
  Model(ModelConfig config, Parameters params);

  ModelConfig config_;
  Parameters params_;
  std::uint64_t id_;
  std::uint64_t version_ = 0;
};

Matrix ensemble_logits(const HeadPredictions& preds);

enum class LrSchedule { Constant, Linear };

struct OptimizerConfig {
  double learning_rate = 0.05;
  double weight_decay = 0.0;
  double momentum = 0.9;
  LrSchedule schedule = LrSchedule::Constant;

  void validate() const;
};

// Momentum SGD with decoupled weight decay on weights (biases are not decayed):
//   v <- momentum * v + g;  w <- w - lr * weight_decay * w - lr * v
class SgdOptimizer {
 public:
  explicit SgdOptimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

  const OptimizerConfig& config() const noexcept { return config_; }

  // Throws Divergence on a non-finite gradient, leaving the model untouched.
  void apply_update(Model& model, const Gradients& grads, double learning_rate);
  void apply_update(Model& model, const Gradients& grads) {
    apply_update(model, grads, config_.learning_rate);
  }
  void apply_update(Parameters& params, const Gradients& grads, double learning_rate);

  void save(std::ostream& os) const;
  void load(std::istream& is, const Parameters& shape);

 private:
  OptimizerConfig config_;
  Parameters velocity_;
};

}  // namespace multimatch
