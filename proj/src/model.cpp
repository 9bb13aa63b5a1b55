#include "multimatch/model.hpp"

#include <atomic>
#include <cmath>
#include <istream>
#include <ostream>

#include "multimatch/error.hpp"
#include "textio.hpp"

namespace multimatch {

namespace {

std::uint64_t next_model_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

AffineLayer make_layer(std::size_t in, std::size_t out) {
  return AffineLayer{Matrix(out, in), std::vector<double>(out, 0.0)};
}

void init_uniform(AffineLayer& layer, double scale, Rng& rng) {
  const double bound = scale / std::sqrt(static_cast<double>(layer.in_dim()));
  for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
}

Parameters make_shape(const ModelConfig& cfg) {
  Parameters p;
  std::size_t in = cfg.input_dim;
  for (std::size_t width : cfg.hidden_dims) {
    p.backbone.push_back(make_layer(in, width));
    in = width;
  }
  for (std::size_t h = 0; h < cfg.num_heads; ++h)
    p.heads.push_back(make_layer(in, cfg.num_classes));
  return p;
}

// out = in * W^T + b
Matrix affine(const Matrix& in, const AffineLayer& layer) {
  Matrix out(in.rows(), layer.out_dim());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto x = in.row(r);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
      out(r, o) = acc;
    }
  }
  return out;
}

double activate(Activation a, double x) {
  return a == Activation::Relu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

double activate_grad(Activation a, double pre, double post) {
  return a == Activation::Relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

// Accumulates dW += g^T x, db += colsum(g); returns g * W when wanted.
void affine_backward(const Matrix& x, const Matrix& g, const AffineLayer& layer,
                     AffineLayer& grad, Matrix* dx) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto gr = g.row(r);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double go = gr[o];
      if (go == 0.0) continue;
      auto dw = grad.weight.row(o);
      for (std::size_t i = 0; i < xr.size(); ++i) dw[i] += go * xr[i];
      grad.bias[o] += go;
    }
  }
  if (!dx) return;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto gr = g.row(r);
    auto out = dx->row(r);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double go = gr[o];
      if (go == 0.0) continue;
      auto w = layer.weight.row(o);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += go * w[i];
    }
  }
}

void write_layer(std::ostream& os, const AffineLayer& layer) {
  os << "layer " << layer.out_dim() << ' ' << layer.in_dim() << '\n';
  textio::write_values(os, layer.weight.values());
  textio::write_values(os, layer.bias);
}

AffineLayer read_layer(std::istream& is, std::size_t in, std::size_t out) {
  textio::expect(is, "layer");
  if (textio::read_size(is) != out || textio::read_size(is) != in)
    fail(ErrorKind::Io, "checkpoint layer shape does not match its config");
  AffineLayer layer = make_layer(in, out);
  textio::read_values(is, layer.weight.values());
  textio::read_values(is, layer.bias);
  return layer;
}

}  // namespace

const char* to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  fail(ErrorKind::InvalidInput, "unknown activation '" + s + "'");
}

void ModelConfig::validate() const {
  require(input_dim >= 1, "input_dim must be at least 1");
  require(num_classes >= 2, "num_classes must be at least 2");
  require(num_heads >= 1, "num_heads must be at least 1");
  for (std::size_t w : hidden_dims) require(w >= 1, "hidden widths must be positive");
  require(weight_init_scale >= 0.0 && std::isfinite(weight_init_scale),
          "weight_init_scale must be finite and non-negative");
}

std::size_t Parameters::count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : backbone) n += l.count();
  for (const auto& l : heads) n += l.count();
  return n;
}

bool Parameters::all_finite() const noexcept {
  bool ok = true;
  for_each([&](double v, bool) { ok = ok && std::isfinite(v); });
  return ok;
}

void Parameters::add_scaled(const Parameters& other, double scale) {
  auto add = [scale](std::vector<AffineLayer>& dst, const std::vector<AffineLayer>& src) {
    require(dst.size() == src.size(), "parameter layouts differ");
    for (std::size_t l = 0; l < dst.size(); ++l) {
      auto dw = dst[l].weight.values();
      auto sw = src[l].weight.values();
      require(dw.size() == sw.size() && dst[l].bias.size() == src[l].bias.size(),
              "parameter layouts differ");
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += scale * sw[i];
      for (std::size_t i = 0; i < dst[l].bias.size(); ++i)
        dst[l].bias[i] += scale * src[l].bias[i];
    }
  };
  add(backbone, other.backbone);
  add(heads, other.heads);
}

Parameters Parameters::zeros_like(const Parameters& shape) {
  Parameters p = shape;
  p.for_each([](double& v, bool) { v = 0.0; });
  return p;
}

HeadPredictions HeadPredictions::from_logits(std::vector<Matrix> head_logits) {
  HeadPredictions p;
  p.logits = std::move(head_logits);
  for (const auto& z : p.logits) {
    p.probs.push_back(softmax_rows(z));
    std::vector<std::size_t> labels(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) labels[r] = argmax(z.row(r));
    p.labels.push_back(std::move(labels));
  }
  return p;
}

Model::Model(ModelConfig config, Rng& rng) : Model(std::move(config), Parameters{}) {
  params_ = make_shape(config_);
  for (auto& layer : params_.backbone) init_uniform(layer, config_.weight_init_scale, rng);
  for (auto& layer : params_.heads) init_uniform(layer, config_.weight_init_scale, rng);
}

Model::Model(ModelConfig config, Parameters params)
    : config_(std::move(config)), params_(std::move(params)), id_(next_model_id()) {
  config_.validate();
}

Model Model::zeros(ModelConfig config) {
  auto shape = make_shape(config);
  return Model(std::move(config), std::move(shape));
}

ForwardPass Model::forward(const Matrix& features) const {
  if (features.cols() != config_.input_dim)
    fail(ErrorKind::InvalidInput, "feature width " + std::to_string(features.cols()) +
                                      " does not match input_dim " +
                                      std::to_string(config_.input_dim));
  ForwardPass pass;
  pass.cache.model_id = id_;
  pass.cache.version = version_;
  pass.cache.input = features;
  const Matrix* x = &pass.cache.input;
  for (const auto& layer : params_.backbone) {
    Matrix pre = affine(*x, layer);
    Matrix post(pre.rows(), pre.cols());
    auto src = pre.values();
    auto dst = post.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = activate(config_.activation, src[i]);
    pass.cache.pre.push_back(std::move(pre));
    pass.cache.post.push_back(std::move(post));
    x = &pass.cache.post.back();
  }
  std::vector<Matrix> logits;
  logits.reserve(params_.heads.size());
  for (const auto& head : params_.heads) logits.push_back(affine(*x, head));
  for (const auto& z : logits)
    if (!z.all_finite()) {
      if (!features.all_finite()) fail(ErrorKind::InvalidInput, "non-finite input features");
      fail(ErrorKind::Divergence, "non-finite logits from finite inputs");
    }
  pass.preds = HeadPredictions::from_logits(std::move(logits));
  return pass;
}

Gradients Model::backward(const ForwardCache& cache, std::span<const Matrix> head_logit_grads,
                          const Matrix* feature_grad) const {
  if (cache.model_id != id_ || cache.version != version_)
    fail(ErrorKind::ContractViolation, "forward cache is stale for this model");
  require(head_logit_grads.size() == params_.heads.size(),
          "one logit gradient per head is required");

  Gradients grads = Parameters::zeros_like(params_);
  const Matrix& features = cache.post.empty() ? cache.input : cache.post.back();
  Matrix dfeat(features.rows(), features.cols());
  for (std::size_t h = 0; h < params_.heads.size(); ++h) {
    const Matrix& g = head_logit_grads[h];
    if (g.size() == 0) continue;
    require(g.rows() == features.rows() && g.cols() == config_.num_classes,
            "logit gradient shape mismatch");
    affine_backward(features, g, params_.heads[h], grads.heads[h], &dfeat);
  }
  if (feature_grad) {
    require(feature_grad->rows() == dfeat.rows() && feature_grad->cols() == dfeat.cols(),
            "feature gradient shape mismatch");
    auto dst = dfeat.values();
    auto src = feature_grad->values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  Matrix upstream = std::move(dfeat);
  for (std::size_t l = params_.backbone.size(); l-- > 0;) {
    const Matrix& pre = cache.pre[l];
    const Matrix& post = cache.post[l];
    auto g = upstream.values();
    auto pv = pre.values();
    auto qv = post.values();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] *= activate_grad(config_.activation, pv[i], qv[i]);
    const Matrix& below = l == 0 ? cache.input : cache.post[l - 1];
    Matrix dbelow(below.rows(), below.cols());
    affine_backward(below, upstream, params_.backbone[l], grads.backbone[l],
                    l == 0 ? nullptr : &dbelow);
    upstream = std::move(dbelow);
  }
  return grads;
}

void Model::save(std::ostream& os) const {
  os << "multimatch-model 1\n";
  os << "input_dim " << config_.input_dim << '\n';
  os << "hidden_dims " << config_.hidden_dims.size();
  for (auto w : config_.hidden_dims) os << ' ' << w;
  os << '\n';
  os << "num_classes " << config_.num_classes << '\n';
  os << "num_heads " << config_.num_heads << '\n';
  os << "activation " << to_string(config_.activation) << '\n';
  os << "weight_init_scale " << textio::format_double(config_.weight_init_scale) << '\n';
  os << "backbone " << params_.backbone.size() << '\n';
  for (const auto& l : params_.backbone) write_layer(os, l);
  os << "heads " << params_.heads.size() << '\n';
  for (const auto& l : params_.heads) write_layer(os, l);
}

Model Model::load(std::istream& is) {
  textio::expect(is, "multimatch-model");
  if (textio::read_size(is) != 1) fail(ErrorKind::Io, "unsupported model format version");
  ModelConfig cfg;
  textio::expect(is, "input_dim");
  cfg.input_dim = textio::read_size(is);
  textio::expect(is, "hidden_dims");
  cfg.hidden_dims.resize(textio::read_size(is));
  for (auto& w : cfg.hidden_dims) w = textio::read_size(is);
  textio::expect(is, "num_classes");
  cfg.num_classes = textio::read_size(is);
  textio::expect(is, "num_heads");
  cfg.num_heads = textio::read_size(is);
  textio::expect(is, "activation");
  cfg.activation = parse_activation(textio::read_token(is));
  textio::expect(is, "weight_init_scale");
  cfg.weight_init_scale = textio::read_double(is);
  cfg.validate();

  Parameters p;
  textio::expect(is, "backbone");
  if (textio::read_size(is) != cfg.hidden_dims.size())
    fail(ErrorKind::Io, "checkpoint backbone depth does not match its config");
  std::size_t in = cfg.input_dim;
  for (std::size_t w : cfg.hidden_dims) {
    p.backbone.push_back(read_layer(is, in, w));
    in = w;
  }
  textio::expect(is, "heads");
  if (textio::read_size(is) != cfg.num_heads)
    fail(ErrorKind::Io, "checkpoint head count does not match its config");
  for (std::size_t h = 0; h < cfg.num_heads; ++h)
    p.heads.push_back(read_layer(is, in, cfg.num_classes));
  return Model(std::move(cfg), std::move(p));
}

Matrix ensemble_logits(const HeadPredictions& preds) {
  require(preds.num_heads() >= 1, "ensemble of zero heads");
  Matrix mean(preds.num_samples(), preds.num_classes());
  auto dst = mean.values();
  for (const auto& z : preds.logits) {
    auto src = z.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  const double inv = 1.0 / static_cast<double>(preds.num_heads());
  if (preds.num_heads() > 1)
    for (double& v : dst) v *= inv;
  return mean;
}

void OptimizerConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
}

void SgdOptimizer::apply_update(Model& model, const Gradients& grads, double learning_rate) {
  if (!grads.all_finite()) fail(ErrorKind::Divergence, "non-finite gradient");
  apply_update(model.mutable_params(), grads, learning_rate);
}

void SgdOptimizer::apply_update(Parameters& params, const Gradients& grads,
                                double learning_rate) {
  if (!grads.all_finite()) fail(ErrorKind::Divergence, "non-finite gradient");
  require(grads.count() == params.count(), "gradient layout does not match the parameters");
  if (velocity_.count() != params.count()) velocity_ = Parameters::zeros_like(params);

  std::vector<double> g_flat;
  g_flat.reserve(grads.count());
  grads.for_each([&](double g, bool) { g_flat.push_back(g); });
  std::vector<double*> v_flat;
  v_flat.reserve(g_flat.size());
  velocity_.for_each([&](double& v, bool) { v_flat.push_back(&v); });

  const double m = config_.momentum;
  const double decay = learning_rate * config_.weight_decay;
  std::size_t k = 0;
  params.for_each([&](double& w, bool is_weight) {
    double& v = *v_flat[k];
    v = m * v + g_flat[k];
    if (is_weight && decay != 0.0) w -= decay * w;
    w -= learning_rate * v;
    ++k;
  });
  if (!params.all_finite()) fail(ErrorKind::Divergence, "parameters became non-finite");
}

void SgdOptimizer::save(std::ostream& os) const {
  os << "optimizer " << velocity_.count() << '\n';
  std::vector<double> flat;
  velocity_.for_each([&](double v, bool) { flat.push_back(v); });
  textio::write_values(os, flat);
}

void SgdOptimizer::load(std::istream& is, const Parameters& shape) {
  textio::expect(is, "optimizer");
  const std::size_t n = textio::read_size(is);
  if (n == 0) {
    velocity_ = Parameters{};
    return;
  }
  if (n != shape.count()) fail(ErrorKind::Io, "optimizer state does not match the model");
  velocity_ = Parameters::zeros_like(shape);
  velocity_.for_each([&](double& v, bool) { v = textio::read_double(is); });
}

}  // namespace multimatch
