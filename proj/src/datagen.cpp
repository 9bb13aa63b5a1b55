#include "multimatch/datagen.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "multimatch/error.hpp"
#include "textio.hpp"

namespace multimatch {

Matrix stack_features(std::span<const Sample> samples) {
  if (samples.empty()) return {};
  Matrix m(samples.size(), samples.front().features.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    require(samples[r].features.size() == m.cols(), "samples have different widths");
    std::copy(samples[r].features.begin(), samples[r].features.end(), m.row(r).begin());
  }
  return m;
}

GaussianTask::GaussianTask(std::size_t num_classes, std::size_t input_dim, double separation)
    : num_classes_(num_classes),
      input_dim_(input_dim),
      separation_(separation),
      means_(num_classes, input_dim) {
  require(num_classes >= 2, "a task needs at least two classes");
  require(input_dim >= num_classes, "input_dim must be at least num_classes");
  require(separation >= 0.0 && std::isfinite(separation), "separation must be >= 0");
  const double offset = separation / std::numbers::sqrt2;
  for (std::size_t c = 0; c < num_classes; ++c) means_(c, c) = offset;
}

std::vector<double> GaussianTask::draw(std::size_t label, Rng& rng) const {
  require(label < num_classes_, "label out of range");
  std::vector<double> x(input_dim_);
  auto mu = means_.row(label);
  for (std::size_t i = 0; i < input_dim_; ++i) x[i] = mu[i] + rng.normal();
  return x;
}

GaussianTask make_gaussian_task(std::size_t num_classes, std::size_t input_dim,
                                double class_separation) {
  return GaussianTask(num_classes, input_dim, class_separation);
}

void LongTailSpec::validate() const {
  require(num_classes >= 2, "long-tail spec needs at least two classes");
  require(std::abs(gamma_imb) > 1.0, "|gamma_imb| must exceed 1");
  require(largest >= 1.0, "N1 must be at least 1");
  require(unlabeled_multiplier >= 1, "unlabeled_multiplier must be at least 1");
}

LongTailCounts long_tail_counts(const LongTailSpec& spec) {
  spec.validate();
  LongTailCounts out;
  const std::size_t C = spec.num_classes;
  const double gamma = std::abs(spec.gamma_imb);
  for (std::size_t c = 0; c < C; ++c) {
    const double exponent = -static_cast<double>(c) / static_cast<double>(C - 1);
    const double raw = std::floor(spec.largest * std::pow(gamma, exponent) + 0.5);
    std::size_t n = static_cast<std::size_t>(raw);
    if (n < 1) {
      n = 1;
      ++out.clamped;
    }
    out.labeled.push_back(n);
  }
  out.degenerate = out.clamped > C / 2;
  out.unlabeled.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t source = spec.gamma_imb > 0 ? c : C - 1 - c;
    out.unlabeled[c] = spec.unlabeled_multiplier * out.labeled[source];
  }
  return out;
}

SplitSpec SplitSpec::balanced(std::size_t num_classes, std::size_t labels_per_class,
                              std::size_t unlabeled_per_class, std::size_t validation,
                              std::size_t test) {
  return SplitSpec{std::vector<std::size_t>(num_classes, labels_per_class),
                   std::vector<std::size_t>(num_classes, unlabeled_per_class), validation,
                   test};
}

SplitSpec SplitSpec::from_long_tail(const LongTailCounts& counts, std::size_t validation,
                                    std::size_t test) {
  return SplitSpec{counts.labeled, counts.unlabeled, validation, test};
}

void SplitSpec::validate(std::size_t num_classes) const {
  require(labeled.size() == num_classes && unlabeled.size() == num_classes,
          "split counts must list one entry per class");
}

namespace {

std::vector<std::size_t> balanced_counts(std::size_t total, std::size_t num_classes) {
  std::vector<std::size_t> out(num_classes, total / num_classes);
  for (std::size_t c = 0; c < total % num_classes; ++c) ++out[c];
  return out;
}

Dataset draw_set(const GaussianTask& task, const std::vector<std::size_t>& counts, Rng& rng) {
  Dataset out;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t k = 0; k < counts[c]; ++k) out.push_back({0, task.draw(c, rng), c});
  rng.shuffle(out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = i;
  return out;
}

}  // namespace

Split make_split(const GaussianTask& task, const SplitSpec& spec, Rng& rng) {
  spec.validate(task.num_classes());
  Split split;
  split.labeled = draw_set(task, spec.labeled, rng);
  split.unlabeled = draw_set(task, spec.unlabeled, rng);
  split.validation = draw_set(task, balanced_counts(spec.validation, task.num_classes()), rng);
  split.test = draw_set(task, balanced_counts(spec.test, task.num_classes()), rng);
  return split;
}

std::vector<std::size_t> class_counts(std::span<const Sample> samples, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : samples) {
    require(s.true_label < num_classes, "label out of range");
    ++counts[s.true_label];
  }
  return counts;
}

Augmentor Augmentor::for_task(const GaussianTask& task) {
  Augmentor a;
  a.strong_sigma = 0.5 * task.separation() / std::sqrt(static_cast<double>(task.input_dim()));
  return a;
}

void Augmentor::validate() const {
  require(weak_sigma >= 0.0 && strong_sigma >= 0.0, "noise scales must be >= 0");
  require(dropout >= 0.0 && dropout <= 1.0, "dropout must be in [0, 1]");
  const double weak_noise = weak == WeakAugment::Identity ? 0.0 : weak_sigma;
  switch (strong) {
    case StrongAugment::Noise:
      require(strong_sigma > weak_noise, "strong noise must exceed weak noise");
      break;
    case StrongAugment::Dropout:
      require(dropout > 0.0 && weak_noise == 0.0,
              "dropout-only strong augmentation needs p > 0 and no weak noise");
      break;
    case StrongAugment::Both:
      require(strong_sigma > weak_noise || (dropout > 0.0 && strong_sigma >= weak_noise),
              "strong augmentation must perturb more than weak");
      break;
  }
}

std::vector<double> augment(std::span<const double> features, const Augmentor& augmentor,
                            View view, Rng& rng) {
  std::vector<double> out(features.begin(), features.end());
  if (view == View::Weak) {
    if (augmentor.weak == WeakAugment::Noise && augmentor.weak_sigma > 0.0)
      for (double& v : out) v += augmentor.weak_sigma * rng.normal();
    return out;
  }
  const bool noise = augmentor.strong != StrongAugment::Dropout;
  const bool dropout = augmentor.strong != StrongAugment::Noise;
  if (noise && augmentor.strong_sigma > 0.0)
    for (double& v : out) v += augmentor.strong_sigma * rng.normal();
  if (dropout && augmentor.dropout > 0.0)
    for (double& v : out)
      if (rng.bernoulli(augmentor.dropout)) v = 0.0;
  return out;
}

Matrix augment_batch(std::span<const Sample> samples, const Augmentor& augmentor, View view,
                     Rng& rng) {
  if (samples.empty()) return {};
  Matrix m(samples.size(), samples.front().features.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    auto v = augment(samples[r].features, augmentor, view, rng);
    std::copy(v.begin(), v.end(), m.row(r).begin());
  }
  return m;
}

namespace {

const char* kSplitNames[] = {"labeled", "unlabeled", "validation", "test"};

}  // namespace

void save_split_csv(const Split& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  std::size_t dim = 0;
  for (const Dataset* set : {&split.labeled, &split.unlabeled, &split.validation, &split.test})
    if (!set->empty()) dim = set->front().features.size();
  out << "id,split,true_label";
  for (std::size_t i = 0; i < dim; ++i) out << ",f" << i;
  out << '\n';
  const Dataset* sets[] = {&split.labeled, &split.unlabeled, &split.validation, &split.test};
  for (int k = 0; k < 4; ++k)
    for (const auto& s : *sets[k]) {
      out << s.id << ',' << kSplitNames[k] << ',' << s.true_label;
      for (double v : s.features) out << ',' << textio::format_double(v);
      out << '\n';
    }
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

Split load_split_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Io, path.string() + ": empty file");
  const auto header = textio::split(line, ',');
  if (header.size() < 3 || header[0] != "id" || header[1] != "split" || header[2] != "true_label")
    fail(ErrorKind::Io, path.string() + ": unexpected header");
  const std::size_t dim = header.size() - 3;

  Split split;
  std::map<std::string, Dataset*, std::less<>> sets{{"labeled", &split.labeled},
                                                    {"unlabeled", &split.unlabeled},
                                                    {"validation", &split.validation},
                                                    {"test", &split.test}};
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (textio::trim(line).empty()) continue;
    const auto cells = textio::split(line, ',');
    if (cells.size() != dim + 3)
      fail(ErrorKind::Io, path.string() + ":" + std::to_string(lineno) + ": wrong cell count");
    auto it = sets.find(cells[1]);
    if (it == sets.end())
      fail(ErrorKind::Io, path.string() + ":" + std::to_string(lineno) + ": unknown split");
    Sample s;
    s.id = textio::parse_size(cells[0]);
    s.true_label = textio::parse_size(cells[2]);
    s.features.reserve(dim);
    for (std::size_t i = 0; i < dim; ++i) s.features.push_back(textio::parse_double(cells[3 + i]));
    it->second->push_back(std::move(s));
  }
  return split;
}

}  // namespace multimatch
