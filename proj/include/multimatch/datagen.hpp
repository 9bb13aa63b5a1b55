#pragma once

// Synthetic Gaussian classification tasks, augmentation, and
// balanced / long-tail labeled-unlabeled splits.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "multimatch/numkit.hpp"

namespace multimatch {

struct Sample {
  std::size_t id = 0;
  std::vector<double> features;
  std::size_t true_label = 0;
};

using Dataset = std::vector<Sample>;

Matrix stack_features(std::span<const Sample> samples);

// Isotropic unit-variance Gaussian blobs. Class c has mean
// (separation / sqrt 2) * e_c, so every pair of means is exactly
// `separation` apart. Requires input_dim >= num_classes.
class GaussianTask {
 public:
  GaussianTask(std::size_t num_classes, std::size_t input_dim, double separation);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  double separation() const noexcept { return separation_; }
  std::span<const double> mean(std::size_t c) const { return means_.row(c); }

  std::vector<double> draw(std::size_t label, Rng& rng) const;

 private:
  std::size_t num_classes_;
  std::size_t input_dim_;
  double separation_;
  Matrix means_;
};

GaussianTask make_gaussian_task(std::size_t num_classes, std::size_t input_dim,
                                double class_separation);

struct LongTailSpec {
  std::size_t num_classes = 5;
  double largest = 1000;        // N1
  double gamma_imb = 100;       // > 0 aligned, < 0 reversed unlabeled tail
  std::size_t unlabeled_multiplier = 10;

  void validate() const;
};

struct LongTailCounts {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::size_t clamped = 0;
  // More than C/2 classes were clamped up to one sample.
  bool degenerate = false;
};

// N_c = round_half_up(N1 * |gamma|^(-(c-1)/(C-1))), clamped to >= 1.
LongTailCounts long_tail_counts(const LongTailSpec& spec);

struct SplitSpec {
  std::vector<std::size_t> labeled;    // per class
  std::vector<std::size_t> unlabeled;  // per class
  std::size_t validation = 0;          // total, balanced across classes
  std::size_t test = 0;                // total, balanced across classes

  static SplitSpec balanced(std::size_t num_classes, std::size_t labels_per_class,
                            std::size_t unlabeled_per_class, std::size_t validation,
                            std::size_t test);
  static SplitSpec from_long_tail(const LongTailCounts& counts, std::size_t validation,
                                  std::size_t test);
  void validate(std::size_t num_classes) const;
};

struct Split {
  Dataset labeled;
  Dataset unlabeled;
  Dataset validation;
  Dataset test;
};

// Disjoint sets with the exact per-class counts; ids are dense 0..n-1
// within each set and the sets are shuffled.
Split make_split(const GaussianTask& task, const SplitSpec& spec, Rng& rng);

std::vector<std::size_t> class_counts(std::span<const Sample> samples, std::size_t num_classes);

enum class WeakAugment { Identity, Noise };
enum class StrongAugment { Noise, Dropout, Both };
enum class View { Weak, Strong };

struct Augmentor {
  WeakAugment weak = WeakAugment::Identity;
  double weak_sigma = 0.0;
  StrongAugment strong = StrongAugment::Both;
  double strong_sigma = 0.5;
  double dropout = 0.1;

  // Default strong noise for a task: 0.5 * separation / sqrt(dim).
  static Augmentor for_task(const GaussianTask& task);
  void validate() const;
};

std::vector<double> augment(std::span<const double> features, const Augmentor& augmentor,
                            View view, Rng& rng);
Matrix augment_batch(std::span<const Sample> samples, const Augmentor& augmentor, View view,
                     Rng& rng);

// CSV dump: header `id,split,true_label,f0..f{d-1}`.
void save_split_csv(const Split& split, const std::filesystem::path& path);
Split load_split_csv(const std::filesystem::path& path);

}  // namespace multimatch
