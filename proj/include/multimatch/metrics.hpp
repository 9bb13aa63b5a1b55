#pragma once

// Pseudo-label quality metrics, Friedman ranks, and report emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "multimatch/plwm.hpp"

namespace multimatch {

// Mask rate = masked / decisions. Impurity = wrong / included, with an
// empty denominator reported as 0 and flagged.
struct PseudoLabelTally {
  std::size_t decisions = 0;
  std::size_t masked = 0;
  std::size_t impure = 0;

  std::size_t included() const noexcept { return decisions - masked; }
  double mask_rate() const noexcept;
  double impurity() const noexcept;
  bool impurity_defined() const noexcept { return included() > 0; }

  PseudoLabelTally& operator+=(const PseudoLabelTally& o) {
    decisions += o.decisions;
    masked += o.masked;
    impure += o.impure;
    return *this;
  }
};

// true_labels[k] is the ground truth of decisions[k].
PseudoLabelTally accumulate(std::span<const PlwmDecision> decisions,
                            std::span<const std::size_t> true_labels);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss_sup = 0.0;
  double loss_unsup = 0.0;
  PseudoLabelTally pseudo;
  CategoryTally categories;
  double val_error = 0.0;
  double test_error = 0.0;
  std::vector<double> gamma_mean;  // per head, mean over classes

  double mask_rate() const noexcept { return pseudo.mask_rate(); }
  double impurity() const noexcept { return pseudo.impurity(); }
};

// errors[algorithm][setup] -> error.
using ErrorTable = std::map<std::string, std::map<std::string, double>>;

struct RankTable {
  std::vector<std::string> algorithms;  // sorted
  std::vector<std::string> setups;      // sorted
  // ranks[a][s], 1 = lowest error, ties share the average rank.
  std::vector<std::vector<double>> ranks;
  std::vector<double> friedman;    // mean rank over setups
  std::vector<double> mean_error;  // mean error over setups
  std::vector<std::size_t> final_rank;  // 1-based order by Friedman rank, ties share
};

// Average ranks of values (ascending), ties receive the mean of the spanned ranks.
std::vector<double> average_ranks(std::span<const double> values);

// Throws MissingCell when some algorithm lacks a setup another one has.
RankTable friedman_ranks(const ErrorTable& errors);

struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string algorithm;
  std::string setup;
  bool failed = false;
  std::string failure;
  std::vector<EpochMetrics> epochs;
  double final_test_error = 0.0;
};

struct ResultRow {
  std::string algorithm;
  std::string setup;
  std::uint64_t seed = 0;
  double final_test_error = 0.0;
};

// Mean over seeds per (algorithm, setup).
ErrorTable mean_errors(std::span<const ResultRow> rows);

void write_per_epoch_csv(std::span<const RunRecord> runs, const std::filesystem::path& path);
void write_results_csv(std::span<const ResultRow> rows, const std::filesystem::path& path);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);
void write_ranks_csv(const RankTable& table, const std::filesystem::path& path);

struct Series {
  std::string name;
  std::vector<double> values;  // one per epoch, starting at epoch 1
};

// Self-contained SVG line chart.
std::string render_line_chart(const std::string& title, const std::string& y_label,
                              std::span<const Series> series);

// Writes per_epoch.csv, results.csv, ranks.csv, and one mask-rate and one
// impurity chart per setup. Failed runs are excluded from results and ranks.
// Returns the rank table.
RankTable emit_reports(std::span<const RunRecord> runs, const std::filesystem::path& out_dir);

}  // namespace multimatch
