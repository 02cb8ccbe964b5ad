#pragma once

// Offline metrics: AUC, accuracy at a threshold, mean log loss.

#include <cstddef>
#include <optional>
#include <span>
#include <string>

namespace twins {

/// Probability that a random positive outscores a random negative, ties
/// counting one half; rank-sum in O(n log n). Absent when only one class is
/// present.
std::optional<double> compute_auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of samples with (score >= threshold) == label.
double compute_acc(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Mean per-sample negative log-likelihood, scores clamped to [1e-7, 1-1e-7].
double compute_logloss(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  std::optional<double> auc;  // absent for a single-class split
  double acc = 0.0;
  double logloss = 0.0;
  std::size_t n_samples = 0;
  double mean_pair_budget = 0.0;
  double wall_seconds = 0.0;

  bool single_class() const { return !auc.has_value(); }
  std::string to_json() const;
  /// Aligned two-column table for terminals.
  std::string to_table() const;
};

EvalReport make_report(std::span<const double> scores, std::span<const int> labels);

}  // namespace twins
