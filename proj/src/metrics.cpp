#include "twins/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "twins/error.hpp"

namespace twins {

namespace {

void check_lengths(const char* what, std::size_t scores, std::size_t labels) {
  if (scores != labels) {
    throw ShapeError(std::string(what) + ": " + std::to_string(scores) + " scores vs " +
                     std::to_string(labels) + " labels");
  }
}

}  // namespace

std::optional<double> compute_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths("compute_auc", scores.size(), labels.size());
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of 1-based ranks of positives, ties sharing their average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double compute_acc(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_lengths("compute_acc", scores.size(), labels.size());
  if (scores.empty()) throw InputError("compute_acc: no samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hit += (scores[i] >= threshold ? 1 : 0) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(scores.size());
}

double compute_logloss(std::span<const double> scores, std::span<const int> labels) {
  check_lengths("compute_logloss", scores.size(), labels.size());
  if (scores.empty()) throw InputError("compute_logloss: no samples");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], 1e-7, 1.0 - 1e-7);
    total -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

EvalReport make_report(std::span<const double> scores, std::span<const int> labels) {
  EvalReport r;
  r.auc = compute_auc(scores, labels);
  r.acc = compute_acc(scores, labels);
  r.logloss = compute_logloss(scores, labels);
  r.n_samples = scores.size();
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["auc"] = auc ? nlohmann::ordered_json(*auc) : nlohmann::ordered_json(nullptr);
  j["acc"] = acc;
  j["logloss"] = logloss;
  j["n_samples"] = n_samples;
  j["mean_pair_budget"] = mean_pair_budget;
  j["wall_seconds"] = wall_seconds;
  j["single_class"] = single_class();
  return j.dump();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  auto row = [&](const char* k) -> std::ostream& { return os << std::left << std::setw(18) << k; };
  row("auc");
  if (auc) os << *auc << '\n';
  else os << "n/a (single-class split)\n";
  row("acc") << acc << '\n';
  row("logloss") << logloss << '\n';
  row("n_samples") << n_samples << '\n';
  row("mean_pair_budget") << mean_pair_budget << '\n';
  row("wall_seconds") << wall_seconds << '\n';
  return os.str();
}

}  // namespace twins
