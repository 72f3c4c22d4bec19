#include "dmim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmim {

void ScoredLabels::validate() const {
  if (scores.empty()) throw MetricError("metrics: empty score list");
  if (scores.size() != labels.size()) throw MetricError("metrics: scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw MetricError("metrics: non-finite score");
  for (int l : labels)
    if (l != 0 && l != 1) throw MetricError("metrics: labels must be 0 or 1");
}

double accuracy(const ScoredLabels& s, double threshold) {
  s.validate();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    if ((s.scores[i] >= threshold ? 1 : 0) == s.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(s.scores.size());
}

double f1_score(const ScoredLabels& s, double threshold) {
  s.validate();
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const bool pred = s.scores[i] >= threshold;
    if (pred && s.labels[i] == 1) ++tp;
    else if (pred) ++fp;
    else if (s.labels[i] == 1) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double auroc(const ScoredLabels& s) {
  s.validate();
  const std::size_t n = s.scores.size();
  const auto pos = static_cast<std::size_t>(std::count(s.labels.begin(), s.labels.end(), 1));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw MetricError("auroc: undefined with a single class present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && s.scores[order[j + 1]] == s.scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (s.labels[order[k]] == 1) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  const double u = pos_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

ClassificationMetrics all_metrics(const ScoredLabels& s, double threshold) {
  return {accuracy(s, threshold), f1_score(s, threshold), auroc(s)};
}

MeanSd mean_sd(std::span<const double> values) {
  if (values.empty()) throw MetricError("mean_sd: empty input");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace dmim
