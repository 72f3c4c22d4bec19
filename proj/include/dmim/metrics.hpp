#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace dmim {

class MetricError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ScoredLabels {
  std::vector<double> scores;
  std::vector<int> labels;

  void validate() const;
};

// A score at or above the threshold predicts class 1.
double accuracy(const ScoredLabels& s, double threshold = 0.5);
// 2TP / (2TP + FP + FN) for the positive class; 0 when the denominator is 0.
double f1_score(const ScoredLabels& s, double threshold = 0.5);
// Mann-Whitney statistic via rank sums with average ranks for ties.
double auroc(const ScoredLabels& s);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auroc = 0.0;
};

ClassificationMetrics all_metrics(const ScoredLabels& s, double threshold = 0.5);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

// Sample standard deviation (n-1); sd is 0 for a single value.
MeanSd mean_sd(std::span<const double> values);

}  // namespace dmim
