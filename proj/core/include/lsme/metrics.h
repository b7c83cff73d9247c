#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lsme/mecore.h"

namespace lsme {

// Fraction of supports whose chosen object is the novel one. Throws
// UndefinedMetricError for an empty list.
double SupportAccuracy(std::span<const AssignmentResult> assignments);

// Fraction of predictions with predicted == truth. Throws UndefinedMetricError
// when there are none.
double LowshotAccuracy(std::span<const QueryPrediction> predictions);

// Mean of the matched IoUs over `ground_truth_objects`; objects beyond the
// matched ones count as 0. Throws ContractViolation when more IoUs than
// objects are given or any IoU is outside [0, 1].
double MeanIou(std::span<const double> matched_ious, std::int64_t ground_truth_objects);

struct EpisodeMetrics {
  std::optional<double> sa;
  std::optional<double> lsa;  // absent when the episode had no eligible query
  std::optional<double> miou_support;
  std::optional<double> miou_query;
};

EpisodeMetrics ComputeEpisodeMetrics(const EpisodeResult& result);

// Welford accumulator with a pairwise merge.
class RunningStats {
 public:
  void Add(double x);
  void Merge(const RunningStats& other);

  std::int64_t count() const { return count_; }
  double mean() const { return mean_; }
  // Sample variance; 0 for fewer than two values.
  double variance() const;

 private:
  std::int64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct Summary {
  double mean = 0.0;
  std::optional<double> half_width;  // 1.96 * sample std / sqrt(count), count > 1
  std::int64_t count = 0;
};

Summary Summarize(const RunningStats& stats);

inline constexpr const char* kMetricNames[] = {"sa", "lsa", "miou_support",
                                               "miou_query"};

struct AggregateReport {
  std::string variant;
  // Keyed by metric name; a metric no episode produced is absent.
  std::map<std::string, Summary> metrics;
  std::int64_t episodes = 0;
  nlohmann::json config;
};

AggregateReport Aggregate(std::span<const EpisodeMetrics> episodes,
                          std::string variant, nlohmann::json config = {});

nlohmann::json ReportToJson(const AggregateReport& report);

// One row per report: SA, LSA and mIoU as percentages with the CI half-width,
// "N/A" where a metric is undefined.
std::string FormatReportTable(std::span<const AggregateReport> reports);

}  // namespace lsme
