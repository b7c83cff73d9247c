#include "lsme/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "lsme/error.h"

namespace lsme {
namespace {

constexpr double kZ95 = 1.96;

std::optional<double> TallyMean(const std::optional<IouTally>& tally) {
  if (!tally || tally->count == 0) return std::nullopt;
  return tally->sum / static_cast<double>(tally->count);
}

nlohmann::json SummaryToJson(const Summary& s) {
  return {{"mean", s.mean},
          {"ci_half_width", s.half_width ? nlohmann::json(*s.half_width) : nlohmann::json(nullptr)},
          {"count", s.count}};
}

std::string Cell(const AggregateReport& report, const char* metric) {
  const auto it = report.metrics.find(metric);
  if (it == report.metrics.end()) return "N/A";
  char buf[64];
  if (it->second.half_width) {
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * it->second.mean,
                  100.0 * *it->second.half_width);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * it->second.mean);
  }
  return buf;
}

// Display width, counting each UTF-8 code point once.
std::size_t Width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

}  // namespace

double SupportAccuracy(std::span<const AssignmentResult> assignments) {
  if (assignments.empty()) throw UndefinedMetricError("SA over zero supports");
  const auto hits = std::count_if(assignments.begin(), assignments.end(), [](const auto& a) {
    return a.chosen >= 0 && a.chosen == a.ground_truth;
  });
  return static_cast<double>(hits) / static_cast<double>(assignments.size());
}

double LowshotAccuracy(std::span<const QueryPrediction> predictions) {
  if (predictions.empty()) throw UndefinedMetricError("LSA over zero query objects");
  const auto hits = std::count_if(predictions.begin(), predictions.end(),
                                  [](const auto& p) { return p.predicted == p.truth; });
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double MeanIou(std::span<const double> matched_ious, std::int64_t ground_truth_objects) {
  if (ground_truth_objects < static_cast<std::int64_t>(matched_ious.size())) {
    throw ContractViolation("more matched IoUs than ground-truth objects");
  }
  if (ground_truth_objects == 0) throw UndefinedMetricError("mIoU over zero objects");
  double sum = 0.0;
  for (const double iou : matched_ious) {
    if (!(iou >= 0.0 && iou <= 1.0)) throw ContractViolation("IoU outside [0, 1]");
    sum += iou;
  }
  return sum / static_cast<double>(ground_truth_objects);
}

EpisodeMetrics ComputeEpisodeMetrics(const EpisodeResult& result) {
  EpisodeMetrics m;
  if (result.assignments && !result.assignments->empty()) {
    m.sa = SupportAccuracy(*result.assignments);
  }
  if (!result.predictions.empty()) m.lsa = LowshotAccuracy(result.predictions);
  m.miou_support = TallyMean(result.support_iou);
  m.miou_query = TallyMean(result.query_iou);
  return m;
}

void RunningStats::Add(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

void RunningStats::Merge(const RunningStats& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double n_a = static_cast<double>(count_);
  const double n_b = static_cast<double>(other.count_);
  const double n = n_a + n_b;
  const double delta = other.mean_ - mean_;
  mean_ += delta * n_b / n;
  m2_ += other.m2_ + delta * delta * n_a * n_b / n;
  count_ += other.count_;
}

double RunningStats::variance() const {
  return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0;
}

Summary Summarize(const RunningStats& stats) {
  Summary s;
  s.mean = stats.mean();
  s.count = stats.count();
  if (s.count > 1) {
    s.half_width = kZ95 * std::sqrt(stats.variance()) / std::sqrt(static_cast<double>(s.count));
  }
  return s;
}

AggregateReport Aggregate(std::span<const EpisodeMetrics> episodes, std::string variant,
                          nlohmann::json config) {
  std::map<std::string, RunningStats> stats;
  for (const auto& e : episodes) {
    if (e.sa) stats["sa"].Add(*e.sa);
    if (e.lsa) stats["lsa"].Add(*e.lsa);
    if (e.miou_support) stats["miou_support"].Add(*e.miou_support);
    if (e.miou_query) stats["miou_query"].Add(*e.miou_query);
  }
  AggregateReport report;
  report.variant = std::move(variant);
  report.episodes = static_cast<std::int64_t>(episodes.size());
  report.config = std::move(config);
  for (const auto& [name, s] : stats) report.metrics[name] = Summarize(s);
  return report;
}

nlohmann::json ReportToJson(const AggregateReport& report) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const char* name : kMetricNames) {
    const auto it = report.metrics.find(name);
    metrics[name] = it == report.metrics.end() ? nlohmann::json(nullptr)
                                               : SummaryToJson(it->second);
  }
  return {{"variant", report.variant},
          {"episodes", report.episodes},
          {"metrics", std::move(metrics)},
          {"config", report.config}};
}

std::string FormatReportTable(std::span<const AggregateReport> reports) {
  const std::vector<std::string> header = {"Variant", "SA", "LSA", "mIoU (supp)",
                                           "mIoU (query)"};
  std::vector<std::vector<std::string>> rows = {header};
  for (const auto& r : reports) {
    rows.push_back({r.variant, Cell(r, "sa"), Cell(r, "lsa"), Cell(r, "miou_support"),
                    Cell(r, "miou_query")});
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], Width(row[c]));
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c > 0) out << "  ";
      out << rows[i][c];
      if (c + 1 < rows[i].size()) out << std::string(widths[c] - Width(rows[i][c]), ' ');
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (const auto w : widths) total += w;
      out << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace lsme
