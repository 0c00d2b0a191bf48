#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iqt/evaluation/metrics.hpp"
#include "iqt/evaluation/wilcoxon.hpp"
#include "iqt/network.hpp"
#include "iqt/pipeline.hpp"
#include "iqt/training.hpp"

namespace iqt::eval {

inline constexpr const char* kBaselineName = "linear_interpolation";
inline constexpr double kSignificance = 0.05;

struct EvalConfig {
  std::vector<double> test_input_resolutions_mm{1.875, 3.125};
  double test_target_resolution_mm = 1.25;
  bool include_linear_baseline = true;

  void validate() const;
};

nlohmann::json to_json(const EvalConfig& cfg);
EvalConfig eval_config_from_json(const nlohmann::json& j);

struct NamedModel {
  std::string name;
  net::ModelParams params;
  pipeline::NormalizationSpec normalization;
};

struct ReportRow {
  std::string model;
  double input_resolution_mm = 0.0;
  std::vector<std::optional<MetricSet>> per_subject;  // empty when the subject failed
  std::vector<std::string> errors;                     // per subject, empty on success
  std::size_t failures = 0;
  MetricSet median{};
  std::array<bool, kMetricCount> best{};         // best median at this resolution
  std::array<bool, kMetricCount> significant{};  // best and significantly apart from the runner-up
};

struct PairwiseTest {
  std::string model_a;
  std::string model_b;
  double input_resolution_mm = 0.0;
  std::array<WilcoxonResult, kMetricCount> tests{};
  std::array<bool, kMetricCount> significant{};
};

struct MetricsReport {
  double target_resolution_mm = 0.0;
  std::vector<std::string> subjects;
  std::vector<ReportRow> rows;
  std::vector<PairwiseTest> comparisons;
};

/// Median with the mean of the two middle values for even counts.
double median(std::vector<double> values);

/// For every test resolution and subject: degrade the truth, run every model
/// (and linear interpolation when enabled), score all six metrics, then
/// aggregate medians, pairwise Wilcoxon tests and best/significance flags.
MetricsReport evaluate_models(const EvalConfig& cfg, std::span<const train::Subject> subjects,
                              std::span<const std::string> subject_names, std::span<const NamedModel> models);

/// Fills medians, best flags, pairwise tests and significance markers from
/// per-subject values already present in `report.rows`.
void aggregate(MetricsReport& report);

nlohmann::json to_json(const MetricsReport& report);
/// Aligned text table; '*' marks the best median per column and '**' a best
/// median that is significantly apart from the runner-up.
std::string format_table(const MetricsReport& report);

}  // namespace iqt::eval
