#include "iqt/evaluation/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "iqt/error.hpp"
#include "iqt/evaluation/inference.hpp"
#include "iqt/resample.hpp"

namespace iqt::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool better(int metric, double a, double b) { return lower_is_better(metric) ? a < b : a > b; }

nlohmann::json metric_json(const MetricSet& m) {
  nlohmann::json j = nlohmann::json::object();
  for (int k = 0; k < kMetricCount; ++k) {
    j[std::string(kMetricNames[k])] = std::isfinite(m[k]) ? nlohmann::json(m[k]) : nlohmann::json(nullptr);
  }
  return j;
}

nlohmann::json flags_json(const std::array<bool, kMetricCount>& f) {
  nlohmann::json j = nlohmann::json::object();
  for (int k = 0; k < kMetricCount; ++k) j[std::string(kMetricNames[k])] = f[k];
  return j;
}

std::string format_value(int metric, double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  if (lower_is_better(metric)) {
    std::snprintf(buf, sizeof(buf), "%.3e", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.3f", v);
  }
  return buf;
}

}  // namespace

void EvalConfig::validate() const {
  if (test_input_resolutions_mm.empty()) throw ConfigError("evaluation: no test input resolutions");
  if (!(test_target_resolution_mm > 0.0)) throw ConfigError("evaluation: target resolution must be positive");
  for (double r : test_input_resolutions_mm) {
    if (r < test_target_resolution_mm) {
      throw ConfigError("evaluation: test input resolution " + std::to_string(r) + " mm is finer than the target");
    }
  }
}

nlohmann::json to_json(const EvalConfig& c) {
  return {{"test_input_resolutions_mm", c.test_input_resolutions_mm},
          {"test_target_resolution_mm", c.test_target_resolution_mm},
          {"include_linear_baseline", c.include_linear_baseline}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  try {
    c.test_input_resolutions_mm = j.value("test_input_resolutions_mm", c.test_input_resolutions_mm);
    c.test_target_resolution_mm = j.value("test_target_resolution_mm", c.test_target_resolution_mm);
    c.include_linear_baseline = j.value("include_linear_baseline", c.include_linear_baseline);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("evaluation config: ") + e.what());
  }
  c.validate();
  return c;
}

double median(std::vector<double> values) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

MetricsReport evaluate_models(const EvalConfig& cfg, std::span<const train::Subject> subjects,
                              std::span<const std::string> subject_names, std::span<const NamedModel> models) {
  cfg.validate();
  if (subjects.empty()) throw PreconditionError("evaluation: no subjects");
  if (subject_names.size() != subjects.size()) throw ShapeError("evaluation: subject name count differs from subjects");
  MetricsReport report;
  report.target_resolution_mm = cfg.test_target_resolution_mm;
  report.subjects.assign(subject_names.begin(), subject_names.end());

  std::vector<train::Subject> grid;
  for (const auto& s : subjects) grid.push_back(train::resample_subject(s, cfg.test_target_resolution_mm));

  for (double r : cfg.test_input_resolutions_mm) {
    std::vector<ReportRow> rows;
    if (cfg.include_linear_baseline) rows.push_back(ReportRow{kBaselineName, r, {}, {}, 0, {}, {}, {}});
    for (const auto& m : models) rows.push_back(ReportRow{m.name, r, {}, {}, 0, {}, {}, {}});
    for (const auto& s : grid) {
      std::optional<Volume> lr_up;
      std::string lr_error;
      try {
        const Volume lr_native = resample::downsample(s.tensors, r);
        lr_up = linear_baseline(lr_native, s.tensors.dims(), s.tensors.spacing_mm()).with_kind(VolumeKind::DTI);
      } catch (const std::exception& e) {
        lr_error = e.what();
      }
      std::size_t row = 0;
      auto record = [&](ReportRow& out, const std::function<Volume()>& predict) {
        try {
          if (!lr_up) throw EvaluationError(lr_error);
          out.per_subject.emplace_back(compute_metrics(predict(), s.tensors, s.mask));
          out.errors.emplace_back();
        } catch (const std::exception& e) {
          out.per_subject.emplace_back(std::nullopt);
          out.errors.emplace_back(e.what());
          ++out.failures;
        }
      };
      if (cfg.include_linear_baseline) record(rows[row++], [&] { return *lr_up; });
      for (const auto& m : models) {
        record(rows[row++], [&] {
          return infer_volume(m.params, *lr_up, m.params.config.multimodal ? &s.t1w : nullptr, m.normalization);
        });
      }
    }
    for (auto& row : rows) report.rows.push_back(std::move(row));
  }
  aggregate(report);
  return report;
}

void aggregate(MetricsReport& report) {
  report.comparisons.clear();
  for (auto& row : report.rows) {
    row.failures = static_cast<std::size_t>(std::count(row.per_subject.begin(), row.per_subject.end(), std::nullopt));
    for (int k = 0; k < kMetricCount; ++k) {
      std::vector<double> values;
      for (const auto& s : row.per_subject) {
        if (s) values.push_back((*s)[k]);
      }
      row.median[k] = median(values);
      row.best[k] = false;
      row.significant[k] = false;
    }
  }
  std::vector<double> resolutions;
  for (const auto& row : report.rows) {
    if (std::find(resolutions.begin(), resolutions.end(), row.input_resolution_mm) == resolutions.end()) {
      resolutions.push_back(row.input_resolution_mm);
    }
  }
  for (double r : resolutions) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      if (report.rows[i].input_resolution_mm == r) members.push_back(i);
    }
    std::vector<std::vector<std::size_t>> test_index(report.rows.size(), std::vector<std::size_t>(report.rows.size(), SIZE_MAX));
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const ReportRow& ra = report.rows[members[a]];
        const ReportRow& rb = report.rows[members[b]];
        PairwiseTest t{ra.model, rb.model, r, {}, {}};
        for (int k = 0; k < kMetricCount; ++k) {
          std::vector<double> xa, xb;
          for (std::size_t s = 0; s < std::min(ra.per_subject.size(), rb.per_subject.size()); ++s) {
            if (ra.per_subject[s] && rb.per_subject[s]) {
              xa.push_back((*ra.per_subject[s])[k]);
              xb.push_back((*rb.per_subject[s])[k]);
            }
          }
          t.tests[k] = wilcoxon_signed_rank(xa, xb);
          t.significant[k] = !t.tests[k].degenerate && t.tests[k].p_value < kSignificance;
        }
        test_index[members[a]][members[b]] = test_index[members[b]][members[a]] = report.comparisons.size();
        report.comparisons.push_back(std::move(t));
      }
    }
    for (int k = 0; k < kMetricCount; ++k) {
      std::vector<std::size_t> ranked;
      for (std::size_t i : members) {
        if (std::isfinite(report.rows[i].median[k])) ranked.push_back(i);
      }
      if (ranked.empty()) continue;
      std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        return better(k, report.rows[a].median[k], report.rows[b].median[k]);
      });
      const double best = report.rows[ranked[0]].median[k];
      for (std::size_t i : ranked) {
        if (report.rows[i].median[k] == best) report.rows[i].best[k] = true;
      }
      if (ranked.size() >= 2 && report.rows[ranked[1]].median[k] != best) {
        const std::size_t t = test_index[ranked[0]][ranked[1]];
        report.rows[ranked[0]].significant[k] = t != SIZE_MAX && report.comparisons[t].significant[k];
      }
    }
  }
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t s = 0; s < row.per_subject.size(); ++s) {
      nlohmann::json e = {{"subject", s < report.subjects.size() ? report.subjects[s] : std::to_string(s)}};
      if (row.per_subject[s]) {
        e["metrics"] = metric_json(*row.per_subject[s]);
      } else {
        e["metrics"] = nullptr;
        e["error"] = row.errors[s];
      }
      per.push_back(e);
    }
    rows.push_back({{"model", row.model},
                    {"input_resolution_mm", row.input_resolution_mm},
                    {"median", metric_json(row.median)},
                    {"best", flags_json(row.best)},
                    {"significant", flags_json(row.significant)},
                    {"failures", row.failures},
                    {"per_subject", per}});
  }
  nlohmann::json comparisons = nlohmann::json::array();
  for (const auto& c : report.comparisons) {
    nlohmann::json metrics = nlohmann::json::object();
    for (int k = 0; k < kMetricCount; ++k) {
      const auto& t = c.tests[k];
      metrics[std::string(kMetricNames[k])] = {{"statistic", t.statistic}, {"p_value", t.p_value}, {"n", t.n},
                                               {"degenerate", t.degenerate}, {"exact", t.exact},
                                               {"significant", c.significant[k]}};
    }
    comparisons.push_back({{"model_a", c.model_a}, {"model_b", c.model_b}, {"input_resolution_mm", c.input_resolution_mm},
                           {"metrics", metrics}});
  }
  return {{"target_resolution_mm", report.target_resolution_mm},
          {"subjects", report.subjects},
          {"settings",
           {{"ssim_window", kSsimWindow},
            {"md_ssim_data_range", kMdDataRange},
            {"fa_ssim_data_range", kFaDataRange},
            {"significance_threshold", kSignificance},
            {"aggregate", "median of per-subject metrics"}}},
          {"rows", rows},
          {"comparisons", comparisons}};
}

std::string format_table(const MetricsReport& report) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Input (mm)", "Model"};
  for (auto label : kMetricLabels) header.emplace_back(label);
  cells.push_back(header);
  for (const auto& row : report.rows) {
    char res[32];
    std::snprintf(res, sizeof(res), "%g", row.input_resolution_mm);
    std::vector<std::string> line{res, row.model};
    for (int k = 0; k < kMetricCount; ++k) {
      std::string v = format_value(k, row.median[k]);
      if (row.significant[k]) {
        v += " **";
      } else if (row.best[k]) {
        v += " *";
      }
      line.push_back(v);
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream out;
  char target[32];
  std::snprintf(target, sizeof(target), "%g", report.target_resolution_mm);
  out << "Median metrics across " << report.subjects.size() << (report.subjects.size() == 1 ? " subject" : " subjects") << ", target grid " << target << " mm\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      if (c) out << " | ";
      out << cells[i][c] << std::string(width[c] - cells[i][c].size(), ' ');
    }
    out << '\n';
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) {
        if (c) out << "-+-";
        out << std::string(width[c], '-');
      }
      out << '\n';
    }
  }
  out << "* best median in column; ** best and significantly apart from the runner-up (Wilcoxon, p < 0.05)\n";
  return out.str();
}

}  // namespace iqt::eval
