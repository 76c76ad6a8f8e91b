#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cirl/train/config.hpp"
#include "cirl/train/trainer.hpp"

namespace cirl::eval {

// One training run as read back from its output directory.
struct RunSummary {
  std::string name;  // run directory basename
  std::string target_domain;
  std::string backbone;
  std::uint64_t seed = 0;
  train::AblationFlags ablation;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  // From result.json when the run was evaluated on its target; NaN otherwise.
  double target_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<train::EpochMetrics> epochs;
};

// "cirl" (all modules on), "erm" (all off), "no_cint"/"no_cfac"/"no_advm"
// (one off), "custom" otherwise.
std::string variant_name(const train::AblationFlags& flags);

// Reads <run_dir>/metrics.json and, when present, <run_dir>/result.json.
// IoError / SchemaError as in independence_curve.
RunSummary read_run(const std::string& run_dir);

// Every subdirectory of metrics_dir holding a metrics.json, sorted by name;
// metrics_dir itself counts when it holds one directly.
std::vector<RunSummary> collect_runs(const std::string& metrics_dir);

// Per (target_domain, variant) aggregate over seeds.
struct VariantAggregate {
  std::string target_domain;
  std::string variant;
  std::size_t runs = 0;  // runs with a finite target accuracy
  double mean_target_accuracy = std::numeric_limits<double>::quiet_NaN();
  double std_target_accuracy = 0.0;  // population std
  double mean_best_val_accuracy = 0.0;
};

std::vector<VariantAggregate> aggregate_runs(
    const std::vector<RunSummary>& runs);

struct ReportPaths {
  std::string summary_csv;
  std::string summary_json;
  std::vector<std::string> plots;
};

// Full report over a directory of run directories: summary.csv and
// summary.json, a loss-curve plot per run, an independence overlay across
// runs, and a target-accuracy bar chart per target domain.
ReportPaths write_report(const std::string& metrics_dir,
                         const std::string& out_dir);

// Plot primitives behind the report, exposed for tools. x is implicit
// (1-based index); labels render in a built-in 5x7 font.
struct PlotSeries {
  std::string label;
  std::vector<double> y;
};

void write_line_plot(const std::string& path, const std::string& title,
                     const std::vector<PlotSeries>& series);

struct Bar {
  std::string label;
  double value = 0.0;
};

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<Bar>& bars);

}  // namespace cirl::eval
