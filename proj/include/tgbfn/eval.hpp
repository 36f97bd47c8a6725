#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tgbfn/checkpoint.hpp"
#include "tgbfn/sampling.hpp"
#include "tgbfn/shapes.hpp"

namespace tgbfn {

struct DimMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> pcc;  // absent: fewer than two valid pairs or zero variance
};

struct MetricsReport {
  std::vector<DimMetrics> dims;  // per condition dimension, original units
  double validity_rate = 0.0;
  int total = 0;
  int valid = 0;
  SamplerConfig config;  // echo of the producing run
};

// Metrics over target/realized pairs; a missing realized vector marks an
// invalid sample, which is excluded from MSE/MAE/PCC and counted in the
// validity rate only.
MetricsReport compute_metrics(const std::vector<std::vector<double>>& targets,
                              const std::vector<std::optional<std::vector<double>>>& realized);

// Runs the configured sampler over the first `count` test records, taking
// each record's stored properties as the target condition, decoding the
// output, and scoring realized properties against the targets.
// guidance may be null for plain bfn mode.
MetricsReport evaluate_sampler(const DenoiserParams& params, const GuidanceParams* guidance,
                               const std::vector<shapes::DatasetRecord>& test_records,
                               const shapes::ConditionTransform& transform,
                               const shapes::GrammarConfig& grammar, const SamplerConfig& cfg,
                               int count, int threads = 1);

struct AblationRow {
  int m = 0;
  int H = 0;
  MetricsReport report;
};

// Cartesian sweep over m and H values with shared seeds; every cell runs
// evaluate_sampler in tgbfn mode.
std::vector<AblationRow> ablation_grid(const DenoiserParams& params,
                                       const GuidanceParams& guidance,
                                       const std::vector<shapes::DatasetRecord>& test_records,
                                       const shapes::ConditionTransform& transform,
                                       const shapes::GrammarConfig& grammar,
                                       const std::vector<int>& m_values,
                                       const std::vector<int>& H_values,
                                       const SamplerConfig& base_cfg, int count, int threads = 1);

// Comma-separated table with a header row; undefined PCC prints as
// "undefined".
void write_metrics_csv(std::ostream& out, const std::vector<AblationRow>& rows);
void write_report_summary(std::ostream& out, const MetricsReport& report);

}  // namespace tgbfn
