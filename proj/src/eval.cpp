#include "tgbfn/eval.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace tgbfn {

MetricsReport compute_metrics(const std::vector<std::vector<double>>& targets,
                              const std::vector<std::optional<std::vector<double>>>& realized) {
  if (targets.size() != realized.size())
    throw std::invalid_argument("compute_metrics: length mismatch");
  if (targets.empty()) throw std::invalid_argument("compute_metrics: empty input");
  const int dims = static_cast<int>(targets.front().size());

  MetricsReport report;
  report.total = static_cast<int>(targets.size());
  std::vector<size_t> valid_idx;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (static_cast<int>(targets[i].size()) != dims)
      throw std::invalid_argument("compute_metrics: ragged targets");
    if (realized[i]) {
      if (static_cast<int>(realized[i]->size()) != dims)
        throw std::invalid_argument("compute_metrics: ragged realized values");
      valid_idx.push_back(i);
    }
  }
  report.valid = static_cast<int>(valid_idx.size());
  report.validity_rate = static_cast<double>(report.valid) / report.total;

  report.dims.resize(dims);
  const double n = static_cast<double>(valid_idx.size());
  for (int c = 0; c < dims; ++c) {
    DimMetrics& dm = report.dims[c];
    if (valid_idx.empty()) {
      dm.mse = 0.0;
      dm.mae = 0.0;
      dm.pcc.reset();
      continue;
    }
    double mse = 0.0, mae = 0.0, tmean = 0.0, rmean = 0.0;
    for (size_t i : valid_idx) {
      const double tv = targets[i][c];
      const double rv = (*realized[i])[c];
      const double dv = tv - rv;
      mse += dv * dv;
      mae += std::abs(dv);
      tmean += tv;
      rmean += rv;
    }
    dm.mse = mse / n;
    dm.mae = mae / n;
    tmean /= n;
    rmean /= n;
    if (valid_idx.size() >= 2) {
      double cov = 0.0, tvar = 0.0, rvar = 0.0;
      for (size_t i : valid_idx) {
        const double dt = targets[i][c] - tmean;
        const double dr = (*realized[i])[c] - rmean;
        cov += dt * dr;
        tvar += dt * dt;
        rvar += dr * dr;
      }
      if (tvar > 0.0 && rvar > 0.0) {
        dm.pcc = cov / std::sqrt(tvar * rvar);
      }
    }
  }
  return report;
}

MetricsReport evaluate_sampler(const DenoiserParams& params, const GuidanceParams* guidance,
                               const std::vector<shapes::DatasetRecord>& test_records,
                               const shapes::ConditionTransform& transform,
                               const shapes::GrammarConfig& grammar, const SamplerConfig& cfg,
                               int count, int threads) {
  if (count < 1) throw std::invalid_argument("evaluate_sampler: count must be >= 1");
  if (static_cast<int>(test_records.size()) < count)
    throw std::invalid_argument("evaluate_sampler: test split smaller than requested count");
  if (cfg.mode != SamplerMode::bfn && guidance == nullptr)
    throw std::invalid_argument("evaluate_sampler: guided mode needs guidance parameters");

  std::vector<std::vector<double>> targets(count);
  std::vector<std::optional<std::vector<double>>> realized(count);
  const Rng root(cfg.seed);

  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    try {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) break;
        const shapes::DatasetRecord& rec = test_records[i];
        targets[i] = {rec.area, rec.volume};
        const std::vector<double> cond_norm = shapes::normalize_condition(targets[i], transform);
        // Every sample owns an independent substream keyed by its index, so
        // results are identical for any thread count.
        const Rng sample_rng = root.derive(0x65766c73ULL, static_cast<uint64_t>(i));
        SampleResult sample;
        switch (cfg.mode) {
          case SamplerMode::bfn:
            sample = bfn_sample(params, cfg, sample_rng);
            break;
          case SamplerMode::gbf:
            sample = gbf_sample(params, *guidance, cond_norm, cfg, sample_rng);
            break;
          case SamplerMode::tgbfn:
            sample = tgbfn_sample(params, *guidance, cond_norm, cfg, sample_rng);
            break;
        }
        const shapes::DecodeResult dec = shapes::decode_program(sample.tokens, grammar);
        if (dec.ok()) {
          const shapes::Properties props = shapes::evaluate_properties(*dec.program);
          realized[i] = std::vector<double>{props.area, props.volume};
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = std::current_exception();
    }
  };

  const int nthreads = std::max(1, threads);
  std::vector<std::thread> pool;
  pool.reserve(nthreads - 1);
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);

  MetricsReport report = compute_metrics(targets, realized);
  report.config = cfg;
  return report;
}

std::vector<AblationRow> ablation_grid(const DenoiserParams& params,
                                       const GuidanceParams& guidance,
                                       const std::vector<shapes::DatasetRecord>& test_records,
                                       const shapes::ConditionTransform& transform,
                                       const shapes::GrammarConfig& grammar,
                                       const std::vector<int>& m_values,
                                       const std::vector<int>& H_values,
                                       const SamplerConfig& base_cfg, int count, int threads) {
  if (m_values.empty() || H_values.empty())
    throw std::invalid_argument("ablation_grid: value lists must be nonempty");
  std::vector<AblationRow> rows;
  rows.reserve(m_values.size() * H_values.size());
  for (int m : m_values) {
    for (int H : H_values) {
      SamplerConfig cfg = base_cfg;
      cfg.mode = SamplerMode::tgbfn;
      cfg.m = m;
      cfg.H = H;
      AblationRow row;
      row.m = m;
      row.H = H;
      row.report =
          evaluate_sampler(params, &guidance, test_records, transform, grammar, cfg, count,
                           threads);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

void write_pcc(std::ostream& out, const std::optional<double>& pcc) {
  if (pcc) {
    out << *pcc;
  } else {
    out << "undefined";
  }
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "m,H,mode,n,seed,count,validity_rate,area_mse,area_mae,area_pcc,volume_mse,volume_mae,"
         "volume_pcc\n";
  for (const AblationRow& row : rows) {
    const MetricsReport& r = row.report;
    out << row.m << ',' << row.H << ',' << to_string(r.config.mode) << ',' << r.config.n << ','
        << r.config.seed << ',' << r.total << ',' << r.validity_rate;
    for (const DimMetrics& dm : r.dims) {
      out << ',' << dm.mse << ',' << dm.mae << ',';
      write_pcc(out, dm.pcc);
    }
    out << "\n";
  }
}

void write_report_summary(std::ostream& out, const MetricsReport& report) {
  static const char* kDimNames[] = {"area", "volume"};
  out << "mode=" << to_string(report.config.mode) << " n=" << report.config.n
      << " m=" << report.config.m << " H=" << report.config.H << " seed=" << report.config.seed
      << " count=" << report.total << " valid=" << report.valid
      << " validity_rate=" << report.validity_rate << "\n";
  for (size_t c = 0; c < report.dims.size(); ++c) {
    const char* name = c < 2 ? kDimNames[c] : "dim";
    out << name << ": mse=" << report.dims[c].mse << " mae=" << report.dims[c].mae << " pcc=";
    write_pcc(out, report.dims[c].pcc);
    out << "\n";
  }
}

}  // namespace tgbfn
