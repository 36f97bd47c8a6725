#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "tgbfn/checkpoint.hpp"
#include "tgbfn/errors.hpp"
#include "tgbfn/eval.hpp"
#include "tgbfn/guidance.hpp"
#include "tgbfn/sampling.hpp"
#include "tgbfn/shapes.hpp"
#include "tgbfn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tgbfn;

namespace {

struct DatasetPaths {
  std::string train, valid, test, transform, grammar;
  explicit DatasetPaths(const std::string& dir)
      : train(dir + "/train.records"),
        valid(dir + "/valid.records"),
        test(dir + "/test.records"),
        transform(dir + "/conditions.transform"),
        grammar(dir + "/grammar.meta") {}
};

void echo_config(const std::string& subcommand, const json& cfg) {
  json full = cfg;
  full["subcommand"] = subcommand;
  std::cout << "config: " << full.dump() << "\n";
}

std::ofstream open_log(const std::string& path) {
  std::ofstream log;
  if (!path.empty()) {
    log.open(path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open log file " + path);
  }
  return log;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  int count = 20000;
  std::string out = "data";
  double train_frac = 0.8, valid_frac = 0.1, test_frac = 0.1;
  shapes::GrammarConfig grammar;
};

int run_gen_data(const GenDataArgs& a, uint64_t seed) {
  echo_config("gen-data", json{{"count", a.count},
                               {"out", a.out},
                               {"train_frac", a.train_frac},
                               {"valid_frac", a.valid_frac},
                               {"test_frac", a.test_frac},
                               {"bins", a.grammar.bins},
                               {"max_primitives", a.grammar.max_primitives},
                               {"seq_len", a.grammar.seq_len},
                               {"param_min", a.grammar.param_min},
                               {"param_max", a.grammar.param_max},
                               {"max_tokens", a.grammar.max_tokens},
                               {"seed", seed}});
  const shapes::Dataset ds = shapes::generate_dataset(
      a.count, seed, shapes::SplitRatios{a.train_frac, a.valid_frac, a.test_frac}, a.grammar);
  fs::create_directories(a.out);
  const DatasetPaths paths(a.out);
  shapes::write_records(paths.train, ds.train);
  shapes::write_records(paths.valid, ds.valid);
  shapes::write_records(paths.test, ds.test);
  shapes::write_transform(paths.transform, ds.transform);
  shapes::write_grammar(paths.grammar, ds.grammar);
  std::cout << "written: train=" << ds.train.size() << " valid=" << ds.valid.size()
            << " test=" << ds.test.size() << " dir=" << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-skeleton
// ---------------------------------------------------------------------------

struct TrainSkeletonArgs {
  std::string data = "data";
  std::string out = "skeleton.ckpt";
  long steps = 20000;
  int batch = 64;
  double lr = 1e-3;
  int n = 100;
  double beta1 = 3.0;
  double gamma = 1.0;
  int hidden = 128;
  int layers = 2;
  int time_features = 16;
  bool conditional = false;
  long checkpoint_interval = 1000;
  long log_interval = 50;
  std::string log_path;
};

int run_train_skeleton(const TrainSkeletonArgs& a, uint64_t seed, int threads) {
  echo_config("train-skeleton",
              json{{"data", a.data},
                   {"out", a.out},
                   {"steps", a.steps},
                   {"batch", a.batch},
                   {"lr", a.lr},
                   {"n", a.n},
                   {"beta1", a.beta1},
                   {"gamma", a.gamma},
                   {"hidden", a.hidden},
                   {"layers", a.layers},
                   {"time_features", a.time_features},
                   {"conditional", a.conditional},
                   {"checkpoint_interval", a.checkpoint_interval},
                   {"log_interval", a.log_interval},
                   {"log", a.log_path},
                   {"seed", seed},
                   {"threads", threads}});
  const DatasetPaths paths(a.data);
  std::vector<shapes::DatasetRecord> records = shapes::read_records(paths.train);
  const shapes::ConditionTransform transform = shapes::read_transform(paths.transform);
  const shapes::GrammarConfig grammar = shapes::read_grammar(paths.grammar);
  shapes::apply_transform(records, transform);

  DenoiserConfig cfg;
  cfg.positions = grammar.seq_len;
  cfg.classes = grammar.vocab();
  cfg.hidden = a.hidden;
  cfg.hidden_layers = a.layers;
  cfg.time_features = a.time_features;
  cfg.conditional = a.conditional;

  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.adam.lr = a.lr;
  tc.beta_total = a.beta1;
  tc.n = a.n;
  tc.gamma = a.gamma;
  tc.seed = seed;
  tc.threads = threads;
  tc.checkpoint_interval = a.checkpoint_interval;
  tc.log_interval = a.log_interval;

  std::ofstream log = open_log(a.log_path);
  auto log_line = [&](const std::string& line) {
    if (log.is_open()) {
      log << line << std::endl;
    } else {
      std::cout << line << std::endl;
    }
  };
  auto checkpoint_cb = [&](const DenoiserParams& params, long step) {
    CheckpointInfo info;
    info.train_step = step;
    info.seed = seed;
    info.transform = transform;
    save_denoiser_checkpoint(a.out, params, info);
  };
  train_skeleton(records, cfg, tc, checkpoint_cb, log_line);
  std::cout << "checkpoint: " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-guidance
// ---------------------------------------------------------------------------

struct TrainGuidanceArgs {
  std::string data = "data";
  std::string out = "guidance.ckpt";
  std::string skeleton;  // optional; guidance training needs only the flow
  long steps = 12000;
  int batch = 64;
  double lr = 1e-3;
  int n = 100;
  double beta1 = 3.0;
  int hidden = 128;
  int layers = 2;
  int alpha_features = 16;
  double variance_floor = 1e-4;
  long checkpoint_interval = 2000;
  long log_interval = 100;
  std::string log_path;
};

int run_train_guidance(const TrainGuidanceArgs& a, uint64_t seed, int threads) {
  echo_config("train-guidance",
              json{{"data", a.data},
                   {"out", a.out},
                   {"skeleton", a.skeleton},
                   {"steps", a.steps},
                   {"batch", a.batch},
                   {"lr", a.lr},
                   {"n", a.n},
                   {"beta1", a.beta1},
                   {"hidden", a.hidden},
                   {"layers", a.layers},
                   {"alpha_features", a.alpha_features},
                   {"variance_floor", a.variance_floor},
                   {"checkpoint_interval", a.checkpoint_interval},
                   {"log_interval", a.log_interval},
                   {"log", a.log_path},
                   {"seed", seed},
                   {"threads", threads}});
  const DatasetPaths paths(a.data);
  std::vector<shapes::DatasetRecord> records = shapes::read_records(paths.train);
  const shapes::ConditionTransform transform = shapes::read_transform(paths.transform);
  const shapes::GrammarConfig grammar = shapes::read_grammar(paths.grammar);
  shapes::apply_transform(records, transform);

  GuidanceConfig cfg;
  cfg.positions = grammar.seq_len;
  cfg.classes = grammar.vocab();
  cfg.condition_dim = 2;
  cfg.hidden = a.hidden;
  cfg.hidden_layers = a.layers;
  cfg.alpha_features = a.alpha_features;
  cfg.variance_floor = a.variance_floor;

  GuidanceTrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.beta_total = a.beta1;
  tc.n = a.n;
  tc.seed = seed;
  tc.threads = threads;
  tc.checkpoint_interval = a.checkpoint_interval;
  tc.log_interval = a.log_interval;

  std::ofstream log = open_log(a.log_path);
  auto log_line = [&](const std::string& line) {
    if (log.is_open()) {
      log << line << std::endl;
    } else {
      std::cout << line << std::endl;
    }
  };
  auto checkpoint_cb = [&](const GuidanceParams& params, long step) {
    CheckpointInfo info;
    info.train_step = step;
    info.seed = seed;
    info.transform = transform;
    save_guidance_checkpoint(a.out, params, info);
  };
  train_guidance(records, cfg, tc, checkpoint_cb, log_line);
  std::cout << "checkpoint: " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string skeleton = "skeleton.ckpt";
  std::string guidance;
  std::string data;  // required when targets come from the test split
  std::string mode = "tgbfn";
  int n = 100;
  int m = 4;
  int H = 4;
  double beta1 = 3.0;
  double area = -1.0;    // explicit targets; < 0 means "from test split"
  double volume = -1.0;
  int count = 1;
  std::string trace_path;
};

int run_sample(const SampleArgs& a, uint64_t seed) {
  echo_config("sample", json{{"skeleton", a.skeleton},
                             {"guidance", a.guidance},
                             {"data", a.data},
                             {"mode", a.mode},
                             {"n", a.n},
                             {"m", a.m},
                             {"H", a.H},
                             {"beta1", a.beta1},
                             {"area", a.area},
                             {"volume", a.volume},
                             {"count", a.count},
                             {"trace", a.trace_path},
                             {"seed", seed}});
  CheckpointInfo skel_info;
  const DenoiserParams params = load_denoiser_checkpoint(a.skeleton, &skel_info);
  const SamplerMode mode = sampler_mode_from_string(a.mode);

  std::optional<GuidanceParams> guidance;
  CheckpointInfo guid_info;
  if (!a.guidance.empty()) guidance = load_guidance_checkpoint(a.guidance, &guid_info);
  if (mode != SamplerMode::bfn && !guidance)
    throw std::invalid_argument("mode '" + a.mode + "' needs --guidance");

  // The condition transform travels with the checkpoints; grammar comes from
  // the dataset directory when present (needed to decode outputs).
  std::optional<shapes::ConditionTransform> transform =
      guidance ? guid_info.transform : skel_info.transform;
  std::optional<shapes::GrammarConfig> grammar;
  std::vector<shapes::DatasetRecord> test_records;
  if (!a.data.empty()) {
    const DatasetPaths paths(a.data);
    grammar = shapes::read_grammar(paths.grammar);
    test_records = shapes::read_records(paths.test);
    if (!transform) transform = shapes::read_transform(paths.transform);
  }

  const bool explicit_target = a.area > 0.0 && a.volume > 0.0;
  if (mode != SamplerMode::bfn && !explicit_target && test_records.empty())
    throw std::invalid_argument(
        "guided sampling needs --area/--volume or --data to draw targets from the test split");
  if (mode != SamplerMode::bfn && !transform)
    throw std::invalid_argument("no condition transform available; pass --data");

  const Rng root(seed);
  std::ofstream trace_out;
  if (!a.trace_path.empty()) {
    trace_out.open(a.trace_path);
    if (!trace_out) throw std::runtime_error("cannot open trace file " + a.trace_path);
  }

  for (int i = 0; i < a.count; ++i) {
    SamplerConfig cfg;
    cfg.n = a.n;
    cfg.beta_total = a.beta1;
    cfg.m = a.m;
    cfg.H = a.H;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.record_trace = !a.trace_path.empty();
    const Rng sample_rng = root.derive(0x73616d70ULL, static_cast<uint64_t>(i));

    std::vector<double> target;
    if (mode != SamplerMode::bfn) {
      if (explicit_target) {
        target = {a.area, a.volume};
      } else {
        Rng pick = root.derive(0x7461726cULL, static_cast<uint64_t>(i));
        const size_t idx = std::min(static_cast<size_t>(pick.uniform() * test_records.size()),
                                    test_records.size() - 1);
        target = {test_records[idx].area, test_records[idx].volume};
      }
    }

    SampleResult sample;
    switch (mode) {
      case SamplerMode::bfn:
        sample = bfn_sample(params, cfg, sample_rng);
        break;
      case SamplerMode::gbf:
        sample = gbf_sample(params, *guidance, shapes::normalize_condition(target, *transform),
                            cfg, sample_rng);
        break;
      case SamplerMode::tgbfn:
        sample = tgbfn_sample(params, *guidance, shapes::normalize_condition(target, *transform),
                              cfg, sample_rng);
        break;
    }

    std::cout << "sample=" << i;
    if (!target.empty()) {
      std::cout << " target_area=" << target[0] << " target_volume=" << target[1];
    }
    std::cout << " tokens=";
    for (size_t j = 0; j < sample.tokens.size(); ++j) {
      if (j) std::cout << ',';
      std::cout << sample.tokens[j];
    }
    if (grammar) {
      const shapes::DecodeResult dec = shapes::decode_program(sample.tokens, *grammar);
      if (dec.ok()) {
        const shapes::Properties props = shapes::evaluate_properties(*dec.program);
        std::cout << " valid=true area=" << props.area << " volume=" << props.volume;
      } else {
        std::cout << " valid=false error=\"" << shapes::decode_error_message(dec.error) << "\"";
      }
    }
    std::cout << "\n";
    if (trace_out.is_open()) {
      trace_out << "sample=" << i << "\n";
      write_trace(trace_out, sample);
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate / ablate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string skeleton = "skeleton.ckpt";
  std::string guidance;
  std::string data = "data";
  std::string mode = "tgbfn";
  int n = 100;
  int m = 4;
  int H = 4;
  double beta1 = 3.0;
  int count = 500;
  std::string out;  // optional CSV
};

int run_evaluate(const EvaluateArgs& a, uint64_t seed, int threads) {
  echo_config("evaluate", json{{"skeleton", a.skeleton},
                               {"guidance", a.guidance},
                               {"data", a.data},
                               {"mode", a.mode},
                               {"n", a.n},
                               {"m", a.m},
                               {"H", a.H},
                               {"beta1", a.beta1},
                               {"count", a.count},
                               {"out", a.out},
                               {"seed", seed},
                               {"threads", threads}});
  const DenoiserParams params = load_denoiser_checkpoint(a.skeleton);
  std::optional<GuidanceParams> guidance;
  if (!a.guidance.empty()) guidance = load_guidance_checkpoint(a.guidance);

  const DatasetPaths paths(a.data);
  const shapes::GrammarConfig grammar = shapes::read_grammar(paths.grammar);
  const shapes::ConditionTransform transform = shapes::read_transform(paths.transform);
  const std::vector<shapes::DatasetRecord> test_records = shapes::read_records(paths.test);

  SamplerConfig cfg;
  cfg.n = a.n;
  cfg.beta_total = a.beta1;
  cfg.m = a.m;
  cfg.H = a.H;
  cfg.mode = sampler_mode_from_string(a.mode);
  cfg.seed = seed;

  const MetricsReport report =
      evaluate_sampler(params, guidance ? &*guidance : nullptr, test_records, transform, grammar,
                       cfg, a.count, threads);
  write_report_summary(std::cout, report);
  if (!a.out.empty()) {
    std::ofstream csv(a.out);
    if (!csv) throw std::runtime_error("cannot open " + a.out);
    write_metrics_csv(csv, {AblationRow{cfg.m, cfg.H, report}});
  }
  return 0;
}

struct AblateArgs {
  std::string skeleton = "skeleton.ckpt";
  std::string guidance = "guidance.ckpt";
  std::string data = "data";
  std::vector<int> m_values{1, 2, 4, 8, 16};
  std::vector<int> H_values{1, 2, 4, 8};
  int n = 100;
  double beta1 = 3.0;
  int count = 200;
  std::string out;
};

int run_ablate(const AblateArgs& a, uint64_t seed, int threads) {
  echo_config("ablate", json{{"skeleton", a.skeleton},
                             {"guidance", a.guidance},
                             {"data", a.data},
                             {"m", a.m_values},
                             {"H", a.H_values},
                             {"n", a.n},
                             {"beta1", a.beta1},
                             {"count", a.count},
                             {"out", a.out},
                             {"seed", seed},
                             {"threads", threads}});
  const DenoiserParams params = load_denoiser_checkpoint(a.skeleton);
  const GuidanceParams guidance = load_guidance_checkpoint(a.guidance);
  const DatasetPaths paths(a.data);
  const shapes::GrammarConfig grammar = shapes::read_grammar(paths.grammar);
  const shapes::ConditionTransform transform = shapes::read_transform(paths.transform);
  const std::vector<shapes::DatasetRecord> test_records = shapes::read_records(paths.test);

  SamplerConfig base;
  base.n = a.n;
  base.beta_total = a.beta1;
  base.mode = SamplerMode::tgbfn;
  base.seed = seed;

  const std::vector<AblationRow> rows =
      ablation_grid(params, guidance, test_records, transform, grammar, a.m_values, a.H_values,
                    base, a.count, threads);
  write_metrics_csv(std::cout, rows);
  if (!a.out.empty()) {
    std::ofstream csv(a.out);
    if (!csv) throw std::runtime_error("cannot open " + a.out);
    write_metrics_csv(csv, rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete Bayesian flow toolkit for constrained shape-program generation"};
  app.require_subcommand(1);
  app.fallthrough();  // global --seed/--threads may follow the subcommand

  uint64_t seed = 0;
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();
  app.add_option("--threads", threads, "parallelism bound")->capture_default_str();

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic shape dataset");
  gen_cmd->add_option("--count", gen.count, "records to keep after dedup/filter")
      ->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->capture_default_str();
  gen_cmd->add_option("--train-frac", gen.train_frac)->capture_default_str();
  gen_cmd->add_option("--val-frac", gen.valid_frac)->capture_default_str();
  gen_cmd->add_option("--test-frac", gen.test_frac)->capture_default_str();
  gen_cmd->add_option("--bins", gen.grammar.bins)->capture_default_str();
  gen_cmd->add_option("--max-primitives", gen.grammar.max_primitives)->capture_default_str();
  gen_cmd->add_option("--seq-len", gen.grammar.seq_len)->capture_default_str();
  gen_cmd->add_option("--param-min", gen.grammar.param_min)->capture_default_str();
  gen_cmd->add_option("--param-max", gen.grammar.param_max)->capture_default_str();
  gen_cmd->add_option("--max-tokens", gen.grammar.max_tokens)->capture_default_str();

  TrainSkeletonArgs ts;
  CLI::App* ts_cmd = app.add_subcommand("train-skeleton", "train the flow skeleton network");
  ts_cmd->add_option("--data", ts.data)->capture_default_str();
  ts_cmd->add_option("--out", ts.out)->capture_default_str();
  ts_cmd->add_option("--steps", ts.steps)->capture_default_str();
  ts_cmd->add_option("--batch", ts.batch)->capture_default_str();
  ts_cmd->add_option("--lr", ts.lr)->capture_default_str();
  ts_cmd->add_option("--n", ts.n, "inference steps in the schedule")->capture_default_str();
  ts_cmd->add_option("--beta1", ts.beta1, "total accuracy beta(1)")->capture_default_str();
  ts_cmd->add_option("--gamma", ts.gamma, "per-step loss weight")->capture_default_str();
  ts_cmd->add_option("--hidden", ts.hidden)->capture_default_str();
  ts_cmd->add_option("--layers", ts.layers)->capture_default_str();
  ts_cmd->add_option("--time-features", ts.time_features)->capture_default_str();
  ts_cmd->add_flag("--conditional", ts.conditional, "condition the denoiser on targets");
  ts_cmd->add_option("--checkpoint-interval", ts.checkpoint_interval)->capture_default_str();
  ts_cmd->add_option("--log-interval", ts.log_interval)->capture_default_str();
  ts_cmd->add_option("--log", ts.log_path, "training log file (default stdout)");

  TrainGuidanceArgs tg;
  CLI::App* tg_cmd = app.add_subcommand("train-guidance", "train the condition moments network");
  tg_cmd->add_option("--data", tg.data)->capture_default_str();
  tg_cmd->add_option("--out", tg.out)->capture_default_str();
  tg_cmd->add_option("--skeleton", tg.skeleton,
                     "skeleton checkpoint (unused by training; echoed for provenance)");
  tg_cmd->add_option("--steps", tg.steps)->capture_default_str();
  tg_cmd->add_option("--batch", tg.batch)->capture_default_str();
  tg_cmd->add_option("--lr", tg.lr)->capture_default_str();
  tg_cmd->add_option("--n", tg.n)->capture_default_str();
  tg_cmd->add_option("--beta1", tg.beta1)->capture_default_str();
  tg_cmd->add_option("--hidden", tg.hidden)->capture_default_str();
  tg_cmd->add_option("--layers", tg.layers)->capture_default_str();
  tg_cmd->add_option("--alpha-features", tg.alpha_features)->capture_default_str();
  tg_cmd->add_option("--variance-floor", tg.variance_floor)->capture_default_str();
  tg_cmd->add_option("--checkpoint-interval", tg.checkpoint_interval)->capture_default_str();
  tg_cmd->add_option("--log-interval", tg.log_interval)->capture_default_str();
  tg_cmd->add_option("--log", tg.log_path);

  SampleArgs sa;
  CLI::App* sa_cmd = app.add_subcommand("sample", "draw token sequences from a trained model");
  sa_cmd->add_option("--skeleton", sa.skeleton)->capture_default_str();
  sa_cmd->add_option("--guidance", sa.guidance);
  sa_cmd->add_option("--data", sa.data, "dataset dir (grammar + fallback targets)");
  sa_cmd->add_option("--mode", sa.mode, "bfn|gbf|tgbfn")->capture_default_str();
  sa_cmd->add_option("--n", sa.n)->capture_default_str();
  sa_cmd->add_option("--m", sa.m)->capture_default_str();
  sa_cmd->add_option("--H", sa.H)->capture_default_str();
  sa_cmd->add_option("--beta1", sa.beta1)->capture_default_str();
  sa_cmd->add_option("--area", sa.area, "target surface area");
  sa_cmd->add_option("--volume", sa.volume, "target volume");
  sa_cmd->add_option("--count", sa.count)->capture_default_str();
  sa_cmd->add_option("--trace", sa.trace_path, "write per-step trace records here");

  EvaluateArgs ev;
  CLI::App* ev_cmd = app.add_subcommand("evaluate", "score a sampler against test targets");
  ev_cmd->add_option("--skeleton", ev.skeleton)->capture_default_str();
  ev_cmd->add_option("--guidance", ev.guidance);
  ev_cmd->add_option("--data", ev.data)->capture_default_str();
  ev_cmd->add_option("--mode", ev.mode)->capture_default_str();
  ev_cmd->add_option("--n", ev.n)->capture_default_str();
  ev_cmd->add_option("--m", ev.m)->capture_default_str();
  ev_cmd->add_option("--H", ev.H)->capture_default_str();
  ev_cmd->add_option("--beta1", ev.beta1)->capture_default_str();
  ev_cmd->add_option("--count", ev.count)->capture_default_str();
  ev_cmd->add_option("--out", ev.out, "write the report as CSV");

  AblateArgs ab;
  CLI::App* ab_cmd = app.add_subcommand("ablate", "sweep m and H over a Cartesian grid");
  ab_cmd->add_option("--skeleton", ab.skeleton)->capture_default_str();
  ab_cmd->add_option("--guidance", ab.guidance)->capture_default_str();
  ab_cmd->add_option("--data", ab.data)->capture_default_str();
  ab_cmd->add_option("--m", ab.m_values, "m values")->delimiter(',')->capture_default_str();
  ab_cmd->add_option("--H", ab.H_values, "H values")->delimiter(',')->capture_default_str();
  ab_cmd->add_option("--n", ab.n)->capture_default_str();
  ab_cmd->add_option("--beta1", ab.beta1)->capture_default_str();
  ab_cmd->add_option("--count", ab.count)->capture_default_str();
  ab_cmd->add_option("--out", ab.out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen, seed);
    if (*ts_cmd) return run_train_skeleton(ts, seed, threads);
    if (*tg_cmd) return run_train_guidance(tg, seed, threads);
    if (*sa_cmd) return run_sample(sa, seed);
    if (*ev_cmd) return run_evaluate(ev, seed, threads);
    if (*ab_cmd) return run_ablate(ab, seed, threads);
  } catch (const NumericalFailure& e) {
    std::cerr << "error: numerical-failure: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid-argument: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
