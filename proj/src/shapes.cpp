#include "tgbfn/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace tgbfn::shapes {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// FNV-1a over the token ints; dedup key.
struct TokenHash {
  size_t operator()(const TokenSequence& t) const {
    size_t h = 1469598103934665603ULL;
    for (int v : t) {
      h ^= static_cast<size_t>(v);
      h *= 1099511628211ULL;
    }
    return h;
  }
};

}  // namespace

std::string decode_error_message(const DecodeError& e) {
  std::string what;
  switch (e.code) {
    case DecodeErrorCode::none: what = "no error"; break;
    case DecodeErrorCode::empty_program: what = "empty program"; break;
    case DecodeErrorCode::expected_command: what = "expected command or END"; break;
    case DecodeErrorCode::expected_parameter: what = "expected parameter bin"; break;
    case DecodeErrorCode::missing_end: what = "missing END"; break;
    case DecodeErrorCode::trailing_token: what = "non-PAD token after END"; break;
    case DecodeErrorCode::too_many_primitives: what = "too many primitives"; break;
    case DecodeErrorCode::token_out_of_range: what = "token outside vocabulary"; break;
  }
  return what + " at position " + std::to_string(e.position);
}

int quantize_param(double v, const GrammarConfig& cfg) {
  if (!(v >= cfg.param_min && v <= cfg.param_max))
    throw std::invalid_argument("quantize_param: value outside quantization range");
  const double width = (cfg.param_max - cfg.param_min) / cfg.bins;
  int bin = 1 + static_cast<int>(std::floor((v - cfg.param_min) / width));
  return std::clamp(bin, 1, cfg.bins);
}

double dequantize_param(int bin_token, const GrammarConfig& cfg) {
  if (bin_token < 1 || bin_token > cfg.bins)
    throw std::invalid_argument("dequantize_param: not a parameter bin token");
  const double width = (cfg.param_max - cfg.param_min) / cfg.bins;
  return cfg.param_min + (bin_token - 0.5) * width;
}

TokenSequence encode_program(const Program& p, const GrammarConfig& cfg) {
  if (p.primitives.empty() || static_cast<int>(p.primitives.size()) > cfg.max_primitives)
    throw std::invalid_argument("encode_program: primitive count outside 1..P");
  TokenSequence out;
  out.reserve(cfg.seq_len);
  for (const Primitive& prim : p.primitives) {
    if (prim.kind == PrimitiveKind::box) {
      out.push_back(cfg.cmd_box());
      for (int i = 0; i < 3; ++i) out.push_back(quantize_param(prim.dims[i], cfg));
    } else {
      out.push_back(cfg.cmd_cyl());
      for (int i = 0; i < 2; ++i) out.push_back(quantize_param(prim.dims[i], cfg));
    }
  }
  out.push_back(cfg.end_token());
  if (static_cast<int>(out.size()) > cfg.seq_len)
    throw std::invalid_argument("encode_program: encoded length exceeds sequence length");
  out.resize(cfg.seq_len, cfg.pad_token());
  return out;
}

DecodeResult decode_program(const TokenSequence& tokens, const GrammarConfig& cfg) {
  DecodeResult res;
  auto fail = [&](DecodeErrorCode code, int pos) {
    res.error = DecodeError{code, pos};
    return res;
  };

  const int n = static_cast<int>(tokens.size());
  for (int i = 0; i < n; ++i) {
    if (tokens[i] < 1 || tokens[i] > cfg.vocab())
      return fail(DecodeErrorCode::token_out_of_range, i);
  }

  Program prog;
  int i = 0;
  bool saw_end = false;
  while (i < n) {
    const int tok = tokens[i];
    if (tok == cfg.end_token()) {
      if (prog.primitives.empty()) return fail(DecodeErrorCode::empty_program, i);
      saw_end = true;
      ++i;
      break;
    }
    if (tok == cfg.cmd_box() || tok == cfg.cmd_cyl()) {
      if (static_cast<int>(prog.primitives.size()) >= cfg.max_primitives)
        return fail(DecodeErrorCode::too_many_primitives, i);
      Primitive prim;
      prim.kind = (tok == cfg.cmd_box()) ? PrimitiveKind::box : PrimitiveKind::cylinder;
      const int nparams = (prim.kind == PrimitiveKind::box) ? 3 : 2;
      ++i;
      for (int p = 0; p < nparams; ++p, ++i) {
        if (i >= n) return fail(DecodeErrorCode::missing_end, n - 1);
        if (tokens[i] < 1 || tokens[i] > cfg.bins)
          return fail(DecodeErrorCode::expected_parameter, i);
        prim.dims[p] = dequantize_param(tokens[i], cfg);
      }
      prog.primitives.push_back(prim);
      continue;
    }
    // PAD or a bin token where a command was required.
    if (tok == cfg.pad_token() && prog.primitives.empty() && i == 0) {
      // Leading PAD means the whole sequence carries no program.
      return fail(DecodeErrorCode::empty_program, i);
    }
    return fail(DecodeErrorCode::expected_command, i);
  }
  if (!saw_end) return fail(DecodeErrorCode::missing_end, n - 1);
  for (; i < n; ++i) {
    if (tokens[i] != cfg.pad_token()) return fail(DecodeErrorCode::trailing_token, i);
  }
  res.program = std::move(prog);
  return res;
}

Properties evaluate_properties(const Program& p) {
  Properties props;
  for (const Primitive& prim : p.primitives) {
    if (prim.kind == PrimitiveKind::box) {
      const double w = prim.dims[0], h = prim.dims[1], d = prim.dims[2];
      props.area += 2.0 * (w * h + w * d + h * d);
      props.volume += w * h * d;
    } else {
      const double r = prim.dims[0], h = prim.dims[1];
      props.area += 2.0 * std::numbers::pi * r * r + 2.0 * std::numbers::pi * r * h;
      props.volume += std::numbers::pi * r * r * h;
    }
  }
  return props;
}

Program random_program(Rng& rng, const GrammarConfig& cfg) {
  Program prog;
  const int count = 1 + static_cast<int>(rng.uniform() * cfg.max_primitives);
  for (int i = 0; i < count; ++i) {
    Primitive prim;
    prim.kind = (rng.uniform() < 0.5) ? PrimitiveKind::box : PrimitiveKind::cylinder;
    const int nparams = (prim.kind == PrimitiveKind::box) ? 3 : 2;
    for (int p = 0; p < nparams; ++p) {
      prim.dims[p] = cfg.param_min + rng.uniform() * (cfg.param_max - cfg.param_min);
    }
    prog.primitives.push_back(prim);
  }
  return prog;
}

ConditionTransform fit_condition_transform(const std::vector<std::vector<double>>& conditions) {
  if (conditions.empty())
    throw std::invalid_argument("fit_condition_transform: empty condition list");
  const int d = static_cast<int>(conditions.front().size());
  ConditionTransform t;
  t.log_offset.assign(d, 0.0);
  t.mean.assign(d, 0.0);
  t.stddev.assign(d, 0.0);
  const double n = static_cast<double>(conditions.size());
  for (const auto& c : conditions) {
    if (static_cast<int>(c.size()) != d)
      throw std::invalid_argument("fit_condition_transform: ragged condition list");
    for (int j = 0; j < d; ++j) {
      if (!(c[j] + t.log_offset[j] > 0.0))
        throw std::invalid_argument("fit_condition_transform: non-positive condition value");
      t.mean[j] += std::log(c[j] + t.log_offset[j]);
    }
  }
  for (int j = 0; j < d; ++j) t.mean[j] /= n;
  for (const auto& c : conditions) {
    for (int j = 0; j < d; ++j) {
      const double dv = std::log(c[j] + t.log_offset[j]) - t.mean[j];
      t.stddev[j] += dv * dv;
    }
  }
  for (int j = 0; j < d; ++j) {
    t.stddev[j] = std::sqrt(t.stddev[j] / n);
    if (!(t.stddev[j] > 0.0)) t.stddev[j] = 1.0;  // degenerate (constant) dimension
  }
  return t;
}

std::vector<double> normalize_condition(const std::vector<double>& c,
                                        const ConditionTransform& t) {
  if (static_cast<int>(c.size()) != t.dims())
    throw std::invalid_argument("normalize_condition: dimension mismatch");
  std::vector<double> z(c.size());
  for (size_t j = 0; j < c.size(); ++j) {
    const double shifted = c[j] + t.log_offset[j];
    if (!(shifted > 0.0))
      throw std::invalid_argument("normalize_condition: non-positive condition value");
    z[j] = (std::log(shifted) - t.mean[j]) / t.stddev[j];
  }
  return z;
}

std::vector<double> denormalize_condition(const std::vector<double>& z,
                                          const ConditionTransform& t) {
  if (static_cast<int>(z.size()) != t.dims())
    throw std::invalid_argument("denormalize_condition: dimension mismatch");
  std::vector<double> c(z.size());
  for (size_t j = 0; j < z.size(); ++j) {
    c[j] = std::exp(z[j] * t.stddev[j] + t.mean[j]) - t.log_offset[j];
  }
  return c;
}

Dataset generate_dataset(int count, uint64_t seed, const SplitRatios& ratios,
                         const GrammarConfig& cfg) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  if (!(ratios.train > 0.0) || ratios.valid < 0.0 || ratios.test < 0.0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("generate_dataset: split ratios must be nonnegative and sum to 1");

  Rng root(seed);
  std::unordered_set<TokenSequence, TokenHash> seen;
  std::vector<DatasetRecord> pool;
  pool.reserve(count);
  const long max_attempts = 200L * count + 1000;
  long attempt = 0;
  while (static_cast<int>(pool.size()) < count) {
    if (attempt >= max_attempts)
      throw std::runtime_error("generate_dataset: exhausted attempts before reaching count "
                               "(program space too small for requested count)");
    Rng sub = root.derive(0x67656eULL, static_cast<uint64_t>(attempt));
    ++attempt;
    Program prog = random_program(sub, cfg);
    TokenSequence tokens = encode_program(prog, cfg);
    int used = 0;
    for (int v : tokens) {
      if (v != cfg.pad_token()) ++used;
    }
    if (used > cfg.max_tokens) continue;
    if (!seen.insert(tokens).second) continue;
    // Store properties of the decoded (bin-center) program so stored values
    // re-verify exactly through decode + oracle.
    DecodeResult dec = decode_program(tokens, cfg);
    if (!dec.ok())
      throw std::runtime_error("generate_dataset: freshly encoded program failed to decode");
    const Properties props = evaluate_properties(*dec.program);
    DatasetRecord rec;
    rec.tokens = std::move(tokens);
    rec.area = props.area;
    rec.volume = props.volume;
    pool.push_back(std::move(rec));
  }

  Dataset ds;
  ds.grammar = cfg;
  const int n_train = static_cast<int>(std::lround(ratios.train * count));
  const int n_valid = static_cast<int>(std::lround(ratios.valid * count));
  for (int i = 0; i < count; ++i) {
    if (i < n_train) {
      ds.train.push_back(std::move(pool[i]));
    } else if (i < n_train + n_valid) {
      ds.valid.push_back(std::move(pool[i]));
    } else {
      ds.test.push_back(std::move(pool[i]));
    }
  }

  std::vector<std::vector<double>> train_conditions;
  train_conditions.reserve(ds.train.size());
  for (const auto& r : ds.train) train_conditions.push_back({r.area, r.volume});
  ds.transform = fit_condition_transform(train_conditions);
  apply_transform(ds.train, ds.transform);
  apply_transform(ds.valid, ds.transform);
  apply_transform(ds.test, ds.transform);
  return ds;
}

void write_records(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_records: cannot open " + path);
  for (const auto& r : records) {
    out << "tokens=";
    for (size_t i = 0; i < r.tokens.size(); ++i) {
      if (i) out << ',';
      out << r.tokens[i];
    }
    out << " area=" << format_double(r.area) << " volume=" << format_double(r.volume) << "\n";
  }
  if (!out) throw std::runtime_error("write_records: write failed for " + path);
}

std::vector<DatasetRecord> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_records: cannot open " + path);
  std::vector<DatasetRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    DatasetRecord rec;
    std::istringstream ls(line);
    std::string field;
    bool have_tokens = false, have_area = false, have_volume = false;
    while (ls >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("read_records: malformed field at line " +
                                 std::to_string(lineno));
      const std::string key = field.substr(0, eq);
      const std::string val = field.substr(eq + 1);
      if (key == "tokens") {
        std::istringstream ts(val);
        std::string item;
        while (std::getline(ts, item, ',')) rec.tokens.push_back(std::stoi(item));
        have_tokens = true;
      } else if (key == "area") {
        rec.area = std::stod(val);
        have_area = true;
      } else if (key == "volume") {
        rec.volume = std::stod(val);
        have_volume = true;
      } else {
        throw std::runtime_error("read_records: unknown field '" + key + "' at line " +
                                 std::to_string(lineno));
      }
    }
    if (!have_tokens || !have_area || !have_volume)
      throw std::runtime_error("read_records: missing field at line " + std::to_string(lineno));
    records.push_back(std::move(rec));
  }
  return records;
}

void write_transform(const std::string& path, const ConditionTransform& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_transform: cannot open " + path);
  auto emit = [&](const char* key, const std::vector<double>& v) {
    out << key << '=';
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) out << ',';
      out << format_double(v[i]);
    }
    out << "\n";
  };
  emit("log_offset", t.log_offset);
  emit("mean", t.mean);
  emit("std", t.stddev);
  if (!out) throw std::runtime_error("write_transform: write failed for " + path);
}

ConditionTransform read_transform(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_transform: cannot open " + path);
  ConditionTransform t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("read_transform: malformed line in " + path);
    const std::string key = line.substr(0, eq);
    std::vector<double> vals;
    std::istringstream vs(line.substr(eq + 1));
    std::string item;
    while (std::getline(vs, item, ',')) vals.push_back(std::stod(item));
    if (key == "log_offset") {
      t.log_offset = vals;
    } else if (key == "mean") {
      t.mean = vals;
    } else if (key == "std") {
      t.stddev = vals;
    } else {
      throw std::runtime_error("read_transform: unknown key '" + key + "'");
    }
  }
  if (t.mean.empty() || t.mean.size() != t.stddev.size() ||
      t.mean.size() != t.log_offset.size())
    throw std::runtime_error("read_transform: incomplete transform in " + path);
  for (double s : t.stddev) {
    if (!(s > 0.0)) throw std::runtime_error("read_transform: non-positive std in " + path);
  }
  return t;
}

void write_grammar(const std::string& path, const GrammarConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_grammar: cannot open " + path);
  out << "bins=" << cfg.bins << "\n";
  out << "max_primitives=" << cfg.max_primitives << "\n";
  out << "seq_len=" << cfg.seq_len << "\n";
  out << "param_min=" << format_double(cfg.param_min) << "\n";
  out << "param_max=" << format_double(cfg.param_max) << "\n";
  out << "max_tokens=" << cfg.max_tokens << "\n";
  if (!out) throw std::runtime_error("write_grammar: write failed for " + path);
}

GrammarConfig read_grammar(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_grammar: cannot open " + path);
  GrammarConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("read_grammar: malformed line");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "bins") {
      cfg.bins = std::stoi(val);
    } else if (key == "max_primitives") {
      cfg.max_primitives = std::stoi(val);
    } else if (key == "seq_len") {
      cfg.seq_len = std::stoi(val);
    } else if (key == "param_min") {
      cfg.param_min = std::stod(val);
    } else if (key == "param_max") {
      cfg.param_max = std::stod(val);
    } else if (key == "max_tokens") {
      cfg.max_tokens = std::stoi(val);
    } else {
      throw std::runtime_error("read_grammar: unknown key '" + key + "'");
    }
  }
  return cfg;
}

void apply_transform(std::vector<DatasetRecord>& records, const ConditionTransform& t) {
  for (auto& r : records) r.normalized_conditions = normalize_condition({r.area, r.volume}, t);
}

}  // namespace tgbfn::shapes
