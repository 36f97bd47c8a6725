#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tgbfn/bayesflow.hpp"
#include "tgbfn/rng.hpp"

namespace tgbfn::shapes {

// Vocabulary layout: tokens 1..bins are ordinal parameter bins, followed by
// CMD_BOX, CMD_CYL, END, PAD. K = bins + 4.
struct GrammarConfig {
  int bins = 32;
  int max_primitives = 4;
  int seq_len = 24;          // D: encoded sequences are padded to this length
  double param_min = 0.2;
  double param_max = 5.0;
  int max_tokens = 64;       // records longer than this (before padding) are dropped

  int vocab() const { return bins + 4; }
  int cmd_box() const { return bins + 1; }
  int cmd_cyl() const { return bins + 2; }
  int end_token() const { return bins + 3; }
  int pad_token() const { return bins + 4; }
};

enum class PrimitiveKind { box, cylinder };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::box;
  // box: width, height, depth; cylinder: radius, height (dims[2] unused).
  std::array<double, 3> dims{0.0, 0.0, 0.0};
};

struct Program {
  std::vector<Primitive> primitives;
};

struct Properties {
  double area = 0.0;
  double volume = 0.0;
};

enum class DecodeErrorCode {
  none,
  empty_program,
  expected_command,     // a command or END was required at this position
  expected_parameter,   // a parameter bin was required at this position
  missing_end,
  trailing_token,       // non-PAD token after END
  too_many_primitives,
  token_out_of_range,
};

struct DecodeError {
  DecodeErrorCode code = DecodeErrorCode::none;
  int position = -1;
};

std::string decode_error_message(const DecodeError& e);

struct DecodeResult {
  std::optional<Program> program;
  DecodeError error;
  bool ok() const { return program.has_value(); }
};

// Ordinal quantization over [param_min, param_max]; bin tokens are 1-based.
int quantize_param(double v, const GrammarConfig& cfg);       // throws if out of range
double dequantize_param(int bin_token, const GrammarConfig& cfg);  // bin center

TokenSequence encode_program(const Program& p, const GrammarConfig& cfg);
DecodeResult decode_program(const TokenSequence& tokens, const GrammarConfig& cfg);

// Closed-form surface area and volume; primitives are placed disjointly so
// both properties are additive.
Properties evaluate_properties(const Program& p);

// Uniformly random program: 1..max_primitives primitives, each kind fair,
// parameters uniform over the quantization range.
Program random_program(Rng& rng, const GrammarConfig& cfg);

// Log-then-standardize normalization for condition vectors.
struct ConditionTransform {
  std::vector<double> log_offset;  // z = (log(c + offset) - mean) / std
  std::vector<double> mean;
  std::vector<double> stddev;

  int dims() const { return static_cast<int>(mean.size()); }
};

ConditionTransform fit_condition_transform(const std::vector<std::vector<double>>& conditions);
std::vector<double> normalize_condition(const std::vector<double>& c, const ConditionTransform& t);
std::vector<double> denormalize_condition(const std::vector<double>& z,
                                          const ConditionTransform& t);

struct DatasetRecord {
  TokenSequence tokens;
  double area = 0.0;
  double volume = 0.0;
  std::vector<double> normalized_conditions;  // filled once a transform exists
};

struct Dataset {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> valid;
  std::vector<DatasetRecord> test;
  ConditionTransform transform;  // fit on the training split only
  GrammarConfig grammar;
};

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

// Samples random programs until `count` unique records survive dedup and the
// max_tokens filter, splits them, and fits the condition transform on the
// training split.
Dataset generate_dataset(int count, uint64_t seed, const SplitRatios& ratios,
                         const GrammarConfig& cfg);

// One record per line: tokens=i,i,... area=x volume=y
void write_records(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_records(const std::string& path);

void write_transform(const std::string& path, const ConditionTransform& t);
ConditionTransform read_transform(const std::string& path);

// Grammar settings in the same key=value framing; written next to the split
// files so downstream tools can decode without re-supplying flags.
void write_grammar(const std::string& path, const GrammarConfig& cfg);
GrammarConfig read_grammar(const std::string& path);

// Fills normalized_conditions for every record in place.
void apply_transform(std::vector<DatasetRecord>& records, const ConditionTransform& t);

}  // namespace tgbfn::shapes
