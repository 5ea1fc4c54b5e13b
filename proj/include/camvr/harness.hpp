#pragma once

// Experiment orchestration: config parsing, train/evaluate cells, study
// drivers (ablation, memory sweep, granularity sweep, per-turn buckets,
// efficiency) and the gradient-check suite.

#include "camvr/gradcheck.hpp"
#include "camvr/integrator.hpp"
#include "camvr/train.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace camvr::harness {

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  task::TaskConfig task;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t n_train = 4000;
  std::size_t n_eval = 100;
  std::size_t timing_turns = 100;
  std::size_t timing_warmup = 10;
  std::size_t attention_samples = 3;
  std::filesystem::path out = "camvr_out";

  void validate() const;
};

// Flat "key = value" lines; '#' starts a comment.
ExperimentConfig parse_config(std::istream &in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path &path, ExperimentConfig base = {});
void apply_setting(ExperimentConfig &cfg, const std::string &key, const std::string &value);
std::vector<std::string> config_keys();
std::string format_config(const ExperimentConfig &cfg);

// ---------------------------------------------------------------- evaluation

struct TurnOutcome {
  std::size_t episode = 0;
  std::size_t turn = 1;
  std::size_t depth = 0;
  bool correct = false;
};

// Turn buckets: turn 1, turns 2-3, turns 4+.
inline constexpr std::size_t kBuckets = 3;
std::size_t bucket_of(std::size_t turn);
const std::array<std::string, kBuckets> &bucket_labels();

struct BucketStats {
  std::size_t turns = 0, correct = 0;
  std::size_t dependent = 0, dependent_correct = 0;

  std::optional<double> accuracy() const;
  std::optional<double> mda() const;
  void add(const TurnOutcome &o);
};

struct FlagAudit {
  std::size_t turns_checked = 0;
  bool memory_frozen = true; // memory bit-identical across turns
  bool vmod_is_raw = true;   // modulated features bit-identical to raw
};

struct Evaluation {
  std::vector<TurnOutcome> outcomes;
  std::size_t episodes = 0;
  std::size_t episodes_all_correct = 0;
  FlagAudit audit;
};

Evaluation evaluate(const ModelParams &params, const std::vector<task::Episode> &episodes);

struct Timing {
  std::size_t turns = 0;
  double mean_ms = 0.0;
  double stdev_ms = 0.0;
};

// Wall clock per forward_turn on one thread, after `warmup` discarded turns.
Timing time_turns(const ModelParams &params, const std::vector<task::Episode> &episodes,
                  std::size_t turns, std::size_t warmup);

// ---------------------------------------------------------------- records

struct ResultsRecord {
  std::string variant;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string diagnostic;
  ModelConfig model;
  std::array<BucketStats, kBuckets> buckets{};
  BucketStats overall;
  double episode_success = 0.0;
  double memoryless_ceiling = 0.0;
  std::vector<ComponentCount> params;
  double final_loss = 0.0;
  Timing timing;
  FlagAudit audit;

  std::size_t total_params() const;
};

// Builds a record from an evaluation; the memoryless ceiling is computed from
// the evaluated episodes.
ResultsRecord make_record(const std::string &variant, std::uint64_t seed,
                          const ModelParams &params, const Evaluation &eval,
                          const std::vector<task::Episode> &episodes);

// Weighted bucket means must reproduce the overall figures (within 1e-9).
bool buckets_reconcile(const ResultsRecord &r);

// ---------------------------------------------------------------- runs

struct Variant {
  std::string name;
  ModelFlags flags;
};

// base (both off), +VCMU, +AVFG, full; granularity/memory-init from `flags`.
std::vector<Variant> ablation_variants(const ModelFlags &flags);

struct CellOutput {
  ResultsRecord record;
  ModelParams params;
  Evaluation evaluation;
};

// Generates splits for `seed`, trains, evaluates. Divergence yields a failed
// record instead of an exception.
CellOutput run_cell(const ExperimentConfig &cfg, const Variant &variant, std::uint64_t seed);

struct StudyOutput {
  std::vector<ResultsRecord> records;
  bool any_failed = false;
};

// Each study writes its CSVs and summary.txt under cfg.out.
StudyOutput run_experiment(const ExperimentConfig &cfg);
StudyOutput ablate(const ExperimentConfig &cfg);
StudyOutput sweep_memory(const ExperimentConfig &cfg, const std::vector<std::size_t> &slots);
StudyOutput sweep_granularity(const ExperimentConfig &cfg);
StudyOutput per_turn(const ExperimentConfig &cfg);

// ---------------------------------------------------------------- per-turn

struct TurnDrop {
  std::string variant;
  std::uint64_t seed = 0;
  std::optional<double> turn1_accuracy;
  std::optional<double> late_mda; // turns 4+
  std::optional<double> drop;     // turn1_accuracy - late_mda
};

std::vector<TurnDrop> turn_drops(const std::vector<ResultsRecord> &records);
void write_per_turn_csv(std::ostream &out, const std::vector<ResultsRecord> &records);
void write_turn_drop_csv(std::ostream &out, const std::vector<TurnDrop> &drops);

// ---------------------------------------------------------------- efficiency

struct EfficiencyRow {
  std::string variant;
  std::vector<ComponentCount> counts;
  Timing timing;
  bool consistent() const;
};

// Throws ContractError when a formula disagrees with the tensor tally.
std::vector<EfficiencyRow> efficiency_report(const ExperimentConfig &cfg);

// ---------------------------------------------------------------- gradcheck

struct GradcheckSuiteEntry {
  std::string component;
  GradcheckReport report;
};

inline constexpr double kGradcheckThreshold = 1e-4;

// Tiny-dimension gradient checks for every component and the full two-turn
// pipeline, in double precision with eps = 1e-5.
std::vector<GradcheckSuiteEntry> gradcheck_suite(std::uint64_t seed);

// ---------------------------------------------------------------- output

void write_results_csv(std::ostream &out, const std::vector<ResultsRecord> &records);
std::vector<std::string> results_csv_header();
// Reads back the columns written by write_results_csv (timing is not stored).
std::vector<ResultsRecord> read_results_csv(std::istream &in);
void write_timing_csv(std::ostream &out, const std::vector<ResultsRecord> &records);
void write_attention_csv(std::ostream &out, const Tensor &map);
std::string format_metric(std::optional<double> v);

} // namespace camvr::harness
