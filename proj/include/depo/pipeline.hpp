#pragma once

// Pipeline stages behind the command-line tool. Each stage is a pure function
// of (config, inputs, seed) and writes its outputs under the configured paths.
// Configuration and precondition failures throw ConfigError.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "depo/config.hpp"
#include "depo/eval.hpp"

namespace depo {

inline constexpr const char* kTrajectoriesFile = "trajectories.jsonl";
inline constexpr const char* kDesirableFile = "desirable.jsonl";
inline constexpr const char* kUndesirableFile = "undesirable.jsonl";
inline constexpr const char* kLabelCountsFile = "label_counts.json";

struct GenerateSummary {
  int tasks = 0;
  std::size_t trajectories = 0;
  std::vector<std::size_t> reward_histogram;  // 10 bins over [0, 1]
};

// MCTS over `tasks` tasks (task k uses persona k mod |personas|).
std::vector<Trajectory> generate_trajectories(const PipelineConfig& cfg, int tasks);
GenerateSummary cmd_generate(const PipelineConfig& cfg, int tasks, const std::filesystem::path& out_file,
                             std::ostream& log);

LabeledDataset cmd_label(const PipelineConfig& cfg, const std::filesystem::path& in_file,
                         const std::filesystem::path& out_dir, std::ostream& log);

void write_labeled(const LabeledDataset& data, const std::filesystem::path& dir);
// Reads desirable.jsonl and undesirable.jsonl; a missing file is a ConfigError.
LabeledDataset read_labeled(const std::filesystem::path& dir, bool need_undesirable = true);

struct TrainPaths {
  std::filesystem::path data_dir;
  std::optional<std::filesystem::path> reference;  // required for KTO/DEPO
  std::optional<std::filesystem::path> init;       // defaults to the reference (or a fresh policy for SFT)
  std::filesystem::path output;                    // final checkpoint
  std::filesystem::path log;                       // line-delimited LossReports
  std::optional<std::filesystem::path> epoch_dir;  // per-epoch checkpoints
};

TrainResult cmd_train(const PipelineConfig& cfg, LossKind kind, const TrainPaths& paths, std::ostream& log);

struct EvalOutputs {
  std::filesystem::path report_dir;
  std::string name;
  std::optional<std::filesystem::path> compare;        // baseline checkpoint
  std::optional<std::filesystem::path> dump_episodes;  // trajectory dataset of the episodes
};

MetricsReport cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& checkpoint, const EvalOutputs& outputs,
                       std::ostream& log);

// Stratified subsample: round(fraction * n) per label, uniform without replacement.
LabeledDataset subset(const LabeledDataset& data, double fraction, std::uint64_t seed);
LabeledDataset cmd_subset(const PipelineConfig& cfg, double fraction, const std::filesystem::path& in_dir,
                          const std::filesystem::path& out_dir, std::ostream& log);

// Collects every *_metrics.jsonl under the report directory into summary.txt.
std::map<std::string, MetricsReport> cmd_report(const PipelineConfig& cfg, std::ostream& log);

}  // namespace depo
