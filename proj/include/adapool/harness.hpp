#pragma once

// Experiment driver: configuration, backbone pretraining, learning-rate and
// EWC-strength selection, per-seed runs with checkpointed resume, metrics
// files and plot data.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adapool/learner.hpp"

namespace adapool {

struct PretrainConfig {
  std::string preset = "tiny";
  std::size_t classes = 20;
  std::size_t per_class = 50;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
  /// Seed of the auxiliary synthetic data; distinct from any stream's data.
  std::uint64_t data_seed = 1000;
};

/// Trains a fresh backbone with a classification head on auxiliary synthetic
/// classes and returns it frozen.
BackboneParams pretrain_backbone(const PretrainConfig& config);

struct ExperimentConfig {
  std::string method = "ada-leep";
  std::string scenario = "binary";
  /// "synthetic" or "cifar100:<file or directory>".
  std::string dataset = "synthetic";
  std::string preset = "tiny";
  /// Checkpoint stem of a pretrained backbone. Empty means pretrain one with
  /// `pretrain` and cache it in the output directory; "random" skips
  /// pretraining.
  std::string backbone;
  PretrainConfig pretrain;
  /// Only meaningful for ada-leep / ada-transrate.
  std::optional<std::size_t> pool_size;
  std::size_t num_tasks = 20;
  std::size_t per_class = 50;
  std::size_t classes_per_task = 5;
  std::size_t batch_size = 8;
  std::optional<float> lr;
  std::vector<float> lr_grid = {5e-5f, 1e-4f, 5e-4f, 1e-3f};
  std::size_t epochs = 20;
  std::size_t distill_epochs = 50;
  std::size_t distill_cap = 50;
  bool leep_latest_head = false;
  std::size_t memory_capacity = 500;
  /// Only meaningful for ewc.
  std::optional<float> ewc_lambda;
  std::vector<float> ewc_lambda_grid = {0.0f, 1.0f, 10.0f, 100.0f, 1000.0f};
  /// Tasks used for lr / lambda selection.
  std::size_t selection_tasks = 5;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::uint64_t data_seed = 0;
  std::size_t synthetic_per_class = 0;  // 0: twice per_class
  std::filesystem::path out = "results";
};

/// Throws ConfigError for unknown names, empty grids, zero sizes, and
/// settings given to a method that has no use for them.
void validate(const ExperimentConfig& config);

/// The method's learner settings for a given lr (and lambda for ewc).
MethodConfig method_config(const ExperimentConfig& config, float lr, float ewc_lambda);

/// The labelled data a config refers to.
LabeledDataset load_dataset(const ExperimentConfig& config);
std::vector<Task> make_tasks(const ExperimentConfig& config, const LabeledDataset& ds, std::uint64_t seed);

/// Frozen backbone for the config (loaded, cached, pretrained or random).
BackboneParams resolve_backbone(const ExperimentConfig& config);

struct Selection {
  float lr = 0.0f;
  float ewc_lambda = 0.0f;
  /// (value, average accuracy after the selection tasks) per candidate;
  /// diverged candidates score -inf.
  std::vector<std::pair<float, double>> lr_scores;
  std::vector<std::pair<float, double>> lambda_scores;
};

/// Picks the candidate with the best average accuracy after the first
/// `selection_tasks` tasks; ties go to the smaller value. A singleton grid
/// is returned without running.
Selection select_hyperparameters(const ExperimentConfig& config, const BackboneParams& theta,
                                 std::span<const TaskData> tasks, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Records

inline constexpr const char* kRecordHeader =
    "method,seed,task_index,avg_accuracy,per_task_json,trainable_params,inference_params,total_params,wall_ms";
inline constexpr const char* kAggregateHeader =
    "method,seeds,task_index,avg_accuracy,std,per_task_json,trainable_params,inference_params,total_params";

std::string format_record(const MetricsRecord& r);
MetricsRecord parse_record(const std::string& line);
void write_records(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);
/// Throws LookupError if the file is missing, FormatError if malformed.
std::vector<MetricsRecord> read_records(const std::filesystem::path& path);

struct AggregateRow {
  std::string method;
  std::size_t seeds = 0;
  std::size_t task_index = 0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation across seeds
  std::vector<double> per_task_mean;
  MethodCounts params;
};

/// Groups per-seed records by task index. Seeds must cover the same tasks.
std::vector<AggregateRow> aggregate(const std::vector<std::vector<MetricsRecord>>& per_seed);
void write_aggregate(const std::filesystem::path& path, const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> read_aggregate(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Runs

struct RunOptions {
  /// Stop after this many new tasks in total (across seeds); 0 means no
  /// limit. Used to simulate an interrupted run.
  std::size_t max_new_tasks = 0;
};

struct RunSummary {
  bool complete = false;
  std::filesystem::path aggregate;
  std::vector<std::filesystem::path> seed_files;
  std::size_t tasks_learned = 0;
};

/// Layout under config.out:
///   tasks_seed<s>.json             task manifest shared by every method
///   <method>/seed<s>.csv            records, rewritten after every task
///   <method>/state_seed<s>/task<n>/ learner state after task n
///   <method>/selection_seed<s>.json chosen lr / lambda with grid scores
///   <method>/aggregate.csv          written once every seed is complete
///   run.log
/// Existing progress is resumed from the latest saved learner state.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Every method of the comparison, sharing manifests and backbone.
std::vector<std::string> suite_methods();

enum class Figure { accuracy_curve, param_table };
Figure parse_figure(const std::string& name);

/// accuracy_curve: method,task_index,mean_avg_accuracy,std from every
/// <method>/aggregate.csv under `results`. param_table: per method and task
/// count in {1, 10, 20}, trainable / inference / total parameters and total
/// bytes from the parameter accounting. Returns the written file. Throws
/// LookupError when `results` holds no aggregates.
std::filesystem::path emit_plot_data(const std::filesystem::path& results, Figure figure,
                                     const std::string& preset = "vitb-shape", std::size_t pool_size = 4);

/// Table of method_counts for each method at task counts {1, 10, 20}.
std::string param_table_csv(const BackboneConfig& config, std::size_t pool_size, std::size_t head_out_dim,
                            bool include_heads);

}  // namespace adapool
