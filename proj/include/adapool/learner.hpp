#pragma once

// Continual learners and the loop that feeds them a task stream.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "adapool/distill.hpp"
#include "adapool/transfer.hpp"

namespace adapool {

struct MethodConfig {
  /// ada-leep, ada-transrate, ada-k1, b1, b2, adapters, er, ewc
  std::string method = "ada-leep";
  TrainConfig train;
  std::size_t pool_size = 4;
  /// Score only with the most recently added head of each slot.
  bool leep_latest_head = false;
  double transrate_eps = 1.0;
  DistillConfig distill;
  std::size_t memory_capacity = 500;
  std::size_t replay_batch = 8;
  float ewc_lambda = 0.0f;
};

bool is_known_method(const std::string& method);
/// Throws ConfigError on unknown methods or out-of-range settings.
void validate(const MethodConfig& config);

class Learner {
 public:
  virtual ~Learner() = default;

  virtual std::string method() const = 0;
  /// Tasks must arrive with ids 1, 2, 3, ...
  virtual void learn(const TaskData& task) = 0;
  /// Logits of the model currently serving `task_id`. Throws LookupError for
  /// a task that has not been learned.
  virtual Tensor logits(std::size_t task_id, const Tensor& images) const = 0;
  virtual MethodCounts counts() const = 0;
  virtual std::size_t tasks_seen() const = 0;

  /// Everything needed to continue the stream. `seen` are the tasks learned
  /// so far, in order.
  virtual void save_state(const std::filesystem::path& dir) const = 0;
  virtual void load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) = 0;

  std::vector<int> predict(std::size_t task_id, const Tensor& images) const;
};

/// theta is shared and never modified; methods that train it work on a copy.
std::unique_ptr<Learner> make_learner(const MethodConfig& config, const BackboneParams& theta,
                                      std::uint64_t seed);

struct MetricsRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t task_index = 0;  // 1-based
  double avg_accuracy = 0.0;
  std::vector<double> per_task;
  MethodCounts params;
  double wall_ms = 0.0;
};

struct StreamHooks {
  /// Called after each task with the test predictions for tasks 1..n.
  std::function<void(std::size_t n, const std::vector<std::vector<int>>& predictions)> on_predictions = {};
  /// Called after each task, once its record exists.
  std::function<void(const Learner&, const MetricsRecord&)> on_record = {};
};

/// Accuracy of every learned task on its test split; the mean is the
/// average accuracy.
MetricsRecord evaluate(const Learner& learner, std::span<const TaskData> tasks, std::size_t n,
                       std::vector<std::vector<int>>* predictions = nullptr);

/// Feeds tasks[first..] to the learner, evaluating after each one.
std::vector<MetricsRecord> run_stream(Learner& learner, std::span<const TaskData> tasks,
                                      std::uint64_t seed, const StreamHooks& hooks = {},
                                      std::size_t first = 0);

}  // namespace adapool
