#include "adapool/learner.hpp"

#include <chrono>
#include <numeric>

#include "adapool/ada.hpp"
#include "adapool/baselines.hpp"
#include "adapool/error.hpp"

namespace adapool {

namespace {
constexpr const char* kMethods[] = {"ada-leep", "ada-transrate", "ada-k1", "b1",
                                    "b2",       "adapters",      "er",     "ewc"};
}

bool is_known_method(const std::string& method) {
  for (const char* m : kMethods)
    if (method == m) return true;
  return false;
}

void validate(const MethodConfig& c) {
  if (!is_known_method(c.method)) throw ConfigError("unknown method '" + c.method + "'");
  if (!(c.train.lr > 0.0f)) throw ConfigError("learning rate must be positive");
  if (c.train.batch_size == 0 || c.distill.batch_size == 0) throw ConfigError("batch size must be positive");
  if (c.pool_size == 0) throw ConfigError("pool size must be at least 1");
  if (!(c.transrate_eps > 0.0)) throw ConfigError("transrate epsilon must be positive");
  if (c.distill.buffer_cap == 0) throw ConfigError("distillation buffer cap must be positive");
  if (c.distill.lr < 0.0f) throw ConfigError("distillation learning rate must be non-negative");
  if (c.memory_capacity == 0) throw ConfigError("replay memory capacity must be positive");
  if (c.replay_batch == 0) throw ConfigError("replay batch must be positive");
  if (!(c.ewc_lambda >= 0.0f)) throw ConfigError("ewc lambda must be non-negative");
}

std::unique_ptr<Learner> make_learner(const MethodConfig& config, const BackboneParams& theta,
                                      std::uint64_t seed) {
  validate(config);
  const std::string& m = config.method;
  if (m == "b1") return std::make_unique<HeadOnlyLearner>(config, theta, seed);
  if (m == "b2" || m == "ewc") return std::make_unique<FineTuneLearner>(config, theta, seed);
  if (m == "adapters") return std::make_unique<AdaptersLearner>(config, theta, seed);
  if (m == "er") return std::make_unique<ReplayLearner>(config, theta, seed);
  return std::make_unique<AdaLearner>(config, theta, seed);
}

std::vector<int> Learner::predict(std::size_t task_id, const Tensor& images) const {
  return predict_labels(logits(task_id, images));
}

MetricsRecord evaluate(const Learner& learner, std::span<const TaskData> tasks, std::size_t n,
                       std::vector<std::vector<int>>* predictions) {
  MetricsRecord r;
  r.method = learner.method();
  r.task_index = n;
  if (predictions) predictions->clear();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> p = learner.predict(tasks[i].id(), tasks[i].test_x);
    r.per_task.push_back(accuracy(p, tasks[i].test_y));
    if (predictions) predictions->push_back(std::move(p));
  }
  r.avg_accuracy = std::accumulate(r.per_task.begin(), r.per_task.end(), 0.0) /
                   static_cast<double>(r.per_task.size());
  r.params = learner.counts();
  return r;
}

std::vector<MetricsRecord> run_stream(Learner& learner, std::span<const TaskData> tasks,
                                      std::uint64_t seed, const StreamHooks& hooks, std::size_t first) {
  if (learner.tasks_seen() != first)
    throw ContractError("run_stream: learner has seen " + std::to_string(learner.tasks_seen()) +
                        " tasks, stream resumes at " + std::to_string(first));
  std::vector<MetricsRecord> out;
  std::vector<std::vector<int>> predictions;
  for (std::size_t n = first; n < tasks.size(); ++n) {
    if (tasks[n].id() != n + 1)
      throw ContractError("run_stream: task at position " + std::to_string(n) + " has id " +
                          std::to_string(tasks[n].id()));
    const auto start = std::chrono::steady_clock::now();
    learner.learn(tasks[n]);
    const auto stop = std::chrono::steady_clock::now();
    MetricsRecord r = evaluate(learner, tasks, n + 1, hooks.on_predictions ? &predictions : nullptr);
    r.seed = seed;
    r.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();
    if (hooks.on_predictions) hooks.on_predictions(n + 1, predictions);
    if (hooks.on_record) hooks.on_record(learner, r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace adapool
