#pragma once

// Adapter pool of fixed capacity K. The first K tasks each get their own
// adapter; afterwards every new adapter is merged by distillation into the
// pooled adapter that transfers best to the new task.

#include <span>
#include <string>
#include <vector>

#include "adapool/learner.hpp"

namespace adapool {

class AdaLearner final : public Learner {
 public:
  /// method must be ada-leep, ada-transrate or ada-k1 (which forces K = 1).
  AdaLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed);

  std::string method() const override { return config_.method; }
  void learn(const TaskData& task) override;
  Tensor logits(std::size_t task_id, const Tensor& images) const override;
  MethodCounts counts() const override;
  std::size_t tasks_seen() const override { return slot_of_.size(); }
  void save_state(const std::filesystem::path& dir) const override;
  void load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) override;

  std::size_t capacity() const { return capacity_; }
  ScoreMethod score_method() const { return score_; }
  std::size_t pool_count() const { return slots_.size(); }
  /// Slot serving each learned task (index task id - 1).
  std::span<const std::size_t> slot_map() const { return slot_of_; }
  /// Pool size after each learned task.
  std::span<const std::size_t> pool_trace() const { return pool_trace_; }
  /// Transfer scores of every slot for each consolidating task, in order.
  const std::vector<std::vector<double>>& score_history() const { return score_history_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const DistillationBuffer& buffer() const { return buffer_; }
  const Adapter& slot(std::size_t j) const { return slots_.at(j); }
  const Head& head(std::size_t task_id) const { return heads_.at(task_id - 1); }

  /// Slot used by every logits() call since the last clear.
  std::span<const std::size_t> slot_access_log() const { return access_log_; }
  void clear_access_log() const { access_log_.clear(); }

  /// Transferability of slot j to the task, computed on its training split
  /// with the heads currently mapped to j (LEEP) or the slot's features
  /// (TransRate).
  double transcore(const TaskData& task, std::size_t slot) const;

 private:
  std::vector<const Head*> heads_of(std::size_t slot) const;

  MethodConfig config_;
  BackboneParams theta_;
  std::uint64_t seed_;
  std::size_t capacity_;
  ScoreMethod score_;
  std::vector<Adapter> slots_;
  std::vector<Head> heads_;
  std::vector<std::size_t> slot_of_;
  std::vector<std::size_t> pool_trace_;
  std::vector<std::vector<double>> score_history_;
  std::vector<std::string> warnings_;
  DistillationBuffer buffer_;
  std::vector<std::vector<std::size_t>> buffer_positions_;
  mutable std::vector<std::size_t> access_log_;
};

}  // namespace adapool
