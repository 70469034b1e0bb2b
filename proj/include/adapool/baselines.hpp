#pragma once

// Comparison learners sharing the backbone, heads and task stream with the
// adapter pool: head-only training, full fine-tuning, one adapter per task,
// experience replay and elastic weight consolidation.

#include <span>
#include <vector>

#include "adapool/learner.hpp"
#include "adapool/rng.hpp"

namespace adapool {

/// Θ frozen; one trained head per task.
class HeadOnlyLearner final : public Learner {
 public:
  HeadOnlyLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed);
  std::string method() const override { return "b1"; }
  void learn(const TaskData& task) override;
  Tensor logits(std::size_t task_id, const Tensor& images) const override;
  MethodCounts counts() const override;
  std::size_t tasks_seen() const override { return heads_.size(); }
  void save_state(const std::filesystem::path& dir) const override;
  void load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) override;

 private:
  MethodConfig config_;
  BackboneParams theta_;
  std::uint64_t seed_;
  std::vector<Head> heads_;
};

/// Diagonal Fisher estimate and parameter snapshot taken after a task.
struct FisherAnchor {
  std::vector<std::vector<float>> fisher;
  std::vector<std::vector<float>> theta;
};

/// Mean over the task's training examples of the squared gradient, with
/// respect to `params`, of the log-likelihood of the model's own predicted
/// label. One example per backward pass.
FisherAnchor fisher_diagonal(const BackboneParams& theta, const Head& head, const TaskData& task,
                             std::span<const Tensor> params);

/// (lambda / 2) sum over anchors and parameters of F (θ - θ*)^2.
Tensor ewc_penalty(Tape& tape, std::span<const Tensor> params, std::span<const FisherAnchor> anchors,
                   float lambda);

/// Full fine-tuning of a private copy of Θ plus one head per task, with an
/// optional EWC penalty (method "ewc").
class FineTuneLearner final : public Learner {
 public:
  FineTuneLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed);
  std::string method() const override { return config_.method; }
  void learn(const TaskData& task) override;
  Tensor logits(std::size_t task_id, const Tensor& images) const override;
  MethodCounts counts() const override;
  std::size_t tasks_seen() const override { return heads_.size(); }
  void save_state(const std::filesystem::path& dir) const override;
  void load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) override;

  const BackboneParams& backbone() const { return theta_; }
  const std::vector<FisherAnchor>& anchors() const { return anchors_; }

 private:
  MethodConfig config_;
  BackboneParams theta_;
  std::uint64_t seed_;
  std::vector<Head> heads_;
  std::vector<FisherAnchor> anchors_;
};

/// An adapter and a head per task, all kept.
class AdaptersLearner final : public Learner {
 public:
  AdaptersLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed);
  std::string method() const override { return "adapters"; }
  void learn(const TaskData& task) override;
  Tensor logits(std::size_t task_id, const Tensor& images) const override;
  MethodCounts counts() const override;
  std::size_t tasks_seen() const override { return heads_.size(); }
  void save_state(const std::filesystem::path& dir) const override;
  void load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) override;

  const Adapter& adapter(std::size_t task_id) const { return adapters_.at(task_id - 1); }
  const Head& head(std::size_t task_id) const { return heads_.at(task_id - 1); }

 private:
  MethodConfig config_;
  BackboneParams theta_;
  std::uint64_t seed_;
  std::vector<Adapter> adapters_;
  std::vector<Head> heads_;
};

struct ReplayItem {
  std::size_t task_id = 0;
  int label = 0;
  std::vector<std::uint8_t> pixels;
};

/// Fixed-capacity reservoir over every item ever offered.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity);

  /// The t-th offer (0-based) is stored while the memory has room; otherwise
  /// it replaces a uniformly chosen slot with probability capacity / (t + 1).
  void offer(ReplayItem item, Rng& rng);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  std::uint64_t offered() const { return offered_; }
  const std::vector<ReplayItem>& items() const { return items_; }
  /// min(k, size) distinct items drawn uniformly.
  std::vector<std::size_t> sample(std::size_t k, Rng& rng) const;

  void restore(std::vector<ReplayItem> items, std::uint64_t offered);

 private:
  std::size_t capacity_;
  std::uint64_t offered_ = 0;
  std::vector<ReplayItem> items_;
};

/// One adapter shared by all tasks, trained on each current batch together
/// with a batch drawn from the replay memory; each replayed item goes through
/// its own task's head. The task's training items are offered to the memory
/// after the task is learned.
class ReplayLearner final : public Learner {
 public:
  ReplayLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed);
  std::string method() const override { return "er"; }
  void learn(const TaskData& task) override;
  Tensor logits(std::size_t task_id, const Tensor& images) const override;
  MethodCounts counts() const override;
  std::size_t tasks_seen() const override { return heads_.size(); }
  void save_state(const std::filesystem::path& dir) const override;
  void load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) override;

  const ReplayMemory& memory() const { return memory_; }

 private:
  MethodConfig config_;
  BackboneParams theta_;
  std::uint64_t seed_;
  Adapter adapter_;
  std::vector<Head> heads_;
  ReplayMemory memory_;
};

}  // namespace adapool
