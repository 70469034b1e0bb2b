#include "adapool/ada.hpp"

#include <iostream>

#include "adapool/error.hpp"
#include "adapool/rng.hpp"
#include "state_io.hpp"

namespace adapool {

AdaLearner::AdaLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed)
    : config_(config), theta_(theta), seed_(seed) {
  validate(config_);
  if (config_.method == "ada-k1") {
    capacity_ = 1;
    score_ = ScoreMethod::leep;
  } else if (config_.method == "ada-leep" || config_.method == "ada-transrate") {
    capacity_ = config_.pool_size;
    score_ = parse_score_method(config_.method.substr(4));
  } else {
    throw ConfigError("AdaLearner cannot run method '" + config_.method + "'");
  }
}

std::vector<const Head*> AdaLearner::heads_of(std::size_t slot) const {
  std::vector<const Head*> out;
  for (std::size_t i = 0; i < slot_of_.size(); ++i)
    if (slot_of_[i] == slot) out.push_back(&heads_[i]);
  return out;
}

double AdaLearner::transcore(const TaskData& task, std::size_t j) const {
  const Adapter& phi = slots_.at(j);
  if (score_ == ScoreMethod::leep) {
    std::vector<const Head*> heads = heads_of(j);
    if (heads.empty()) throw ContractError("slot " + std::to_string(j) + " serves no task");
    if (config_.leep_latest_head) heads.erase(heads.begin(), heads.end() - 1);
    const Tensor features = batched_eval(task.train_x, [&](Tape& t, const Tensor& x) {
      return extract_features(t, theta_, &phi, x);
    });
    std::vector<Tensor> per_head;
    Tape tape = Tape::no_grad();
    for (const Head* h : heads) per_head.push_back(apply_head(tape, *h, features));
    return leep_score(dummy_from_logits(per_head), task.train_y);
  }
  const Tensor features = batched_eval(task.train_x, [&](Tape& t, const Tensor& x) {
    return extract_features(t, theta_, &phi, x);
  });
  return transrate_score(features.data(), features.rows(), features.cols(), task.train_y,
                         config_.transrate_eps);
}

void AdaLearner::learn(const TaskData& task) {
  const std::size_t n = slot_of_.size() + 1;
  if (task.id() != n)
    throw ContractError("expected task " + std::to_string(n) + ", got task " + std::to_string(task.id()));
  AdapterAndHead fresh = train_adapter_task(theta_, task, config_.train, seed_);

  const auto positions = sample_distillation_data(task, config_.distill.buffer_cap, seed_);
  buffer_.add(task, positions);
  buffer_positions_.push_back(positions);

  if (slots_.size() < capacity_) {
    slots_.push_back(std::move(fresh.adapter));
    heads_.push_back(std::move(fresh.head));
    slot_of_.push_back(slots_.size() - 1);
    pool_trace_.push_back(slots_.size());
    return;
  }

  std::vector<double> scores;
  std::size_t best = 0;
  for (std::size_t j = 0; j < slots_.size(); ++j) {
    scores.push_back(transcore(task, j));
    if (scores[j] > scores[best]) best = j;
  }
  score_history_.push_back(scores);

  const AdapterModel old_teacher{&slots_[best], heads_of(best)};
  const AdapterModel new_teacher{&fresh.adapter, {&fresh.head}};
  DistillResult merged = distillation(theta_, old_teacher, new_teacher, buffer_, config_.distill,
                                      config_.train.lr, derive_seed(seed_, {task.id()}));
  if (!merged.converged) {
    warnings_.push_back("task " + std::to_string(n) + ": " + merged.warning);
    std::cerr << "warning: " << warnings_.back() << '\n';
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < slot_of_.size(); ++i)
    if (slot_of_[i] == best) heads_[i] = std::move(merged.heads[k++]);
  heads_.push_back(std::move(merged.heads[k]));
  slot_of_.push_back(best);
  slots_[best] = std::move(merged.adapter);
  pool_trace_.push_back(slots_.size());
}

Tensor AdaLearner::logits(std::size_t task_id, const Tensor& images) const {
  if (task_id == 0 || task_id > slot_of_.size())
    throw LookupError("task " + std::to_string(task_id) + " has not been learned");
  const std::size_t j = slot_of_[task_id - 1];
  access_log_.push_back(j);
  const Adapter& phi = slots_[j];
  const Head& head = heads_[task_id - 1];
  return batched_eval(images, [&](Tape& t, const Tensor& x) { return forward(t, theta_, &phi, head, x); });
}

MethodCounts AdaLearner::counts() const {
  MethodCountQuery q;
  q.method = config_.method;
  q.n_tasks = std::max<std::size_t>(1, slot_of_.size());
  q.pool_size = capacity_;
  q.head_out_dim = heads_.empty() ? 1 : heads_.front().out_dim();
  return method_counts(theta_.config, q);
}

void AdaLearner::save_state(const std::filesystem::path& dir) const {
  ParamList params;
  for (std::size_t j = 0; j < slots_.size(); ++j)
    for (auto& p : detail::prefixed(slots_[j].named(), "slot" + std::to_string(j))) params.push_back(p);
  for (std::size_t i = 0; i < heads_.size(); ++i)
    params.push_back(heads_[i].named("head" + std::to_string(i + 1)).front());
  nlohmann::json meta = {{"method", config_.method},         {"slot_of", slot_of_},
                         {"pool_trace", pool_trace_},        {"score_history", score_history_},
                         {"warnings", warnings_},            {"buffer_positions", buffer_positions_}};
  detail::save_state_files(dir, params, meta);
}

void AdaLearner::load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) {
  const nlohmann::json meta = detail::load_state_meta(dir);
  if (meta.at("method") != config_.method) throw ContractError("state belongs to method " + meta.at("method").dump());
  slot_of_ = meta.at("slot_of").get<std::vector<std::size_t>>();
  pool_trace_ = meta.at("pool_trace").get<std::vector<std::size_t>>();
  score_history_ = meta.at("score_history").get<std::vector<std::vector<double>>>();
  warnings_ = meta.at("warnings").get<std::vector<std::string>>();
  buffer_positions_ = meta.at("buffer_positions").get<std::vector<std::vector<std::size_t>>>();
  if (seen.size() != slot_of_.size() || buffer_positions_.size() != seen.size())
    throw ContractError("state covers " + std::to_string(slot_of_.size()) + " tasks, " +
                        std::to_string(seen.size()) + " supplied");
  const std::size_t n_slots = pool_trace_.empty() ? 0 : pool_trace_.back();
  slots_.clear();
  heads_.clear();
  ParamList params;
  for (std::size_t j = 0; j < n_slots; ++j) {
    slots_.push_back(build_adapter(theta_.config, 0));
    for (auto& p : detail::prefixed(slots_[j].named(), "slot" + std::to_string(j))) params.push_back(p);
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    heads_.push_back(build_head(theta_.config, seen[i].out_dim(), 0));
    params.push_back(heads_[i].named("head" + std::to_string(i + 1)).front());
  }
  detail::load_state_params(dir, params);
  buffer_ = {};
  for (std::size_t i = 0; i < seen.size(); ++i) buffer_.add(seen[i], buffer_positions_[i]);
  access_log_.clear();
}

}  // namespace adapool
