#include "adapool/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "adapool/checkpoint.hpp"
#include "adapool/error.hpp"
#include "adapool/rng.hpp"
#include "json.hpp"

namespace adapool {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Backbone

BackboneParams pretrain_backbone(const PretrainConfig& config) {
  const BackboneConfig shape = BackboneConfig::preset(config.preset);
  if (config.classes < 2 || config.per_class == 0 || config.batch_size == 0)
    throw ConfigError("pretraining needs at least 2 classes, a positive per-class count and batch size");
  SyntheticOptions data;
  data.num_classes = config.classes;
  data.per_class = config.per_class;
  data.image_size = shape.image_size;
  data.channels = shape.channels;
  data.seed = config.data_seed;
  const LabeledDataset ds = synthetic_dataset(data);
  const Tensor images = images_to_tensor(shape, ds.pixels, ds.size());

  BackboneParams theta = build_backbone(shape, config.seed);
  const Head head = build_head(shape, config.classes, derive_seed(config.seed, {1}));
  std::vector<Tensor> params = tensors_of(theta.named());
  params.push_back(head.w);
  std::vector<int> labels;
  train_loop(params, ds.size(), {.lr = config.lr, .epochs = config.epochs, .batch_size = config.batch_size},
             derive_seed(config.seed, {2}), [&](Tape& tape, std::span<const std::size_t> batch) {
               labels.clear();
               for (std::size_t i : batch) labels.push_back(ds.labels[i]);
               return task_loss(tape, forward(tape, theta, nullptr, head, take_rows(images, batch)), labels);
             });
  return theta;
}

// ---------------------------------------------------------------------------
// Configuration

void validate(const ExperimentConfig& c) {
  if (!is_known_method(c.method)) throw ConfigError("unknown method '" + c.method + "'");
  parse_scenario(c.scenario);
  BackboneConfig::preset(c.preset);
  if (c.dataset != "synthetic" && c.dataset.rfind("cifar100:", 0) != 0)
    throw ConfigError("dataset must be 'synthetic' or 'cifar100:<path>', got '" + c.dataset + "'");
  if (c.pool_size && !(c.method == "ada-leep" || c.method == "ada-transrate"))
    throw ConfigError("pool size applies to ada-leep and ada-transrate only");
  if (c.pool_size && *c.pool_size == 0) throw ConfigError("pool size must be at least 1");
  if (c.ewc_lambda && c.method != "ewc") throw ConfigError("ewc lambda applies to ewc only");
  if (c.ewc_lambda && !(*c.ewc_lambda >= 0.0f)) throw ConfigError("ewc lambda must be non-negative");
  if (c.num_tasks == 0 || c.per_class == 0 || c.batch_size == 0 || c.epochs == 0)
    throw ConfigError("tasks, per-class count, batch size and epochs must be positive");
  if (c.distill_cap == 0) throw ConfigError("distillation cap must be positive");
  if (c.lr && !(*c.lr > 0.0f)) throw ConfigError("learning rate must be positive");
  if (!c.lr && c.lr_grid.empty()) throw ConfigError("learning-rate grid is empty");
  for (float v : c.lr_grid)
    if (!(v > 0.0f)) throw ConfigError("learning-rate grid values must be positive");
  if (c.method == "ewc" && !c.ewc_lambda) {
    if (c.ewc_lambda_grid.empty()) throw ConfigError("ewc lambda grid is empty");
    for (float v : c.ewc_lambda_grid)
      if (!(v >= 0.0f)) throw ConfigError("ewc lambda grid values must be non-negative");
  }
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (c.selection_tasks == 0) throw ConfigError("selection needs at least one task");
}

MethodConfig method_config(const ExperimentConfig& c, float lr, float ewc_lambda) {
  MethodConfig m;
  m.method = c.method;
  m.train = {.lr = lr, .epochs = c.epochs, .batch_size = c.batch_size};
  m.pool_size = c.pool_size.value_or(4);
  m.leep_latest_head = c.leep_latest_head;
  m.distill.epochs = c.distill_epochs;
  m.distill.batch_size = c.batch_size;
  m.distill.buffer_cap = c.distill_cap;
  m.memory_capacity = c.memory_capacity;
  m.ewc_lambda = ewc_lambda;
  return m;
}

LabeledDataset load_dataset(const ExperimentConfig& c) {
  const BackboneConfig shape = BackboneConfig::preset(c.preset);
  if (c.dataset == "synthetic") {
    SyntheticOptions o;
    o.num_classes = parse_scenario(c.scenario) == Scenario::binary ? std::max<std::size_t>(20, c.num_tasks + 1)
                                                                   : c.num_tasks * c.classes_per_task;
    o.per_class = c.synthetic_per_class ? c.synthetic_per_class : 2 * c.per_class;
    o.image_size = shape.image_size;
    o.channels = shape.channels;
    o.seed = c.data_seed;
    return synthetic_dataset(o);
  }
  const fs::path path = c.dataset.substr(std::string("cifar100:").size());
  if (!fs::is_directory(path)) return load_cifar100_binary(path);
  LabeledDataset all;
  for (const char* name : {"train.bin", "test.bin"}) {
    if (!fs::exists(path / name)) continue;
    LabeledDataset part = load_cifar100_binary(path / name);
    all.num_classes = part.num_classes;
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  if (all.labels.empty()) throw LookupError("no train.bin or test.bin under " + path.string());
  return all;
}

std::vector<Task> make_tasks(const ExperimentConfig& c, const LabeledDataset& ds, std::uint64_t seed) {
  if (parse_scenario(c.scenario) == Scenario::binary) return make_binary_scenario(ds, c.num_tasks, c.per_class, seed);
  return make_multiclass_scenario(ds, c.num_tasks, c.classes_per_task, c.per_class, seed);
}

BackboneParams resolve_backbone(const ExperimentConfig& c) {
  const BackboneConfig shape = BackboneConfig::preset(c.preset);
  if (c.backbone == "random") return build_backbone(shape, c.pretrain.seed);
  if (!c.backbone.empty()) return load_backbone(shape, c.backbone);
  const fs::path cached = c.out / "backbone";
  if (fs::exists(cached.string() + ".manifest")) return load_backbone(shape, cached);
  PretrainConfig p = c.pretrain;
  p.preset = c.preset;
  BackboneParams theta = pretrain_backbone(p);
  fs::create_directories(c.out);
  save_checkpoint(theta.named(), cached);
  return theta;
}

// ---------------------------------------------------------------------------
// Selection

namespace {

double selection_score(const ExperimentConfig& c, const BackboneParams& theta, std::span<const TaskData> tasks,
                       std::uint64_t seed, float lr, float lambda) {
  auto learner = make_learner(method_config(c, lr, lambda), theta, seed);
  try {
    const auto records = run_stream(*learner, tasks.first(std::min(c.selection_tasks, tasks.size())), seed);
    const double v = records.back().avg_accuracy;
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace

Selection select_hyperparameters(const ExperimentConfig& c, const BackboneParams& theta,
                                 std::span<const TaskData> tasks, std::uint64_t seed) {
  validate(c);
  const std::vector<float> lrs = c.lr ? std::vector<float>{*c.lr} : c.lr_grid;
  std::vector<float> lambdas = {0.0f};
  if (c.method == "ewc") lambdas = c.ewc_lambda ? std::vector<float>{*c.ewc_lambda} : c.ewc_lambda_grid;

  Selection s;
  if (lrs.size() == 1 && lambdas.size() == 1) {
    s.lr = lrs.front();
    s.ewc_lambda = lambdas.front();
    return s;
  }
  // Joint grid over (lr, lambda); reported per axis as the best score seen
  // for that value.
  std::vector<std::tuple<float, float, double>> joint;
  for (float lr : lrs)
    for (float lambda : lambdas) joint.emplace_back(lr, lambda, selection_score(c, theta, tasks, seed, lr, lambda));
  std::sort(joint.begin(), joint.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < joint.size(); ++i)
    if (std::get<2>(joint[i]) > std::get<2>(joint[best])) best = i;
  s.lr = std::get<0>(joint[best]);
  s.ewc_lambda = std::get<1>(joint[best]);
  std::map<float, double> by_lr, by_lambda;
  for (const auto& [lr, lambda, score] : joint) {
    auto upd = [](std::map<float, double>& m, float k, double v) {
      auto it = m.find(k);
      if (it == m.end() || v > it->second) m[k] = v;
    };
    upd(by_lr, lr, score);
    upd(by_lambda, lambda, score);
  }
  s.lr_scores.assign(by_lr.begin(), by_lr.end());
  if (c.method == "ewc") s.lambda_scores.assign(by_lambda.begin(), by_lambda.end());
  return s;
}

// ---------------------------------------------------------------------------
// Records

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, r.ptr);
}

std::string vector_json(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s + "]";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw FormatError("unterminated quote in '" + line + "'");
  out.push_back(cur);
  return out;
}

template <class T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError(std::string("bad ") + what + " '" + s + "'");
  return v;
}

std::vector<double> parse_vector(const std::string& s) {
  try {
    return json::parse(s).get<std::vector<double>>();
  } catch (const json::exception&) {
    throw FormatError("bad per-task vector '" + s + "'");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw PersistenceError(PersistenceError::Kind::io, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace

std::string format_record(const MetricsRecord& r) {
  return r.method + "," + std::to_string(r.seed) + "," + std::to_string(r.task_index) + "," + fmt(r.avg_accuracy) +
         ",\"" + vector_json(r.per_task) + "\"," + std::to_string(r.params.trainable) + "," +
         std::to_string(r.params.inference) + "," + std::to_string(r.params.total) + "," + fmt_fixed(r.wall_ms, 3);
}

MetricsRecord parse_record(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 9) throw FormatError("record has " + std::to_string(f.size()) + " fields, expected 9: " + line);
  MetricsRecord r;
  r.method = f[0];
  r.seed = parse_number<std::uint64_t>(f[1], "seed");
  r.task_index = parse_number<std::size_t>(f[2], "task index");
  r.avg_accuracy = parse_number<double>(f[3], "accuracy");
  r.per_task = parse_vector(f[4]);
  r.params.trainable = parse_number<std::uint64_t>(f[5], "parameter count");
  r.params.inference = parse_number<std::uint64_t>(f[6], "parameter count");
  r.params.total = parse_number<std::uint64_t>(f[7], "parameter count");
  r.wall_ms = parse_number<double>(f[8], "wall time");
  if (r.per_task.size() != r.task_index) throw FormatError("per-task vector length differs from task index: " + line);
  return r;
}

void write_records(const fs::path& path, const std::vector<MetricsRecord>& records) {
  std::string text = std::string(kRecordHeader) + "\n";
  for (const auto& r : records) text += format_record(r) + "\n";
  write_text(path, text);
}

std::vector<MetricsRecord> read_records(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines.front() != kRecordHeader) throw FormatError(path.string() + ": missing record header");
  std::vector<MetricsRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) out.push_back(parse_record(lines[i]));
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<std::vector<MetricsRecord>>& per_seed) {
  if (per_seed.empty()) throw ContractError("aggregate: no seeds");
  const std::size_t n = per_seed.front().size();
  for (const auto& s : per_seed)
    if (s.size() != n) throw ContractError("aggregate: seeds cover different numbers of tasks");
  std::vector<AggregateRow> rows;
  const double k = static_cast<double>(per_seed.size());
  for (std::size_t t = 0; t < n; ++t) {
    AggregateRow row;
    const MetricsRecord& first = per_seed.front()[t];
    row.method = first.method;
    row.seeds = per_seed.size();
    row.task_index = first.task_index;
    row.params = first.params;
    row.per_task_mean.assign(first.per_task.size(), 0.0);
    for (const auto& s : per_seed) {
      const MetricsRecord& r = s[t];
      if (r.task_index != row.task_index || r.method != row.method)
        throw ContractError("aggregate: records do not line up");
      row.mean += r.avg_accuracy / k;
      for (std::size_t i = 0; i < r.per_task.size(); ++i) row.per_task_mean[i] += r.per_task[i] / k;
    }
    double var = 0.0;
    for (const auto& s : per_seed) var += (s[t].avg_accuracy - row.mean) * (s[t].avg_accuracy - row.mean) / k;
    row.std = std::sqrt(var);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_aggregate(const fs::path& path, const std::vector<AggregateRow>& rows) {
  std::string text = std::string(kAggregateHeader) + "\n";
  for (const auto& r : rows)
    text += r.method + "," + std::to_string(r.seeds) + "," + std::to_string(r.task_index) + "," + fmt(r.mean) + "," +
            fmt(r.std) + ",\"" + vector_json(r.per_task_mean) + "\"," + std::to_string(r.params.trainable) + "," +
            std::to_string(r.params.inference) + "," + std::to_string(r.params.total) + "\n";
  write_text(path, text);
}

std::vector<AggregateRow> read_aggregate(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines.front() != kAggregateHeader) throw FormatError(path.string() + ": missing aggregate header");
  std::vector<AggregateRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv(lines[i]);
    if (f.size() != 9) throw FormatError("aggregate row has " + std::to_string(f.size()) + " fields: " + lines[i]);
    AggregateRow r;
    r.method = f[0];
    r.seeds = parse_number<std::size_t>(f[1], "seed count");
    r.task_index = parse_number<std::size_t>(f[2], "task index");
    r.mean = parse_number<double>(f[3], "accuracy");
    r.std = parse_number<double>(f[4], "std");
    r.per_task_mean = parse_vector(f[5]);
    r.params.trainable = parse_number<std::uint64_t>(f[6], "parameter count");
    r.params.inference = parse_number<std::uint64_t>(f[7], "parameter count");
    r.params.total = parse_number<std::uint64_t>(f[8], "parameter count");
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

struct Interrupted {};

class RunLog {
 public:
  explicit RunLog(const fs::path& path) : out_(path, std::ios::app) {}
  void line(const std::string& s) {
    out_ << s << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

/// Largest n with a finished state directory task<n>.
std::size_t latest_state(const fs::path& dir) {
  std::size_t best = 0;
  if (!fs::exists(dir)) return 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("task", 0) != 0 || !fs::exists(e.path() / "done")) continue;
    try {
      best = std::max(best, parse_number<std::size_t>(name.substr(4), "state index"));
    } catch (const FormatError&) {
    }
  }
  return best;
}

json selection_json(const Selection& s) {
  return {{"lr", s.lr}, {"ewc_lambda", s.ewc_lambda}, {"lr_scores", s.lr_scores}, {"lambda_scores", s.lambda_scores}};
}

Selection selection_from(const json& j) {
  Selection s;
  s.lr = j.at("lr").get<float>();
  s.ewc_lambda = j.at("ewc_lambda").get<float>();
  s.lr_scores = j.at("lr_scores").get<std::vector<std::pair<float, double>>>();
  s.lambda_scores = j.at("lambda_scores").get<std::vector<std::pair<float, double>>>();
  return s;
}

json config_json(const ExperimentConfig& c) {
  return {{"method", c.method},
          {"scenario", c.scenario},
          {"dataset", c.dataset},
          {"preset", c.preset},
          {"pool_size", c.pool_size.value_or(4)},
          {"num_tasks", c.num_tasks},
          {"per_class", c.per_class},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"distill_epochs", c.distill_epochs},
          {"distill_cap", c.distill_cap},
          {"seeds", c.seeds}};
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& c, const RunOptions& options) {
  validate(c);
  fs::create_directories(c.out);
  RunLog log(c.out / "run.log");
  const fs::path method_dir = c.out / c.method;
  fs::create_directories(method_dir);
  write_text(method_dir / "config.json", config_json(c).dump(1) + "\n");

  RunSummary summary;
  std::size_t new_tasks = 0;
  try {
    const BackboneConfig shape = BackboneConfig::preset(c.preset);
    const LabeledDataset ds = load_dataset(c);
    const BackboneParams theta = resolve_backbone(c);
    std::vector<std::vector<MetricsRecord>> all;
    for (std::uint64_t seed : c.seeds) {
      const fs::path manifest = c.out / ("tasks_seed" + std::to_string(seed) + ".json");
      std::vector<Task> tasks;
      if (fs::exists(manifest)) {
        tasks = load_task_manifest(manifest);
        if (tasks.size() != c.num_tasks)
          throw ConfigError(manifest.string() + " holds " + std::to_string(tasks.size()) + " tasks, config asks for " +
                            std::to_string(c.num_tasks));
      } else {
        tasks = make_tasks(c, ds, seed);
        save_task_manifest(tasks, manifest);
      }
      const fs::path seed_file = method_dir / ("seed" + std::to_string(seed) + ".csv");
      summary.seed_files.push_back(seed_file);
      std::vector<MetricsRecord> records;
      if (fs::exists(seed_file)) records = read_records(seed_file);
      if (records.size() == c.num_tasks) {
        all.push_back(records);
        continue;
      }

      std::vector<TaskData> data;
      for (const Task& t : tasks) data.push_back(materialize(shape, ds, t));

      const fs::path selection_file = method_dir / ("selection_seed" + std::to_string(seed) + ".json");
      Selection sel;
      if (fs::exists(selection_file)) {
        std::ifstream in(selection_file);
        sel = selection_from(json::parse(in));
      } else {
        sel = select_hyperparameters(c, theta, data, seed);
        write_text(selection_file, selection_json(sel).dump(1) + "\n");
        log.line(c.method + " seed " + std::to_string(seed) + ": lr " + fmt(sel.lr) +
                 (c.method == "ewc" ? ", lambda " + fmt(sel.ewc_lambda) : ""));
      }

      const fs::path state_root = method_dir / ("state_seed" + std::to_string(seed));
      std::size_t start = latest_state(state_root);
      if (start > records.size()) {
        log.line(c.method + " seed " + std::to_string(seed) + ": saved state is ahead of the records, restarting");
        fs::remove_all(state_root);
        start = 0;
      }
      records.resize(start);
      auto learner = make_learner(method_config(c, sel.lr, sel.ewc_lambda), theta, seed);
      if (start > 0) {
        learner->load_state(state_root / ("task" + std::to_string(start)),
                            std::vector<TaskData>(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(start)));
        log.line(c.method + " seed " + std::to_string(seed) + ": resuming after task " + std::to_string(start));
      }

      StreamHooks hooks;
      hooks.on_record = [&](const Learner& l, const MetricsRecord& r) {
        records.push_back(r);
        write_records(seed_file, records);
        const fs::path dir = state_root / ("task" + std::to_string(r.task_index));
        fs::remove_all(dir);
        l.save_state(dir);
        write_text(dir / "done", "\n");
        if (r.task_index > 1) fs::remove_all(state_root / ("task" + std::to_string(r.task_index - 1)));
        ++new_tasks;
        ++summary.tasks_learned;
        if (options.max_new_tasks && new_tasks >= options.max_new_tasks) throw Interrupted{};
      };
      run_stream(*learner, data, seed, hooks, start);
      all.push_back(records);
    }
    summary.aggregate = method_dir / "aggregate.csv";
    write_aggregate(summary.aggregate, aggregate(all));
    summary.complete = true;
    log.line(c.method + ": complete, " + summary.aggregate.string());
  } catch (const Interrupted&) {
    log.line(c.method + ": stopped after " + std::to_string(new_tasks) + " new tasks");
  } catch (const std::exception& e) {
    log.line(c.method + ": error: " + e.what());
    throw;
  }
  return summary;
}

std::vector<std::string> suite_methods() {
  return {"b1", "b2", "adapters", "er", "ewc", "ada-k1", "ada-leep", "ada-transrate"};
}

// ---------------------------------------------------------------------------
// Plot data

Figure parse_figure(const std::string& name) {
  if (name == "accuracy_curve") return Figure::accuracy_curve;
  if (name == "param_table") return Figure::param_table;
  throw ConfigError("unknown figure '" + name + "' (accuracy_curve, param_table)");
}

std::string param_table_csv(const BackboneConfig& config, std::size_t pool_size, std::size_t head_out_dim,
                            bool include_heads) {
  std::string text = "method,tasks,trainable_params,inference_params,total_params,total_bytes\n";
  for (const std::string& m : suite_methods()) {
    for (std::size_t n : {1, 10, 20}) {
      MethodCountQuery q;
      q.method = m;
      q.n_tasks = n;
      q.pool_size = pool_size;
      q.head_out_dim = head_out_dim;
      q.include_heads = include_heads;
      const MethodCounts c = method_counts(config, q);
      text += m + "," + std::to_string(n) + "," + std::to_string(c.trainable) + "," + std::to_string(c.inference) +
              "," + std::to_string(c.total) + "," + std::to_string(c.total * kBytesPerParam) + "\n";
    }
  }
  return text;
}

fs::path emit_plot_data(const fs::path& results, Figure figure, const std::string& preset, std::size_t pool_size) {
  std::vector<fs::path> aggregates;
  if (fs::is_directory(results))
    for (const auto& e : fs::directory_iterator(results))
      if (e.is_directory() && fs::exists(e.path() / "aggregate.csv")) aggregates.push_back(e.path() / "aggregate.csv");
  if (aggregates.empty()) throw LookupError("no aggregate results under " + results.string());
  std::sort(aggregates.begin(), aggregates.end());

  if (figure == Figure::accuracy_curve) {
    std::string text = "method,task_index,mean_avg_accuracy,std\n";
    for (const fs::path& p : aggregates)
      for (const AggregateRow& r : read_aggregate(p))
        text += r.method + "," + std::to_string(r.task_index) + "," + fmt(r.mean) + "," + fmt(r.std) + "\n";
    const fs::path out = results / "accuracy_curve.csv";
    write_text(out, text);
    return out;
  }
  const fs::path out = results / "param_table.csv";
  write_text(out, param_table_csv(BackboneConfig::preset(preset), pool_size, 1, false));
  return out;
}

}  // namespace adapool
