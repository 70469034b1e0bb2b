#include <filesystem>
#include <fstream>
#include <sstream>

#include "adapool/error.hpp"
#include "adapool/harness.hpp"
#include "doctest.h"

using namespace adapool;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adapool_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_run(const std::string& method, const fs::path& out) {
  ExperimentConfig c;
  c.method = method;
  c.backbone = "random";
  c.num_tasks = 3;
  c.per_class = 4;
  c.epochs = 1;
  c.distill_epochs = 2;
  c.distill_cap = 4;
  c.lr = 1e-3f;
  c.seeds = {0, 1};
  c.out = out;
  if (method == "ada-leep") c.pool_size = 2;
  return c;
}

MetricsRecord sample_record() {
  MetricsRecord r;
  r.method = "ada-leep";
  r.seed = 3;
  r.task_index = 3;
  r.per_task = {0.5, 0.75, 0.1};
  r.avg_accuracy = (0.5 + 0.75 + 0.1) / 3;
  r.params = {10, 20, 30};
  r.wall_ms = 12.3456;
  return r;
}

}  // namespace

TEST_CASE("experiment configuration is validated") {
  ExperimentConfig c;
  CHECK_NOTHROW(validate(c));
  c.method = "lora";
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.method = "b2";
  c.pool_size = 2;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.method = "ada-k1";
  c.pool_size = 2;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.method = "ada-leep";
  c.ewc_lambda = 1.0f;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.method = "ewc";
  c.ewc_lambda = -1.0f;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.lr_grid.clear();
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.lr = 1e-3f;
  CHECK_NOTHROW(validate(c));
  c = {};
  c.scenario = "online";
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.dataset = "mnist";
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.seeds.clear();
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("defaults follow the experimental setup") {
  const ExperimentConfig c;
  CHECK(c.batch_size == 8);
  CHECK(c.epochs == 20);
  CHECK(c.per_class == 50);
  CHECK(c.num_tasks == 20);
  CHECK(c.seeds.size() == 5);
  CHECK(c.lr_grid == std::vector<float>{5e-5f, 1e-4f, 5e-4f, 1e-3f});
  CHECK(c.ewc_lambda_grid == std::vector<float>{0, 1, 10, 100, 1000});
  CHECK(c.distill_cap == 50);
  CHECK(c.memory_capacity == 500);
  const MethodConfig m = method_config(c, 1e-4f, 0.0f);
  CHECK(m.pool_size == 4);
  CHECK(m.train.lr == 1e-4f);
  CHECK(m.distill.batch_size == 8);
}

TEST_CASE("records round-trip through CSV") {
  const MetricsRecord r = sample_record();
  const std::string line = format_record(r);
  CHECK(line == "ada-leep,3,3,0.45,\"[0.5,0.75,0.1]\",10,20,30,12.346");
  const MetricsRecord back = parse_record(line);
  CHECK(back.avg_accuracy == r.avg_accuracy);
  CHECK(back.per_task == r.per_task);
  CHECK(back.params.total == 30);
  CHECK(back.wall_ms == doctest::Approx(12.346));

  const fs::path dir = scratch("records");
  write_records(dir / "s.csv", {r, r});
  const std::string text = slurp(dir / "s.csv");
  CHECK(text.rfind(std::string(kRecordHeader) + "\n", 0) == 0);
  CHECK(read_records(dir / "s.csv").size() == 2);

  CHECK_THROWS_AS(parse_record("a,b"), FormatError);
  CHECK_THROWS_AS(parse_record("m,1,2,0.5,\"[0.5]\",1,2,3,4"), FormatError);
  CHECK_THROWS_AS(parse_record("m,x,1,0.5,\"[0.5]\",1,2,3,4"), FormatError);
  CHECK_THROWS_AS(read_records(dir / "missing.csv"), LookupError);
  std::ofstream(dir / "bad.csv") << "not,a,header\n";
  CHECK_THROWS_AS(read_records(dir / "bad.csv"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("aggregation averages seeds and reports the spread") {
  MetricsRecord a = sample_record();
  a.task_index = 1;
  a.per_task = {0.6};
  a.avg_accuracy = 0.6;
  MetricsRecord b = a;
  b.per_task = {0.8};
  b.avg_accuracy = 0.8;
  const auto rows = aggregate({{a}, {b}});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].mean == doctest::Approx(0.7));
  CHECK(rows[0].std == doctest::Approx(0.1));
  CHECK(rows[0].seeds == 2);
  CHECK(rows[0].per_task_mean[0] == doctest::Approx(0.7));
  CHECK_THROWS_AS(aggregate({{a}, {}}), ContractError);

  const fs::path dir = scratch("aggregate");
  write_aggregate(dir / "a.csv", rows);
  CHECK(slurp(dir / "a.csv").rfind(std::string(kAggregateHeader) + "\n", 0) == 0);
  const auto back = read_aggregate(dir / "a.csv");
  CHECK(back[0].mean == rows[0].mean);
  CHECK(back[0].std == rows[0].std);
  fs::remove_all(dir);
}

TEST_CASE("learning-rate selection") {
  ExperimentConfig c = small_run("adapters", scratch("select"));
  c.num_tasks = 2;
  c.selection_tasks = 2;
  c.epochs = 2;
  const LabeledDataset ds = load_dataset(c);
  const BackboneParams theta = resolve_backbone(c);
  std::vector<TaskData> data;
  for (const Task& t : make_tasks(c, ds, 0)) data.push_back(materialize(theta.config, ds, t));

  const Selection single = select_hyperparameters(c, theta, data, 0);
  CHECK(single.lr == 1e-3f);
  CHECK(single.lr_scores.empty());

  c.lr.reset();
  c.per_class = 16;
  c.epochs = 5;
  c.lr_grid = {1e3f, 1e-4f};
  const Selection s = select_hyperparameters(c, theta, data, 0);
  CHECK(s.lr == 1e-4f);
  REQUIRE(s.lr_scores.size() == 2);
  CHECK(s.lr_scores[0].first == 1e-4f);
  // The divergent rate must lose on merit, not through the tie rule.
  CHECK(s.lr_scores[0].second > s.lr_scores[1].second);
  MESSAGE("grid scores: 1e-4 -> " << s.lr_scores[0].second << ", 1e3 -> " << s.lr_scores[1].second);
  const Selection again = select_hyperparameters(c, theta, data, 0);
  CHECK(again.lr == s.lr);
  CHECK(again.lr_scores == s.lr_scores);
}

TEST_CASE("runs are deterministic, share task manifests and resume after interruption") {
  const fs::path a = scratch("run_a");
  const fs::path b = scratch("run_b");
  const RunSummary ra = run_experiment(small_run("ada-leep", a));
  REQUIRE(ra.complete);
  const RunSummary rb = run_experiment(small_run("ada-leep", b));
  REQUIRE(rb.complete);
  CHECK(slurp(ra.aggregate) == slurp(rb.aggregate));
  CHECK(slurp(a / "tasks_seed0.json") == slurp(b / "tasks_seed0.json"));

  // Per-seed records obey the average-accuracy invariant.
  for (const auto& f : ra.seed_files) {
    const auto records = read_records(f);
    REQUIRE(records.size() == 3);
    for (const auto& r : records) {
      double sum = 0.0;
      for (double v : r.per_task) sum += v;
      CHECK(r.avg_accuracy == sum / static_cast<double>(r.per_task.size()));
    }
  }

  // A second method reuses the manifests.
  const std::string manifest = slurp(a / "tasks_seed1.json");
  REQUIRE(run_experiment(small_run("adapters", a)).complete);
  CHECK(slurp(a / "tasks_seed1.json") == manifest);

  // Interrupt mid-stream, then resume.
  const fs::path c = scratch("run_c");
  const RunSummary partial = run_experiment(small_run("ada-leep", c), {.max_new_tasks = 4});
  CHECK_FALSE(partial.complete);
  CHECK(partial.tasks_learned == 4);
  CHECK(read_records(c / "ada-leep" / "seed1.csv").size() == 1);
  const RunSummary resumed = run_experiment(small_run("ada-leep", c));
  REQUIRE(resumed.complete);
  CHECK(resumed.tasks_learned == 2);
  CHECK(slurp(resumed.aggregate) == slurp(ra.aggregate));
  for (std::size_t s = 0; s < 2; ++s) {
    const auto x = read_records(ra.seed_files[s]);
    const auto y = read_records(resumed.seed_files[s]);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].per_task == y[i].per_task);
      CHECK(x[i].avg_accuracy == y[i].avg_accuracy);
      CHECK(x[i].params.total == y[i].params.total);
    }
  }
  CHECK(fs::exists(c / "run.log"));

  // Plot data.
  const fs::path curve = emit_plot_data(a, Figure::accuracy_curve);
  std::ifstream in(curve);
  std::string line;
  std::getline(in, line);
  CHECK(line == "method,task_index,mean_avg_accuracy,std");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2 * 3);
  CHECK_THROWS_AS(emit_plot_data(scratch("empty"), Figure::accuracy_curve), LookupError);
  CHECK_THROWS_AS(parse_figure("histogram"), ConfigError);
  for (const fs::path& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("parameter table rows") {
  const BackboneConfig vitb = BackboneConfig::vitb_shape();
  const std::uint64_t B = count_backbone(vitb);
  const std::uint64_t A = count_adapter(vitb, 48);
  std::istringstream table(param_table_csv(vitb, 4, 1, false));
  std::string line;
  std::getline(table, line);
  CHECK(line == "method,tasks,trainable_params,inference_params,total_params,total_bytes");
  std::size_t checked = 0;
  while (std::getline(table, line)) {
    std::stringstream ss(line);
    std::string method, tasks, tr, inf, tot, bytes;
    std::getline(ss, method, ',');
    std::getline(ss, tasks, ',');
    std::getline(ss, tr, ',');
    std::getline(ss, inf, ',');
    std::getline(ss, tot, ',');
    std::getline(ss, bytes, ',');
    if (method == "b2" || method == "ewc") {
      CHECK(std::stoull(tr) == B);
      CHECK(std::stoull(inf) == B);
      CHECK(std::stoull(tot) == B);
      ++checked;
    }
    if (method == "adapters" && tasks == "20") {
      CHECK(std::stoull(tot) == B + 20 * A);
      CHECK(std::stoull(bytes) == 4 * (B + 20 * A));
      ++checked;
    }
  }
  CHECK(checked == 7);
}

TEST_CASE("pretraining is deterministic and moves the backbone") {
  PretrainConfig p;
  p.classes = 4;
  p.per_class = 8;
  p.epochs = 1;
  const BackboneParams x = pretrain_backbone(p);
  const BackboneParams y = pretrain_backbone(p);
  const BackboneParams init = build_backbone(BackboneConfig::tiny(), p.seed);
  const auto nx = x.named(), ny = y.named(), ni = init.named();
  bool same = true, moved = false;
  for (std::size_t i = 0; i < nx.size(); ++i) {
    same = same && std::equal(nx[i].tensor.data().begin(), nx[i].tensor.data().end(), ny[i].tensor.data().begin());
    moved = moved || !std::equal(nx[i].tensor.data().begin(), nx[i].tensor.data().end(), ni[i].tensor.data().begin());
    CHECK_FALSE(nx[i].tensor.requires_grad());
  }
  CHECK(same);
  CHECK(moved);
  p.classes = 1;
  CHECK_THROWS_AS(pretrain_backbone(p), ConfigError);
}
