// Command-line front end: pretrain, run, suite, report, count-params.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "adapool/checkpoint.hpp"
#include "adapool/error.hpp"
#include "adapool/harness.hpp"
#include "adapool/runtime.hpp"

using namespace adapool;

namespace {

struct ExperimentFlags {
  ExperimentConfig config;
  std::size_t pool_size = 4;
  float lr = 0.0f;
  float ewc_lambda = 0.0f;
  std::size_t seeds = 5;
  std::string out = "results";
  CLI::Option* pool_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* lambda_opt = nullptr;

  void add_to(CLI::App& app, bool with_method) {
    ExperimentConfig& c = config;
    if (with_method)
      app.add_option("--method", c.method, "ada-leep, ada-transrate, ada-k1, b1, b2, adapters, er, ewc")
          ->capture_default_str();
    app.add_option("--scenario", c.scenario, "binary or multiclass")->capture_default_str();
    app.add_option("--dataset", c.dataset, "synthetic or cifar100:<file or directory>")->capture_default_str();
    app.add_option("--preset", c.preset, "tiny or vitb-shape")->capture_default_str();
    app.add_option("--backbone", c.backbone,
                   "checkpoint stem of a pretrained backbone; 'random' for an untrained one; "
                   "empty pretrains and caches one in the output directory");
    pool_opt = app.add_option("--pool-size", pool_size, "adapter pool capacity K (ada-leep, ada-transrate)");
    app.add_option("--tasks", c.num_tasks, "tasks in the stream")->capture_default_str();
    app.add_option("--per-class", c.per_class, "images per class in each split")->capture_default_str();
    app.add_option("--classes-per-task", c.classes_per_task, "classes per multiclass task")->capture_default_str();
    app.add_option("--batch-size", c.batch_size)->capture_default_str();
    lr_opt = app.add_option("--lr", lr, "fixed learning rate; overrides --lr-grid");
    app.add_option("--lr-grid", c.lr_grid, "learning rates tried on the selection tasks")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--epochs", c.epochs, "epochs per task")->capture_default_str();
    app.add_option("--distill-epochs", c.distill_epochs)->capture_default_str();
    app.add_option("--distill-cap", c.distill_cap, "buffered inputs per task")->capture_default_str();
    app.add_flag("--leep-latest-head", c.leep_latest_head, "score slots with their newest head only");
    app.add_option("--memory", c.memory_capacity, "replay memory capacity")->capture_default_str();
    lambda_opt = app.add_option("--ewc-lambda", ewc_lambda, "fixed EWC strength; overrides --ewc-lambda-grid");
    app.add_option("--ewc-lambda-grid", c.ewc_lambda_grid)->delimiter(',')->capture_default_str();
    app.add_option("--selection-tasks", c.selection_tasks, "tasks used for grid selection")->capture_default_str();
    app.add_option("--seeds", seeds, "number of seeds (0 .. n-1)")->capture_default_str();
    app.add_option("--data-seed", c.data_seed, "seed of the synthetic dataset")->capture_default_str();
    app.add_option("--synthetic-per-class", c.synthetic_per_class, "synthetic images per class (0: 2 x per-class)");
    app.add_option("--pretrain-epochs", c.pretrain.epochs)->capture_default_str();
    app.add_option("--out", out, "results directory")->capture_default_str();
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config;
    if (pool_opt->count()) c.pool_size = pool_size;
    if (lr_opt->count()) c.lr = lr;
    if (lambda_opt->count()) c.ewc_lambda = ewc_lambda;
    c.seeds.clear();
    for (std::size_t s = 0; s < seeds; ++s) c.seeds.push_back(s);
    c.out = out;
    return c;
  }
};

void print_summary(const RunSummary& s) {
  if (s.complete)
    std::cout << "aggregate: " << s.aggregate.string() << '\n';
  else
    std::cout << "incomplete after " << s.tasks_learned << " new tasks\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning with a fixed-size pool of transformer adapters"};
  app.require_subcommand(1);

  PretrainConfig pre;
  std::string pre_out = "backbone";
  auto* pretrain = app.add_subcommand("pretrain", "train a tiny backbone on auxiliary synthetic classes");
  pretrain->set_config("--config");
  pretrain->add_option("--preset", pre.preset)->capture_default_str();
  pretrain->add_option("--classes", pre.classes)->capture_default_str();
  pretrain->add_option("--per-class", pre.per_class)->capture_default_str();
  pretrain->add_option("--epochs", pre.epochs)->capture_default_str();
  pretrain->add_option("--batch-size", pre.batch_size)->capture_default_str();
  pretrain->add_option("--lr", pre.lr)->capture_default_str();
  pretrain->add_option("--seed", pre.seed)->capture_default_str();
  pretrain->add_option("--data-seed", pre.data_seed)->capture_default_str();
  pretrain->add_option("--out", pre_out, "checkpoint stem")->capture_default_str();

  ExperimentFlags run_flags;
  auto* run = app.add_subcommand("run", "run one method over every seed");
  run->set_config("--config");
  run_flags.add_to(*run, true);

  ExperimentFlags suite_flags;
  auto* suite = app.add_subcommand("suite", "run every method on shared task streams");
  suite->set_config("--config");
  suite_flags.add_to(*suite, false);

  std::string report_dir = "results", figure = "accuracy_curve", report_preset = "vitb-shape";
  std::size_t report_pool = 4;
  auto* report = app.add_subcommand("report", "emit plot data from aggregated results");
  report->set_config("--config");
  report->add_option("--out", report_dir, "results directory")->capture_default_str();
  report->add_option("--figure", figure, "accuracy_curve or param_table")->capture_default_str();
  report->add_option("--preset", report_preset, "backbone shape for param_table")->capture_default_str();
  report->add_option("--pool-size", report_pool)->capture_default_str();

  std::string count_preset = "vitb-shape", count_method;
  std::size_t count_pool = 4, count_head = 1, count_tasks = 1;
  bool count_heads = false;
  auto* count = app.add_subcommand("count-params", "parameter accounting table");
  count->set_config("--config");
  count->add_option("--preset", count_preset)->capture_default_str();
  count->add_option("--pool-size", count_pool)->capture_default_str();
  count->add_option("--head-dim", count_head, "head outputs (1 binary, 5 multiclass)")->capture_default_str();
  count->add_flag("--include-heads", count_heads, "count task heads as well");
  count->add_option("--method", count_method, "print one method's counts instead of the table");
  count->add_option("--tasks", count_tasks, "task count for --method")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    configure_runtime();
    if (*pretrain) {
      const BackboneParams theta = pretrain_backbone(pre);
      save_checkpoint(theta.named(), pre_out);
      std::cout << "backbone: " << pre_out << ".manifest, " << pre_out << ".bin\n";
    } else if (*run) {
      print_summary(run_experiment(run_flags.resolve()));
    } else if (*suite) {
      ExperimentConfig base = suite_flags.resolve();
      for (const std::string& m : suite_methods()) {
        ExperimentConfig c = base;
        c.method = m;
        if (m != "ada-leep" && m != "ada-transrate") c.pool_size.reset();
        if (m != "ewc") c.ewc_lambda.reset();
        std::cout << m << ": " << std::flush;
        print_summary(run_experiment(c));
      }
      std::cout << "curve: " << emit_plot_data(base.out, Figure::accuracy_curve).string() << '\n';
    } else if (*report) {
      std::cout << emit_plot_data(report_dir, parse_figure(figure), report_preset, report_pool).string() << '\n';
    } else if (*count) {
      const BackboneConfig shape = BackboneConfig::preset(count_preset);
      if (count_method.empty()) {
        std::cout << param_table_csv(shape, count_pool, count_head, count_heads);
      } else {
        MethodCountQuery q;
        q.method = count_method;
        q.n_tasks = count_tasks;
        q.pool_size = count_pool;
        q.head_out_dim = count_head;
        q.include_heads = count_heads;
        const MethodCounts c = method_counts(shape, q);
        std::cout << "trainable,inference,total,total_bytes\n"
                  << c.trainable << ',' << c.inference << ',' << c.total << ',' << c.total * kBytesPerParam << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
