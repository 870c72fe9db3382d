// Command-line front end for experiment plans.
//
//   rmit run --plan plan.json [--out DIR] [--workers N] [--resume]
//   rmit resume --plan plan.json [--out DIR] [--workers N]
//   rmit report (--plan plan.json | --out DIR)
//   rmit sweep-alpha --plan plan.json --alphas 0,0.25,0.5,0.75,1 [--out DIR] [--workers N] [--resume]
//   rmit correlate (--plan plan.json | --out DIR)
//   rmit plot-trajectories (--plan plan.json | --out DIR)
//
// The output root is --out, else $RMIT_OUTPUT_ROOT, else the plan's
// output_root. Exit codes: 0 success, 2 validation failure, 3 some runs
// failed.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "rmit/error.hpp"
#include "rmit/experiment.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kPartial = 3;

struct Args {
  std::string plan;
  std::string out;
  int workers = 1;
  bool resume = false;
  std::vector<double> alphas;
  std::string job;
};

fs::path output_root(const Args& args, const rmit::ExperimentPlan* plan) {
  if (!args.out.empty()) return args.out;
  if (const char* env = std::getenv("RMIT_OUTPUT_ROOT"); env && *env) return env;
  if (plan) return plan->output_root;
  throw rmit::InvalidSpec("no output directory: pass --out, --plan or set RMIT_OUTPUT_ROOT");
}

fs::path self_executable() { return fs::read_symlink("/proc/self/exe"); }

int finish_runs(const rmit::PlanOutcome& outcome) {
  rmit::write_report_files(outcome.out_dir, outcome.records);
  rmit::write_trajectory_plots(outcome.out_dir, outcome.records);
  int completed = 0;
  for (const auto& r : outcome.records) completed += r.completed ? 1 : 0;
  if (completed >= 5) rmit::write_correlation_files(outcome.out_dir, outcome.records);
  std::cout << rmit::aggregate_report(outcome.records).table;
  std::cout << "runs: " << outcome.executed << " executed, " << outcome.skipped << " already complete, "
            << outcome.failed << " failed\n";
  for (const auto& r : outcome.records) {
    if (!r.completed) std::cerr << "failed: " << r.model << " / " << r.condition << " seed " << r.seed << ": " << r.error << '\n';
  }
  return outcome.failed > 0 ? kPartial : kOk;
}

int cmd_run(const Args& args, bool resume) {
  const auto plan = rmit::ExperimentPlan::load(args.plan);
  rmit::RunPlanOptions opts;
  opts.out_dir = output_root(args, &plan);
  opts.workers = args.workers;
  opts.resume = resume;
  opts.worker_executable = self_executable();
  return finish_runs(rmit::run_plan(plan, opts));
}

int cmd_sweep(const Args& args) {
  auto plan = rmit::ExperimentPlan::load(args.plan);
  const auto cells = rmit::alpha_sweep_cells(plan.cells.front(), args.alphas);
  plan.cells = cells;
  rmit::RunPlanOptions opts;
  opts.out_dir = output_root(args, &plan);
  opts.workers = args.workers;
  opts.resume = args.resume;
  opts.worker_executable = self_executable();
  const auto outcome = rmit::run_plan(plan, opts);
  const auto points = rmit::alpha_sweep_report(cells, args.alphas, outcome.records);
  rmit::write_sweep_files(outcome.out_dir, points);
  for (const auto& p : points) std::cout << "alpha " << p.alpha << ": CA " << p.ca << ", FID " << p.fid << '\n';
  return outcome.failed > 0 ? kPartial : kOk;
}

std::vector<rmit::RunRecord> load_records(const Args& args, fs::path& out) {
  std::optional<rmit::ExperimentPlan> plan;
  if (!args.plan.empty()) plan = rmit::ExperimentPlan::load(args.plan);
  out = output_root(args, plan ? &*plan : nullptr);
  return rmit::collect_records(out);
}

int cmd_report(const Args& args) {
  fs::path out;
  const auto records = load_records(args, out);
  rmit::write_report_files(out, records);
  std::cout << rmit::aggregate_report(records).table;
  return kOk;
}

int cmd_correlate(const Args& args) {
  fs::path out;
  const auto records = load_records(args, out);
  rmit::write_correlation_files(out, records);
  std::cout << rmit::correlation_report(records).csv;
  return kOk;
}

int cmd_plot(const Args& args) {
  fs::path out;
  const auto records = load_records(args, out);
  rmit::write_trajectory_plots(out, records);
  std::cout << "trajectory plots written to " << (out / "plots").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-noise robust multi-domain translation experiments"};
  app.require_subcommand(1);
  Args args;

  auto add_plan = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option("--plan", args.plan, "experiment plan (JSON)");
    if (required) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "output directory");
  };
  auto* run = app.add_subcommand("run", "train every cell and seed of a plan");
  add_plan(run, true);
  run->add_option("--workers", args.workers, "parallel worker processes")->check(CLI::PositiveNumber);
  run->add_flag("--resume", args.resume, "continue unfinished runs from their checkpoints");

  auto* resume = app.add_subcommand("resume", "run a plan, continuing unfinished runs");
  add_plan(resume, true);
  resume->add_option("--workers", args.workers, "parallel worker processes")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "aggregate completed runs into report.csv / report.txt");
  add_plan(report, false);

  auto* sweep = app.add_subcommand("sweep-alpha", "mixture-rate sweep over the plan's first cell");
  add_plan(sweep, true);
  sweep->add_option("--alphas", args.alphas, "mixture rates")->delimiter(',')->required();
  sweep->add_option("--workers", args.workers, "parallel worker processes")->check(CLI::PositiveNumber);
  sweep->add_flag("--resume", args.resume, "continue unfinished runs from their checkpoints");

  auto* correlate = app.add_subcommand("correlate", "Spearman correlation among CA, FID, IS and KID");
  add_plan(correlate, false);

  auto* plot = app.add_subcommand("plot-trajectories", "SVG score trajectories per run");
  add_plan(plot, false);

  auto* cell = app.add_subcommand("run-cell", "worker entry point used by parallel runs");
  cell->add_option("--job", args.job, "job file")->required()->check(CLI::ExistingFile);
  cell->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*run) return cmd_run(args, args.resume);
    if (*resume) return cmd_run(args, true);
    if (*report) return cmd_report(args);
    if (*sweep) return cmd_sweep(args);
    if (*correlate) return cmd_correlate(args);
    if (*plot) return cmd_plot(args);
    if (*cell) return rmit::run_job_file(args.job) == 0 ? kOk : kPartial;
  } catch (const rmit::InvalidSpec& e) {
    std::cerr << "invalid plan: " << e.what() << '\n';
    return kInvalid;
  } catch (const rmit::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kPartial;
  }
  return kInvalid;
}
