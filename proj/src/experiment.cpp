#include "rmit/experiment.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "rmit/error.hpp"
#include "rmit/plot.hpp"

extern char** environ;

namespace rmit {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidSpec("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidSpec(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw InvalidInput("cannot write " + path.string());
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ? ch : '_';
  return out;
}

bool is_mixed(Variant v) { return v == Variant::rmit_cyc_vcyc || v == Variant::rmit_recyc_vcyc; }

}  // namespace

// DatasetSpec ---------------------------------------------------------------

std::int64_t DatasetSpec::num_domains() const {
  if (kind == Kind::synthetic) return synthetic.num_domains;
  if (!fs::is_directory(folder)) throw InvalidSpec("image folder '" + folder.string() + "' does not exist");
  std::int64_t n = 0;
  for (const auto& e : fs::directory_iterator(folder)) n += e.is_directory() ? 1 : 0;
  return n;
}

json DatasetSpec::to_json() const {
  if (kind == Kind::folder) {
    return {{"kind", "folder"},
            {"root", folder.string()},
            {"image_size", image_size},
            {"image_channels", image_channels},
            {"train_fraction", train_fraction},
            {"split_seed", split_seed}};
  }
  return {{"kind", "synthetic"},
          {"num_domains", synthetic.num_domains},
          {"samples_per_domain", synthetic.samples_per_domain},
          {"test_samples_per_domain", test_samples_per_domain},
          {"image_size", synthetic.image_size},
          {"position_jitter", synthetic.position_jitter},
          {"radius_min", synthetic.radius_min},
          {"radius_max", synthetic.radius_max},
          {"background_min", synthetic.background_min},
          {"background_max", synthetic.background_max},
          {"background_gradient", synthetic.background_gradient},
          {"hue_jitter", synthetic.hue_jitter},
          {"seed", synthetic.seed},
          {"test_seed", test_seed}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  DatasetSpec d;
  try {
    const auto kind = j.value("kind", std::string("synthetic"));
    if (kind == "folder") {
      d.kind = Kind::folder;
      d.folder = j.at("root").get<std::string>();
      d.image_size = j.value("image_size", d.image_size);
      d.image_channels = j.value("image_channels", d.image_channels);
      d.train_fraction = j.value("train_fraction", d.train_fraction);
      d.split_seed = j.value("split_seed", d.split_seed);
      if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) throw InvalidSpec("train_fraction must lie in (0, 1)");
    } else if (kind == "synthetic") {
      auto& s = d.synthetic;
      s.num_domains = j.value("num_domains", s.num_domains);
      s.samples_per_domain = j.value("samples_per_domain", s.samples_per_domain);
      s.image_size = j.value("image_size", s.image_size);
      s.position_jitter = j.value("position_jitter", s.position_jitter);
      s.radius_min = j.value("radius_min", s.radius_min);
      s.radius_max = j.value("radius_max", s.radius_max);
      s.background_min = j.value("background_min", s.background_min);
      s.background_max = j.value("background_max", s.background_max);
      s.background_gradient = j.value("background_gradient", s.background_gradient);
      s.hue_jitter = j.value("hue_jitter", s.hue_jitter);
      s.seed = j.value("seed", s.seed);
      d.test_seed = j.value("test_seed", d.test_seed);
      d.test_samples_per_domain = j.value("test_samples_per_domain", d.test_samples_per_domain);
      d.image_size = s.image_size;
      s.validate();
      if (d.test_samples_per_domain < 1) throw InvalidSpec("test_samples_per_domain must be positive");
    } else {
      throw InvalidSpec("unknown dataset kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("dataset: ") + e.what());
  }
  return d;
}

TrainingData build_training_data(const DatasetSpec& dataset, const TrainConfig& config) {
  TrainingData data;
  if (dataset.kind == DatasetSpec::Kind::synthetic) {
    auto spec = dataset.synthetic;
    const auto names = synthetic_domain_names(spec.num_domains);
    data.train = LabeledDataset(generate_synthetic(spec), spec.num_domains, names);
    spec.seed = dataset.test_seed;
    spec.samples_per_domain = dataset.test_samples_per_domain;
    data.test = LabeledDataset(generate_synthetic(spec), spec.num_domains, names);
    data.eval_classifier_seed = derive_seed(dataset.synthetic.seed, "eval-classifier");
  } else {
    auto loaded = load_image_folder(dataset.folder, dataset.image_size, dataset.image_channels);
    const auto c = static_cast<std::int64_t>(loaded.domain_names.size());
    LabeledDataset all(std::move(loaded.samples), c, loaded.domain_names);
    const auto split = split_stratified(all, dataset.train_fraction, dataset.split_seed);
    data.train = all.subset(split.train);
    data.test = all.subset(split.test);
    data.eval_classifier_seed = derive_seed(dataset.split_seed, "eval-classifier");
  }
  Rng noise_rng(derive_seed(config.seed, "label-noise"));
  data.train.apply_noise(build_transition(config.noise), noise_rng);
  return data;
}

// PlanCell / ExperimentPlan --------------------------------------------------

std::string PlanCell::model_label() const {
  std::string label(to_string(variant));
  if (classifier != RobustMethod::naive) label += " + " + std::string(to_string(classifier));
  if (alpha && is_mixed(variant)) label += " a=" + fmt("%g", *alpha);
  return label;
}

std::string PlanCell::condition_label() const {
  if (noise == NoiseKind::none) return "clean";
  return std::string(to_string(noise)) + " " + fmt("%g", noise_rate);
}

json PlanCell::to_json() const {
  json j = {{"variant", std::string(to_string(variant))},
            {"classifier", std::string(to_string(classifier))},
            {"noise", {{"kind", std::string(to_string(noise))}, {"rate", noise_rate}}},
            {"seeds", seeds}};
  if (alpha) j["alpha"] = *alpha;
  if (drop_rate != 0.0) j["drop_rate"] = drop_rate;
  if (!overrides.empty()) j["overrides"] = overrides;
  return j;
}

PlanCell PlanCell::from_json(const json& j) {
  PlanCell cell;
  try {
    cell.variant = parse_variant(j.at("variant").get<std::string>());
    cell.classifier = parse_robust_method(j.value("classifier", std::string("naive")));
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      cell.noise = parse_noise_kind(n.value("kind", std::string("none")));
      cell.noise_rate = n.value("rate", 0.0);
    }
    if (j.contains("alpha")) cell.alpha = j.at("alpha").get<double>();
    cell.drop_rate = j.value("drop_rate", 0.0);
    cell.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("overrides")) cell.overrides = j.at("overrides");
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("plan cell: ") + e.what());
  }
  if (cell.seeds.empty()) throw InvalidSpec("plan cell '" + cell.model_label() + "' has an empty seed list");
  if (cell.alpha && !(*cell.alpha >= 0.0 && *cell.alpha <= 1.0)) throw InvalidSpec("alpha must lie in [0, 1]");
  return cell;
}

TrainConfig ExperimentPlan::resolve(const PlanCell& cell, std::uint64_t seed) const {
  json cfg = base.is_null() ? json::object() : base;
  json patch = {{"variant", std::string(to_string(cell.variant))},
                {"num_domains", dataset.num_domains()},
                {"seed", seed},
                {"noise", {{"kind", std::string(to_string(cell.noise))}, {"rate", cell.noise_rate}}},
                {"classifier", {{"method", std::string(to_string(cell.classifier))}}}};
  if (cell.classifier == RobustMethod::coteaching) {
    patch["classifier"]["drop_rate"] = cell.drop_rate != 0.0 ? cell.drop_rate : cell.noise_rate;
  }
  if (cell.variant == Variant::rmit_adv2) patch["weights"]["use_adv2"] = true;
  if (cell.alpha) patch["weights"]["alpha"] = *cell.alpha;
  if (dataset.kind == DatasetSpec::Kind::folder || dataset.synthetic.image_size != 32) {
    const auto size = dataset.kind == DatasetSpec::Kind::folder ? dataset.image_size : dataset.synthetic.image_size;
    const auto channels = dataset.kind == DatasetSpec::Kind::folder ? dataset.image_channels : 3;
    patch["generator"]["image_size"] = size;
    patch["generator"]["image_channels"] = channels;
    patch["discriminator"]["image_size"] = size;
    patch["discriminator"]["image_channels"] = channels;
  }
  cfg.merge_patch(patch);
  cfg.merge_patch(cell.overrides);
  return TrainConfig::from_json(cfg);
}

void ExperimentPlan::validate() const {
  if (cells.empty()) throw InvalidSpec("plan has no cells");
  for (const auto& cell : cells) {
    if (cell.seeds.empty()) throw InvalidSpec("plan cell '" + cell.model_label() + "' has an empty seed list");
    for (auto seed : cell.seeds) resolve(cell, seed);
  }
}

json ExperimentPlan::to_json() const {
  json cs = json::array();
  for (const auto& c : cells) cs.push_back(c.to_json());
  return {{"name", name},         {"dataset", dataset.to_json()}, {"base", base},
          {"cells", cs},          {"output_root", output_root},   {"aggregation", "median"}};
}

ExperimentPlan ExperimentPlan::from_json(const json& j) {
  if (!j.is_object()) throw InvalidSpec("plan must be a JSON object");
  ExperimentPlan plan;
  plan.name = j.value("name", plan.name);
  if (j.contains("dataset")) plan.dataset = DatasetSpec::from_json(j.at("dataset"));
  if (j.contains("base")) plan.base = j.at("base");
  plan.output_root = j.value("output_root", plan.output_root);
  if (j.value("aggregation", std::string("median")) != "median") throw InvalidSpec("only median aggregation is supported");
  if (!j.contains("cells") || !j.at("cells").is_array()) throw InvalidSpec("plan needs a 'cells' array");
  for (const auto& c : j.at("cells")) plan.cells.push_back(PlanCell::from_json(c));
  plan.validate();
  return plan;
}

ExperimentPlan ExperimentPlan::load(const fs::path& path) { return from_json(read_json_file(path)); }

std::string run_key(const TrainConfig& config, const DatasetSpec& dataset) {
  const json identity = {{"config", config.to_json()}, {"dataset", dataset.to_json()}};
  return hex64(fnv1a64(identity.dump()));
}

// Runs ------------------------------------------------------------------------

json RunRecord::to_json() const {
  return {{"model", model},
          {"condition", condition},
          {"seed", seed},
          {"run_key", run_key},
          {"completed", completed},
          {"error", error},
          {"final", final.to_json()},
          {"eval_classifier_test_accuracy", eval_classifier_test_accuracy},
          {"trajectory", trajectory.to_json()}};
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.model = j.at("model").get<std::string>();
  r.condition = j.at("condition").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.run_key = j.at("run_key").get<std::string>();
  r.completed = j.at("completed").get<bool>();
  r.error = j.value("error", std::string());
  r.final = MetricsReport::from_json(j.at("final"));
  r.eval_classifier_test_accuracy = j.value("eval_classifier_test_accuracy", 0.0);
  r.trajectory = ScoreTrajectory::from_json(j.at("trajectory"));
  return r;
}

RunRecord execute_run(const TrainConfig& config, const DatasetSpec& dataset, const fs::path& run_dir, bool resume,
                      const std::string& model, const std::string& condition) {
  const auto result_path = run_dir / "result.json";
  if (fs::exists(result_path)) {
    auto existing = RunRecord::from_json(read_json_file(result_path));
    if (existing.completed) return existing;
  }
  fs::create_directories(run_dir);
  torch::set_num_threads(1);
  write_text(run_dir / "config.json", json{{"config", config.to_json()}, {"dataset", dataset.to_json()}}.dump(2) + "\n");

  RunRecord rec;
  rec.model = model;
  rec.condition = condition;
  rec.seed = config.seed;
  rec.run_key = run_key(config, dataset);
  try {
    auto data = build_training_data(dataset, config);
    write_corruption_sidecar(run_dir / "labels.json", config.noise, data.train.assignments());
    RunOptions opts;
    opts.out_dir = run_dir;
    opts.resume = resume;
    auto result = run_training(config, data, opts);
    rec.completed = result.epochs_completed == config.total_epochs();
    if (!result.reports.empty()) rec.final = result.reports.back();
    rec.eval_classifier_test_accuracy = result.eval_classifier_test_accuracy;
    rec.trajectory = result.trajectory;
  } catch (const std::exception& e) {
    rec.completed = false;
    rec.error = e.what();
  }
  write_text(result_path, rec.to_json().dump(1) + "\n");
  return rec;
}

namespace {

struct Job {
  TrainConfig config;
  std::string model, condition, key;
  fs::path run_dir;
};

RunRecord failed_record(const Job& job, const std::string& why) {
  RunRecord r;
  r.model = job.model;
  r.condition = job.condition;
  r.seed = job.config.seed;
  r.run_key = job.key;
  r.error = why;
  return r;
}

}  // namespace

int run_job_file(const fs::path& job_file) {
  const auto j = read_json_file(job_file);
  const auto config = TrainConfig::from_json(j.at("config"));
  const auto dataset = DatasetSpec::from_json(j.at("dataset"));
  const auto rec = execute_run(config, dataset, j.at("run_dir").get<std::string>(), j.at("resume").get<bool>(),
                               j.at("model").get<std::string>(), j.at("condition").get<std::string>());
  return rec.completed ? 0 : 1;
}

PlanOutcome run_plan(const ExperimentPlan& plan, const RunPlanOptions& options) {
  plan.validate();
  if (options.workers < 1) throw InvalidSpec("workers must be at least 1");
  if (options.workers > 1 && options.worker_executable.empty()) {
    throw InvalidSpec("parallel runs need the worker executable");
  }
  PlanOutcome outcome;
  outcome.out_dir = options.out_dir.empty() ? fs::path(plan.output_root) : options.out_dir;
  fs::create_directories(outcome.out_dir / "runs");
  write_text(outcome.out_dir / "plan.json", plan.to_json().dump(2) + "\n");

  std::vector<Job> jobs;
  for (const auto& cell : plan.cells) {
    for (auto seed : cell.seeds) {
      Job job;
      job.config = plan.resolve(cell, seed);
      job.model = cell.model_label();
      job.condition = cell.condition_label();
      job.key = run_key(job.config, plan.dataset);
      job.run_dir = outcome.out_dir / "runs" / job.key;
      jobs.push_back(std::move(job));
    }
  }

  std::vector<bool> pending(jobs.size(), false);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto result = jobs[i].run_dir / "result.json";
    bool done = false;
    if (fs::exists(result)) {
      try {
        done = RunRecord::from_json(read_json_file(result)).completed;
      } catch (const std::exception&) {
        done = false;
      }
    }
    pending[i] = !done;
    if (done) ++outcome.skipped;
  }

  if (options.workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (!pending[i]) continue;
      execute_run(jobs[i].config, plan.dataset, jobs[i].run_dir, options.resume, jobs[i].model, jobs[i].condition);
      ++outcome.executed;
    }
  } else {
    const auto exe = options.worker_executable.string();
    std::size_t next = 0;
    int running = 0;
    auto launch = [&](std::size_t i) {
      const auto job_file = outcome.out_dir / "jobs" / (jobs[i].key + ".json");
      const json j = {{"config", jobs[i].config.to_json()}, {"dataset", plan.dataset.to_json()},
                      {"run_dir", jobs[i].run_dir.string()}, {"resume", options.resume},
                      {"model", jobs[i].model},             {"condition", jobs[i].condition}};
      write_text(job_file, j.dump(2) + "\n");
      const std::string verb = "run-cell", flag = "--job", path = job_file.string();
      std::vector<char*> argv = {const_cast<char*>(exe.c_str()), const_cast<char*>(verb.c_str()),
                                 const_cast<char*>(flag.c_str()), const_cast<char*>(path.c_str()), nullptr};
      pid_t pid = 0;
      if (posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
        throw InvalidSpec("cannot start worker " + exe);
      }
      ++running;
      ++outcome.executed;
    };
    while (true) {
      while (running < options.workers && next < jobs.size()) {
        if (pending[next]) launch(next);
        ++next;
      }
      if (running == 0) break;
      int status = 0;
      if (::wait(&status) > 0) --running;
    }
  }

  for (const auto& job : jobs) {
    const auto result = job.run_dir / "result.json";
    RunRecord rec;
    try {
      rec = fs::exists(result) ? RunRecord::from_json(read_json_file(result))
                               : failed_record(job, "worker exited without a result");
    } catch (const std::exception& e) {
      rec = failed_record(job, e.what());
    }
    if (!rec.completed) ++outcome.failed;
    outcome.records.push_back(std::move(rec));
  }
  return outcome;
}

// Reports -------------------------------------------------------------------

double lower_median(std::vector<double> values) {
  if (values.empty()) throw InvalidInput("median of an empty set");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

namespace {

// clean first, then the remaining conditions in lexicographic order
bool condition_less(const std::string& a, const std::string& b) {
  if ((a == "clean") != (b == "clean")) return a == "clean";
  return a < b;
}

}  // namespace

Report aggregate_report(const std::vector<RunRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::vector<const RunRecord*>> groups;
  std::vector<std::string> models, conditions;
  for (const auto& r : records) {
    groups[{r.model, r.condition}].push_back(&r);
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    if (std::find(conditions.begin(), conditions.end(), r.condition) == conditions.end()) {
      conditions.push_back(r.condition);
    }
  }
  std::sort(models.begin(), models.end());
  std::sort(conditions.begin(), conditions.end(), condition_less);

  Report report;
  std::ostringstream csv;
  csv << "# median over trials; even trial counts use the lower median\n";
  csv << "model,condition,runs,failed,CA,FID,IS,KID,run_keys\n";
  for (const auto& model : models) {
    for (const auto& condition : conditions) {
      auto it = groups.find({model, condition});
      if (it == groups.end()) continue;
      ReportRow row;
      row.model = model;
      row.condition = condition;
      std::vector<double> ca, fid, is, kid;
      std::vector<std::string> keys;
      for (const auto* r : it->second) {
        keys.push_back(r->run_key);
        if (!r->completed) {
          ++row.failed;
          continue;
        }
        ++row.runs;
        ca.push_back(r->final.ca);
        fid.push_back(r->final.fid);
        is.push_back(r->final.is_score);
        kid.push_back(r->final.kid);
      }
      std::sort(keys.begin(), keys.end());
      row.run_keys = keys;
      std::string joined;
      for (const auto& k : keys) joined += (joined.empty() ? "" : ";") + k;
      csv << model << ',' << condition << ',' << row.runs << ',' << row.failed << ',';
      if (row.runs > 0) {
        row.ca = lower_median(ca);
        row.fid = lower_median(fid);
        row.is_score = lower_median(is);
        row.kid = lower_median(kid);
        csv << fmt("%.10g", row.ca) << ',' << fmt("%.10g", row.fid) << ',' << fmt("%.10g", row.is_score) << ','
            << fmt("%.10g", row.kid);
      } else {
        csv << ",,,";
      }
      csv << ',' << joined << '\n';
      report.rows.push_back(std::move(row));
    }
  }
  report.csv = csv.str();

  std::size_t model_width = 5;
  for (const auto& m : models) model_width = std::max(model_width, m.size());
  constexpr int kGroup = 36;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  std::ostringstream table;
  table << "median over trials; even trial counts use the lower median\n";
  table << pad("", model_width);
  for (const auto& c : conditions) table << " | " << pad(c, kGroup);
  table << '\n' << pad("model", model_width);
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    table << " | " << pad(pad("CA", 7) + pad("FID", 10) + pad("IS", 8) + "KID", kGroup);
  }
  table << '\n';
  for (const auto& model : models) {
    table << pad(model, model_width);
    for (const auto& condition : conditions) {
      const ReportRow* row = nullptr;
      for (const auto& r : report.rows) {
        if (r.model == model && r.condition == condition) row = &r;
      }
      std::string cell;
      if (!row) {
        cell = "";
      } else if (row->runs == 0) {
        cell = "gap (no completed run)";
      } else {
        cell = pad(fmt("%.1f", row->ca), 7) + pad(fmt("%.3f", row->fid), 10) + pad(fmt("%.3f", row->is_score), 8) +
               fmt("%.4f", row->kid);
        if (row->failed > 0) cell += " *";
      }
      table << " | " << pad(cell, kGroup);
    }
    table << '\n';
  }
  report.table = table.str();
  return report;
}

std::vector<PlanCell> alpha_sweep_cells(const PlanCell& base, const std::vector<double>& alphas) {
  if (!is_mixed(base.variant)) throw InvalidSpec("alpha sweeps need a mixed-loss variant");
  if (alphas.empty()) throw InvalidSpec("alpha list is empty");
  std::vector<PlanCell> cells;
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidSpec("alpha " + fmt("%g", a) + " outside [0, 1]");
    PlanCell cell = base;
    if (a == 1.0) {
      cell.variant = base.variant == Variant::rmit_cyc_vcyc ? Variant::stargan : Variant::stargan_recyc;
      cell.alpha.reset();
    } else if (a == 0.0) {
      cell.variant = Variant::rmit;
      cell.alpha.reset();
    } else {
      cell.alpha = a;
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<SweepPoint> alpha_sweep_report(const std::vector<PlanCell>& cells, const std::vector<double>& alphas,
                                           const std::vector<RunRecord>& records) {
  if (cells.size() != alphas.size()) throw InvalidInput("one cell per alpha expected");
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    SweepPoint p;
    p.alpha = alphas[i];
    std::vector<double> ca, fid;
    for (const auto& r : records) {
      if (!r.completed || r.model != cells[i].model_label() || r.condition != cells[i].condition_label()) continue;
      if (std::find(cells[i].seeds.begin(), cells[i].seeds.end(), r.seed) == cells[i].seeds.end()) continue;
      ca.push_back(r.final.ca);
      fid.push_back(r.final.fid);
    }
    p.runs = static_cast<int>(ca.size());
    if (p.runs > 0) {
      p.ca = lower_median(ca);
      p.fid = lower_median(fid);
    } else {
      p.ca = p.fid = std::nan("");
    }
    out.push_back(p);
  }
  return out;
}

namespace {

constexpr const char* kMetrics[] = {"CA", "FID", "IS", "KID"};

double metric_of(const RunRecord& r, std::size_t k) {
  switch (k) {
    case 0:
      return r.final.ca;
    case 1:
      return r.final.fid;
    case 2:
      return r.final.is_score;
    default:
      return r.final.kid;
  }
}

}  // namespace

CorrelationReport correlation_report(const std::vector<RunRecord>& records) {
  std::vector<const RunRecord*> done;
  for (const auto& r : records) {
    if (r.completed) done.push_back(&r);
  }
  if (done.size() < 5) throw InvalidInput("correlation report needs at least 5 completed runs");
  std::sort(done.begin(), done.end(), [](const RunRecord* a, const RunRecord* b) { return a->run_key < b->run_key; });
  std::vector<std::vector<double>> series(4);
  for (const auto* r : done) {
    for (std::size_t k = 0; k < 4; ++k) series[k].push_back(metric_of(*r, k));
  }
  CorrelationReport out;
  std::ostringstream csv;
  csv << "metric_a,metric_b,abs_spearman\n";
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      CorrelationEntry e{kMetrics[a], kMetrics[b], std::nullopt};
      try {
        e.rho = spearman_abs(series[a], series[b]);
      } catch (const InvalidInput&) {
        e.rho.reset();
      }
      csv << e.a << ',' << e.b << ',' << (e.rho ? fmt("%.10g", *e.rho) : std::string("constant series")) << '\n';
      out.entries.push_back(std::move(e));
    }
  }
  out.csv = csv.str();
  return out;
}

std::vector<RunRecord> collect_records(const fs::path& out_dir) {
  std::vector<RunRecord> records;
  const auto runs = out_dir / "runs";
  if (!fs::is_directory(runs)) throw InvalidSpec("no runs under " + out_dir.string());
  for (const auto& e : fs::directory_iterator(runs)) {
    const auto result = e.path() / "result.json";
    if (fs::exists(result)) records.push_back(RunRecord::from_json(read_json_file(result)));
  }
  std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.model, a.condition, a.seed, a.run_key) < std::tie(b.model, b.condition, b.seed, b.run_key);
  });
  return records;
}

void write_report_files(const fs::path& out_dir, const std::vector<RunRecord>& records) {
  const auto report = aggregate_report(records);
  write_text(out_dir / "report.csv", report.csv);
  write_text(out_dir / "report.txt", report.table);
}

void write_correlation_files(const fs::path& out_dir, const std::vector<RunRecord>& records) {
  const auto report = correlation_report(records);
  write_text(out_dir / "correlation.csv", report.csv);
  std::vector<const RunRecord*> done;
  for (const auto& r : records) {
    if (r.completed) done.push_back(&r);
  }
  std::sort(done.begin(), done.end(), [](const RunRecord* a, const RunRecord* b) { return a->run_key < b->run_key; });
  for (const auto& e : report.entries) {
    const auto ia = static_cast<std::size_t>(std::find(std::begin(kMetrics), std::end(kMetrics), e.a) - kMetrics);
    const auto ib = static_cast<std::size_t>(std::find(std::begin(kMetrics), std::end(kMetrics), e.b) - kMetrics);
    std::vector<double> x, y;
    for (const auto* r : done) {
      x.push_back(metric_of(*r, ia));
      y.push_back(metric_of(*r, ib));
    }
    const auto note = e.rho ? "|rho| = " + fmt("%.3f", *e.rho) : std::string("constant series");
    write_text(out_dir / "plots" / ("scatter_" + e.a + "_" + e.b + ".svg"),
               svg_scatter_plot(e.a + " vs " + e.b, e.a, e.b, x, y, note));
  }
}

void write_trajectory_plots(const fs::path& out_dir, const std::vector<RunRecord>& records) {
  for (const auto& r : records) {
    std::vector<PlotSeries> series;
    for (const char* metric : {"CA", "classifier_test_accuracy"}) {
      PlotSeries s;
      s.name = metric;
      for (const auto& p : r.trajectory.series(metric)) {
        s.x.push_back(static_cast<double>(p.step));
        s.y.push_back(p.value);
      }
      if (!s.x.empty()) series.push_back(std::move(s));
    }
    if (series.empty()) continue;
    const auto name = file_safe(r.model + "_" + r.condition + "_seed" + std::to_string(r.seed));
    write_text(out_dir / "plots" / ("trajectory_" + name + ".svg"),
               svg_line_plot(r.model + ", " + r.condition + ", seed " + std::to_string(r.seed), "iteration",
                             "accuracy (%)", series));
  }
}

void write_sweep_files(const fs::path& out_dir, const std::vector<SweepPoint>& points) {
  std::ostringstream csv;
  csv << "alpha,runs,CA,FID\n";
  PlotSeries ca{"CA", {}, {}}, fid{"FID", {}, {}};
  for (const auto& p : points) {
    csv << fmt("%g", p.alpha) << ',' << p.runs << ',' << fmt("%.10g", p.ca) << ',' << fmt("%.10g", p.fid) << '\n';
    ca.x.push_back(p.alpha);
    ca.y.push_back(p.ca);
    fid.x.push_back(p.alpha);
    fid.y.push_back(p.fid);
  }
  write_text(out_dir / "alpha_sweep.csv", csv.str());
  write_text(out_dir / "plots" / "alpha_sweep_ca.svg", svg_line_plot("CA vs mixture rate", "alpha", "CA (%)", {ca}));
  write_text(out_dir / "plots" / "alpha_sweep_fid.svg", svg_line_plot("FID vs mixture rate", "alpha", "FID", {fid}));
}

}  // namespace rmit
