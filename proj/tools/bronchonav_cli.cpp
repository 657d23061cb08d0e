// Command-line front end: tree generation, tracking and driving experiments,
// log evaluation and the loop-rate benchmark.

#include "bronchonav/control.hpp"
#include "bronchonav/episode_log.hpp"
#include "bronchonav/evaluation.hpp"
#include "bronchonav/localization.hpp"
#include "bronchonav/perception.hpp"
#include "bronchonav/simulator.hpp"
#include "bronchonav/skeleton.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace bronchonav;
using Json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("BRONCHONAV_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw Error(std::string("BRONCHONAV_SEED is not an unsigned integer: ") + s);
  return v;
}

std::vector<AirwayId> leaves(const AirwayTree& tree) {
  std::vector<AirwayId> out;
  for (const Airway& a : tree.airways()) {
    if (a.is_leaf()) out.push_back(a.id);
  }
  return out;
}

std::string episode_name(const std::string& prefix, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.jsonl", prefix.c_str(), k);
  return buf;
}

std::vector<EpisodeLog> load_logs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no .jsonl logs in " + dir.string());
  std::vector<EpisodeLog> logs;
  for (const auto& f : files) logs.push_back(read_episode(f));
  return logs;
}

Json summary_json(const ErrorSummary& s) {
  return Json{{"mean", s.mean}, {"median", s.median}, {"std", s.std}};
}

int cmd_gen_tree(const fs::path& config, const fs::path& out) {
  TreeGenConfig cfg = tree_gen_config_from_json(read_file(config));
  if (auto s = env_seed()) cfg.seed = *s;
  const AirwayTree tree = generate_tree(cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_tree(tree, out);
  std::cout << "wrote " << tree.size() << " airways to " << out.string() << " (hash " << tree_hash(tree) << ")\n";
  return 0;
}

struct TrackArgs {
  fs::path tree, noise, filter, out;
  int episodes = 10;
  int frames = 600;
  std::string localizer = "airwaynet";
};

int cmd_track(const TrackArgs& a) {
  const AirwayTree tree = load_tree(a.tree);
  TrackingConfig cfg;
  if (!a.noise.empty()) cfg.noise = noise_config_from_json(read_file(a.noise));
  if (!a.filter.empty()) cfg.filter = filter_config_from_json(read_file(a.filter));
  if (auto s = env_seed()) cfg.noise.seed = *s;
  if (a.localizer == "airwaynet") cfg.localizer = LocalizerKind::kAirwayNet;
  else if (a.localizer == "pf") cfg.localizer = LocalizerKind::kParticleFilter;
  else throw Error("unknown localizer \"" + a.localizer + "\" (airwaynet or pf)");

  const std::vector<AirwayId> ends = leaves(tree);
  ScriptConfig script_cfg;
  script_cfg.frames = a.frames;
  fs::create_directories(a.out);
  const std::uint64_t base_seed = cfg.noise.seed;
  for (int k = 0; k < a.episodes; ++k) {
    TrackingConfig ep = cfg;
    ep.noise.seed = base_seed + static_cast<std::uint64_t>(k);
    const AirwayId leaf = ends[(static_cast<std::size_t>(k) * 7) % ends.size()];
    const EpisodeLog log = run_tracking_episode(tree, scripted_path(tree, leaf, script_cfg), ep);
    write_episode(log, a.out / episode_name("track", k));
  }
  std::cout << "wrote " << a.episodes << " tracking episodes to " << a.out.string() << "\n";
  return 0;
}

struct DriveArgs {
  fs::path tree, noise, controller, sim, out;
  std::string targets;
  int trials = 1;
};

std::vector<AirwayId> parse_targets(const std::string& text) {
  std::vector<AirwayId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("bad target ID \"" + item + "\"");
    }
  }
  if (out.empty()) throw Error("no targets given");
  return out;
}

int cmd_drive(const DriveArgs& a) {
  const AirwayTree tree = load_tree(a.tree);
  DrivingConfig cfg;
  SimConfig sim;
  if (!a.noise.empty()) cfg.noise = noise_config_from_json(read_file(a.noise));
  if (!a.controller.empty()) cfg.controller = controller_config_from_json(read_file(a.controller));
  if (!a.sim.empty()) sim = sim_config_from_json(read_file(a.sim));
  if (auto s = env_seed()) {
    cfg.noise.seed = *s;
    sim.seed = *s;
  }
  cfg.targets = parse_targets(a.targets);
  fs::create_directories(a.out);
  int successes = 0;
  const std::uint64_t base_seed = sim.seed;
  for (int k = 0; k < a.trials; ++k) {
    SimConfig trial = sim;
    trial.seed = base_seed + static_cast<std::uint64_t>(k);
    const EpisodeLog log = run_driving_episode(tree, cfg, trial);
    successes += log.outcome.success ? 1 : 0;
    write_episode(log, a.out / episode_name("drive", k));
  }
  std::cout << successes << "/" << a.trials << " trials reached all targets; logs in " << a.out.string() << "\n";
  return 0;
}

struct EvalArgs {
  fs::path logs, report, csv, errors_csv;
  double threshold = 0.5;
};

int cmd_eval(const EvalArgs& a) {
  const std::vector<EpisodeLog> logs = load_logs(a.logs);
  Json report;
  report["episodes"] = logs.size();

  Json f1 = Json::array();
  for (const AirwayClassStats& s : per_airway_f1(logs, a.threshold)) {
    f1.push_back(Json{{"airway_id", s.airway_id}, {"frames_visible", s.frames_visible}, {"tp", s.tp},
                      {"fp", s.fp}, {"fn", s.fn}, {"precision", s.precision}, {"recall", s.recall},
                      {"f1", s.f1}});
  }
  report["threshold"] = a.threshold;
  report["per_airway"] = std::move(f1);

  std::optional<PRCurve> pr;
  try {
    pr = averaged_pr_curve(logs);
    report["pr"] = Json{{"airways", pr->airways}, {"auc_macro", pr->auc}, {"auc_micro", pr->micro_auc}};
  } catch (const Error& e) {
    report["pr"] = Json{{"error", e.what()}};
  }

  const TrackingReport tr = tracking_report(logs);
  report["tracking"] = Json{{"bifurcation_frames", tr.bifurcation_frames},
                            {"labeled_frames", tr.errors.size()},
                            {"e_p_mm", summary_json(tr.e_p)},
                            {"e_d_deg", summary_json(tr.e_d)},
                            {"e_r_deg", summary_json(tr.e_r)}};

  std::vector<EpisodeLog> drives;
  for (const auto& l : logs) {
    if (l.kind == "driving") drives.push_back(l);
  }
  if (!drives.empty()) {
    const DrivingSummary d = driving_summary(drives);
    report["driving"] = Json{{"successes", d.successes},
                             {"trials", d.trials},
                             {"mean_completion_time_s", d.mean_completion_time},
                             {"std_completion_time_s", d.std_completion_time},
                             {"recoveries", d.recoveries},
                             {"collisions", d.collisions}};
  }

  write_file(a.report, report.dump(2) + "\n");
  if (!a.csv.empty() && pr) {
    std::ostringstream csv;
    csv << "threshold,macro_precision,macro_recall,micro_precision,micro_recall\n";
    csv.precision(17);
    for (std::size_t k = 0; k < pr->thresholds.size(); ++k) {
      csv << pr->thresholds[k] << ',' << pr->precision[k] << ',' << pr->recall[k] << ','
          << pr->micro_precision[k] << ',' << pr->micro_recall[k] << '\n';
    }
    write_file(a.csv, csv.str());
  }
  if (!a.errors_csv.empty()) {
    std::ostringstream csv;
    csv << "t,e_p_mm,e_d_deg,e_r_deg\n";
    csv.precision(17);
    for (std::size_t k = 0; k < tr.errors.size(); ++k) {
      csv << tr.times[k] << ',' << tr.errors[k].position << ',' << tr.errors[k].direction << ','
          << tr.errors[k].roll << '\n';
    }
    write_file(a.errors_csv, csv.str());
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

struct BenchArgs {
  fs::path tree;
  double seconds = 2.0;
  double min_rate = 0.0;
  std::string localizer = "airwaynet";
};

int cmd_bench(const BenchArgs& a) {
  const AirwayTree tree = load_tree(a.tree);
  const bool use_pf = a.localizer == "pf";
  if (!use_pf && a.localizer != "airwaynet") throw Error("unknown localizer \"" + a.localizer + "\"");
  const BenchmarkResult r = run_benchmark(
      tree, use_pf ? LocalizerKind::kParticleFilter : LocalizerKind::kAirwayNet, a.seconds, env_seed().value_or(1));
  const long iterations = r.iterations;
  const double elapsed = r.seconds;
  const double rate = iterations / elapsed;
  std::cout << "airways " << tree.size() << ", localizer " << a.localizer << ": " << iterations
            << " iterations in " << elapsed << " s = " << rate << " it/s\n";
  if (a.min_rate > 0.0 && rate < a.min_rate) {
    std::cerr << "rate below required " << a.min_rate << " it/s\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Airway-tree bronchoscope navigation simulator"};
  app.require_subcommand(1);

  fs::path gen_config, gen_out;
  auto* gen = app.add_subcommand("gen-tree", "Generate a synthetic airway tree");
  gen->add_option("--config", gen_config, "Tree generation config (JSON)")->required();
  gen->add_option("--out", gen_out, "Output tree file")->required();

  TrackArgs track_args;
  auto* track = app.add_subcommand("track", "Run scripted tracking episodes");
  track->add_option("--tree", track_args.tree, "Tree file")->required();
  track->add_option("--noise", track_args.noise, "Noise config (JSON)");
  track->add_option("--filter", track_args.filter, "Particle filter config (JSON)");
  track->add_option("--episodes", track_args.episodes, "Number of episodes")->check(CLI::PositiveNumber);
  track->add_option("--frames", track_args.frames, "Frames per episode")->check(CLI::Range(2, 1000000));
  track->add_option("--localizer", track_args.localizer, "airwaynet or pf");
  track->add_option("--out", track_args.out, "Output directory")->required();

  DriveArgs drive_args;
  auto* drive = app.add_subcommand("drive", "Run closed-loop driving trials");
  drive->add_option("--tree", drive_args.tree, "Tree file")->required();
  drive->add_option("--targets", drive_args.targets, "Comma-separated target airway IDs")->required();
  drive->add_option("--trials", drive_args.trials, "Number of trials")->check(CLI::PositiveNumber);
  drive->add_option("--noise", drive_args.noise, "Noise config (JSON)");
  drive->add_option("--controller", drive_args.controller, "Controller config (JSON)");
  drive->add_option("--sim", drive_args.sim, "Simulator config (JSON)");
  drive->add_option("--out", drive_args.out, "Output directory")->required();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate episode logs");
  eval->add_option("--logs", eval_args.logs, "Directory of .jsonl logs")->required();
  eval->add_option("--report", eval_args.report, "Report JSON output")->required();
  eval->add_option("--csv", eval_args.csv, "PR curve CSV output");
  eval->add_option("--errors-csv", eval_args.errors_csv, "Per-frame pose error CSV output");
  eval->add_option("--threshold", eval_args.threshold, "Classification threshold for F1")->check(CLI::Range(0.0, 1.0));

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Measure the perception-localization-control loop rate");
  bench->add_option("--tree", bench_args.tree, "Tree file")->required();
  bench->add_option("--seconds", bench_args.seconds, "Measurement duration")->check(CLI::PositiveNumber);
  bench->add_option("--min-rate", bench_args.min_rate, "Fail below this many iterations per second");
  bench->add_option("--localizer", bench_args.localizer, "airwaynet or pf");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_tree(gen_config, gen_out);
    if (*track) return cmd_track(track_args);
    if (*drive) return cmd_drive(drive_args);
    if (*eval) return cmd_eval(eval_args);
    if (*bench) return cmd_bench(bench_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
