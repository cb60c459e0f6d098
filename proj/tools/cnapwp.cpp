// cnapwp command-line tool: gen, run, sweep, ablate, report.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cnapwp/config.hpp"
#include "cnapwp/engine.hpp"
#include "cnapwp/errors.hpp"
#include "cnapwp/metrics.hpp"
#include "cnapwp/report.hpp"
#include "cnapwp/stream.hpp"

#ifndef CNAPWP_VERSION
#define CNAPWP_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace cnapwp;

namespace {

/// Usage or configuration problem: exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError(dir.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CNAPWP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end || v < 1) throw UsageError("CNAPWP_THREADS must be a positive integer");
    n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs job(i) for i in [0, n) on up to CNAPWP_THREADS workers; rethrows the
/// first failure.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  const std::size_t k = worker_count(n);
  for (std::size_t t = 1; t < k; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  std::vector<std::uint64_t> out;
  if (spec.find(',') == std::string::npos) {
    const long n = std::stol(spec);
    if (n < 1) throw UsageError("--seeds must be a positive count or a comma list");
    for (long s = 1; s <= n; ++s) out.push_back(static_cast<std::uint64_t>(s));
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

struct StreamArgs {
  std::string stream;
  std::string drifts;
  std::string labels;
};

EventStream load_stream(const StreamArgs& a, bool need_drifts) {
  std::ifstream f(a.stream);
  if (!f) throw UsageError("cannot open stream " + a.stream);
  EventStream s = parse_event_log(f);
  if (!a.drifts.empty()) {
    std::ifstream d(a.drifts);
    if (!d) throw UsageError("cannot open drift sidecar " + a.drifts);
    s.drift_indices = parse_drift_sidecar(d);
  } else if (need_drifts && s.drift_indices.empty()) {
    throw UsageError("strategy needs drift indices: pass --drifts (an empty file declares none)");
  }
  if (!a.labels.empty()) {
    std::ifstream l(a.labels);
    if (!l) throw UsageError("cannot open label sidecar " + a.labels);
    s.task_labels = parse_label_sidecar(l);
  }
  s.validate();
  return s;
}

bool needs_drifts(Variant v) {
  return v == Variant::CNAPwP || v == Variant::EOnly || v == Variant::LastDrift;
}

nlohmann::json manifest(const std::string& command, const ConfigFile& cfg, const StreamArgs& in,
                        const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  return {{"tool", "cnapwp"},
          {"version", CNAPWP_VERSION},
          {"command", command},
          {"config", dump_config(cfg)},
          {"inputs", {{"stream", in.stream}, {"drifts", in.drifts}, {"labels", in.labels}}},
          {"seeds", seeds},
          {"output_dir", out.string()},
          {"started_at", now_iso()},
          {"finished_at", nullptr}};
}

void finish_manifest(const fs::path& dir, nlohmann::json m) {
  m["finished_at"] = now_iso();
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

struct Stats {
  double mean = 0.0, std = 0.0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  return s;
}

/// Runs `variant` for every seed into dir/seed_<s>; returns the reports'
/// accuracy, latency and duration aggregate.
nlohmann::json run_seeds(const EventStream& stream, const EngineConfig& base, Variant variant,
                         const std::vector<std::uint64_t>& seeds, const fs::path& dir) {
  std::vector<double> acc(seeds.size()), tpe(seeds.size()), secs(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    EngineConfig cfg = base;
    cfg.model.seed = seeds[i];
    RunReport r = run_strategy(stream, cfg, variant);
    write_run_report(dir / ("seed_" + std::to_string(seeds[i])), r, cfg.window_size);
    acc[i] = r.average_accuracy;
    tpe[i] = r.latency.mean_ms;
    secs[i] = r.total_seconds;
  });
  const Stats a = stats(acc), t = stats(tpe), s = stats(secs);
  return {{"strategy", to_string(variant)},
          {"runs", seeds.size()},
          {"average_accuracy", {{"mean", a.mean}, {"std", a.std}}},
          {"time_per_event_ms", {{"mean", t.mean}, {"std", t.std}}},
          {"total_seconds", {{"mean", s.mean}, {"std", s.std}}}};
}

ConfigFile config_or_default(const std::string& path) {
  return path.empty() ? ConfigFile{} : load_config(path);
}

// ---- commands ----

int cmd_gen(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out, bool force) {
  ConfigFile cfg = load_config(config_path);
  const GenConfig& gen = cfg.gen;
  if (gen.concepts.empty()) throw UsageError("config has no [concepts]");
  if (gen.schedule.concept_order.empty()) throw UsageError("config has no [gen] order");
  const std::uint64_t s = seed.value_or(gen.seed);
  auto pools = resolve_concepts(gen, s);
  GeneratedStream g = generate_drift_stream(pools, gen.schedule, s, gen.concurrency);

  prepare_out_dir(out, force);
  {
    std::ofstream f(out / "stream.csv", std::ios::binary);
    write_event_log(f, g.stream);
  }
  {
    std::ofstream f(out / "drifts.txt", std::ios::binary);
    write_drift_sidecar(f, g.stream.drift_indices);
  }
  {
    std::ofstream f(out / "labels.txt", std::ios::binary);
    write_label_sidecar(f, g.stream.task_labels);
  }
  std::cout << "wrote " << g.stream.size() << " events in " << g.stream.segment_count() << " segments to "
            << out.string() << " (" << g.truncated_cases.size() << " cases truncated at boundaries)\n";
  return 0;
}

int cmd_run(const StreamArgs& in, const std::string& config_path, const std::string& strategy,
            const std::string& seeds_spec, const fs::path& out, bool force) {
  ConfigFile cfg = config_or_default(config_path);
  if (!strategy.empty()) cfg.strategy = strategy;
  if (!seeds_spec.empty()) cfg.seeds = parse_seeds(seeds_spec);
  const Variant v = parse_variant(cfg.strategy);
  EventStream stream = load_stream(in, needs_drifts(v));

  prepare_out_dir(out, force);
  auto m = manifest("run", cfg, in, cfg.seeds, out);
  write_text(out / "manifest.json", m.dump(2) + "\n");
  write_text(out / "config.ini", dump_config(cfg));
  auto agg = run_seeds(stream, cfg.engine, v, cfg.seeds, out);
  write_text(out / "aggregate.json", agg.dump(2) + "\n");
  finish_manifest(out, m);
  std::cout << to_string(v) << ": accuracy " << agg["average_accuracy"]["mean"].get<double>() << " +/- "
            << agg["average_accuracy"]["std"].get<double>() << " over " << cfg.seeds.size() << " seed(s)\n";
  return 0;
}

int cmd_sweep(const StreamArgs& in, const std::string& config_path, const std::string& strategy,
              const fs::path& out, bool force) {
  ConfigFile cfg = config_or_default(config_path);
  if (!strategy.empty()) cfg.strategy = strategy;
  const Variant v = parse_variant(cfg.strategy);
  EventStream stream = load_stream(in, needs_drifts(v));
  const EventStream validation = split_validation(stream, cfg.engine.validation_fraction).first;

  struct Point {
    std::size_t gamma, rho;
    double eps;
    double accuracy = 0.0, seconds = 0.0;
  };
  std::vector<Point> grid;
  for (auto g : cfg.sweep.window_size)
    for (auto r : cfg.sweep.buffer_size)
      for (auto e : cfg.sweep.threshold) grid.push_back({g, r, e});

  prepare_out_dir(out, force);
  auto m = manifest("sweep", cfg, in, cfg.seeds, out);
  write_text(out / "manifest.json", m.dump(2) + "\n");
  parallel_for(grid.size(), [&](std::size_t i) {
    EngineConfig ec = cfg.engine;
    ec.window_size = grid[i].gamma;
    ec.buffer_size = grid[i].rho;
    ec.threshold = grid[i].eps;
    ec.model.seed = cfg.seeds.front();
    RunReport r = run_strategy(validation, ec, v);
    grid[i].accuracy = r.records.empty() ? 0.0 : r.average_accuracy;
    grid[i].seconds = r.total_seconds;
  });

  std::ostringstream csv;
  csv << "window_size,buffer_size,threshold,average_accuracy,total_seconds\n";
  const Point* best = &grid.front();
  for (const auto& p : grid) {
    csv << p.gamma << ',' << p.rho << ',' << p.eps << ',' << p.accuracy << ',' << p.seconds << '\n';
    if (p.accuracy > best->accuracy) best = &p;
  }
  write_text(out / "sweep.csv", csv.str());
  finish_manifest(out, m);
  std::cout << "best on validation: window_size=" << best->gamma << " buffer_size=" << best->rho
            << " threshold=" << best->eps << " accuracy=" << best->accuracy << '\n';
  return 0;
}

int cmd_ablate(const StreamArgs& in, const std::string& config_path, const std::string& seeds_spec,
               bool prompt_functions, const fs::path& out, bool force) {
  ConfigFile cfg = config_or_default(config_path);
  if (!seeds_spec.empty()) cfg.seeds = parse_seeds(seeds_spec);
  EventStream stream = load_stream(in, true);

  prepare_out_dir(out, force);
  auto m = manifest("ablate", cfg, in, cfg.seeds, out);
  write_text(out / "manifest.json", m.dump(2) + "\n");

  std::ostringstream csv;
  if (prompt_functions) {
    csv << "mode,mean_accuracy,std_accuracy,mean_seconds\n";
    for (PromptMode mode : {PromptMode::Prefix, PromptMode::Prompt}) {
      EngineConfig ec = cfg.engine;
      ec.model.mode = mode;
      const std::string name = mode == PromptMode::Prefix ? "prefix" : "prompt";
      auto agg = run_seeds(stream, ec, Variant::CNAPwP, cfg.seeds, out / name);
      csv << name << ',' << agg["average_accuracy"]["mean"].get<double>() << ','
          << agg["average_accuracy"]["std"].get<double>() << ',' << agg["total_seconds"]["mean"].get<double>()
          << '\n';
    }
    write_text(out / "prompt_function.csv", csv.str());
  } else {
    csv << "condition,mean_accuracy,std_accuracy,runs\n";
    for (Variant v : {Variant::NoPrompt, Variant::GOnly, Variant::EOnly, Variant::CNAPwP}) {
      auto agg = run_seeds(stream, cfg.engine, v, cfg.seeds, out / to_string(v));
      csv << to_string(v) << ',' << agg["average_accuracy"]["mean"].get<double>() << ','
          << agg["average_accuracy"]["std"].get<double>() << ',' << cfg.seeds.size() << '\n';
    }
    write_text(out / "ablation.csv", csv.str());
  }
  finish_manifest(out, m);
  std::cout << csv.str();
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, std::vector<std::string> names, std::size_t window,
               const std::string& drifts_path, const fs::path& out, bool force) {
  if (!names.empty() && names.size() != inputs.size())
    throw UsageError("--names must match the number of --records inputs");
  // Read and validate everything before writing anything.
  std::vector<std::vector<PredictionRecord>> all;
  for (const auto& path : inputs) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open " + path);
    try {
      all.push_back(read_records_csv(f));
    } catch (const std::invalid_argument& e) {
      throw UsageError(path + ": " + e.what());
    }
  }
  if (names.empty())
    for (const auto& path : inputs) {
      const fs::path p(path);
      names.push_back(p.parent_path().filename().empty() ? p.stem().string() : p.parent_path().filename().string());
    }
  std::vector<std::size_t> drifts;
  if (!drifts_path.empty()) {
    std::ifstream d(drifts_path);
    if (!d) throw UsageError("cannot open " + drifts_path);
    drifts = parse_drift_sidecar(d);
  }

  prepare_out_dir(out, force);
  std::vector<CurveSeries> series;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& records = all[i];
    const SegmentSource source = assign_occurrences(records);
    const ForgettingMatrix fm = forgetting_matrix(records, source);
    auto curve = accuracy_curve(records, window);
    std::string stem = names[i];
    for (auto& c : stem)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    {
      std::ofstream f(out / (stem + "_accuracy_curve.csv"), std::ios::binary);
      write_accuracy_curve_csv(f, curve);
    }
    {
      std::ofstream f(out / (stem + "_forgetting.csv"), std::ios::binary);
      write_forgetting_csv(f, fm);
    }
    write_text(out / (stem + "_forgetting.svg"),
               forgetting_heatmap_svg(fm, names[i] + ": accuracy change per task occurrence (%)"));
    std::cout << names[i] << ": average accuracy " << average_accuracy(records) << ", "
              << fm.cells.size() << " forgetting cells\n";
    series.push_back({names[i], std::move(curve)});
  }
  write_text(out / "accuracy_curve.svg", accuracy_curve_svg(series, drifts));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-based online continual next-activity prediction"};
  app.set_version_flag("--version", CNAPWP_VERSION);
  app.require_subcommand(1);

  bool force = false;
  std::string config_path, strategy, seeds_spec, out;
  StreamArgs in;

  auto add_stream = [&](CLI::App* c) {
    c->add_option("--stream", in.stream, "event-log CSV")->required()->check(CLI::ExistingFile);
    c->add_option("--drifts", in.drifts, "drift sidecar (one index per line)")->check(CLI::ExistingFile);
    c->add_option("--labels", in.labels, "task-label sidecar (one label per segment)")->check(CLI::ExistingFile);
  };

  auto* gen = app.add_subcommand("gen", "generate a drift stream from concept pools");
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", config_path, "generator config (INI)")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "overrides [gen] seed");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* run = app.add_subcommand("run", "run one strategy over one or more seeds");
  add_stream(run);
  run->add_option("--config", config_path, "engine config (INI)")->check(CLI::ExistingFile);
  run->add_option("--strategy", strategy, "cnapwp|landmark|last_drift|no_prompt|g_only|e_only");
  run->add_option("--seeds", seeds_spec, "seed count N (1..N) or comma list");
  run->add_option("--out", out, "output directory")->required();
  run->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* sweep = app.add_subcommand("sweep", "grid search window/buffer/threshold on the validation split");
  add_stream(sweep);
  sweep->add_option("--config", config_path, "engine config (INI)")->check(CLI::ExistingFile);
  sweep->add_option("--strategy", strategy, "strategy to tune (default cnapwp)");
  sweep->add_option("--out", out, "output directory")->required();
  sweep->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* ablate = app.add_subcommand("ablate", "prompt ablation or prompting-function comparison");
  bool prompt_functions = false;
  add_stream(ablate);
  ablate->add_option("--config", config_path, "engine config (INI)")->check(CLI::ExistingFile);
  ablate->add_option("--seeds", seeds_spec, "seed count N (1..N) or comma list");
  ablate->add_flag("--prompt-functions", prompt_functions, "compare prefix and prompt tuning instead");
  ablate->add_option("--out", out, "output directory")->required();
  ablate->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* report = app.add_subcommand("report", "plots and metric CSVs from records.csv files");
  std::vector<std::string> records, names;
  std::size_t window = 250;
  std::string drifts_path;
  report->add_option("--records", records, "records.csv files")->required()->check(CLI::ExistingFile);
  report->add_option("--names", names, "series names (default: parent directory)");
  report->add_option("--window", window, "accuracy window w")->check(CLI::PositiveNumber);
  report->add_option("--drifts", drifts_path, "drift sidecar for curve markers")->check(CLI::ExistingFile);
  report->add_option("--out", out, "output directory")->required();
  report->add_flag("--force", force, "overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(config_path, gen_seed, out, force);
    if (*run) return cmd_run(in, config_path, strategy, seeds_spec, out, force);
    if (*sweep) return cmd_sweep(in, config_path, strategy, out, force);
    if (*ablate) return cmd_ablate(in, config_path, seeds_spec, prompt_functions, out, force);
    if (*report) return cmd_report(records, names, window, drifts_path, out, force);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
