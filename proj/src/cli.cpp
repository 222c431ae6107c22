#include "ltcse/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ltcse/bench.hpp"
#include "ltcse/cells.hpp"
#include "ltcse/data.hpp"
#include "ltcse/model_io.hpp"
#include "ltcse/svg.hpp"
#include "ltcse/training.hpp"

namespace ltcse {

namespace {

namespace fs = std::filesystem;

// Synthetic stand-ins are generated at a fixed size and seed so that
// "synth:<task>" names one reproducible dataset, not a family.
constexpr std::size_t kSynthRows = 10000;
constexpr std::uint64_t kSynthSeed = 0;

struct TaskRef {
  std::string name;
  bool synth = false;
};

TaskRef parse_task(const std::string& s) {
  if (s.rfind("synth:", 0) == 0) return {s.substr(6), true};
  return {s, false};
}

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (c == ':' || c == '/' || c == '\\') c = '-';
  }
  return s;
}

std::string resolve_cache(const CliEnv& env, const std::string& flag_cache) {
  if (!flag_cache.empty()) return flag_cache;
  if (!env.cache_root.empty()) return env.cache_root;
  return default_cache_root();
}

SeriesTable load_task_table(const TaskRef& ref, const CliEnv& env,
                            const std::string& flag_cache, bool offline) {
  const TaskSpec spec = task_spec(ref.name);
  if (ref.synth) return synth_fixture(spec, kSynthSeed, kSynthRows);
  Fetcher fetcher(resolve_cache(env, flag_cache), offline);
  if (env.http) fetcher.set_http(env.http);
  return load_csv(fetcher.ensure_canonical_csv(ref.name), spec);
}

std::string metric_name_for(const TaskSpec& spec) {
  return spec.kind == TaskKind::Regression ? "mse" : "accuracy";
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string task;
  std::string model = "ltc";
  std::string solver;
  std::uint64_t unfolds = 6;
  std::uint64_t hidden = 32;
  std::uint64_t batch = 16;
  double lr = 0.01;
  std::uint64_t epochs = 100;
  std::uint64_t bptt = 32;
  std::uint64_t seed = 0;
  std::uint64_t repeats = 5;
  std::uint64_t eval_every = 1;
  std::string test_weights = "best-valid";
  std::string out;
  std::string config_file;
  std::string cache;
  bool offline = false;
  std::uint64_t jobs = 1;

  // Which flags the user actually passed (config precedence).
  CLI::Option* model_opt = nullptr;
  CLI::Option* solver_opt = nullptr;
  CLI::Option* unfolds_opt = nullptr;
  CLI::Option* hidden_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* bptt_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* repeats_opt = nullptr;
  CLI::Option* eval_every_opt = nullptr;
  CLI::Option* test_weights_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
};

// Merge a config file (flat JSON object of strings; an optional "task"
// entry selects the dataset) over the built-in defaults. Mirrors the
// hidden width across the cell/train views when the file pins only one.
// Returns the set of config keys the file pinned.
std::set<std::string> merge_config_file(ConfigMap& map, const std::string& path,
                                        std::string& task_out) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " +
                      e.what());
  }
  if (!doc.is_object()) {
    throw ConfigError("config file " + path + " must be a JSON object");
  }
  std::set<std::string> pinned;
  for (const auto& [key, value] : doc.items()) {
    if (key == "task") {
      task_out = value.get<std::string>();
      continue;
    }
    map[key] = value.is_string() ? value.get<std::string>() : value.dump();
    pinned.insert(key);
  }
  if (pinned.count("cell.hidden_size") && !pinned.count("train.hidden_units")) {
    map["train.hidden_units"] = map["cell.hidden_size"];
  } else if (pinned.count("train.hidden_units") &&
             !pinned.count("cell.hidden_size")) {
    map["cell.hidden_size"] = map["train.hidden_units"];
  }
  return pinned;
}

ConfigMap assemble_train_config(const TrainOpts& o, const TaskSpec& spec,
                                const std::set<std::string>& file_pinned) {
  ConfigMap map = to_config(CellConfig{}, TrainConfig{});
  bool solver_pinned = file_pinned.count("cell.solver") > 0;
  if (!o.config_file.empty()) {
    std::string ignored_task;
    merge_config_file(map, o.config_file, ignored_task);
  }

  auto passed = [](const CLI::Option* opt) { return opt && opt->count() > 0; };
  if (passed(o.model_opt)) map["cell.kind"] = o.model;
  if (passed(o.solver_opt)) {
    map["cell.solver"] = o.solver;
    solver_pinned = true;
  }
  if (passed(o.unfolds_opt)) map["cell.ode_unfolds"] = std::to_string(o.unfolds);
  if (passed(o.hidden_opt)) {
    map["cell.hidden_size"] = std::to_string(o.hidden);
    map["train.hidden_units"] = std::to_string(o.hidden);
  }
  if (passed(o.batch_opt)) map["train.minibatch"] = std::to_string(o.batch);
  if (passed(o.lr_opt)) {
    map["train.learning_rate"] = format_real(o.lr);
    map["train.lr_explicit"] = "true";
  }
  if (passed(o.epochs_opt)) map["train.epochs"] = std::to_string(o.epochs);
  if (passed(o.bptt_opt)) map["train.bptt_len"] = std::to_string(o.bptt);
  if (passed(o.seed_opt)) map["train.seed"] = std::to_string(o.seed);
  if (passed(o.repeats_opt)) map["train.repeats"] = std::to_string(o.repeats);
  if (passed(o.eval_every_opt)) {
    map["train.eval_every"] = std::to_string(o.eval_every);
  }
  if (passed(o.test_weights_opt)) {
    map["train.test_on_final_weights"] =
        o.test_weights == "final" ? "true" : "false";
  }
  if (passed(o.jobs_opt)) map["train.jobs"] = std::to_string(o.jobs);

  // A model change re-selects that kind's default solver unless the file
  // or a flag pinned one explicitly.
  if (!solver_pinned) {
    map["cell.solver"] =
        to_string(default_solver(cell_kind_from_string(map["cell.kind"])));
  }

  // The task, not the flags, owns the I/O dimensions.
  map["cell.input_size"] = std::to_string(spec.input_size);
  map["cell.output_size"] = std::to_string(spec.output_size());
  return map;
}

std::string run_label(const RepeatSummary& summary) {
  std::ostringstream os;
  os << summary.task << " " << summary.model << " " << summary.metric_name
     << ": mean " << format_real(summary.mean) << ", std "
     << format_real(summary.stddev) << " over " << summary.runs.size()
     << " seed(s)";
  return os.str();
}

void write_run_plots(const fs::path& plots_dir, const RepeatSummary& summary,
                     const TrainConfig& train) {
  std::vector<PlotSeries> loss, valid;
  for (std::size_t i = 0; i < summary.runs.size(); ++i) {
    const RunRecord& rec = summary.runs[i];
    PlotSeries ls, vs;
    ls.label = vs.label = "seed " + std::to_string(train.seed + i);
    for (std::size_t e = 0; e < rec.train_loss.size(); ++e) {
      const double epoch = static_cast<double>(e + 1);
      ls.x.push_back(epoch);
      ls.y.push_back(rec.train_loss[e]);
      vs.x.push_back(epoch);
      vs.y.push_back(rec.valid_metric[e]);
    }
    loss.push_back(std::move(ls));
    valid.push_back(std::move(vs));
  }
  write_text_file(plots_dir / "train_loss.svg",
                  line_chart_svg(summary.task + " / " + summary.model +
                                     ": training loss",
                                 "epoch", "loss", loss));
  write_text_file(plots_dir / "valid_metric.svg",
                  line_chart_svg(summary.task + " / " + summary.model +
                                     ": validation " + summary.metric_name,
                                 "epoch", summary.metric_name, valid));
}

int cmd_train(const TrainOpts& o, CliEnv& env) {
  // Resolve the task first (the config file may name it).
  std::string task = o.task;
  std::set<std::string> file_pinned;
  if (!o.config_file.empty()) {
    ConfigMap probe = to_config(CellConfig{}, TrainConfig{});
    std::string file_task;
    file_pinned = merge_config_file(probe, o.config_file, file_task);
    if (task.empty()) task = file_task;
  }
  if (task.empty()) {
    throw ConfigError("no task given: pass --task or put \"task\" in the "
                      "config file");
  }
  const TaskRef ref = parse_task(task);
  const TaskSpec spec = task_spec(ref.name);
  const ConfigMap map = assemble_train_config(o, spec, file_pinned);
  const auto [cell, train] = from_config(map);

  const fs::path out_dir =
      o.out.empty()
          ? fs::path("runs") / (file_safe(task) + "_" + to_string(cell.kind))
          : fs::path(o.out);
  fs::create_directories(out_dir / "plots");
  const fs::path sentinel = out_dir / ".partial";
  write_text_file(sentinel, "run in progress\n");

  nlohmann::json config_doc(map);
  config_doc["task"] = task;
  write_text_file(out_dir / "config.json", config_doc.dump(2) + "\n");

  const auto started = std::chrono::steady_clock::now();
  const TaskData data = prepare_task(load_task_table(ref, env, o.cache,
                                                     o.offline));
  std::vector<CellParams> finals;
  const RepeatSummary summary = repeat_runs(cell, data, train, &finals);

  std::ostringstream log;
  for (std::size_t i = 0; i < summary.runs.size(); ++i) {
    const RunRecord& rec = summary.runs[i];
    const std::uint64_t seed = train.seed + i;
    write_run_csv(rec, (out_dir / ("run_" + std::to_string(seed) + ".csv"))
                           .string());

    CheckpointData ck;
    ck.cell = cell;
    ck.train = train;
    ck.train.seed = seed;
    ck.params = finals[i];
    ck.seed = seed;
    ck.metrics["test_" + summary.metric_name] = rec.test_metric;
    if (rec.best_epoch > 0) {
      ck.metrics["best_valid"] = rec.valid_metric[rec.best_epoch - 1];
    }
    save_checkpoint(ck, (out_dir / ("model_" + std::to_string(seed) + ".ckpt"))
                            .string());

    log << "seed " << seed << ": test_" << summary.metric_name << "="
        << format_real(rec.test_metric) << " best_epoch=" << rec.best_epoch
        << " seconds=" << format_real(rec.seconds) << "\n";
  }
  write_summary_csv(summary, (out_dir / "summary.csv").string());
  write_run_plots(out_dir / "plots", summary, train);

  const double total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  log << run_label(summary) << "\n";
  log << "total_seconds=" << format_real(total_seconds) << "\n";
  write_text_file(out_dir / "log.txt", log.str());

  fs::remove(sentinel);
  *env.out << run_label(summary) << "\n";
  *env.out << "artifacts: " << out_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string task;
  std::string split = "test";
  std::uint64_t batch = 0;  // 0 -> the checkpoint's training minibatch
  std::string summary;
  std::string cache;
  bool offline = false;
};

int cmd_eval(const EvalOpts& o, CliEnv& env) {
  const CheckpointData ck = load_checkpoint(o.checkpoint);
  const TaskRef ref = parse_task(o.task);
  const TaskSpec spec = task_spec(ref.name);
  if (ck.cell.input_size != spec.input_size) {
    throw ConfigError("checkpoint expects input size " +
                      std::to_string(ck.cell.input_size) + " but task \"" +
                      o.task + "\" provides " +
                      std::to_string(spec.input_size) + " features");
  }
  if (ck.cell.output_size != spec.output_size()) {
    throw ConfigError("checkpoint expects output size " +
                      std::to_string(ck.cell.output_size) + " but task \"" +
                      o.task + "\" needs " +
                      std::to_string(spec.output_size()));
  }

  const TaskData data =
      prepare_task(load_task_table(ref, env, o.cache, o.offline));
  const SeriesTable* table = &data.test;
  const std::vector<std::size_t>* windows = &data.test_windows;
  if (o.split == "train") {
    table = &data.train;
    windows = &data.train_windows;
  } else if (o.split == "valid") {
    table = &data.valid;
    windows = &data.valid_windows;
  } else if (o.split != "test") {
    throw ConfigError("unknown split \"" + o.split +
                      "\" (expected train, valid, or test)");
  }

  const std::size_t batch = o.batch ? o.batch : ck.train.minibatch;
  const double value = evaluate(ck.cell, ck.params, *table, *windows, batch);
  const std::string metric = metric_name_for(spec);
  *env.out << metric << " " << o.split << " " << format_real(value) << "\n";

  if (!o.summary.empty()) {
    const bool fresh = !fs::exists(o.summary) || fs::file_size(o.summary) == 0;
    std::ofstream out(o.summary, std::ios::app);
    if (!out) throw DataError("cannot write summary CSV: " + o.summary);
    if (fresh) out << "task,model,metric,mean,std,seeds\n";
    out << o.task << ',' << to_string(ck.cell.kind) << ',' << metric << ','
        << format_real(value) << ",0,1\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOpts {
  std::string mode;  // params | flops | memory (reported columns are shared)
  std::vector<std::string> models;
  std::uint64_t n = 128;
  std::uint64_t k = 8;
  std::int64_t m = -1;  // <0: unset
  std::uint64_t batch = 16;
  std::uint64_t steps = 32;
  std::string out;
};

int cmd_bench(const BenchOpts& o, CliEnv& env) {
  std::vector<BenchRow> rows;
  const std::optional<std::uint64_t> m_flag =
      o.m >= 0 ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(o.m))
               : std::nullopt;
  if (o.models.empty()) {
    // Full table: ct-gru picks up the published m=n convention.
    for (const auto& formula : param_formulas()) {
      const std::optional<std::uint64_t> m =
          formula.kind == "ct-gru" ? (m_flag ? m_flag : std::optional(o.n))
                                   : std::nullopt;
      rows.push_back(bench_row(formula.kind, o.n, o.k, m, o.batch, o.steps));
    }
  } else {
    for (const std::string& model : o.models) {
      rows.push_back(bench_row(model, o.n, o.k, m_flag, o.batch, o.steps));
    }
  }
  *env.out << bench_report(rows);
  if (!o.out.empty()) {
    write_bench_csv(rows, o.out);
    *env.out << "wrote " << o.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

struct DataOpts {
  std::string task;
  std::string out;
  std::uint64_t rows = kSynthRows;
  std::uint64_t seed = kSynthSeed;
  std::string cache;
  bool offline = false;
};

int cmd_data(const DataOpts& o, CliEnv& env) {
  const TaskRef ref = parse_task(o.task);
  const TaskSpec spec = task_spec(ref.name);
  if (ref.synth) {
    const SeriesTable table = synth_fixture(spec, o.seed, o.rows);
    const std::string out =
        o.out.empty() ? file_safe(o.task) + "_fixture.csv" : o.out;
    write_csv(table, out);
    *env.out << out << " (" << table.rows() << " rows)\n";
    return kExitOk;
  }
  Fetcher fetcher(resolve_cache(env, o.cache), o.offline);
  if (env.http) fetcher.set_http(env.http);
  const std::string path = fetcher.ensure_canonical_csv(ref.name);
  const SeriesTable table = load_csv(path, spec);
  *env.out << path << " (" << table.rows() << " rows)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotOpts {
  std::vector<std::string> runs;
  std::string bench_csv;
  std::string out;
};

void load_run_series(const fs::path& csv, const std::string& label,
                     std::vector<PlotSeries>& loss,
                     std::vector<PlotSeries>& valid) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open run CSV: " + csv.string());
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) !=
          std::vector<std::string>{"epoch", "train_loss", "valid_metric"}) {
    throw DataError("not a run CSV (unexpected header): " + csv.string());
  }
  PlotSeries ls, vs;
  ls.label = vs.label = label;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw DataError("malformed row in " + csv.string() + ": " + line);
    }
    const double epoch = std::strtod(fields[0].c_str(), nullptr);
    ls.x.push_back(epoch);
    ls.y.push_back(std::strtod(fields[1].c_str(), nullptr));
    vs.x.push_back(epoch);
    vs.y.push_back(std::strtod(fields[2].c_str(), nullptr));
  }
  loss.push_back(std::move(ls));
  valid.push_back(std::move(vs));
}

int cmd_plot(const PlotOpts& o, CliEnv& env) {
  if (o.runs.empty() && o.bench_csv.empty()) {
    throw ConfigError("nothing to plot: pass --runs and/or --bench");
  }
  fs::create_directories(o.out);
  std::vector<std::string> written;

  if (!o.runs.empty()) {
    std::vector<PlotSeries> loss, valid;
    for (const std::string& dir : o.runs) {
      std::vector<fs::path> csvs;
      for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("run_", 0) == 0 && entry.path().extension() == ".csv") {
          csvs.push_back(entry.path());
        }
      }
      if (csvs.empty()) {
        throw DataError("no run_*.csv files in " + dir);
      }
      std::sort(csvs.begin(), csvs.end());
      for (const fs::path& csv : csvs) {
        const std::string stem = csv.stem().string();
        const std::string label =
            o.runs.size() > 1
                ? fs::path(dir).filename().string() + "/" + stem
                : stem;
        load_run_series(csv, label, loss, valid);
      }
    }
    const fs::path loss_svg = fs::path(o.out) / "train_loss.svg";
    const fs::path valid_svg = fs::path(o.out) / "valid_metric.svg";
    write_text_file(loss_svg,
                    line_chart_svg("training loss", "epoch", "loss", loss));
    write_text_file(valid_svg, line_chart_svg("validation metric", "epoch",
                                              "metric", valid));
    written.push_back(loss_svg.string());
    written.push_back(valid_svg.string());
  }

  if (!o.bench_csv.empty()) {
    std::ifstream in(o.bench_csv);
    if (!in) throw DataError("cannot open bench CSV: " + o.bench_csv);
    std::string line;
    if (!std::getline(in, line) || line.rfind("kind,", 0) != 0) {
      throw DataError("not a bench CSV (unexpected header): " + o.bench_csv);
    }
    std::vector<PlotBar> bars;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() != 9) {
        throw DataError("malformed row in " + o.bench_csv + ": " + line);
      }
      bars.push_back({fields[0], std::strtod(fields[8].c_str(), nullptr)});
    }
    std::stable_sort(bars.begin(), bars.end(),
                     [](const PlotBar& a, const PlotBar& b) {
                       return a.value > b.value;
                     });
    const fs::path bench_svg = fs::path(o.out) / "bench_totals.svg";
    write_text_file(bench_svg,
                    bar_chart_svg("memory totals", "bytes", bars));
    written.push_back(bench_svg.string());
  }

  for (const std::string& path : written) *env.out << "wrote " << path << "\n";
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, CliEnv& env) {
  CLI::App app{"Continuous-time RNN toolkit: LTC-SE cells, baselines, "
               "datasets, and reports",
               "ltcse"};
  app.require_subcommand(1);

  TrainOpts train_opts;
  CLI::App* train = app.add_subcommand("train", "Train a model on a task");
  train->add_option("--task", train_opts.task,
                    "occupancy|har|traffic|power|ozone or synth:<task>");
  train_opts.model_opt =
      train->add_option("--model", train_opts.model,
                        "ltc|ctrnn|node|ctgru|lstm|gru (default ltc)");
  train_opts.solver_opt = train->add_option(
      "--solver", train_opts.solver, "fused|euler|rk4 (default: per model)");
  train_opts.unfolds_opt =
      train->add_option("--unfolds", train_opts.unfolds, "ODE unfolds per step");
  train_opts.hidden_opt =
      train->add_option("--hidden", train_opts.hidden, "hidden units (32)");
  train_opts.batch_opt =
      train->add_option("--batch", train_opts.batch, "minibatch size (16)");
  train_opts.lr_opt =
      train->add_option("--lr", train_opts.lr, "Adam learning rate (0.01)");
  train_opts.epochs_opt =
      train->add_option("--epochs", train_opts.epochs, "training epochs (100)");
  train_opts.bptt_opt =
      train->add_option("--bptt", train_opts.bptt, "BPTT window length (32)");
  train_opts.seed_opt =
      train->add_option("--seed", train_opts.seed, "base seed (0)");
  train_opts.repeats_opt =
      train->add_option("--repeats", train_opts.repeats, "seeds to run (5)");
  train_opts.eval_every_opt = train->add_option(
      "--eval-every", train_opts.eval_every, "epochs between validations (1)");
  train_opts.test_weights_opt =
      train->add_option("--test-weights", train_opts.test_weights,
                        "best-valid|final (default best-valid)")
          ->check(CLI::IsMember({"best-valid", "final"}));
  train->add_option("--out", train_opts.out, "output directory");
  train->add_option("--config", train_opts.config_file,
                    "JSON config file (defaults < file < flags)");
  train->add_option("--cache", train_opts.cache, "dataset cache directory");
  train->add_flag("--offline", train_opts.offline, "never touch the network");
  train_opts.jobs_opt =
      train->add_option("--jobs", train_opts.jobs, "parallel seeds (1)");

  EvalOpts eval_opts;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint on a task split");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "model .ckpt")
      ->required();
  eval_cmd->add_option("--task", eval_opts.task, "task name")->required();
  eval_cmd->add_option("--split", eval_opts.split, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  eval_cmd->add_option("--batch", eval_opts.batch,
                       "evaluation batch (0 = the checkpoint's)");
  eval_cmd->add_option("--summary", eval_opts.summary,
                       "append the result to this summary CSV");
  eval_cmd->add_option("--cache", eval_opts.cache, "dataset cache directory");
  eval_cmd->add_flag("--offline", eval_opts.offline, "never touch the network");

  BenchOpts bench_opts;
  CLI::App* bench =
      app.add_subcommand("bench", "Parameter, FLOP, and memory reports");
  bench->add_option("mode", bench_opts.mode, "params|flops|memory")
      ->required()
      ->check(CLI::IsMember({"params", "flops", "memory"}));
  bench->add_option("--model", bench_opts.models,
                    "table rows: ct-rnn|ode-rnn|lstm|ct-gru|ltc (repeatable; "
                    "default: all)");
  bench->add_option("--n", bench_opts.n, "hidden units (128)");
  bench->add_option("--k", bench_opts.k, "input width (8)");
  bench->add_option("--m", bench_opts.m, "ct-gru m");
  bench->add_option("--batch", bench_opts.batch, "batch for memory rows (16)");
  bench->add_option("--steps", bench_opts.steps, "BPTT window for memory (32)");
  bench->add_option("--out", bench_opts.out, "write rows to this CSV");

  DataOpts data_opts;
  CLI::App* data_cmd =
      app.add_subcommand("data", "Fetch/prepare a dataset or write a fixture");
  data_cmd->add_option("--task", data_opts.task,
                       "task name or synth:<task>")
      ->required();
  data_cmd->add_option("--out", data_opts.out, "fixture output path");
  data_cmd->add_option("--rows", data_opts.rows, "fixture rows (10000)");
  data_cmd->add_option("--seed", data_opts.seed, "fixture seed (0)");
  data_cmd->add_option("--cache", data_opts.cache, "dataset cache directory");
  data_cmd->add_flag("--offline", data_opts.offline,
                     "never touch the network");

  PlotOpts plot_opts;
  CLI::App* plot =
      app.add_subcommand("plot", "Render run curves and bench bars as SVG");
  plot->add_option("--runs", plot_opts.runs, "run directories (repeatable)");
  plot->add_option("--bench", plot_opts.bench_csv, "bench CSV for a bar chart");
  plot->add_option("--out", plot_opts.out, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    *env.out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    *env.out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    *env.err << "ltcse: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(train_opts, env);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts, env);
    if (bench->parsed()) return cmd_bench(bench_opts, env);
    if (data_cmd->parsed()) return cmd_data(data_opts, env);
    if (plot->parsed()) return cmd_plot(plot_opts, env);
    *env.err << "ltcse: no command given\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    *env.err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    *env.err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    *env.err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    *env.err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    *env.err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    *env.err << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

int run_cli(int argc, const char* const* argv) {
  CliEnv env;
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, env);
}

}  // namespace ltcse
