#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ltcse/cli.hpp"
#include "ltcse/data.hpp"
#include "ltcse/model_io.hpp"

using namespace ltcse;
namespace fs = std::filesystem;

namespace {

struct Capture {
  std::ostringstream out, err;
  CliEnv env;
  Capture() {
    env.out = &out;
    env.err = &err;
    env.http = [](const std::string& url, std::string&, std::string& error) {
      error = "network disabled in tests (" + url + ")";
      return false;
    };
  }
};

fs::path temp_dir() {
  static int counter = 0;
  auto dir = fs::temp_directory_path() /
             ("ltcse_cli_test_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

int run(Capture& cap, std::vector<std::string> args) {
  return run_cli(args, cap.env);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

// Fast flags shared by most training invocations.
std::vector<std::string> quick_train(const std::string& out_dir) {
  return {"train",   "--task", "synth:occupancy", "--model", "gru",
          "--hidden", "8",     "--epochs",        "2",       "--repeats",
          "1",        "--out", out_dir};
}

}  // namespace

TEST_CASE("train writes a complete run manifest") {
  const auto dir = temp_dir();
  const auto out = dir / "run";
  Capture cap;
  const int code = run(cap, {"train", "--task", "synth:occupancy", "--model",
                             "ltc", "--hidden", "8", "--epochs", "2",
                             "--repeats", "1", "--out", out.string()});
  CAPTURE(cap.err.str());
  REQUIRE(code == kExitOk);

  CHECK(fs::exists(out / "config.json"));
  CHECK(fs::exists(out / "run_0.csv"));
  CHECK(fs::exists(out / "summary.csv"));
  CHECK(fs::exists(out / "model_0.ckpt"));
  CHECK(fs::exists(out / "plots" / "train_loss.svg"));
  CHECK(fs::exists(out / "plots" / "valid_metric.svg"));
  CHECK(fs::exists(out / "log.txt"));
  CHECK_FALSE(fs::exists(out / ".partial"));  // completed: sentinel gone

  // Two epochs -> header + two rows.
  CHECK(line_count(out / "run_0.csv") == 3);
  const std::string head = slurp(out / "run_0.csv").substr(0, 29);
  CHECK(head == "epoch,train_loss,valid_metric");

  // config.json records the resolved ConfigMap plus the task.
  const std::string config = slurp(out / "config.json");
  CHECK(config.find("\"task\": \"synth:occupancy\"") != std::string::npos);
  CHECK(config.find("\"cell.kind\": \"ltc\"") != std::string::npos);
  CHECK(config.find("\"cell.input_size\": \"5\"") != std::string::npos);
  CHECK(config.find("\"train.epochs\": \"2\"") != std::string::npos);

  // stdout carries the summary line.
  CHECK(cap.out.str().find("occupancy ltc accuracy") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train rejects the fused solver on non-ltc models") {
  Capture cap;
  const int code = run(cap, {"train", "--task", "synth:occupancy", "--model",
                             "ctrnn", "--solver", "fused"});
  CHECK(code == kExitConfig);
  const std::string err = cap.err.str();
  CHECK(err.find("fused") != std::string::npos);
  CHECK(err.find("ctrnn") != std::string::npos);
}

TEST_CASE("train without cached data in offline mode explains the fix") {
  const auto dir = temp_dir();
  Capture cap;
  cap.env.cache_root = (dir / "cache").string();
  const int code = run(cap, {"train", "--task", "occupancy", "--offline",
                             "--out", (dir / "run").string()});
  CHECK(code == kExitData);
  const std::string err = cap.err.str();
  CHECK(err.find("offline") != std::string::npos);
  CHECK(err.find("occupancy") != std::string::npos);
  CHECK(err.find("manually") != std::string::npos);
  // The aborted run directory keeps its partial marker.
  CHECK(fs::exists(dir / "run" / ".partial"));
  fs::remove_all(dir);
}

TEST_CASE("identical flags and seeds reproduce byte-identical artifacts") {
  const auto dir = temp_dir();
  const auto a = dir / "a";
  const auto b = dir / "b";
  for (const auto& out : {a, b}) {
    Capture cap;
    REQUIRE(run(cap, quick_train(out.string())) == kExitOk);
  }
  for (const char* name :
       {"run_0.csv", "summary.csv", "model_0.ckpt", "config.json"}) {
    CAPTURE(name);
    CHECK(slurp(a / name) == slurp(b / name));
  }
  CHECK(slurp(a / "plots" / "train_loss.svg") ==
        slurp(b / "plots" / "train_loss.svg"));
  CHECK(slurp(a / "plots" / "valid_metric.svg") ==
        slurp(b / "plots" / "valid_metric.svg"));
  fs::remove_all(dir);
}

TEST_CASE("eval reproduces the recorded test metric bitwise") {
  const auto dir = temp_dir();
  const auto out = dir / "run";
  Capture train_cap;
  REQUIRE(run(train_cap, quick_train(out.string())) == kExitOk);

  Capture cap;
  const int code =
      run(cap, {"eval", "--checkpoint", (out / "model_0.ckpt").string(),
                "--task", "synth:occupancy", "--split", "test"});
  REQUIRE(code == kExitOk);

  // stdout: "accuracy test <value>"
  std::istringstream is(cap.out.str());
  std::string metric, split, value_text;
  is >> metric >> split >> value_text;
  CHECK(metric == "accuracy");
  CHECK(split == "test");
  const double printed = std::strtod(value_text.c_str(), nullptr);

  const CheckpointData ck = load_checkpoint((out / "model_0.ckpt").string());
  REQUIRE(ck.metrics.count("test_accuracy") == 1);
  CHECK(printed == ck.metrics.at("test_accuracy"));  // bitwise

  // And the single-seed summary mean agrees exactly.
  std::ifstream summary(out / "summary.csv");
  std::string line;
  std::getline(summary, line);
  std::getline(summary, line);
  const auto fields = split_csv_line(line);
  REQUIRE(fields.size() == 6);
  CHECK(std::strtod(fields[3].c_str(), nullptr) == printed);
  fs::remove_all(dir);
}

TEST_CASE("eval appends to a summary CSV and handles splits") {
  const auto dir = temp_dir();
  const auto out = dir / "run";
  Capture train_cap;
  auto flags = quick_train(out.string());
  flags.insert(flags.end(), {"--epochs", "3"});  // later flag wins in CLI11?
  // Keep it unambiguous: rebuild with 3 epochs.
  flags = {"train", "--task", "synth:occupancy", "--model", "gru",
           "--hidden", "8", "--epochs", "3", "--repeats", "1",
           "--out", out.string()};
  REQUIRE(run(train_cap, flags) == kExitOk);
  const auto ckpt = (out / "model_0.ckpt").string();

  auto eval_value = [&](const std::string& split) {
    Capture cap;
    REQUIRE(run(cap, {"eval", "--checkpoint", ckpt, "--task",
                      "synth:occupancy", "--split", split, "--summary",
                      (dir / "evals.csv").string()}) == kExitOk);
    std::istringstream is(cap.out.str());
    std::string metric, sp, value_text;
    is >> metric >> sp >> value_text;
    return std::strtod(value_text.c_str(), nullptr);
  };
  const double train_acc = eval_value("train");
  const double valid_acc = eval_value("valid");
  // The fixture is stationary, so train accuracy tracks validation.
  CHECK(train_acc >= valid_acc - 0.05);

  // Two appended rows under one header.
  std::ifstream in(dir / "evals.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "task,model,metric,mean,std,seeds");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    REQUIRE(fields.size() == 6);
    CHECK(fields[0] == "synth:occupancy");
    CHECK(fields[1] == "gru");
    CHECK(fields[5] == "1");
    ++rows;
  }
  CHECK(rows == 2);
  fs::remove_all(dir);
}

TEST_CASE("eval rejects a checkpoint/task dimension mismatch") {
  const auto dir = temp_dir();
  const auto out = dir / "run";
  Capture train_cap;
  REQUIRE(run(train_cap, quick_train(out.string())) == kExitOk);

  Capture cap;
  const int code =
      run(cap, {"eval", "--checkpoint", (out / "model_0.ckpt").string(),
                "--task", "synth:ozone"});
  CHECK(code == kExitConfig);
  const std::string err = cap.err.str();
  CHECK(err.find("5") != std::string::npos);    // checkpoint input size
  CHECK(err.find("72") != std::string::npos);   // ozone feature count
  fs::remove_all(dir);
}

TEST_CASE("bench subcommand") {
  SUBCASE("single model row prints both counts") {
    Capture cap;
    REQUIRE(run(cap, {"bench", "params", "--model", "ode-rnn", "--n", "128",
                      "--k", "8"}) == kExitOk);
    const std::string out = cap.out.str();
    CHECK(out.find("9216") != std::string::npos);
    CHECK(out.find("8192") != std::string::npos);
    CHECK(out.find("DISCREPANCY") != std::string::npos);
  }
  SUBCASE("memory rows for lstm and gru come out in flag order") {
    const auto dir = temp_dir();
    const auto csv = (dir / "bench.csv").string();
    Capture cap;
    REQUIRE(run(cap, {"bench", "memory", "--model", "lstm", "--model", "gru",
                      "--n", "32", "--k", "8", "--out", csv}) == kExitOk);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    std::getline(in, line);
    const auto lstm_row = split_csv_line(line);
    std::getline(in, line);
    const auto gru_row = split_csv_line(line);
    CHECK(lstm_row[0] == "lstm");
    CHECK(gru_row[0] == "gru");
    CHECK(std::strtoull(lstm_row[8].c_str(), nullptr, 10) >
          std::strtoull(gru_row[8].c_str(), nullptr, 10));
    fs::remove_all(dir);
  }
  SUBCASE("ct-gru without --m is a config error") {
    Capture cap;
    CHECK(run(cap, {"bench", "params", "--model", "ct-gru", "--n", "64",
                    "--k", "8"}) == kExitConfig);
    CHECK(cap.err.str().find("requires m") != std::string::npos);
  }
  SUBCASE("default run covers all five table rows") {
    Capture cap;
    REQUIRE(run(cap, {"bench", "params"}) == kExitOk);
    const std::string out = cap.out.str();
    for (const char* kind : {"ct-rnn", "ode-rnn", "lstm", "ct-gru", "ltc"}) {
      CHECK(out.find(kind) != std::string::npos);
    }
  }
}

TEST_CASE("data subcommand") {
  SUBCASE("synthetic fixture is written and loadable") {
    const auto dir = temp_dir();
    const auto csv = (dir / "fixture.csv").string();
    Capture cap;
    REQUIRE(run(cap, {"data", "--task", "synth:traffic", "--rows", "200",
                      "--out", csv}) == kExitOk);
    const SeriesTable table = load_csv(csv, task_spec("traffic"));
    CHECK(table.rows() == 200);
    fs::remove_all(dir);
  }
  SUBCASE("real task offline without cache fails with instructions") {
    const auto dir = temp_dir();
    Capture cap;
    cap.env.cache_root = dir.string();
    CHECK(run(cap, {"data", "--task", "power", "--offline"}) == kExitData);
    CHECK(cap.err.str().find("power") != std::string::npos);
    fs::remove_all(dir);
  }
  SUBCASE("unknown task is a data error") {
    Capture cap;
    CHECK(run(cap, {"data", "--task", "weather"}) == kExitData);
  }
}

TEST_CASE("offline mode never touches the network when data is cached") {
  const auto dir = temp_dir();
  const auto cache = dir / "cache";
  fs::create_directories(cache);
  // Seed the cache with a canonical CSV (the fixture shares the schema).
  const SeriesTable table = synth_fixture(task_spec("occupancy"), 1, 400);
  write_csv(table, (cache / "occupancy.csv").string());

  Capture cap;
  cap.env.cache_root = cache.string();
  bool touched = false;
  cap.env.http = [&](const std::string&, std::string&, std::string& error) {
    touched = true;
    error = "network guard tripped";
    return false;
  };
  const int code =
      run(cap, {"train", "--task", "occupancy", "--offline", "--model", "gru",
                "--hidden", "4", "--epochs", "1", "--repeats", "1", "--out",
                (dir / "run").string()});
  CAPTURE(cap.err.str());
  CHECK(code == kExitOk);
  CHECK_FALSE(touched);
  fs::remove_all(dir);
}

TEST_CASE("plot subcommand") {
  const auto dir = temp_dir();
  const auto out = dir / "run";
  Capture train_cap;
  REQUIRE(run(train_cap, quick_train(out.string())) == kExitOk);

  SUBCASE("one run directory yields deterministic SVGs") {
    const auto plots1 = dir / "p1";
    const auto plots2 = dir / "p2";
    for (const auto& p : {plots1, plots2}) {
      Capture cap;
      REQUIRE(run(cap, {"plot", "--runs", out.string(), "--out",
                        p.string()}) == kExitOk);
    }
    const std::string svg = slurp(plots1 / "train_loss.svg");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("run_0") != std::string::npos);  // series label
    CHECK(svg == slurp(plots2 / "train_loss.svg"));
    CHECK(slurp(plots1 / "valid_metric.svg") ==
          slurp(plots2 / "valid_metric.svg"));
  }
  SUBCASE("bench bar chart orders bars by descending totals") {
    const auto bench_csv = dir / "bench.csv";
    {
      std::ofstream f(bench_csv);
      f << "kind,n,k,m,formula_count,table1_printed,actual_count,"
           "flops_per_step,total_bytes\n";
      f << "small,8,4,,10,,10,10,100\n";
      f << "big,8,4,,10,,10,10,90000\n";
      f << "mid,8,4,,10,,10,10,5000\n";
    }
    Capture cap;
    REQUIRE(run(cap, {"plot", "--bench", bench_csv.string(), "--out",
                      (dir / "pb").string()}) == kExitOk);
    const std::string svg = slurp(dir / "pb" / "bench_totals.svg");
    const auto pos_big = svg.find(">big<");
    const auto pos_mid = svg.find(">mid<");
    const auto pos_small = svg.find(">small<");
    REQUIRE(pos_big != std::string::npos);
    REQUIRE(pos_mid != std::string::npos);
    REQUIRE(pos_small != std::string::npos);
    CHECK(pos_big < pos_mid);
    CHECK(pos_mid < pos_small);
  }
  SUBCASE("plot with nothing to do is a config error") {
    Capture cap;
    CHECK(run(cap, {"plot", "--out", (dir / "px").string()}) == kExitConfig);
  }
  fs::remove_all(dir);
}

TEST_CASE("config file precedence: defaults < file < flags") {
  const auto dir = temp_dir();
  const auto config = dir / "config.json";
  {
    std::ofstream f(config);
    f << R"({"task": "synth:occupancy", "cell.kind": "gru",)"
      << R"( "cell.hidden_size": "8", "train.epochs": "3",)"
      << R"( "train.repeats": "1"})";
  }

  SUBCASE("file alone") {
    const auto out = dir / "file_only";
    Capture cap;
    REQUIRE(run(cap, {"train", "--config", config.string(), "--out",
                      out.string()}) == kExitOk);
    CHECK(line_count(out / "run_0.csv") == 4);  // header + 3 epochs
    const CheckpointData ck =
        load_checkpoint((out / "model_0.ckpt").string());
    CHECK(ck.cell.kind == CellKind::Gru);
    CHECK(ck.cell.hidden_size == 8);
    fs::remove_all(out);
  }
  SUBCASE("flags override the file") {
    const auto out = dir / "flagged";
    Capture cap;
    REQUIRE(run(cap, {"train", "--config", config.string(), "--epochs", "2",
                      "--model", "lstm", "--out", out.string()}) == kExitOk);
    CHECK(line_count(out / "run_0.csv") == 3);  // header + 2 epochs
    const CheckpointData ck =
        load_checkpoint((out / "model_0.ckpt").string());
    CHECK(ck.cell.kind == CellKind::Lstm);
    CHECK(ck.cell.hidden_size == 8);  // still from the file
    fs::remove_all(out);
  }
  SUBCASE("unknown keys in the file are rejected by name") {
    const auto bad = dir / "bad.json";
    {
      std::ofstream f(bad);
      f << R"({"task": "synth:occupancy", "dropout": "0.5"})";
    }
    Capture cap;
    CHECK(run(cap, {"train", "--config", bad.string(), "--out",
                    (dir / "bad_run").string()}) == kExitConfig);
    CHECK(cap.err.str().find("dropout") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("flag and dispatch errors never escape as exceptions") {
  Capture cap;
  CHECK(run(cap, {}) == kExitConfig);                       // no subcommand
  CHECK(run(cap, {"frobnicate"}) == kExitConfig);           // unknown command
  CHECK(run(cap, {"train"}) == kExitConfig);                // no task
  CHECK(run(cap, {"train", "--task", "synth:occupancy", "--model",
                  "transformer"}) == kExitConfig);          // unknown model
  CHECK(run(cap, {"train", "--task", "nosuch"}) == kExitData);
  CHECK(run(cap, {"eval", "--checkpoint", "/nonexistent.ckpt", "--task",
                  "synth:occupancy"}) == kExitData);
  CHECK(run(cap, {"eval", "--checkpoint", "x.ckpt", "--task",
                  "synth:occupancy", "--split", "half"}) == kExitConfig);
  CHECK(run(cap, {"bench", "nonsense"}) == kExitConfig);
  CHECK(run(cap, {"train", "--task", "synth:occupancy", "--lr", "0",
                  "--out", "/tmp/ltcse_lr0"}) == kExitConfig);

  Capture help_cap;
  CHECK(run(help_cap, {"--help"}) == kExitOk);
  CHECK(help_cap.out.str().find("train") != std::string::npos);
}
