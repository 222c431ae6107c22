#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ltcse/data.hpp"
#include "ltcse/rng.hpp"

using namespace ltcse;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ltcse_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  REQUIRE(bool(out));
}

TaskSpec mini_spec() {
  TaskSpec spec;
  spec.name = "mini";
  spec.kind = TaskKind::Regression;
  spec.input_size = 2;
  spec.window_len = 3;
  spec.stride = 2;
  spec.timestamp_column = "t";
  spec.feature_columns = {"a", "b"};
  spec.target_column = "y";
  return spec;
}

SeriesTable mini_table(std::size_t rows) {
  SeriesTable table;
  table.spec = mini_spec();
  for (std::size_t r = 0; r < rows; ++r) {
    table.timestamps.push_back(std::to_string(r));
    table.features.push_back(double(r * 10));
    table.features.push_back(double(r * 10 + 1));
    table.targets.push_back(double(r));
  }
  return table;
}

}  // namespace

TEST_CASE("task specs: five tasks with the documented shapes") {
  auto names = task_names();
  REQUIRE(names == std::vector<std::string>{"occupancy", "har", "traffic", "power",
                                            "ozone"});

  TaskSpec occ = task_spec("occupancy");
  CHECK(occ.kind == TaskKind::BinaryClassification);
  CHECK(occ.input_size == 5);
  CHECK(occ.num_classes == 2);
  CHECK(occ.output_size() == 2);
  CHECK(occ.window_len == 32);
  CHECK(occ.stride == 32);
  CHECK(occ.timestamp_column == "date");
  CHECK(occ.feature_columns[3] == "CO2");
  CHECK(occ.target_column == "Occupancy");

  TaskSpec har = task_spec("har");
  CHECK(har.kind == TaskKind::MultiClassification);
  CHECK(har.input_size == 561);
  CHECK(har.num_classes == 6);
  CHECK(har.output_size() == 6);
  CHECK(har.feature_columns.front() == "f0");
  CHECK(har.feature_columns.back() == "f560");

  TaskSpec traffic = task_spec("traffic");
  CHECK(traffic.kind == TaskKind::Regression);
  CHECK(traffic.input_size == 8);
  CHECK(traffic.output_size() == 1);
  CHECK(traffic.target_column == "traffic_volume");

  TaskSpec power = task_spec("power");
  CHECK(power.kind == TaskKind::Regression);
  CHECK(power.input_size == 6);
  CHECK(power.target_column == "Global_active_power");

  TaskSpec ozone = task_spec("ozone");
  CHECK(ozone.input_size == 72);
  CHECK(ozone.num_classes == 2);
  CHECK(ozone.stride == 1);  // overlapping windows for the small series

  CHECK_THROWS_AS(task_spec("weather"), DataError);
}

TEST_CASE("load_csv: parses by header name, ignoring extra columns") {
  TaskSpec spec = mini_spec();
  auto path = temp_file("basic.csv");
  // Columns deliberately out of schema order, plus an ignored one.
  write_text(path,
             "y,junk,b,t,a\n"
             "10,zzz,0.25,r0,-1.5\n"
             "11,zzz,0.5,r1,2.25\n"
             "12,zzz,0.75,r2,3\n");
  SeriesTable table = load_csv(path.string(), spec);
  REQUIRE(table.rows() == 3);
  CHECK(table.timestamps == std::vector<std::string>{"r0", "r1", "r2"});
  CHECK(table.feature(0, 0) == -1.5);
  CHECK(table.feature(0, 1) == 0.25);
  CHECK(table.feature(2, 0) == 3.0);
  CHECK(table.targets == std::vector<double>{10.0, 11.0, 12.0});
}

TEST_CASE("load_csv: quoted fields may contain commas") {
  TaskSpec spec = mini_spec();
  auto path = temp_file("quoted.csv");
  write_text(path,
             "t,a,b,y\n"
             "\"2015-02-04 17:51,00\",1,2,3\n");
  SeriesTable table = load_csv(path.string(), spec);
  REQUIRE(table.rows() == 1);
  CHECK(table.timestamps[0] == "2015-02-04 17:51,00");
  CHECK(table.feature(0, 1) == 2.0);
}

TEST_CASE("load_csv: forward fill and leading-row drop") {
  TaskSpec spec = mini_spec();
  auto path = temp_file("fill.csv");
  write_text(path,
             "t,a,b,y\n"
             "r0,?,1,5\n"    // incomplete before any complete row: dropped
             "r1,2,3,6\n"    // first complete row
             "r2,?,4,\n"     // a and y filled from r1
             "r3,7,,8\n");   // b filled from r2
  SeriesTable table = load_csv(path.string(), spec);
  REQUIRE(table.rows() == 3);
  CHECK(table.timestamps == std::vector<std::string>{"r1", "r2", "r3"});
  CHECK(table.feature(0, 0) == 2.0);
  CHECK(table.feature(1, 0) == 2.0);  // filled
  CHECK(table.feature(1, 1) == 4.0);
  CHECK(table.feature(2, 1) == 4.0);  // filled
  CHECK(table.targets == std::vector<double>{6.0, 6.0, 8.0});
}

TEST_CASE("load_csv: missing required column is named in the error") {
  TaskSpec spec = task_spec("occupancy");
  auto path = temp_file("missing.csv");
  write_text(path,
             "date,Temperature,Humidity,Light,HumidityRatio,Occupancy\n"
             "r0,21,27,400,0.004,1\n");
  try {
    load_csv(path.string(), spec);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("CO2") != std::string::npos);
  }
}

TEST_CASE("load_csv: unusable files are errors") {
  TaskSpec spec = mini_spec();
  CHECK_THROWS_AS(load_csv("/nonexistent/nope.csv", spec), DataError);

  auto header_only = temp_file("header_only.csv");
  write_text(header_only, "t,a,b,y\n");
  CHECK_THROWS_AS(load_csv(header_only.string(), spec), DataError);

  auto all_missing = temp_file("all_missing.csv");
  write_text(all_missing, "t,a,b,y\nr0,?,?,?\n");
  CHECK_THROWS_AS(load_csv(all_missing.string(), spec), DataError);
}

TEST_CASE("write_csv then load_csv round trips every task schema exactly") {
  for (const std::string& name : task_names()) {
    TaskSpec spec = task_spec(name);
    SeriesTable table = synth_fixture(spec, 7, 64);
    auto path = temp_file("roundtrip_" + name + ".csv");
    write_csv(table, path.string());
    SeriesTable back = load_csv(path.string(), spec);
    REQUIRE(back.rows() == table.rows());
    CHECK(back.timestamps == table.timestamps);
    // %.17g makes double -> text -> double the identity.
    CHECK(back.features == table.features);
    CHECK(back.targets == table.targets);
  }
}

TEST_CASE("window_starts: counts, coverage, and degenerate cases") {
  CHECK(window_starts(100, 32, 32) == std::vector<std::size_t>{0, 32, 64});
  CHECK(window_starts(100, 32, 1).size() == 69);
  CHECK(window_starts(32, 32, 32) == std::vector<std::size_t>{0});
  CHECK(window_starts(31, 32, 32).empty());  // also warns on stderr
  CHECK_THROWS_AS(window_starts(10, 0, 1), DataError);
  CHECK_THROWS_AS(window_starts(10, 4, 0), DataError);

  // stride == T tiles the usable prefix without gaps or overlap.
  auto starts = window_starts(96, 32, 32);
  REQUIRE(starts.size() == 3);
  std::vector<bool> covered(96, false);
  for (std::size_t s : starts) {
    for (std::size_t r = s; r < s + 32; ++r) {
      CHECK(!covered[r]);
      covered[r] = true;
    }
  }
  CHECK(std::count(covered.begin(), covered.end(), true) == 96);
}

TEST_CASE("split: chronological 70/15/15 with no leakage") {
  SeriesTable table;
  table.spec = mini_spec();
  const std::size_t n = 1000;
  for (std::size_t r = 0; r < n; ++r) {
    table.timestamps.push_back(std::to_string(r));
    table.features.insert(table.features.end(), {double(r), double(r)});
    table.targets.push_back(double(r));
  }
  SplitTables s = split(table);
  CHECK(s.train.rows() == 700);
  CHECK(s.valid.rows() == 150);
  CHECK(s.test.rows() == 150);
  CHECK(s.train.targets.front() == 0.0);
  CHECK(s.train.targets.back() == 699.0);
  CHECK(s.valid.targets.front() == 700.0);
  CHECK(s.valid.targets.back() == 849.0);
  CHECK(s.test.targets.front() == 850.0);
  CHECK(s.test.targets.back() == 999.0);

  SeriesTable small = mini_table(10);
  SplitTables ss = split(small);
  CHECK(ss.train.rows() == 7);
  CHECK(ss.valid.rows() == 1);
  CHECK(ss.test.rows() == 2);
}

TEST_CASE("normalizer: train statistics, constant columns, target policy") {
  TaskSpec spec = task_spec("power");  // regression: target is normalized too
  SeriesTable table = synth_fixture(spec, 3, 400);
  // Make one feature column constant.
  for (std::size_t r = 0; r < table.rows(); ++r) {
    table.features[r * spec.input_size + 2] = 42.0;
  }
  Normalizer norm = fit_normalizer(table);

  // Oracle: recompute mean/std with an independent loop.
  for (std::size_t k = 0; k < spec.input_size; ++k) {
    double mean = 0.0;
    for (std::size_t r = 0; r < table.rows(); ++r) mean += table.feature(r, k);
    mean /= double(table.rows());
    double var = 0.0;
    for (std::size_t r = 0; r < table.rows(); ++r) {
      double d = table.feature(r, k) - mean;
      var += d * d;
    }
    CHECK(norm.mean[k] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(norm.std[k] == doctest::Approx(std::sqrt(var / double(table.rows())))
                             .epsilon(1e-12));
  }
  CHECK(norm.std[2] == 0.0);
  CHECK(norm.normalize_target);

  SeriesTable normalized = table;
  apply_normalizer(normalized, norm);
  for (std::size_t k = 0; k < spec.input_size; ++k) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < normalized.rows(); ++r) {
      mean += normalized.feature(r, k);
    }
    mean /= double(normalized.rows());
    for (std::size_t r = 0; r < normalized.rows(); ++r) {
      double d = normalized.feature(r, k) - mean;
      var += d * d;
    }
    CHECK(std::abs(mean) < 1e-10);
    if (k == 2) {
      CHECK(var == 0.0);  // constant column maps to zeros, not NaN
      CHECK(normalized.feature(0, 2) == 0.0);
    } else {
      CHECK(std::sqrt(var / double(normalized.rows())) ==
            doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  double tmean = 0.0;
  for (double t : normalized.targets) tmean += t;
  CHECK(std::abs(tmean / double(normalized.rows())) < 1e-10);

  // Classification targets pass through apply_normalizer untouched.
  TaskSpec occ = task_spec("occupancy");
  SeriesTable cls = synth_fixture(occ, 3, 200);
  std::vector<double> labels = cls.targets;
  Normalizer cnorm = fit_normalizer(cls);
  CHECK(!cnorm.normalize_target);
  apply_normalizer(cls, cnorm);
  CHECK(cls.targets == labels);
}

TEST_CASE("synth fixtures: deterministic, schema-conformant, seed-sensitive") {
  for (const std::string& name : task_names()) {
    TaskSpec spec = task_spec(name);
    SeriesTable a = synth_fixture(spec, 11, 120);
    SeriesTable b = synth_fixture(spec, 11, 120);
    SeriesTable c = synth_fixture(spec, 12, 120);
    REQUIRE(a.rows() == 120);
    CHECK(a.features == b.features);
    CHECK(a.targets == b.targets);
    CHECK(a.features != c.features);
    CHECK(a.timestamps[0] == "0");
    CHECK(a.timestamps[119] == "119");
    REQUIRE(a.features.size() == 120 * spec.input_size);
    if (spec.kind != TaskKind::Regression) {
      for (double t : a.targets) {
        CHECK(t == std::floor(t));
        CHECK(t >= 0.0);
        CHECK(t < double(spec.num_classes));
      }
    }
  }

  // har uses all six classes over a longer draw.
  SeriesTable har = synth_fixture(task_spec("har"), 5, 2000);
  std::set<double> classes(har.targets.begin(), har.targets.end());
  CHECK(classes.size() == 6);

  // label_noise=0 gives a noiseless threshold rule.
  TaskSpec occ = task_spec("occupancy");
  SeriesTable clean = synth_fixture(occ, 9, 300, 0.0);
  SeriesTable noisy = synth_fixture(occ, 9, 300, 0.5);
  CHECK(clean.features == noisy.features);
  CHECK(clean.targets != noisy.targets);
}

// A linear probe must score >= 0.97 on the occupancy fixture: the labels
// are a fixed linear threshold of the features with only 2% flips, so any
// sequence model that fails to reach 0.90 is leaving signal on the table.
TEST_CASE("occupancy fixture is linearly separable up to label noise") {
  TaskSpec spec = task_spec("occupancy");
  SeriesTable table = synth_fixture(spec, 0, 10000);
  const std::size_t n = table.rows(), K = spec.input_size;

  // Full-batch gradient descent on logistic loss.
  std::vector<double> w(K, 0.0);
  double bias = 0.0;
  for (int iter = 0; iter < 400; ++iter) {
    std::vector<double> gw(K, 0.0);
    double gb = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double z = bias;
      for (std::size_t k = 0; k < K; ++k) z += w[k] * table.feature(r, k);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double d = p - table.targets[r];
      for (std::size_t k = 0; k < K; ++k) gw[k] += d * table.feature(r, k);
      gb += d;
    }
    for (std::size_t k = 0; k < K; ++k) w[k] -= 1.0 * gw[k] / double(n);
    bias -= 1.0 * gb / double(n);
  }
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r) {
    double z = bias;
    for (std::size_t k = 0; k < K; ++k) z += w[k] * table.feature(r, k);
    correct += (z > 0.0 ? 1.0 : 0.0) == table.targets[r];
  }
  const double accuracy = double(correct) / double(n);
  CHECK(accuracy >= 0.97);
}

TEST_CASE("make_batch: window layout and bounds") {
  SeriesTable table = mini_table(7);
  auto starts = window_starts(table.rows(), 3, 2);
  REQUIRE(starts == std::vector<std::size_t>{0, 2, 4});
  SequenceBatch batch = make_batch(table, starts);
  CHECK(batch.kind == TaskKind::Regression);
  REQUIRE(batch.inputs.size() == 3);  // T tensors
  for (std::size_t t = 0; t < 3; ++t) {
    REQUIRE(batch.inputs[t].shape() == std::vector<std::size_t>{3, 2});
    for (std::size_t b = 0; b < 3; ++b) {
      const std::size_t row = starts[b] + t;
      CHECK(batch.inputs[t](b, 0) == double(row * 10));
      CHECK(batch.inputs[t](b, 1) == double(row * 10 + 1));
      CHECK(batch.targets(b, t) == double(row));
    }
  }
  CHECK(batch.targets.shape() == std::vector<std::size_t>{3, 3});

  CHECK_THROWS_AS(make_batch(table, {}), DataError);
  CHECK_THROWS_AS(make_batch(table, {5}), DataError);  // 5 + 3 > 7
}

TEST_CASE("prepare_task: splits, normalizes on train stats, and windows") {
  TaskSpec spec = task_spec("occupancy");
  SeriesTable raw = synth_fixture(spec, 4, 1000);
  TaskData data = prepare_task(raw);
  CHECK(data.spec.name == "occupancy");
  CHECK(data.train.rows() == 700);
  CHECK(data.valid.rows() == 150);
  CHECK(data.test.rows() == 150);
  CHECK(data.train_windows.size() == window_starts(700, 32, 32).size());
  CHECK(data.valid_windows.size() == 4);  // (150 - 32) / 32 + 1
  CHECK(data.test_windows.size() == 4);

  // Train features are z-scored with train statistics...
  for (std::size_t k = 0; k < spec.input_size; ++k) {
    double mean = 0.0;
    for (std::size_t r = 0; r < data.train.rows(); ++r) {
      mean += data.train.feature(r, k);
    }
    CHECK(std::abs(mean / double(data.train.rows())) < 1e-10);
  }
  // ...and the same statistics are reused for valid/test, so those splits
  // keep whatever drift they have (their means need not be zero).
  Normalizer refit = fit_normalizer(data.train);
  for (std::size_t k = 0; k < spec.input_size; ++k) {
    CHECK(std::abs(refit.mean[k]) < 1e-10);
    CHECK(refit.std[k] == doctest::Approx(1.0).epsilon(1e-10));
  }
}
