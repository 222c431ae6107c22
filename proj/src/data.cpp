#include "ltcse/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include "ltcse/rng.hpp"

namespace ltcse {

namespace {

std::vector<std::string> numbered_columns(const char* prefix, std::size_t n) {
  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

}  // namespace

TaskSpec task_spec(const std::string& name) {
  TaskSpec s;
  s.name = name;
  if (name == "occupancy") {
    s.kind = TaskKind::BinaryClassification;
    s.input_size = 5;
    s.num_classes = 2;
    s.timestamp_column = "date";
    s.feature_columns = {"Temperature", "Humidity", "Light", "CO2", "HumidityRatio"};
    s.target_column = "Occupancy";
  } else if (name == "har") {
    s.kind = TaskKind::MultiClassification;
    s.input_size = 561;
    s.num_classes = 6;
    s.timestamp_column = "t";
    s.feature_columns = numbered_columns("f", 561);
    s.target_column = "activity";
  } else if (name == "traffic") {
    s.kind = TaskKind::Regression;
    s.input_size = 8;
    s.timestamp_column = "date_time";
    s.feature_columns = {"temp",       "rain_1h", "snow_1h",    "clouds_all",
                         "hour",       "dow",     "is_weekend", "is_holiday"};
    s.target_column = "traffic_volume";
  } else if (name == "power") {
    s.kind = TaskKind::Regression;
    s.input_size = 6;
    s.timestamp_column = "datetime";
    s.feature_columns = {"Global_reactive_power", "Voltage",
                         "Global_intensity",      "Sub_metering_1",
                         "Sub_metering_2",        "Sub_metering_3"};
    s.target_column = "Global_active_power";
  } else if (name == "ozone") {
    s.kind = TaskKind::BinaryClassification;
    s.input_size = 72;
    s.num_classes = 2;
    s.stride = 1;  // overlapping day windows
    s.timestamp_column = "Date";
    s.feature_columns = numbered_columns("o", 72);
    s.target_column = "Class";
  } else {
    throw DataError("unknown task: " + name);
  }
  return s;
}

std::vector<std::string> task_names() {
  return {"occupancy", "har", "traffic", "power", "ozone"};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == delim && !quoted) {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  return out;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

bool parse_double(const std::string& s, double& out) {
  if (s.empty() || s == "?") return false;
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  return end != begin && end && *end == '\0';
}

}  // namespace

SeriesTable load_csv(const std::string& path, const TaskSpec& spec) {
  std::ifstream in(path);
  if (!in) throw DataError(spec.name + ": cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(spec.name + ": empty file " + path);

  std::vector<std::string> header = split_csv_line(line, ',');
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[header[i]] = i;

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = index.find(name);
    return it == index.end() ? std::size_t(-1) : it->second;
  };

  std::vector<std::size_t> feature_idx;
  std::vector<std::string> missing;
  for (const std::string& name : spec.feature_columns) {
    std::size_t idx = column(name);
    if (idx == std::size_t(-1)) missing.push_back(name);
    feature_idx.push_back(idx);
  }
  const std::size_t target_idx = column(spec.target_column);
  if (target_idx == std::size_t(-1)) missing.push_back(spec.target_column);
  const std::size_t ts_idx = column(spec.timestamp_column);
  if (ts_idx == std::size_t(-1)) missing.push_back(spec.timestamp_column);
  if (!missing.empty()) {
    std::string list;
    for (const std::string& name : missing) {
      list += list.empty() ? name : ", " + name;
    }
    throw DataError(spec.name + ": missing required column(s): " + list);
  }

  const std::size_t K = spec.input_size;
  SeriesTable table;
  table.spec = spec;
  std::vector<double> last(K + 1);
  bool have_last = false;

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line, ',');
    auto field = [&](std::size_t idx) -> std::string {
      return idx < fields.size() ? fields[idx] : std::string();
    };
    std::vector<double> row(K + 1);
    bool complete = true;
    for (std::size_t k = 0; k < K; ++k) {
      double v;
      if (parse_double(field(feature_idx[k]), v)) {
        row[k] = v;
      } else if (have_last) {
        row[k] = last[k];  // forward fill
      } else {
        complete = false;
      }
    }
    {
      double v;
      if (parse_double(field(target_idx), v)) {
        row[K] = v;
      } else if (have_last) {
        row[K] = last[K];
      } else {
        complete = false;
      }
    }
    if (!complete) continue;  // leading incomplete rows are dropped
    last = row;
    have_last = true;
    table.timestamps.push_back(field(ts_idx));
    table.features.insert(table.features.end(), row.begin(), row.begin() + K);
    table.targets.push_back(row[K]);
  }
  if (table.rows() == 0) {
    throw DataError(spec.name + ": no usable rows in " + path);
  }
  return table;
}

void write_csv(const SeriesTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(table.spec.name + ": cannot write " + path);
  const TaskSpec& spec = table.spec;
  out << spec.timestamp_column;
  for (const std::string& name : spec.feature_columns) out << ',' << name;
  out << ',' << spec.target_column << '\n';
  const std::size_t K = spec.input_size;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out << table.timestamps[r];
    for (std::size_t k = 0; k < K; ++k) out << ',' << format_real(table.feature(r, k));
    out << ',' << format_real(table.targets[r]) << '\n';
  }
  if (!out) throw DataError(table.spec.name + ": write failed for " + path);
}

// ---------------------------------------------------------------------------
// Normalization, splitting, windowing
// ---------------------------------------------------------------------------

Normalizer fit_normalizer(const SeriesTable& train) {
  const std::size_t K = train.spec.input_size;
  const std::size_t n = train.rows();
  Normalizer norm;
  norm.mean.assign(K, 0.0);
  norm.std.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += train.feature(r, k);
    mean /= double(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = train.feature(r, k) - mean;
      var += d * d;
    }
    norm.mean[k] = mean;
    norm.std[k] = std::sqrt(var / double(n));
  }
  if (train.spec.kind == TaskKind::Regression) {
    norm.normalize_target = true;
    double mean = 0.0;
    for (double t : train.targets) mean += t;
    mean /= double(n);
    double var = 0.0;
    for (double t : train.targets) var += (t - mean) * (t - mean);
    norm.target_mean = mean;
    norm.target_std = std::sqrt(var / double(n));
  }
  return norm;
}

void apply_normalizer(SeriesTable& table, const Normalizer& norm) {
  const std::size_t K = table.spec.input_size;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      double& v = table.features[r * K + k];
      v = norm.std[k] < 1e-12 ? 0.0 : (v - norm.mean[k]) / norm.std[k];
    }
  }
  if (norm.normalize_target) {
    for (double& t : table.targets) {
      t = norm.target_std < 1e-12 ? 0.0 : (t - norm.target_mean) / norm.target_std;
    }
  }
}

namespace {

SeriesTable slice_rows(const SeriesTable& table, std::size_t begin, std::size_t end) {
  const std::size_t K = table.spec.input_size;
  SeriesTable out;
  out.spec = table.spec;
  out.timestamps.assign(table.timestamps.begin() + begin,
                        table.timestamps.begin() + end);
  out.features.assign(table.features.begin() + begin * K,
                      table.features.begin() + end * K);
  out.targets.assign(table.targets.begin() + begin, table.targets.begin() + end);
  return out;
}

}  // namespace

SplitTables split(const SeriesTable& table) {
  const std::size_t n = table.rows();
  const std::size_t n_train = std::size_t(0.7 * double(n));
  const std::size_t n_valid = std::size_t(0.15 * double(n));
  SplitTables s;
  s.train = slice_rows(table, 0, n_train);
  s.valid = slice_rows(table, n_train, n_train + n_valid);
  s.test = slice_rows(table, n_train + n_valid, n);
  return s;
}

std::vector<std::size_t> window_starts(std::size_t rows, std::size_t window_len,
                                       std::size_t stride) {
  std::vector<std::size_t> starts;
  if (window_len == 0 || stride == 0) {
    throw DataError("window_starts: window length and stride must be positive");
  }
  if (window_len > rows) {
    std::cerr << "warning: window length " << window_len << " exceeds " << rows
              << " rows; no windows produced\n";
    return starts;
  }
  for (std::size_t s = 0; s + window_len <= rows; s += stride) starts.push_back(s);
  return starts;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures
// ---------------------------------------------------------------------------

namespace {

// Stationary AR(1) channels with unit marginal variance.
std::vector<double> ar1_features(std::size_t rows, std::size_t K, SplitMix64& rng,
                                 double rho = 0.95) {
  std::vector<double> x(rows * K);
  const double innov = std::sqrt(1.0 - rho * rho);
  for (std::size_t k = 0; k < K; ++k) {
    double v = rng.gaussian();
    x[k] = v;
    for (std::size_t r = 1; r < rows; ++r) {
      v = rho * v + innov * rng.gaussian();
      x[r * K + k] = v;
    }
  }
  return x;
}

std::vector<double> unit_weights(std::size_t K, SplitMix64& rng) {
  std::vector<double> w(K);
  double norm = 0.0;
  for (double& v : w) {
    v = rng.uniform(-1.0, 1.0);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : w) v /= norm;
  return w;
}

}  // namespace

SeriesTable synth_fixture(const TaskSpec& spec, std::uint64_t seed, std::size_t rows,
                          double label_noise) {
  if (rows == 0) throw DataError("synth_fixture: rows must be positive");
  const std::size_t K = spec.input_size;
  SeriesTable table;
  table.spec = spec;
  table.timestamps.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) table.timestamps.push_back(std::to_string(r));
  table.targets.resize(rows);

  SplitMix64 rng(tensor_seed(seed, "fixture_" + spec.name));

  if (spec.name == "har") {
    // Class-prototype segments: strongly separable by construction.
    const std::size_t segment = 25;
    std::vector<double> protos(spec.num_classes * K);
    for (double& v : protos) v = rng.gaussian();
    std::vector<double> noise = ar1_features(rows, K, rng);
    table.features.resize(rows * K);
    std::size_t cls = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (r % segment == 0) cls = rng.below(spec.num_classes);
      for (std::size_t k = 0; k < K; ++k) {
        table.features[r * K + k] = 2.0 * protos[cls * K + k] + noise[r * K + k];
      }
      double label = double(cls);
      if (label_noise > 0.0 && rng.next_double() < label_noise) {
        label = double((cls + 1 + rng.below(spec.num_classes - 1)) % spec.num_classes);
      }
      table.targets[r] = label;
    }
    return table;
  }

  if (spec.name == "traffic") {
    table.features.resize(rows * K);
    std::vector<double> weather = ar1_features(rows, 4, rng);
    std::vector<double> w = unit_weights(K, rng);
    for (std::size_t r = 0; r < rows; ++r) {
      double* f = table.features.data() + r * K;
      f[0] = weather[r * 4 + 0];  // temp
      f[1] = weather[r * 4 + 1];  // rain_1h
      f[2] = weather[r * 4 + 2];  // snow_1h
      f[3] = weather[r * 4 + 3];  // clouds_all
      const std::size_t hour = r % 24, dow = (r / 24) % 7;
      f[4] = double(hour);
      f[5] = double(dow);
      f[6] = dow >= 5 ? 1.0 : 0.0;
      f[7] = rng.next_double() < 0.02 ? 1.0 : 0.0;  // is_holiday
      double target = 0.5;
      for (std::size_t k = 0; k < K; ++k) target += w[k] * f[k];
      table.targets[r] = target + 0.05 * rng.gaussian();
    }
    return table;
  }

  if (spec.name == "power") {
    table.features = ar1_features(rows, K, rng);
    std::vector<double> w = unit_weights(K, rng);
    for (std::size_t r = 0; r < rows; ++r) {
      double target = 0.2;
      for (std::size_t k = 0; k < K; ++k) target += w[k] * table.feature(r, k);
      table.targets[r] = target + 0.05 * rng.gaussian();
    }
    return table;
  }

  // occupancy / ozone: thresholded weighted sum of the current sensors.
  table.features = ar1_features(rows, K, rng);
  std::vector<double> w = unit_weights(K, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double score = 0.0;
    for (std::size_t k = 0; k < K; ++k) score += w[k] * table.feature(r, k);
    double label = score > 0.0 ? 1.0 : 0.0;
    if (label_noise > 0.0 && rng.next_double() < label_noise) label = 1.0 - label;
    table.targets[r] = label;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

SequenceBatch make_batch(const SeriesTable& table,
                         const std::vector<std::size_t>& starts) {
  const std::size_t B = starts.size();
  const std::size_t T = table.spec.window_len;
  const std::size_t K = table.spec.input_size;
  if (B == 0) throw DataError("make_batch: no windows given");
  for (std::size_t s : starts) {
    if (s + T > table.rows()) throw DataError("make_batch: window exceeds table");
  }
  SequenceBatch batch;
  batch.kind = table.spec.kind;
  batch.inputs.reserve(T);
  std::vector<double> tgt(B * T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> step(B * K);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t row = starts[b] + t;
      std::copy_n(table.features.data() + row * K, K, step.data() + b * K);
      tgt[b * T + t] = table.targets[row];
    }
    batch.inputs.push_back(Tensor::from_data({B, K}, std::move(step)));
  }
  batch.targets = Tensor::from_data({B, T}, std::move(tgt));
  return batch;
}

TaskData prepare_task(const SeriesTable& raw) {
  TaskData data;
  data.spec = raw.spec;
  SplitTables s = split(raw);
  Normalizer norm = fit_normalizer(s.train);
  apply_normalizer(s.train, norm);
  apply_normalizer(s.valid, norm);
  apply_normalizer(s.test, norm);
  const std::size_t T = raw.spec.window_len;
  const std::size_t stride = raw.spec.stride;
  data.train_windows = window_starts(s.train.rows(), T, stride);
  data.valid_windows = window_starts(s.valid.rows(), T, stride);
  data.test_windows = window_starts(s.test.rows(), T, stride);
  data.train = std::move(s.train);
  data.valid = std::move(s.valid);
  data.test = std::move(s.test);
  return data;
}

}  // namespace ltcse
