#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltcse/tensor.hpp"

namespace ltcse {

/// Dataset files or their contents are unusable (missing columns, empty
/// files, malformed rows, integrity failures).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { BinaryClassification, MultiClassification, Regression };

/// Schema and windowing policy for one of the five tasks.
struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::BinaryClassification;
  std::size_t input_size = 0;
  std::size_t num_classes = 0;  // 0 for regression
  std::size_t window_len = 32;
  std::size_t stride = 32;
  std::string timestamp_column;
  std::vector<std::string> feature_columns;
  std::string target_column;

  /// Readout width: class count for classification, 1 for regression.
  std::size_t output_size() const {
    return kind == TaskKind::Regression ? 1 : num_classes;
  }
};

/// The five task schemas by name: occupancy, har, traffic, power, ozone.
TaskSpec task_spec(const std::string& name);
std::vector<std::string> task_names();

/// Split one CSV line on `delim`, honoring double quotes and dropping '\r'.
std::vector<std::string> split_csv_line(const std::string& line, char delim = ',');

/// "%.17g" formatting: doubles survive a text round trip bit-exactly.
std::string format_real(double v);

/// A cleaned, typed time series: rows in chronological order, features
/// row-major [rows x K], one target per row.
struct SeriesTable {
  TaskSpec spec;
  std::vector<std::string> timestamps;
  std::vector<double> features;  // rows * K, row-major
  std::vector<double> targets;

  std::size_t rows() const { return targets.size(); }
  double feature(std::size_t r, std::size_t k) const {
    return features[r * spec.input_size + k];
  }
};

/// Parse a canonical task CSV. Required columns are located by header
/// name (extra columns ignored); missing values ('?' or empty) are
/// forward-filled, and rows before the first complete row are dropped.
SeriesTable load_csv(const std::string& path, const TaskSpec& spec);

/// Write a table back out in the canonical schema (17-significant-digit
/// reals, so numeric round trips are exact).
void write_csv(const SeriesTable& table, const std::string& path);

/// Per-feature z-score statistics fitted on the training split only.
/// Regression targets are normalized with their own train statistics;
/// classification targets pass through.
struct Normalizer {
  std::vector<double> mean, std;
  bool normalize_target = false;
  double target_mean = 0.0, target_std = 1.0;
};

Normalizer fit_normalizer(const SeriesTable& train);
void apply_normalizer(SeriesTable& table, const Normalizer& norm);

/// Chronological 70/15/15 split on raw rows, before any windowing.
struct SplitTables {
  SeriesTable train, valid, test;
};
SplitTables split(const SeriesTable& table);

/// Start offsets 0, stride, 2*stride, ... of complete windows; trailing
/// remainder dropped. Empty (with a stderr warning) when T exceeds rows.
std::vector<std::size_t> window_starts(std::size_t rows, std::size_t window_len,
                                       std::size_t stride);

/// Deterministic synthetic stand-in matching a task's schema: AR(1)
/// feature channels, and a target that is a (thresholded or affine)
/// function of the current features. `label_noise` is the fraction of
/// classification labels flipped (seeded); pass 0 for a noiseless table.
SeriesTable synth_fixture(const TaskSpec& spec, std::uint64_t seed, std::size_t rows,
                          double label_noise = 0.02);

/// One minibatch of windows: T input tensors [B x K] plus per-step
/// targets [B x T] (class ids or real values).
struct SequenceBatch {
  std::vector<Tensor> inputs;
  Tensor targets;
  TaskKind kind = TaskKind::BinaryClassification;
};

/// Assemble a batch from the windows whose start offsets are given.
SequenceBatch make_batch(const SeriesTable& table,
                         const std::vector<std::size_t>& starts);

/// A task ready for training: normalized splits and their window offsets.
struct TaskData {
  TaskSpec spec;
  SeriesTable train, valid, test;
  std::vector<std::size_t> train_windows, valid_windows, test_windows;
};

/// split -> fit/apply normalizer -> window each split.
TaskData prepare_task(const SeriesTable& raw);

}  // namespace ltcse
