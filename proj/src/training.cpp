#include "ltcse/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "ltcse/rng.hpp"

namespace ltcse {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.hidden_units == 0) throw ConfigError("hidden_units must be positive");
  if (cfg.minibatch == 0) throw ConfigError("minibatch must be positive");
  if (cfg.bptt_len == 0) throw ConfigError("bptt_len must be positive");
  if (cfg.eval_every == 0) throw ConfigError("eval_every must be positive");
  if (cfg.repeats == 0) throw ConfigError("repeats must be positive");
  if (!(cfg.learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!cfg.lr_explicit &&
      (cfg.learning_rate < 0.001 || cfg.learning_rate > 0.01)) {
    throw ConfigError(
        "learning_rate " + format_real(cfg.learning_rate) +
        " is outside the sanctioned range [0.001, 0.01]; pass it explicitly "
        "to override");
  }
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
}

AdamState init_adam(const CellParams& params) {
  AdamState state;
  for (const auto& [name, tensor] : params.tensors) {
    state.m[name].assign(tensor.size(), 0.0);
    state.v[name].assign(tensor.size(), 0.0);
  }
  return state;
}

GradBuffers collect_grads(const CellParams& params, const GradientMap& grads) {
  GradBuffers out;
  for (const auto& [name, tensor] : params.tensors) {
    out[name] = grads.grad(tensor).to_vector();
  }
  return out;
}

void adam_step(CellParams& params, const GradBuffers& grads, AdamState& state,
               const TrainConfig& cfg) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto m_it = state.m.find(name);
    auto v_it = state.v.find(name);
    if (m_it == state.m.end() || v_it == state.v.end()) {
      throw ConfigError("optimizer state is missing tensor " + name);
    }
    std::vector<double>& m = m_it->second;
    std::vector<double>& v = v_it->second;
    if (g.size() != p.size() || m.size() != p.size()) {
      throw ConfigError("gradient shape mismatch for tensor " + name);
    }
    std::span<double> values = p.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient in tensor " + name +
                           " at element " + std::to_string(i));
      }
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      values[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss and metrics
// ---------------------------------------------------------------------------

namespace {

struct FlatOutputs {
  std::size_t rows = 0;  // B*T
  std::size_t cols = 0;  // C
};

FlatOutputs check_loss_shapes(const Tensor& outputs, const Tensor& targets) {
  if (outputs.rank() != 3) {
    throw ShapeError("loss expects stacked outputs [B x T x C]");
  }
  const auto& s = outputs.shape();
  if (targets.rank() != 2 || targets.shape()[0] != s[0] ||
      targets.shape()[1] != s[1]) {
    throw ShapeError("loss targets must be [B x T] matching the outputs");
  }
  return {s[0] * s[1], s[2]};
}

}  // namespace

Tensor loss(const Tensor& outputs, const Tensor& targets, TaskKind kind) {
  const FlatOutputs flat = check_loss_shapes(outputs, targets);
  const std::size_t n = flat.rows, C = flat.cols;
  Tensor logits = reshape(outputs, {n, C});

  if (kind == TaskKind::Regression) {
    if (C != 1) throw ShapeError("regression loss expects one output channel");
    Tensor diff = sub(logits, reshape(targets, {n, 1}));
    return mul(reduce_sum(mul(diff, diff)), 1.0 / double(n));
  }

  // Mean softmax cross-entropy, stabilized by subtracting a detached
  // per-row maximum (shift invariance makes the gradient exact).
  std::vector<double> shift_values(n * C);
  std::vector<double> mask_values(n * C, 0.0);
  {
    NoGradGuard ng;
    std::span<const double> lv = logits.data();
    std::span<const double> tv = targets.data();
    for (std::size_t i = 0; i < n; ++i) {
      double row_max = lv[i * C];
      for (std::size_t c = 1; c < C; ++c) row_max = std::max(row_max, lv[i * C + c]);
      for (std::size_t c = 0; c < C; ++c) shift_values[i * C + c] = row_max;
      const double label = tv[i];
      const long long cls = std::llround(label);
      if (cls < 0 || std::size_t(cls) >= C || double(cls) != label) {
        throw DataError("target " + format_real(label) +
                        " is not a class id in [0, " + std::to_string(C) + ")");
      }
      mask_values[i * C + std::size_t(cls)] = 1.0;
    }
  }
  Tensor shifted = sub(logits, Tensor::from_data({n, C}, std::move(shift_values)));
  Tensor log_denom = log(reduce_sum(exp(shifted), 1));  // [n]
  Tensor picked =
      reduce_sum(mul(shifted, Tensor::from_data({n, C}, std::move(mask_values))), 1);
  return mul(reduce_sum(sub(log_denom, picked)), 1.0 / double(n));
}

double metric_value(const Tensor& outputs, const Tensor& targets, TaskKind kind) {
  NoGradGuard ng;
  const FlatOutputs flat = check_loss_shapes(outputs, targets);
  const std::size_t n = flat.rows, C = flat.cols;
  std::span<const double> ov = outputs.data();
  std::span<const double> tv = targets.data();
  if (kind == TaskKind::Regression) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = ov[i] - tv[i];
      sum += d * d;
    }
    return sum / double(n);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (ov[i * C + c] > ov[i * C + arg]) arg = c;
    }
    correct += double(arg) == tv[i];
  }
  return double(correct) / double(n);
}

bool metric_improved(TaskKind kind, double a, double b) {
  return kind == TaskKind::Regression ? a < b : a > b;
}

// ---------------------------------------------------------------------------
// Epochs, runs, repetitions
// ---------------------------------------------------------------------------

double train_epoch(const CellConfig& cell_cfg, CellParams& params, AdamState& adam,
                   const SeriesTable& table, const std::vector<std::size_t>& windows,
                   const TrainConfig& cfg, SplitMix64& shuffle_rng) {
  if (windows.empty()) return kNaN;

  std::vector<std::size_t> order = windows;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[shuffle_rng.below(i)]);
  }

  double weighted_loss = 0.0;
  std::size_t total = 0;
  for (std::size_t begin = 0, index = 0; begin < order.size();
       begin += cfg.minibatch, ++index) {
    const std::size_t end = std::min(begin + cfg.minibatch, order.size());
    const std::vector<std::size_t> chunk(order.begin() + begin, order.begin() + end);
    SequenceBatch batch = make_batch(table, chunk);
    Tensor outputs = sequence_forward(cell_cfg, params, batch.inputs);
    Tensor l = loss(outputs, batch.targets, table.spec.kind);
    const double value = l.scalar_value();
    if (!std::isfinite(value)) {
      throw NumericError("epoch aborted: non-finite loss at minibatch " +
                         std::to_string(index) + " (first window offset " +
                         std::to_string(chunk.front()) + ")");
    }
    GradientMap grads = backward(l);
    GradBuffers buffers = collect_grads(params, grads);
    adam_step(params, buffers, adam, cfg);
    constrain_params(cell_cfg, params);
    weighted_loss += value * double(chunk.size());
    total += chunk.size();
  }
  return weighted_loss / double(total);
}

double evaluate(const CellConfig& cell_cfg, const CellParams& params,
                const SeriesTable& table, const std::vector<std::size_t>& windows,
                std::size_t batch_size) {
  if (windows.empty()) return kNaN;
  if (batch_size == 0) batch_size = windows.size();
  NoGradGuard ng;
  const TaskKind kind = table.spec.kind;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, windows.size());
    const std::vector<std::size_t> chunk(windows.begin() + begin,
                                         windows.begin() + end);
    SequenceBatch batch = make_batch(table, chunk);
    Tensor outputs = sequence_forward(cell_cfg, params, batch.inputs);
    const std::size_t steps = chunk.size() * table.spec.window_len;
    // metric_value averages; re-weight so chunks merge exactly.
    sum += metric_value(outputs, batch.targets, kind) * double(steps);
    count += steps;
  }
  return sum / double(count);
}

namespace {

std::map<std::string, std::vector<double>> snapshot_values(const CellParams& params) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, tensor] : params.tensors) out[name] = tensor.to_vector();
  return out;
}

void restore_values(CellParams& params,
                    const std::map<std::string, std::vector<double>>& snapshot) {
  for (const auto& [name, values] : snapshot) {
    std::span<double> dst = params.at(name).mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

}  // namespace

RunRecord run(const CellConfig& cell_cfg, const TaskData& data,
              const TrainConfig& cfg, std::uint64_t seed,
              CellParams* final_params) {
  validate_config(cell_cfg);
  validate_train_config(cfg);
  const auto start = std::chrono::steady_clock::now();

  CellParams params = init_cell_params(cell_cfg, seed);
  AdamState adam = init_adam(params);
  SplitMix64 shuffle_rng(tensor_seed(seed, "epoch_shuffle"));

  RunRecord rec;
  rec.seed = seed;
  rec.train_loss.reserve(cfg.epochs);
  rec.valid_metric.reserve(cfg.epochs);

  double last_valid = kNaN;
  double best_valid = kNaN;
  std::map<std::string, std::vector<double>> best_snapshot;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double train_loss = train_epoch(cell_cfg, params, adam, data.train,
                                          data.train_windows, cfg, shuffle_rng);
    if (epoch % cfg.eval_every == 0) {
      last_valid = evaluate(cell_cfg, params, data.valid, data.valid_windows,
                            cfg.minibatch);
      if (std::isfinite(last_valid) &&
          (rec.best_epoch == 0 ||
           metric_improved(data.spec.kind, last_valid, best_valid))) {
        best_valid = last_valid;
        rec.best_epoch = epoch;
        best_snapshot = snapshot_values(params);
      }
    }
    rec.train_loss.push_back(train_loss);
    rec.valid_metric.push_back(last_valid);
  }

  if (!cfg.test_on_final_weights && rec.best_epoch != 0) {
    restore_values(params, best_snapshot);
  }
  rec.test_metric =
      evaluate(cell_cfg, params, data.test, data.test_windows, cfg.minibatch);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              start)
                    .count();
  if (final_params) {
    CellParams copy;
    for (const auto& [name, tensor] : params.tensors) {
      copy.tensors.emplace(
          name, Tensor::from_data(tensor.shape(), tensor.to_vector(), true));
    }
    *final_params = std::move(copy);
  }
  return rec;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {kNaN, kNaN};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / double(xs.size() - 1))};
}

RepeatSummary repeat_runs(const CellConfig& cell_cfg, const TaskData& data,
                          const TrainConfig& cfg,
                          std::vector<CellParams>* final_params) {
  validate_train_config(cfg);
  const std::size_t n = cfg.repeats;
  std::vector<RunRecord> runs(n);
  std::vector<CellParams> params(final_params ? n : 0);
  CellParams* params_at = final_params ? params.data() : nullptr;

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      runs[i] = run(cell_cfg, data, cfg, cfg.seed + i,
                    params_at ? &params_at[i] : nullptr);
    }
  } else {
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    workers.reserve(jobs);
    for (std::size_t tid = 0; tid < jobs; ++tid) {
      workers.emplace_back([&, tid] {
        try {
          for (std::size_t i = tid; i < n; i += jobs) {
            runs[i] = run(cell_cfg, data, cfg, cfg.seed + i,
                          params_at ? &params_at[i] : nullptr);
          }
        } catch (...) {
          std::scoped_lock lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (std::thread& worker : workers) worker.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::vector<double> metrics;
  metrics.reserve(n);
  for (const RunRecord& r : runs) metrics.push_back(r.test_metric);
  const auto [mean, stddev] = mean_std(metrics);

  RepeatSummary summary;
  summary.task = data.spec.name;
  summary.model = to_string(cell_cfg.kind);
  summary.metric_name =
      data.spec.kind == TaskKind::Regression ? "mse" : "accuracy";
  summary.mean = mean;
  summary.stddev = stddev;
  summary.runs = std::move(runs);
  if (final_params) *final_params = std::move(params);
  return summary;
}

void write_run_csv(const RunRecord& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,train_loss,valid_metric\n";
  for (std::size_t e = 0; e < rec.train_loss.size(); ++e) {
    out << (e + 1) << ',' << format_real(rec.train_loss[e]) << ','
        << format_real(rec.valid_metric[e]) << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

void write_summary_csv(const RepeatSummary& summary, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "task,model,metric,mean,std,seeds\n";
  out << summary.task << ',' << summary.model << ',' << summary.metric_name << ','
      << format_real(summary.mean) << ',' << format_real(summary.stddev) << ','
      << summary.runs.size() << '\n';
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace ltcse
