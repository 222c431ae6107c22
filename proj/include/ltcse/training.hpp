#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ltcse/cells.hpp"
#include "ltcse/data.hpp"
#include "ltcse/tensor.hpp"

namespace ltcse {

/// Optimization protocol. Defaults are the reference recipe: Adam
/// (beta1 0.9, beta2 0.999), minibatch 16, truncated BPTT over length-32
/// windows, 100 epochs with validation after every epoch, five repetitions.
struct TrainConfig {
  std::size_t hidden_units = 32;
  std::size_t minibatch = 16;
  double learning_rate = 0.01;  // sanctioned range [0.001, 0.01]
  bool lr_explicit = false;     // an explicit flag may leave the range
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t bptt_len = 32;
  std::size_t epochs = 100;
  std::size_t eval_every = 1;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  bool test_on_final_weights = false;  // default: restore best-validation
  std::size_t jobs = 1;                // parallel seeds in repeat_runs

  bool operator==(const TrainConfig&) const = default;
};

/// Throws ConfigError for non-positive sizes, bad betas/epsilon, or a
/// learning rate outside [0.001, 0.01] that was not explicitly flagged.
void validate_train_config(const TrainConfig& cfg);

/// Adam moments keyed by parameter-tensor name, plus the shared step count.
struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  std::uint64_t t = 0;
};

AdamState init_adam(const CellParams& params);

/// Named gradient buffers, one per parameter tensor.
using GradBuffers = std::map<std::string, std::vector<double>>;

/// Collect gradients for every parameter in `params` from a backward pass
/// (zeros for parameters the loss does not reach).
GradBuffers collect_grads(const CellParams& params, const GradientMap& grads);

/// One bias-corrected Adam update, in place. Throws NumericError on a
/// non-finite gradient (naming the tensor); ConfigError on shape mismatch.
void adam_step(CellParams& params, const GradBuffers& grads, AdamState& state,
               const TrainConfig& cfg);

/// Differentiable scalar loss on stacked outputs [B x T x C] against
/// per-step targets [B x T]: mean softmax cross-entropy for
/// classification, mean squared error for regression.
Tensor loss(const Tensor& outputs, const Tensor& targets, TaskKind kind);

/// Scalar quality metric (no autodiff): classification accuracy in [0,1]
/// (higher is better) or regression MSE (lower is better).
double metric_value(const Tensor& outputs, const Tensor& targets, TaskKind kind);

/// True when `a` is a strictly better metric than `b` for the task kind.
bool metric_improved(TaskKind kind, double a, double b);

/// One pass over the training windows in a seed-shuffled order: per
/// minibatch forward (zero initial state) -> backward -> adam_step ->
/// constrain_params. Returns the window-weighted mean train loss.
/// Throws NumericError (with the minibatch position) on non-finite loss.
double train_epoch(const CellConfig& cell_cfg, CellParams& params, AdamState& adam,
                   const SeriesTable& table, const std::vector<std::size_t>& windows,
                   const TrainConfig& cfg, SplitMix64& shuffle_rng);

/// Whole-split metric, batched to bound memory. NaN when no windows.
double evaluate(const CellConfig& cell_cfg, const CellParams& params,
                const SeriesTable& table, const std::vector<std::size_t>& windows,
                std::size_t batch_size);

/// One training run for one seed.
struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<double> train_loss;    // one entry per epoch
  std::vector<double> valid_metric;  // carried forward between evaluations
  double test_metric = 0.0;
  double seconds = 0.0;
  std::size_t best_epoch = 0;  // 1-based; 0 = validation never ran
};

/// Train on `data` with parameters drawn from `seed`; validate every
/// eval_every epochs; test once at the end, on the best-validation
/// parameters unless cfg.test_on_final_weights is set (or validation
/// never produced a usable metric).
RunRecord run(const CellConfig& cell_cfg, const TaskData& data,
              const TrainConfig& cfg, std::uint64_t seed,
              CellParams* final_params = nullptr);

/// Mean and sample standard deviation (n-1; zero when n < 2).
std::pair<double, double> mean_std(const std::vector<double>& xs);

/// Five-seed repetition summary.
struct RepeatSummary {
  std::string task;
  std::string model;
  std::string metric_name;  // "accuracy" or "mse"
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<RunRecord> runs;  // in seed order: cfg.seed .. cfg.seed+repeats-1
};

/// Runs seeds cfg.seed .. cfg.seed + cfg.repeats - 1 (in parallel when
/// cfg.jobs > 1; results are merged in seed order and independent of jobs).
/// When `final_params` is non-null it receives one entry per seed, in seed
/// order: the weights each run's test metric was computed with.
RepeatSummary repeat_runs(const CellConfig& cell_cfg, const TaskData& data,
                          const TrainConfig& cfg,
                          std::vector<CellParams>* final_params = nullptr);

/// Per-run CSV: "epoch,train_loss,valid_metric" then one row per epoch.
void write_run_csv(const RunRecord& rec, const std::string& path);

/// Summary CSV: "task,model,metric,mean,std,seeds" and one data row.
void write_summary_csv(const RepeatSummary& summary, const std::string& path);

}  // namespace ltcse
