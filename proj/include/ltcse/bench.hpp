#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ltcse/cells.hpp"

namespace ltcse {

/// One row of the published parameter-count table. `expression` is the
/// exact-count formula in the symbols n, k (and m for ct-gru), written in
/// plain ASCII math so an independent evaluator can parse it.
struct ParamFormula {
  std::string kind;        // "ct-rnn", "ode-rnn", "lstm", "ct-gru", "ltc"
  std::string asymptotic;  // "O(nk^2)" or "O(mk^2)"
  std::string expression;  // e.g. "n*k^2 + 2*n*k"
};

/// The five table rows, in printed order.
const std::vector<ParamFormula>& param_formulas();

/// Evaluate the printed formula for one row. `m` is required for ct-gru
/// (ConfigError otherwise) and ignored elsewhere. "ltc-se" is accepted as
/// an alias for "ltc"; unknown kinds throw ConfigError.
std::uint64_t formula_params(const std::string& kind, std::uint64_t n,
                             std::uint64_t k,
                             std::optional<std::uint64_t> m = std::nullopt);

/// The published exact-count column, available only at the dimensions the
/// table states (n=128, k=8, and m=128 for ct-gru). Empty elsewhere. These
/// printed values disagree with the printed formulas for every row; both
/// are always reported side by side and never reconciled.
std::optional<std::uint64_t> table1_printed(const std::string& kind,
                                            std::uint64_t n, std::uint64_t k,
                                            std::optional<std::uint64_t> m);

/// Per-tensor audit of a real parameter set.
struct TensorCount {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t count = 0;  // product of shape
};
struct ParamBreakdown {
  std::vector<TensorCount> tensors;  // canonical (lexicographic) order
  std::size_t total = 0;             // sum of counts
};

/// Count what the implementation actually allocates, tensor by tensor.
ParamBreakdown actual_params(const CellParams& params);
/// Convenience: materialize params for `config` (seed 0) and audit them.
ParamBreakdown actual_params(const CellConfig& config);

/// Analytic per-input-step operation counts. All per-sub-step work is
/// multiplied by ode_unfolds for the continuous kinds (ltc, ctrnn, node),
/// so doubling ode_unfolds doubles every field exactly. Discrete kinds
/// (lstm, gru, ctgru) take one step per input. The readout layer is not
/// included: this audits the cell alone.
struct StepOps {
  std::uint64_t macs = 0;         // multiply-accumulates inside matmuls
  std::uint64_t activations = 0;  // tanh/sigmoid/exp evaluations
  std::uint64_t elementwise = 0;  // adds/muls/divs outside matmuls
  std::uint64_t total() const { return macs + activations + elementwise; }
};
StepOps step_flops(const CellConfig& config);

/// Analytic BPTT memory accounting, from shapes only (never from process
/// measurement, so reports are identical across machines). Doubles are 8
/// bytes; Adam keeps two moment buffers per parameter; activations cover
/// one window of T steps at batch size B.
struct FootprintReport {
  CellKind kind = CellKind::Ltc;
  CellConfig config;
  std::uint64_t param_bytes = 0;
  std::uint64_t moment_bytes = 0;      // 2 * param_bytes
  std::uint64_t activation_bytes = 0;  // B * T * per-step saved state * 8
  std::uint64_t total_bytes = 0;       // always the sum of the three parts
};
FootprintReport memory_footprint(const CellConfig& config, std::size_t batch,
                                 std::size_t steps);

/// One emitted bench row: the formula value and the audited actual count
/// side by side, plus the printed table value where the table states one.
struct BenchRow {
  std::string kind;  // table row name or cell kind
  std::uint64_t n = 0;
  std::uint64_t k = 0;
  std::optional<std::uint64_t> m;                // ct-gru only
  std::optional<std::uint64_t> formula_count;    // empty off the table (gru)
  std::optional<std::uint64_t> table1_value;     // printed column, if known
  std::uint64_t actual_count = 0;
  std::uint64_t flops_per_step = 0;
  std::uint64_t total_bytes = 0;
  bool discrepancy = false;  // table1_value set and != formula_count
};

/// Build one row. Accepts the table row names (ct-rnn, ode-rnn, lstm,
/// ct-gru, ltc/ltc-se) and the cell-kind aliases (ctrnn, node, ctgru,
/// gru); gru has no published formula, so its formula cell stays empty.
/// Hidden width n, input width k; m feeds the ct-gru formula only.
/// batch/steps size the memory column.
BenchRow bench_row(const std::string& kind, std::uint64_t n, std::uint64_t k,
                   std::optional<std::uint64_t> m, std::size_t batch,
                   std::size_t steps);

/// The five table rows at the published dimensions (n=128, k=8, m=128).
std::vector<BenchRow> table1_rows(std::size_t batch, std::size_t steps);

/// CSV: "kind,n,k,m,formula_count,table1_printed,actual_count,
/// flops_per_step,total_bytes". Optional fields print as empty cells.
void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::string& path);

/// Human-readable report; rows whose printed value disagrees with the
/// formula are flagged DISCREPANCY (all five table rows are).
std::string bench_report(const std::vector<BenchRow>& rows);

}  // namespace ltcse
