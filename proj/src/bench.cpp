#include "ltcse/bench.hpp"

#include <fstream>

#include "ltcse/data.hpp"

namespace ltcse {

namespace {

// Normalize a row name: "ltc-se" is the printed alias for "ltc", and the
// cell-kind spellings map onto their table rows (gru has none).
std::string row_name(const std::string& kind) {
  if (kind == "ltc-se") return "ltc";
  if (kind == "ctrnn") return "ct-rnn";
  if (kind == "node") return "ode-rnn";
  if (kind == "ctgru") return "ct-gru";
  return kind;
}

CellKind row_cell_kind(const std::string& kind) {
  const std::string k = row_name(kind);
  if (k == "ct-rnn") return CellKind::Ctrnn;
  if (k == "ode-rnn") return CellKind::Node;
  if (k == "lstm") return CellKind::Lstm;
  if (k == "ct-gru") return CellKind::Ctgru;
  if (k == "ltc") return CellKind::Ltc;
  if (k == "gru") return CellKind::Gru;
  throw ConfigError("unknown bench row kind: \"" + kind + "\"");
}

bool has_table_row(const std::string& normalized) {
  return normalized != "gru";
}

// Ops inside one LTC synapse-gate evaluation over E synapses:
// (v-mu), *sigma, sigmoid, *w, erev mul, and two fan-in reductions.
void count_gate_block(std::uint64_t e, StepOps& ops) {
  ops.activations += e;      // sigmoid per synapse
  ops.elementwise += 6 * e;  // sub, mul, mul w, mul erev, two reductions
}

// One LTC right-hand-side (or fused sub-step) evaluation, excluding the
// solver's own combination arithmetic.
StepOps ltc_eval_ops(std::size_t n, std::size_t k) {
  StepOps ops;
  count_gate_block(static_cast<std::uint64_t>(n) * n, ops);  // recurrent
  count_gate_block(static_cast<std::uint64_t>(k) * n, ops);  // sensory
  ops.elementwise += 9 * n;  // cm/gleak terms, numerator/denominator, divide
  return ops;
}

StepOps ctrnn_eval_ops(std::size_t n, std::size_t k, bool leak) {
  StepOps ops;
  ops.macs += static_cast<std::uint64_t>(n) * (n + k);  // w_rec + w_in
  ops.activations += n;
  ops.elementwise += 2 * n;            // matmul merge + bias
  if (leak) ops.elementwise += 2 * n;  // x/tau and the subtraction
  return ops;
}

StepOps scaled(StepOps ops, std::uint64_t factor) {
  return {ops.macs * factor, ops.activations * factor,
          ops.elementwise * factor};
}

StepOps add_ops(StepOps a, const StepOps& b) {
  a.macs += b.macs;
  a.activations += b.activations;
  a.elementwise += b.elementwise;
  return a;
}

std::uint64_t input_mapping_ops(const CellConfig& config) {
  switch (config.input_mapping) {
    case InputMapping::Identity: return 0;
    case InputMapping::Linear: return config.input_size;
    case InputMapping::Affine: return 2 * config.input_size;
  }
  return 0;
}

// Saved doubles per (batch element, step) for one BPTT window; the
// accounting model behind FootprintReport.activation_bytes.
std::uint64_t saved_state_per_step(const CellConfig& config) {
  const std::uint64_t n = config.hidden_size;
  const std::uint64_t k = config.input_size;
  const std::uint64_t u = config.ode_unfolds;
  const std::uint64_t m = config.ctgru_scales;
  switch (config.kind) {
    case CellKind::Lstm:
      return 7 * n;  // h, c, four gates, tanh(c)
    case CellKind::Gru:
      return 5 * n;  // h, z, r, candidate, r*h
    case CellKind::Ctgru:
      return 5 * m * n + n;  // trace, two softmaxes, retrieved, candidate
    case CellKind::Ctrnn:
    case CellKind::Node: {
      // Pre-activation + activation per evaluation; RK4 holds four plus
      // its interior states.
      const std::uint64_t per_unfold =
          config.solver == SolverKind::Rk4 ? 12 * n : 3 * n;
      return n + u * per_unfold;
    }
    case CellKind::Ltc: {
      const std::uint64_t gates = n * n + k * n + 2 * n;  // gates, num, den
      const std::uint64_t evals = config.solver == SolverKind::Rk4 ? 4 : 1;
      return n + u * evals * gates;
    }
  }
  return 0;
}

std::string cell_text(const std::optional<std::uint64_t>& v) {
  return v ? std::to_string(*v) : std::string();
}

}  // namespace

const std::vector<ParamFormula>& param_formulas() {
  static const std::vector<ParamFormula> rows = {
      {"ct-rnn", "O(nk^2)", "n*k^2 + 2*n*k"},
      {"ode-rnn", "O(nk^2)", "n*k^2 + n*k"},
      {"lstm", "O(nk^2)", "4*n*k^2 + 4*n*k"},
      {"ct-gru", "O(mk^2)", "2*m*k^2 + 2*m*k + k^2 + k"},
      {"ltc", "O(nk^2)", "4*n*k^2 + 3*n*k"},
  };
  return rows;
}

std::uint64_t formula_params(const std::string& kind, std::uint64_t n,
                             std::uint64_t k,
                             std::optional<std::uint64_t> m) {
  if (n < 1 || k < 1) throw ConfigError("formula_params: n and k must be >= 1");
  const std::string name = row_name(kind);
  if (name == "ct-rnn") return n * k * k + 2 * n * k;
  if (name == "ode-rnn") return n * k * k + n * k;
  if (name == "lstm") return 4 * n * k * k + 4 * n * k;
  if (name == "ct-gru") {
    if (!m) throw ConfigError("formula_params: ct-gru requires m");
    return 2 * *m * k * k + 2 * *m * k + k * k + k;
  }
  if (name == "ltc") return 4 * n * k * k + 3 * n * k;
  throw ConfigError("unknown bench row kind: \"" + kind + "\"");
}

std::optional<std::uint64_t> table1_printed(const std::string& kind,
                                            std::uint64_t n, std::uint64_t k,
                                            std::optional<std::uint64_t> m) {
  const std::string name = row_name(kind);
  if (n != 128 || k != 8) return std::nullopt;
  if (name == "ct-rnn") return 8320;
  if (name == "ode-rnn") return 8192;
  if (name == "lstm") return 32896;
  if (name == "ct-gru") return (m && *m == 128) ? std::optional<std::uint64_t>(24704)
                                                : std::nullopt;
  if (name == "ltc") return 32896;
  return std::nullopt;
}

ParamBreakdown actual_params(const CellParams& params) {
  ParamBreakdown out;
  for (const auto& [name, tensor] : params.tensors) {
    TensorCount tc;
    tc.name = name;
    tc.shape = tensor.shape();
    tc.count = tensor.size();
    out.total += tc.count;
    out.tensors.push_back(std::move(tc));
  }
  return out;
}

ParamBreakdown actual_params(const CellConfig& config) {
  return actual_params(init_cell_params(config, 0));
}

StepOps step_flops(const CellConfig& config) {
  validate_config(config);
  const std::size_t n = config.hidden_size;
  const std::size_t k = config.input_size;
  const std::uint64_t unfolds = config.ode_unfolds;

  switch (config.kind) {
    case CellKind::Lstm: {
      StepOps ops;
      ops.macs = 4ull * n * (n + k);
      ops.activations = 5ull * n;        // i, f, g, o, tanh(c')
      ops.elementwise = 8ull * n;        // 4 biases + f*c, i*g, sum, o*tanh
      return ops;
    }
    case CellKind::Gru: {
      StepOps ops;
      ops.macs = 3ull * n * (n + k);
      ops.activations = 3ull * n;        // z, r, candidate
      ops.elementwise = 8ull * n;        // 3 biases + r*h + blend (4n)
      return ops;
    }
    case CellKind::Ctgru: {
      const std::uint64_t mn =
          static_cast<std::uint64_t>(config.ctgru_scales) * n;
      StepOps ops;
      ops.macs = 3ull * n * (n + k);     // retrieval, storage, candidate
      ops.activations = 2 * mn + n + config.ctgru_scales;  // softmax exps,
                                                           // tanh, decay exps
      ops.elementwise = 19 * mn + 3ull * n;  // softmax algebra, trace update
      return ops;
    }
    case CellKind::Ctrnn:
    case CellKind::Node: {
      const bool leak = config.kind == CellKind::Ctrnn;
      StepOps eval = ctrnn_eval_ops(n, k, leak);
      StepOps per_unfold;
      if (config.solver == SolverKind::Rk4) {
        per_unfold = scaled(eval, 4);
        per_unfold.elementwise += 13ull * n;  // interior states + combine
      } else {
        per_unfold = eval;
        per_unfold.elementwise += 2ull * n;  // x + h*k
      }
      return scaled(per_unfold, unfolds);
    }
    case CellKind::Ltc: {
      StepOps eval = ltc_eval_ops(n, k);
      eval.elementwise += input_mapping_ops(config);
      StepOps per_unfold;
      if (config.solver == SolverKind::Rk4) {
        per_unfold = scaled(eval, 4);
        per_unfold.elementwise += 13ull * n;
      } else if (config.solver == SolverKind::Euler) {
        per_unfold = eval;
        per_unfold.elementwise += 2ull * n;
      } else {
        per_unfold = eval;  // fused sub-step: the divide is already counted
      }
      return scaled(per_unfold, unfolds);
    }
  }
  throw ConfigError("step_flops: unknown cell kind");
}

FootprintReport memory_footprint(const CellConfig& config, std::size_t batch,
                                 std::size_t steps) {
  validate_config(config);
  FootprintReport report;
  report.kind = config.kind;
  report.config = config;
  const std::uint64_t params = actual_params(config).total;
  report.param_bytes = params * 8;
  report.moment_bytes = 2 * params * 8;
  report.activation_bytes = static_cast<std::uint64_t>(batch) * steps *
                            saved_state_per_step(config) * 8;
  report.total_bytes =
      report.param_bytes + report.moment_bytes + report.activation_bytes;
  return report;
}

BenchRow bench_row(const std::string& kind, std::uint64_t n, std::uint64_t k,
                   std::optional<std::uint64_t> m, std::size_t batch,
                   std::size_t steps) {
  BenchRow row;
  row.kind = row_name(kind);
  row.n = n;
  row.k = k;
  row.m = row.kind == "ct-gru" ? m : std::nullopt;
  if (has_table_row(row.kind)) {
    row.formula_count = formula_params(row.kind, n, k, m);
    row.table1_value = table1_printed(row.kind, n, k, m);
  }
  const CellConfig config =
      make_cell_config(row_cell_kind(kind), n, k, /*output=*/1);
  row.actual_count = actual_params(config).total;
  row.flops_per_step = step_flops(config).total();
  row.total_bytes = memory_footprint(config, batch, steps).total_bytes;
  row.discrepancy = row.table1_value && row.formula_count &&
                    *row.table1_value != *row.formula_count;
  return row;
}

std::vector<BenchRow> table1_rows(std::size_t batch, std::size_t steps) {
  std::vector<BenchRow> rows;
  for (const auto& formula : param_formulas()) {
    const std::optional<std::uint64_t> m =
        formula.kind == "ct-gru" ? std::optional<std::uint64_t>(128)
                                 : std::nullopt;
    rows.push_back(bench_row(formula.kind, 128, 8, m, batch, steps));
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write bench CSV: " + path);
  out << "kind,n,k,m,formula_count,table1_printed,actual_count,"
         "flops_per_step,total_bytes\n";
  for (const auto& r : rows) {
    out << r.kind << ',' << r.n << ',' << r.k << ',' << cell_text(r.m) << ','
        << cell_text(r.formula_count) << ',' << cell_text(r.table1_value)
        << ',' << r.actual_count << ',' << r.flops_per_step << ','
        << r.total_bytes << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

std::string bench_report(const std::vector<BenchRow>& rows) {
  std::string text;
  for (const auto& r : rows) {
    text += r.kind + " n=" + std::to_string(r.n) + " k=" + std::to_string(r.k);
    if (r.m) text += " m=" + std::to_string(*r.m);
    text += ": formula ";
    text += r.formula_count ? std::to_string(*r.formula_count) : "-";
    if (r.table1_value) {
      text += ", printed " + std::to_string(*r.table1_value);
      if (r.discrepancy) text += " (DISCREPANCY)";
    }
    text += ", actual " + std::to_string(r.actual_count);
    text += ", flops/step " + std::to_string(r.flops_per_step);
    text += ", bytes " + std::to_string(r.total_bytes);
    text += '\n';
  }
  return text;
}

}  // namespace ltcse
