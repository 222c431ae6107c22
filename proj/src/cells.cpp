#include "ltcse/cells.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ltcse/rng.hpp"

namespace ltcse {

// ---------------------------------------------------------------------------
// Enum vocabulary
// ---------------------------------------------------------------------------

const char* to_string(CellKind k) {
  switch (k) {
    case CellKind::Ltc: return "ltc";
    case CellKind::Ctrnn: return "ctrnn";
    case CellKind::Node: return "node";
    case CellKind::Ctgru: return "ctgru";
    case CellKind::Lstm: return "lstm";
    case CellKind::Gru: return "gru";
  }
  return "?";
}

const char* to_string(InputMapping m) {
  switch (m) {
    case InputMapping::Identity: return "identity";
    case InputMapping::Linear: return "linear";
    case InputMapping::Affine: return "affine";
  }
  return "?";
}

const char* to_string(SolverKind s) {
  switch (s) {
    case SolverKind::Fused: return "fused";
    case SolverKind::Euler: return "euler";
    case SolverKind::Rk4: return "rk4";
  }
  return "?";
}

CellKind cell_kind_from_string(const std::string& s) {
  if (s == "ltc") return CellKind::Ltc;
  if (s == "ctrnn") return CellKind::Ctrnn;
  if (s == "node") return CellKind::Node;
  if (s == "ctgru") return CellKind::Ctgru;
  if (s == "lstm") return CellKind::Lstm;
  if (s == "gru") return CellKind::Gru;
  throw ConfigError("unknown cell kind: " + s);
}

InputMapping input_mapping_from_string(const std::string& s) {
  if (s == "identity") return InputMapping::Identity;
  if (s == "linear") return InputMapping::Linear;
  if (s == "affine") return InputMapping::Affine;
  throw ConfigError("unknown input mapping: " + s);
}

SolverKind solver_from_string(const std::string& s) {
  if (s == "fused") return SolverKind::Fused;
  if (s == "euler") return SolverKind::Euler;
  if (s == "rk4") return SolverKind::Rk4;
  throw ConfigError("unknown solver: " + s);
}

SolverKind default_solver(CellKind kind) {
  switch (kind) {
    case CellKind::Ltc: return SolverKind::Fused;
    case CellKind::Node: return SolverKind::Rk4;
    default: return SolverKind::Euler;
  }
}

CellConfig make_cell_config(CellKind kind, std::size_t hidden, std::size_t input,
                            std::size_t output) {
  CellConfig c;
  c.kind = kind;
  c.hidden_size = hidden;
  c.input_size = input;
  c.output_size = output;
  c.solver = default_solver(kind);
  return c;
}

void validate_config(const CellConfig& config) {
  if (config.hidden_size == 0) throw ConfigError("hidden_size must be positive");
  if (config.input_size == 0) throw ConfigError("input_size must be positive");
  if (config.output_size == 0) throw ConfigError("output_size must be positive");
  if (config.ode_unfolds == 0) throw ConfigError("ode_unfolds must be positive");
  if (config.solver == SolverKind::Fused && config.kind != CellKind::Ltc) {
    throw ConfigError(std::string("the fused solver is only valid for the ltc cell "
                                  "(got kind=") +
                      to_string(config.kind) + ", solver=fused)");
  }
  if (config.kind == CellKind::Ctgru) {
    if (config.ctgru_scales == 0) throw ConfigError("ctgru_scales must be positive");
    if (config.tau_min <= 0.0) throw ConfigError("tau_min must be positive");
    if (config.scale_ratio <= 1.0) throw ConfigError("scale_ratio must exceed 1");
  }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

Tensor& CellParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("unknown parameter tensor: " + name);
  return it->second;
}

const Tensor& CellParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("unknown parameter tensor: " + name);
  return it->second;
}

std::size_t CellParams::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

namespace {

Tensor draw_uniform(std::vector<std::size_t> shape, double lo, double hi,
                    std::uint64_t seed, const std::string& name) {
  SplitMix64 rng(tensor_seed(seed, name));
  return Tensor::uniform(std::move(shape), lo, hi, rng, /*requires_grad=*/true);
}

Tensor draw_sign(std::vector<std::size_t> shape, std::uint64_t seed,
                 const std::string& name) {
  SplitMix64 rng(tensor_seed(seed, name));
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.sign();
  return Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

Tensor draw_glorot(std::vector<std::size_t> shape, std::uint64_t seed,
                   const std::string& name) {
  const double a = std::sqrt(6.0 / double(shape[0] + shape[1]));
  return draw_uniform(std::move(shape), -a, a, seed, name);
}

// Readout [(N+1) x out]: glorot rows for the state, zero bias row.
Tensor draw_readout(std::size_t n, std::size_t out, std::uint64_t seed) {
  const double a = std::sqrt(6.0 / double(n + out));
  SplitMix64 rng(tensor_seed(seed, "readout"));
  std::vector<double> v((n + 1) * out, 0.0);
  for (std::size_t i = 0; i < n * out; ++i) v[i] = rng.uniform(-a, a);
  return Tensor::from_data({n + 1, out}, std::move(v), /*requires_grad=*/true);
}

Tensor const_param(std::vector<std::size_t> shape, double value) {
  return Tensor::full(std::move(shape), value, /*requires_grad=*/true);
}

void clamp_values(Tensor& t, double lo, double hi) {
  for (double& v : t.mutable_data()) v = std::clamp(v, lo, hi);
}

}  // namespace

CellParams init_cell_params(const CellConfig& config, std::uint64_t seed) {
  validate_config(config);
  const std::size_t N = config.hidden_size;
  const std::size_t K = config.input_size;
  const std::size_t out = config.output_size;
  CellParams p;
  auto& t = p.tensors;
  switch (config.kind) {
    case CellKind::Ltc:
      t["w"] = draw_uniform({N, N}, 0.001, 1.0, seed, "w");
      t["erev"] = draw_sign({N, N}, seed, "erev");
      t["mu"] = draw_uniform({N, N}, 0.3, 0.8, seed, "mu");
      t["sigma"] = draw_uniform({N, N}, 3.0, 8.0, seed, "sigma");
      t["sensory_w"] = draw_uniform({K, N}, 0.001, 1.0, seed, "sensory_w");
      t["sensory_erev"] = draw_sign({K, N}, seed, "sensory_erev");
      t["sensory_mu"] = draw_uniform({K, N}, 0.3, 0.8, seed, "sensory_mu");
      t["sensory_sigma"] = draw_uniform({K, N}, 3.0, 8.0, seed, "sensory_sigma");
      t["gleak"] = const_param({N}, 1.0);
      t["vleak"] = draw_uniform({N}, -0.2, 0.2, seed, "vleak");
      t["cm"] = draw_uniform({N}, 0.4, 0.6, seed, "cm");
      t["input_w"] = const_param({K}, 1.0);
      t["input_b"] = const_param({K}, 0.0);
      break;
    case CellKind::Ctrnn:
      t["tau"] = const_param({N}, 1.0);
      [[fallthrough]];
    case CellKind::Node:
      t["w_rec"] = draw_glorot({N, N}, seed, "w_rec");
      t["w_in"] = draw_glorot({K, N}, seed, "w_in");
      t["bias"] = const_param({N}, 0.0);
      break;
    case CellKind::Lstm:
      t["gates_w"] = draw_glorot({K + N, 4 * N}, seed, "gates_w");
      t["gates_b"] = const_param({4 * N}, 0.0);
      break;
    case CellKind::Gru:
      t["gates_w"] = draw_glorot({K + N, 2 * N}, seed, "gates_w");
      t["gates_b"] = const_param({2 * N}, 0.0);
      t["cand_w"] = draw_glorot({K + N, N}, seed, "cand_w");
      t["cand_b"] = const_param({N}, 0.0);
      break;
    case CellKind::Ctgru:
      t["retrieval_w"] = draw_glorot({K + N, N}, seed, "retrieval_w");
      t["retrieval_b"] = const_param({N}, 0.0);
      t["storage_w"] = draw_glorot({K + N, N}, seed, "storage_w");
      t["storage_b"] = const_param({N}, 0.0);
      t["cand_w"] = draw_glorot({K + N, N}, seed, "cand_w");
      t["cand_b"] = const_param({N}, 0.0);
      break;
  }
  t["readout"] = draw_readout(N, out, seed);
  return p;
}

CellState zero_state(const CellConfig& config, std::size_t batch) {
  const std::size_t N = config.hidden_size;
  CellState s;
  switch (config.kind) {
    case CellKind::Ctgru:
      s.primary = Tensor::zeros({batch, config.ctgru_scales * N});
      break;
    case CellKind::Lstm:
      s.primary = Tensor::zeros({batch, N});
      s.secondary = Tensor::zeros({batch, N});
      break;
    default:
      s.primary = Tensor::zeros({batch, N});
      break;
  }
  return s;
}

std::pair<CellParams, CellState> init_cell(const CellConfig& config,
                                           std::uint64_t seed) {
  return {init_cell_params(config, seed), zero_state(config, 1)};
}

void constrain_params(const CellConfig& config, CellParams& params) {
  const double kInf = std::numeric_limits<double>::infinity();
  switch (config.kind) {
    case CellKind::Ltc:
      clamp_values(params.at("w"), 0.0, kInf);
      clamp_values(params.at("sensory_w"), 0.0, kInf);
      clamp_values(params.at("cm"), 1e-6, 1e3);
      clamp_values(params.at("gleak"), 1e-5, 1e3);
      clamp_values(params.at("sigma"), 1e-5, 1e3);
      clamp_values(params.at("sensory_sigma"), 1e-5, 1e3);
      break;
    case CellKind::Ctrnn:
      clamp_values(params.at("tau"), 1e-5, 1e3);
      break;
    default:
      break;
  }
}

// ---------------------------------------------------------------------------
// Input mapping and synapse gate
// ---------------------------------------------------------------------------

Tensor map_input(const Tensor& u, InputMapping mapping, const Tensor& input_w,
                 const Tensor& input_b) {
  if (mapping == InputMapping::Identity) return u;
  Tensor scaled = mul(u, broadcast_rows(input_w, u.rows()));
  if (mapping == InputMapping::Linear) return scaled;
  return add(scaled, broadcast_rows(input_b, u.rows()));
}

Tensor synapse_gate(const Tensor& v_pre, const Tensor& mu, const Tensor& sigma) {
  return sigmoid(mul(sigma, sub(v_pre, mu)));
}

// ---------------------------------------------------------------------------
// LTC dynamics
//
// Synapses are laid out pre-major: the flat column index of synapse
// (pre i, post j) is i*N + j, matching the row-major flattening of the
// [N x N] weight tensors. repeat_cols(v, N) places v[b, i] at exactly
// those columns, and block_sum(x, N) sums over i for each post-neuron j,
// so the whole step costs O(B*N^2).
// ---------------------------------------------------------------------------

namespace {

struct LtcCtx {
  std::size_t N = 0, K = 0, B = 0;
  Tensor wB, erevB, muB, sigB;      // [B x N*N]
  Tensor swB, serevB, smuB, ssigB;  // [B x K*N]
  Tensor cmB, gleakB, vleakB;       // [B x N]
};

LtcCtx make_ltc_ctx(const CellParams& p, std::size_t batch) {
  LtcCtx c;
  c.N = p.at("w").rows();
  c.K = p.at("sensory_w").rows();
  c.B = batch;
  auto flat = [batch](const Tensor& t) {
    return broadcast_rows(reshape(t, {t.size()}), batch);
  };
  c.wB = flat(p.at("w"));
  c.erevB = flat(p.at("erev"));
  c.muB = flat(p.at("mu"));
  c.sigB = flat(p.at("sigma"));
  c.swB = flat(p.at("sensory_w"));
  c.serevB = flat(p.at("sensory_erev"));
  c.smuB = flat(p.at("sensory_mu"));
  c.ssigB = flat(p.at("sensory_sigma"));
  c.cmB = broadcast_rows(p.at("cm"), batch);
  c.gleakB = broadcast_rows(p.at("gleak"), batch);
  c.vleakB = broadcast_rows(p.at("vleak"), batch);
  return c;
}

// Reversal-weighted and plain conductance sums feeding each post-neuron.
struct SynapseSums {
  Tensor num;  // sum of w_act * erev   [B x N]
  Tensor den;  // sum of w_act          [B x N]
};

SynapseSums sensory_sums(const LtcCtx& c, const Tensor& u_mapped) {
  Tensor act = mul(c.swB, synapse_gate(repeat_cols(u_mapped, c.N), c.smuB, c.ssigB));
  return {block_sum(mul(act, c.serevB), c.N), block_sum(act, c.N)};
}

SynapseSums recurrent_sums(const LtcCtx& c, const Tensor& v) {
  Tensor act = mul(c.wB, synapse_gate(repeat_cols(v, c.N), c.muB, c.sigB));
  return {block_sum(mul(act, c.erevB), c.N), block_sum(act, c.N)};
}

Tensor fused_substep(const LtcCtx& c, const Tensor& v, const SynapseSums& sens,
                     double h) {
  SynapseSums rec = recurrent_sums(c, v);
  Tensor cmh = mul(c.cmB, 1.0 / h);
  Tensor num = add(add(mul(cmh, v), mul(c.gleakB, c.vleakB)), add(rec.num, sens.num));
  Tensor den = add(add(cmh, c.gleakB), add(rec.den, sens.den));
  return div(num, den);
}

Tensor ltc_rhs_impl(const LtcCtx& c, const Tensor& v, const SynapseSums& sens) {
  SynapseSums rec = recurrent_sums(c, v);
  Tensor drive = sub(add(rec.num, sens.num), mul(v, add(rec.den, sens.den)));
  return div(add(mul(c.gleakB, sub(c.vleakB, v)), drive), c.cmB);
}

void require_finite_state(const Tensor& v, const char* op) {
  for (double x : v.data()) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite input state");
    }
  }
}

}  // namespace

Tensor ltc_fused_step(const Tensor& v, const Tensor& u_mapped, const CellParams& p,
                      double h) {
  if (h <= 0.0) throw NumericError("ltc_fused_step: h must be positive");
  require_finite_state(v, "ltc_fused_step");
  LtcCtx c = make_ltc_ctx(p, v.rows());
  return fused_substep(c, v, sensory_sums(c, u_mapped), h);
}

Tensor ltc_rhs(const Tensor& v, const Tensor& u_mapped, const CellParams& p) {
  require_finite_state(v, "ltc_rhs");
  LtcCtx c = make_ltc_ctx(p, v.rows());
  return ltc_rhs_impl(c, v, sensory_sums(c, u_mapped));
}

// ---------------------------------------------------------------------------
// Generic fixed-step solvers
// ---------------------------------------------------------------------------

Tensor euler_step(const RhsFn& f, const Tensor& x, double h) {
  if (h <= 0.0) throw NumericError("euler_step: h must be positive");
  return add(x, mul(f(x), h));
}

Tensor rk4_step(const RhsFn& f, const Tensor& x, double h) {
  if (h <= 0.0) throw NumericError("rk4_step: h must be positive");
  Tensor k1 = f(x);
  Tensor k2 = f(add(x, mul(k1, h / 2.0)));
  Tensor k3 = f(add(x, mul(k2, h / 2.0)));
  Tensor k4 = f(add(x, mul(k3, h)));
  Tensor slope = add(add(k1, mul(k2, 2.0)), add(mul(k3, 2.0), k4));
  return add(x, mul(slope, h / 6.0));
}

// ---------------------------------------------------------------------------
// CT-RNN / Neural-ODE right-hand sides
// ---------------------------------------------------------------------------

namespace {

Tensor rnn_drive(const Tensor& x, const Tensor& u_mapped, const CellParams& p,
                 ActivationKind act) {
  Tensor pre = add(add(matmul(x, p.at("w_rec")), matmul(u_mapped, p.at("w_in"))),
                   broadcast_rows(p.at("bias"), x.rows()));
  return activation(act, pre);
}

}  // namespace

Tensor ctrnn_rhs(const Tensor& x, const Tensor& u_mapped, const CellParams& p,
                 ActivationKind act) {
  Tensor tauB = broadcast_rows(p.at("tau"), x.rows());
  return div(sub(rnn_drive(x, u_mapped, p, act), x), tauB);
}

Tensor node_rhs(const Tensor& x, const Tensor& u_mapped, const CellParams& p,
                ActivationKind act) {
  return rnn_drive(x, u_mapped, p, act);
}

// ---------------------------------------------------------------------------
// CT-GRU
// ---------------------------------------------------------------------------

std::vector<double> ctgru_tau_scales(const CellConfig& config) {
  std::vector<double> taus(config.ctgru_scales);
  double t = config.tau_min;
  for (double& v : taus) {
    v = t;
    t *= config.scale_ratio;
  }
  return taus;
}

namespace {

// Softmax attention over the scale axis by proximity in log time:
// weight_j ∝ exp(-(ln tau_hat - ln tau_j)^2). The per-unit max of the
// exponent is subtracted before exp; softmax is invariant to that shift,
// so the gradient is exact while far-off-ladder tau_hat stays finite.
Tensor scale_softmax(const Tensor& log_tau_hat, const Tensor& lnT, std::size_t M,
                     std::size_t N) {
  Tensor d = sub(tile_cols(log_tau_hat, M), lnT);
  Tensor arg = neg(mul(d, d));
  Tensor shift;
  {
    NoGradGuard ng;
    const std::size_t B = arg.rows();
    std::vector<double> mx(B * N, -std::numeric_limits<double>::infinity());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < M; ++j)
        for (std::size_t n = 0; n < N; ++n)
          mx[b * N + n] = std::max(mx[b * N + n], arg(b, j * N + n));
    shift = tile_cols(Tensor::from_data({B, N}, std::move(mx)), M);
  }
  Tensor e = exp(sub(arg, shift));
  return div(e, tile_cols(block_sum(e, N), M));
}

}  // namespace

Tensor ctgru_step(const CellConfig& config, const Tensor& hhat, const Tensor& u,
                  const CellParams& p, double dt, bool force_zero_storage) {
  if (dt <= 0.0) throw NumericError("ctgru_step: dt must be positive");
  const std::size_t M = config.ctgru_scales;
  const std::size_t N = config.hidden_size;
  const std::size_t B = hhat.rows();
  if (hhat.cols() != M * N) {
    throw ShapeError("ctgru_step: hhat must be [B x M*N]");
  }
  const std::vector<double> taus = ctgru_tau_scales(config);
  std::vector<double> ln_flat(M * N), decay_flat(M * N);
  for (std::size_t j = 0; j < M; ++j) {
    const double lt = std::log(taus[j]);
    const double dc = std::exp(-dt / taus[j]);
    for (std::size_t n = 0; n < N; ++n) {
      ln_flat[j * N + n] = lt;
      decay_flat[j * N + n] = dc;
    }
  }
  Tensor lnT = broadcast_rows(Tensor::from_data({M * N}, std::move(ln_flat)), B);
  Tensor decay = broadcast_rows(Tensor::from_data({M * N}, std::move(decay_flat)), B);

  Tensor h = block_sum(hhat, N);
  Tensor uh = concat_cols(u, h);
  auto log_tau = [&](const char* w, const char* b) {
    return add(matmul(uh, p.at(w)), broadcast_rows(p.at(b), B));
  };

  Tensor r = scale_softmax(log_tau("retrieval_w", "retrieval_b"), lnT, M, N);
  Tensor retrieved = block_sum(mul(r, hhat), N);
  Tensor q = tanh(add(matmul(concat_cols(u, retrieved), p.at("cand_w")),
                      broadcast_rows(p.at("cand_b"), B)));

  Tensor stored = hhat;
  if (!force_zero_storage) {
    Tensor s = scale_softmax(log_tau("storage_w", "storage_b"), lnT, M, N);
    // (1-s)*hhat + s*q_tiled, written as hhat + s*(q_tiled - hhat).
    stored = add(hhat, mul(s, sub(tile_cols(q, M), hhat)));
  }
  return mul(stored, decay);
}

// ---------------------------------------------------------------------------
// LSTM / GRU baselines
// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> lstm_step(const Tensor& h, const Tensor& c, const Tensor& u,
                                    const CellParams& p) {
  const std::size_t N = h.cols();
  const std::size_t B = h.rows();
  Tensor z = add(matmul(concat_cols(u, h), p.at("gates_w")),
                 broadcast_rows(p.at("gates_b"), B));
  Tensor i = sigmoid(slice_cols(z, 0, N));
  Tensor f = sigmoid(slice_cols(z, N, 2 * N));
  Tensor g = tanh(slice_cols(z, 2 * N, 3 * N));
  Tensor o = sigmoid(slice_cols(z, 3 * N, 4 * N));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

Tensor gru_step(const Tensor& h, const Tensor& u, const CellParams& p) {
  const std::size_t N = h.cols();
  const std::size_t B = h.rows();
  Tensor zr = add(matmul(concat_cols(u, h), p.at("gates_w")),
                  broadcast_rows(p.at("gates_b"), B));
  Tensor z = sigmoid(slice_cols(zr, 0, N));
  Tensor r = sigmoid(slice_cols(zr, N, 2 * N));
  Tensor cand = tanh(add(matmul(concat_cols(u, mul(r, h)), p.at("cand_w")),
                         broadcast_rows(p.at("cand_b"), B)));
  return add(mul(z, h), mul(sub(1.0, z), cand));
}

// ---------------------------------------------------------------------------
// Readout and sequence plumbing
// ---------------------------------------------------------------------------

Tensor readout(const CellParams& p, const Tensor& visible) {
  Tensor with_bias = concat_cols(visible, Tensor::ones({visible.rows(), 1}));
  return matmul(with_bias, p.at("readout"));
}

Tensor visible_state(const CellConfig& config, const CellState& state) {
  if (config.kind == CellKind::Ctgru) {
    return block_sum(state.primary, config.hidden_size);
  }
  return state.primary;
}

namespace {

// Advance the hidden state by one input sample (no readout).
CellState advance(const CellConfig& config, const CellParams& params,
                  const CellState& state, const Tensor& u_t, double dt) {
  CellState next;
  const double h = dt / double(config.ode_unfolds);
  switch (config.kind) {
    case CellKind::Ltc: {
      Tensor u_m = map_input(u_t, config.input_mapping, params.at("input_w"),
                             params.at("input_b"));
      LtcCtx ctx = make_ltc_ctx(params, u_t.rows());
      SynapseSums sens = sensory_sums(ctx, u_m);
      Tensor v = state.primary;
      if (config.solver == SolverKind::Fused) {
        for (std::size_t s = 0; s < config.ode_unfolds; ++s) {
          v = fused_substep(ctx, v, sens, h);
        }
      } else {
        RhsFn f = [&](const Tensor& x) { return ltc_rhs_impl(ctx, x, sens); };
        for (std::size_t s = 0; s < config.ode_unfolds; ++s) {
          v = config.solver == SolverKind::Euler ? euler_step(f, v, h)
                                                 : rk4_step(f, v, h);
        }
      }
      next.primary = v;
      break;
    }
    case CellKind::Ctrnn:
    case CellKind::Node: {
      RhsFn f = [&](const Tensor& x) {
        return config.kind == CellKind::Ctrnn
                   ? ctrnn_rhs(x, u_t, params, config.activation)
                   : node_rhs(x, u_t, params, config.activation);
      };
      Tensor x = state.primary;
      for (std::size_t s = 0; s < config.ode_unfolds; ++s) {
        x = config.solver == SolverKind::Rk4 ? rk4_step(f, x, h) : euler_step(f, x, h);
      }
      next.primary = x;
      break;
    }
    case CellKind::Ctgru:
      next.primary = ctgru_step(config, state.primary, u_t, params, dt);
      break;
    case CellKind::Lstm: {
      auto [h2, c2] = lstm_step(state.primary, state.secondary, u_t, params);
      next.primary = h2;
      next.secondary = c2;
      break;
    }
    case CellKind::Gru:
      next.primary = gru_step(state.primary, u_t, params);
      break;
  }
  return next;
}

}  // namespace

std::pair<CellState, Tensor> cell_forward(const CellConfig& config,
                                          const CellParams& params,
                                          const CellState& state, const Tensor& u_t,
                                          double dt) {
  if (dt <= 0.0) throw NumericError("cell_forward: dt must be positive");
  validate_config(config);
  CellState next = advance(config, params, state, u_t, dt);
  Tensor y = readout(params, visible_state(config, next));
  return {std::move(next), std::move(y)};
}

Tensor sequence_forward(const CellConfig& config, const CellParams& params,
                        std::span<const Tensor> inputs_t, double dt) {
  if (inputs_t.empty()) throw ShapeError("sequence_forward: empty input sequence");
  if (dt <= 0.0) throw NumericError("sequence_forward: dt must be positive");
  validate_config(config);
  const std::size_t B = inputs_t[0].rows();
  std::vector<Tensor> ys;
  ys.reserve(inputs_t.size());

  if (config.kind == CellKind::Ltc) {
    // One broadcast context per sequence: the parameter broadcasts are
    // shared by every step and sub-step (fan-out sums their gradients).
    LtcCtx ctx = make_ltc_ctx(params, B);
    const double h = dt / double(config.ode_unfolds);
    Tensor v = zero_state(config, B).primary;
    for (const Tensor& u_t : inputs_t) {
      Tensor u_m = map_input(u_t, config.input_mapping, params.at("input_w"),
                             params.at("input_b"));
      SynapseSums sens = sensory_sums(ctx, u_m);
      if (config.solver == SolverKind::Fused) {
        for (std::size_t s = 0; s < config.ode_unfolds; ++s) {
          v = fused_substep(ctx, v, sens, h);
        }
      } else {
        RhsFn f = [&](const Tensor& x) { return ltc_rhs_impl(ctx, x, sens); };
        for (std::size_t s = 0; s < config.ode_unfolds; ++s) {
          v = config.solver == SolverKind::Euler ? euler_step(f, v, h)
                                                 : rk4_step(f, v, h);
        }
      }
      ys.push_back(readout(params, v));
    }
  } else {
    CellState st = zero_state(config, B);
    for (const Tensor& u_t : inputs_t) {
      st = advance(config, params, st, u_t, dt);
      ys.push_back(readout(params, visible_state(config, st)));
    }
  }
  return stack_steps(ys);
}

}  // namespace ltcse
