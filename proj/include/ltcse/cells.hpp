#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>

#include "ltcse/tensor.hpp"

namespace ltcse {

/// A configuration value is out of vocabulary or the combination is
/// illegal (e.g. fused solver on a non-LTC cell).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CellKind { Ltc, Ctrnn, Node, Ctgru, Lstm, Gru };
enum class InputMapping { Identity, Linear, Affine };
enum class SolverKind { Fused, Euler, Rk4 };

const char* to_string(CellKind k);
const char* to_string(InputMapping m);
const char* to_string(SolverKind s);
CellKind cell_kind_from_string(const std::string& s);
InputMapping input_mapping_from_string(const std::string& s);
SolverKind solver_from_string(const std::string& s);

/// The solver each kind uses unless overridden: LTC -> fused semi-implicit,
/// CT-RNN -> explicit Euler, Neural-ODE -> RK4. Discrete kinds report Euler
/// but never consult it.
SolverKind default_solver(CellKind kind);

/// Architecture selection for one cell instance.
struct CellConfig {
  CellKind kind = CellKind::Ltc;
  std::size_t hidden_size = 32;
  std::size_t input_size = 1;
  std::size_t output_size = 1;
  InputMapping input_mapping = InputMapping::Affine;
  SolverKind solver = SolverKind::Fused;
  std::size_t ode_unfolds = 6;
  std::size_t ctgru_scales = 8;
  double tau_min = 1.0;
  double scale_ratio = 3.1622776601683795;  // sqrt(10)
  ActivationKind activation = ActivationKind::Tanh;

  bool operator==(const CellConfig&) const = default;
};

/// Convenience constructor that applies the per-kind solver default.
CellConfig make_cell_config(CellKind kind, std::size_t hidden, std::size_t input,
                            std::size_t output);

/// Throws ConfigError on zero sizes, bad solver pairings, or degenerate
/// CT-GRU scale parameters.
void validate_config(const CellConfig& config);

/// Learnable tensors, keyed by canonical name. std::map iteration order
/// (lexicographic) is the canonical order used by checkpoints and the
/// optimizer, so runs are reproducible.
struct CellParams {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t total_count() const;
};

/// Hidden state. `primary` is v for LTC/CT-RNN/NODE, h for LSTM/GRU, and
/// the flattened trace matrix hhat [B x M*N] (scale-major blocks) for
/// CT-GRU. `secondary` is the LSTM cell state c and undefined otherwise.
struct CellState {
  Tensor primary;
  Tensor secondary;
};

/// Draw all parameter tensors from the documented initialization table.
/// Each tensor's stream is seeded by (seed, name), so draws are stable
/// under adding or removing other tensors.
CellParams init_cell_params(const CellConfig& config, std::uint64_t seed);

/// Zero state for a batch of the given size.
CellState zero_state(const CellConfig& config, std::size_t batch);

/// init_cell_params + zero_state(batch=1).
std::pair<CellParams, CellState> init_cell(const CellConfig& config,
                                           std::uint64_t seed);

/// Clamp parameters back into their documented ranges after an optimizer
/// step: synaptic weights non-negative; cm, gleak, sigma, tau positive.
/// Mutates values in place (leaf tensors only).
void constrain_params(const CellConfig& config, CellParams& params);

/// identity -> u; linear -> u*w; affine -> u*w + b (w, b per feature).
Tensor map_input(const Tensor& u, InputMapping mapping, const Tensor& input_w,
                 const Tensor& input_b);

/// Logistic synapse activation sigmoid(sigma * (v_pre - mu)), elementwise
/// over same-shape tensors.
Tensor synapse_gate(const Tensor& v_pre, const Tensor& mu, const Tensor& sigma);

/// One semi-implicit fused-solver sub-step of size h for the LTC cell.
/// The update is a convex combination of the current state, the leak
/// reversal, and the incoming reversal potentials, so the result stays
/// inside their hull whenever the positivity constraints hold.
Tensor ltc_fused_step(const Tensor& v, const Tensor& u_mapped, const CellParams& p,
                      double h);

/// LTC state derivative dv/dt (explicit-solver path).
Tensor ltc_rhs(const Tensor& v, const Tensor& u_mapped, const CellParams& p);

using RhsFn = std::function<Tensor(const Tensor&)>;

/// x + h*f(x).
Tensor euler_step(const RhsFn& f, const Tensor& x, double h);
/// Classical 4-stage Runge-Kutta update.
Tensor rk4_step(const RhsFn& f, const Tensor& x, double h);

/// dx/dt = (-x + act(x*W_rec + u*W_in + b)) / tau.
Tensor ctrnn_rhs(const Tensor& x, const Tensor& u_mapped, const CellParams& p,
                 ActivationKind act = ActivationKind::Tanh);
/// dx/dt = act(x*W_rec + u*W_in + b).
Tensor node_rhs(const Tensor& x, const Tensor& u_mapped, const CellParams& p,
                ActivationKind act = ActivationKind::Tanh);

/// One CT-GRU update over an elapsed time dt. hhat is [B x M*N] with
/// scale-major blocks; retrieval and storage gates are softmax attention
/// over log-time-scale proximity; traces decay by exp(-dt/tau_j).
/// `force_zero_storage` zeroes the storage gate (test hook for isolating
/// the decay law).
Tensor ctgru_step(const CellConfig& config, const Tensor& hhat, const Tensor& u,
                  const CellParams& p, double dt, bool force_zero_storage = false);

/// Geometric time-scale ladder tau_min * ratio^j, j = 0..M-1.
std::vector<double> ctgru_tau_scales(const CellConfig& config);

/// Standard LSTM step; returns (h', c').
std::pair<Tensor, Tensor> lstm_step(const Tensor& h, const Tensor& c, const Tensor& u,
                                    const CellParams& p);
/// Standard GRU step; returns h'.
Tensor gru_step(const Tensor& h, const Tensor& u, const CellParams& p);

/// Affine readout over the visible state (bias folded into the last row
/// of the readout tensor).
Tensor readout(const CellParams& p, const Tensor& visible);

/// The state component the readout sees: v, h, or the scale-summed
/// CT-GRU trace.
Tensor visible_state(const CellConfig& config, const CellState& state);

/// Advance one input sample: ode_unfolds solver sub-steps of size
/// dt/ode_unfolds for continuous kinds, one exact step for CT-GRU, one
/// discrete step for LSTM/GRU; then the readout.
std::pair<CellState, Tensor> cell_forward(const CellConfig& config,
                                          const CellParams& params,
                                          const CellState& state, const Tensor& u_t,
                                          double dt);

/// Thread the state through T steps from zero state; returns all readouts
/// stacked to [B x T x output]. dt applies uniformly (sampling period
/// normalized to 1).
Tensor sequence_forward(const CellConfig& config, const CellParams& params,
                        std::span<const Tensor> inputs_t, double dt = 1.0);

}  // namespace ltcse
