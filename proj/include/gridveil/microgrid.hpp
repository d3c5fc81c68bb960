#pragma once

// Droop-controlled inverter microgrid with consensus secondary control.
//
// Each DG is an ideal voltage source E_i at angle theta_i behind its line
// impedance to one common bus that carries a constant-impedance load. Angles
// live in a frame rotating at the grid frequency. The secondary correction
// terms are integrated only while islanded; grid-connected operation holds
// them fixed.

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gridveil/linalg.hpp"

namespace gridveil::mg {

struct DroopParams {
  Vector d_p;  // Hz per W
  Vector d_q;  // V per var
  double omega_n = 50.0;
  double v_n = 311.0;
  double delta_omega_th = 0.5;
  double delta_v_th = 0.04 * 311.0;

  std::size_t size() const noexcept { return d_p.size(); }
};

/// d_p[i] = delta_omega_th / p_rated[i], d_q[i] = delta_v_th / q_rated[i].
DroopParams droop_gains_from_ratings(std::span<const double> p_rated,
                                     std::span<const double> q_rated, double delta_omega_th,
                                     double delta_v_th, double omega_n = 50.0,
                                     double v_n = 311.0);

struct DGState {
  double theta = 0.0;        // rad, rotating frame
  double omega = 50.0;       // Hz
  double v = 311.0;          // V peak
  double p_filt = 0.0;       // W
  double q_filt = 0.0;       // var
  double delta_omega = 0.0;  // Hz
  double delta_v = 0.0;      // V
};

struct SetPoints {
  double omega_star;
  double v_star;
};

SetPoints primary_setpoints(const DGState& state, const DroopParams& params, std::size_t i);

class CommGraph {
 public:
  /// Validates symmetry, zero diagonal, a pinned leader and connectivity.
  CommGraph(Matrix adjacency, Vector pinning, double k1, double k2);

  /// Ring over n agents with unit weights, agent 0 pinned with gain `leader_gain`.
  static CommGraph ring(std::size_t n, double leader_gain, double k1, double k2);

  std::size_t size() const noexcept { return pinning_.size(); }
  const Matrix& adjacency() const noexcept { return adjacency_; }
  const Vector& pinning() const noexcept { return pinning_; }
  double k1() const noexcept { return k1_; }
  double k2() const noexcept { return k2_; }
  /// Agents with a strictly positive pinning gain.
  std::vector<std::size_t> leaders() const;

 private:
  Matrix adjacency_;
  Vector pinning_;
  double k1_;
  double k2_;
};

/// What a secondary controller sees: its own frequency, its reference and the
/// droop-power products it exchanges with neighbours.
struct ControllerSignals {
  double omega;
  double omega_ref;
  double dp_product;
  double dq_product;
};

struct SecondaryRates {
  Vector d_delta_omega;  // Hz/s
  Vector d_delta_v;      // V/s
};

SecondaryRates secondary_rates(std::span<const ControllerSignals> signals, const CommGraph& graph);
SecondaryRates secondary_rates(std::span<const DGState> states, const CommGraph& graph,
                               const DroopParams& params);

struct NetworkModel {
  std::vector<std::complex<double>> line_impedance;  // ohm
  std::vector<bool> line_in_service;                 // empty means all in service
  double load_p = 0.0;                               // W at load_reference_voltage
  double load_q = 0.0;                               // var at load_reference_voltage
  double load_reference_voltage = 311.0;
  bool pcc_closed = true;
  double grid_voltage = 311.0;
  double grid_frequency = 50.0;
  double filter_cutoff = 31.4;  // rad/s

  bool in_service(std::size_t i) const {
    return line_in_service.empty() || line_in_service[i];
  }
  void validate() const;
};

struct Phasor {
  double v;
  double theta;
};

struct PowerFlow {
  Vector p;  // W delivered by each DG through its line
  Vector q;  // var
  std::complex<double> bus_voltage;
  std::complex<double> pcc_current;  // grid -> microgrid; zero when islanded
};

/// Three-phase complex power with peak phasors: S = 1.5 E conj(I).
PowerFlow solve_power_flow(const NetworkModel& network, std::span<const Phasor> phasors);

struct BreakerEvent {
  double t;
  bool open;
  std::string cause;
};

/// Per-DG manipulations a controller can be subjected to. Identity values are
/// zero biases and unit scales.
struct ControllerBias {
  Vector omega_ref_bias;   // Hz added to the frequency reference
  Vector q_sensor_bias;    // var added to the reactive power the controller reads
  Vector dp_report_scale;  // multiplies the d_p*P product shared with neighbours

  static ControllerBias none(std::size_t n);
  bool is_identity() const;
};

struct SimState {
  double t = 0.0;
  std::vector<DGState> dgs;
  NetworkModel network;
  PowerFlow flow;  // at the current state
  std::vector<BreakerEvent> events;
};

/// Opens or closes the PCC breaker and logs the event at state.t. Idempotent
/// switching is still logged.
void set_breaker(SimState& state, bool open, std::string_view cause);

struct ConvergenceMetrics {
  double freq_residual;     // max_i |omega_i - omega_n|
  double p_share_residual;  // max_{i,j} |d_p[i] P_i - d_p[j] P_j|
  double q_share_residual;
};

ConvergenceMetrics convergence_metrics(std::span<const DGState> states, const DroopParams& params);

class Microgrid {
 public:
  Microgrid(DroopParams droop, CommGraph graph, NetworkModel network);

  std::size_t size() const noexcept { return droop_.size(); }
  const DroopParams& droop() const noexcept { return droop_; }
  const CommGraph& graph() const noexcept { return graph_; }
  const NetworkModel& base_network() const noexcept { return network_; }

  /// Zero angles and powers, no secondary correction, breaker per base network.
  SimState initial_state() const;

  SetPoints setpoints(const DGState& dg, std::size_t i, const ControllerBias& bias) const;

  /// One RK4 step of {theta, p_filt, q_filt, delta_omega, delta_v}. The power
  /// flow is re-solved at every stage. Throws DivergenceError on non-finite state.
  void step(SimState& state, double dt, const ControllerBias& bias) const;
  void step(SimState& state, double dt) const;

  /// Recomputes omega, v and the power flow from the integrated states.
  void refresh_outputs(SimState& state, const ControllerBias& bias) const;

 private:
  static constexpr std::size_t kStatesPerDg = 5;
  void derivatives(const std::vector<double>& y, const NetworkModel& net,
                   const ControllerBias& bias, std::vector<double>& dy) const;

  DroopParams droop_;
  CommGraph graph_;
  NetworkModel network_;
};

/// Runs attack-free steps until secondary rates and filter errors fall below
/// `tol` or `max_time` elapses.
SimState settle(const Microgrid& grid, SimState state, double dt, double max_time,
                double tol = 1e-9);

// ---------------------------------------------------------------------------
// Sensors

/// Canonically sorted ids: dg<k>.{f,p,q,v} for each DG, then pcc.i, pcc.v.
std::vector<std::string> sensor_ids(std::size_t n_dg);
/// Ids of the per-DG sensors only (no PCC).
std::vector<std::string> dg_sensor_ids(std::size_t n_dg);
/// 0-based DG index encoded in a "dg<k>.*" id, or npos for PCC sensors.
std::size_t dg_index_of(std::string_view sensor_id);
char quantity_of(std::string_view sensor_id);

/// True sensor values in the order of sensor_ids(). Uses state.flow.
Vector read_sensors(const Microgrid& grid, const SimState& state);

/// Overcurrent protection at the PCC: trips once the current reading stays at
/// or above `pickup` for at least `dwell` seconds.
class ProtectionRelay {
 public:
  ProtectionRelay(double pickup, double dwell) : pickup_(pickup), dwell_(dwell) {}

  /// Returns true on the step the relay trips.
  bool observe(double current_reading, double dt);
  bool tripped() const noexcept { return tripped_; }
  double pickup() const noexcept { return pickup_; }

 private:
  double pickup_;
  double dwell_;
  double over_time_ = 0.0;
  bool tripped_ = false;
};

// ---------------------------------------------------------------------------
// Linearization

/// Discrete linear model of the plant around an equilibrium, in reduced
/// coordinates z = [theta_i - theta_1 (i >= 2), p_filt, q_filt, delta_omega, delta_v].
/// Inputs are deviations of (load_p, load_q); outputs are the DG sensors in
/// dg_sensor_ids() order.
struct Linearization {
  Matrix f;
  Matrix b;
  Matrix h;
  Vector z0;
  Vector m0;
  double sample_period;
};

Vector reduced_coordinates(const SimState& state);
Linearization linearize(const Microgrid& grid, const SimState& equilibrium, double dt,
                        std::size_t substeps);

}  // namespace gridveil::mg
