#include "gridveil/microgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

#include "gridveil/error.hpp"

namespace gridveil::mg {

DroopParams droop_gains_from_ratings(std::span<const double> p_rated,
                                     std::span<const double> q_rated, double delta_omega_th,
                                     double delta_v_th, double omega_n, double v_n) {
  if (p_rated.empty() || p_rated.size() != q_rated.size())
    throw Error(ErrorKind::InvalidConfig, "p_rated and q_rated must be nonempty and equal length");
  if (!(delta_omega_th > 0.0) || !(delta_v_th > 0.0))
    throw Error(ErrorKind::InvalidConfig, "deviation thresholds must be strictly positive");
  if (!(omega_n > 0.0) || !(v_n > 0.0))
    throw Error(ErrorKind::InvalidConfig, "nominal frequency and voltage must be positive");
  DroopParams params;
  params.omega_n = omega_n;
  params.v_n = v_n;
  params.delta_omega_th = delta_omega_th;
  params.delta_v_th = delta_v_th;
  for (std::size_t i = 0; i < p_rated.size(); ++i) {
    if (!(p_rated[i] > 0.0) || !(q_rated[i] > 0.0))
      throw Error(ErrorKind::InvalidConfig,
                  "rating of DG " + std::to_string(i + 1) + " must be strictly positive");
    params.d_p.push_back(delta_omega_th / p_rated[i]);
    params.d_q.push_back(delta_v_th / q_rated[i]);
  }
  return params;
}

SetPoints primary_setpoints(const DGState& state, const DroopParams& params, std::size_t i) {
  if (i >= params.size()) throw Error(ErrorKind::InvalidInput, "DG index out of range");
  return {params.omega_n - params.d_p[i] * state.p_filt + state.delta_omega,
          params.v_n - params.d_q[i] * state.q_filt + state.delta_v};
}

// ---------------------------------------------------------------------------

CommGraph::CommGraph(Matrix adjacency, Vector pinning, double k1, double k2)
    : adjacency_(std::move(adjacency)), pinning_(std::move(pinning)), k1_(k1), k2_(k2) {
  const std::size_t n = pinning_.size();
  if (n == 0 || adjacency_.rows() != n || adjacency_.cols() != n)
    throw Error(ErrorKind::InvalidConfig, "adjacency must be N x N with N = pinning length");
  for (std::size_t i = 0; i < n; ++i) {
    if (adjacency_(i, i) != 0.0)
      throw Error(ErrorKind::InvalidConfig, "adjacency diagonal must be zero");
    if (!(pinning_[i] >= 0.0)) throw Error(ErrorKind::InvalidConfig, "pinning gains must be >= 0");
    for (std::size_t j = 0; j < n; ++j) {
      if (!(adjacency_(i, j) >= 0.0))
        throw Error(ErrorKind::InvalidConfig, "adjacency weights must be nonnegative");
      if (adjacency_(i, j) != adjacency_(j, i))
        throw Error(ErrorKind::InvalidConfig, "adjacency must be symmetric");
    }
  }
  const auto pinned = leaders();
  if (pinned.empty()) throw Error(ErrorKind::InvalidConfig, "at least one pinning gain must be > 0");
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> frontier;
  for (auto l : pinned) {
    seen[l] = true;
    frontier.push(l);
  }
  while (!frontier.empty()) {
    const auto u = frontier.front();
    frontier.pop();
    for (std::size_t v = 0; v < n; ++v) {
      if (!seen[v] && adjacency_(u, v) > 0.0) {
        seen[v] = true;
        frontier.push(v);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!seen[i])
      throw Error(ErrorKind::InvalidConfig,
                  "communication graph does not reach DG " + std::to_string(i + 1) +
                      " from a pinned leader");
  if (!(k1_ >= 0.0) || !(k2_ >= 0.0))
    throw Error(ErrorKind::InvalidConfig, "secondary gains must be nonnegative");
}

CommGraph CommGraph::ring(std::size_t n, double leader_gain, double k1, double k2) {
  Matrix a(n, n);
  if (n == 2) {
    a(0, 1) = a(1, 0) = 1.0;
  } else if (n > 2) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      a(i, j) = a(j, i) = 1.0;
    }
  }
  Vector g(n, 0.0);
  g[0] = leader_gain;
  return CommGraph(std::move(a), std::move(g), k1, k2);
}

std::vector<std::size_t> CommGraph::leaders() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pinning_.size(); ++i)
    if (pinning_[i] > 0.0) out.push_back(i);
  return out;
}

SecondaryRates secondary_rates(std::span<const ControllerSignals> s, const CommGraph& graph) {
  const std::size_t n = graph.size();
  if (s.size() != n)
    throw Error(ErrorKind::InvalidInput, "secondary_rates: " + std::to_string(s.size()) +
                                             " signals for a graph of " + std::to_string(n));
  SecondaryRates rates{Vector(n, 0.0), Vector(n, 0.0)};
  const Matrix& a = graph.adjacency();
  for (std::size_t i = 0; i < n; ++i) {
    double freq_term = 0.0;
    double share_p = 0.0;
    double share_q = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double aij = a(i, j);
      if (aij == 0.0) continue;
      freq_term += aij * (s[j].omega - s[i].omega);
      share_p += aij * (s[j].dp_product - s[i].dp_product);
      share_q += aij * (s[j].dq_product - s[i].dq_product);
    }
    const double pin = graph.pinning()[i] * (s[i].omega_ref - s[i].omega);
    rates.d_delta_omega[i] = graph.k1() * (freq_term + pin + share_p);
    rates.d_delta_v[i] = graph.k2() * share_q;
  }
  return rates;
}

SecondaryRates secondary_rates(std::span<const DGState> states, const CommGraph& graph,
                               const DroopParams& params) {
  if (states.size() != params.size())
    throw Error(ErrorKind::InvalidInput, "secondary_rates: state/param length mismatch");
  std::vector<ControllerSignals> signals;
  signals.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    signals.push_back({states[i].omega, params.omega_n, params.d_p[i] * states[i].p_filt,
                       params.d_q[i] * states[i].q_filt});
  }
  return secondary_rates(signals, graph);
}

// ---------------------------------------------------------------------------

void NetworkModel::validate() const {
  if (line_impedance.empty()) throw Error(ErrorKind::InvalidConfig, "no line impedances");
  if (!line_in_service.empty() && line_in_service.size() != line_impedance.size())
    throw Error(ErrorKind::InvalidConfig, "line_in_service length mismatch");
  for (std::size_t i = 0; i < line_impedance.size(); ++i)
    if (!(std::abs(line_impedance[i]) > 0.0))
      throw Error(ErrorKind::InvalidConfig,
                  "line impedance of DG " + std::to_string(i + 1) + " must be nonzero");
  if (load_p < 0.0 || load_q < 0.0) throw Error(ErrorKind::InvalidConfig, "loads must be >= 0");
  if (!(load_reference_voltage > 0.0))
    throw Error(ErrorKind::InvalidConfig, "load reference voltage must be > 0");
  if (!(filter_cutoff > 0.0)) throw Error(ErrorKind::InvalidConfig, "filter cutoff must be > 0");
}

PowerFlow solve_power_flow(const NetworkModel& net, std::span<const Phasor> phasors) {
  using cd = std::complex<double>;
  const std::size_t n = net.line_impedance.size();
  if (phasors.size() != n) throw Error(ErrorKind::InvalidInput, "phasor count != DG count");
  const double vref = net.load_reference_voltage;
  const cd y_load = cd(net.load_p, -net.load_q) / (1.5 * vref * vref);

  std::vector<cd> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::polar(phasors[i].v, phasors[i].theta);

  cd bus;
  if (net.pcc_closed) {
    bus = cd(net.grid_voltage, 0.0);
  } else {
    cd num = 0.0;
    cd den = y_load;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!net.in_service(i)) continue;
      const cd yi = 1.0 / net.line_impedance[i];
      num += e[i] * yi;
      den += yi;
      any = true;
    }
    if (!any || std::abs(den) == 0.0)
      throw Error(ErrorKind::Numerical, "islanded node equation has no solution (all lines open)");
    bus = num / den;
  }

  PowerFlow pf{Vector(n, 0.0), Vector(n, 0.0), bus, cd(0.0, 0.0)};
  cd injected = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!net.in_service(i)) continue;
    const cd current = (e[i] - bus) / net.line_impedance[i];
    const cd s = 1.5 * e[i] * std::conj(current);
    pf.p[i] = s.real();
    pf.q[i] = s.imag();
    injected += current;
  }
  if (net.pcc_closed) pf.pcc_current = bus * y_load - injected;
  return pf;
}

void set_breaker(SimState& state, bool open, std::string_view cause) {
  state.network.pcc_closed = !open;
  state.events.push_back({state.t, open, std::string(cause)});
}

ControllerBias ControllerBias::none(std::size_t n) {
  return {Vector(n, 0.0), Vector(n, 0.0), Vector(n, 1.0)};
}

bool ControllerBias::is_identity() const {
  for (double b : omega_ref_bias) if (b != 0.0) return false;
  for (double b : q_sensor_bias) if (b != 0.0) return false;
  for (double s : dp_report_scale) if (s != 1.0) return false;
  return true;
}

ConvergenceMetrics convergence_metrics(std::span<const DGState> states, const DroopParams& params) {
  ConvergenceMetrics m{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < states.size(); ++i) {
    m.freq_residual = std::max(m.freq_residual, std::abs(states[i].omega - params.omega_n));
    for (std::size_t j = i + 1; j < states.size(); ++j) {
      m.p_share_residual =
          std::max(m.p_share_residual, std::abs(params.d_p[i] * states[i].p_filt -
                                                params.d_p[j] * states[j].p_filt));
      m.q_share_residual =
          std::max(m.q_share_residual, std::abs(params.d_q[i] * states[i].q_filt -
                                                params.d_q[j] * states[j].q_filt));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

Microgrid::Microgrid(DroopParams droop, CommGraph graph, NetworkModel network)
    : droop_(std::move(droop)), graph_(std::move(graph)), network_(std::move(network)) {
  network_.validate();
  const std::size_t n = droop_.size();
  if (n == 0 || droop_.d_q.size() != n || graph_.size() != n || network_.line_impedance.size() != n)
    throw Error(ErrorKind::InvalidConfig, "droop, graph and network disagree on the DG count");
  for (std::size_t i = 0; i < n; ++i)
    if (!(droop_.d_p[i] > 0.0) || !(droop_.d_q[i] > 0.0))
      throw Error(ErrorKind::InvalidConfig, "droop gains must be strictly positive");
}

SimState Microgrid::initial_state() const {
  SimState s;
  s.network = network_;
  s.dgs.assign(size(), DGState{});
  refresh_outputs(s, ControllerBias::none(size()));
  return s;
}

SetPoints Microgrid::setpoints(const DGState& dg, std::size_t i, const ControllerBias& bias) const {
  const double omega_ref = droop_.omega_n + bias.omega_ref_bias[i];
  const double q_seen = dg.q_filt + bias.q_sensor_bias[i];
  return {omega_ref - droop_.d_p[i] * dg.p_filt + dg.delta_omega,
          droop_.v_n - droop_.d_q[i] * q_seen + dg.delta_v};
}

void Microgrid::derivatives(const std::vector<double>& y, const NetworkModel& net,
                            const ControllerBias& bias, std::vector<double>& dy) const {
  const std::size_t n = size();
  std::vector<Phasor> phasors(n);
  std::vector<ControllerSignals> signals(n);
  Vector omega_star(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* yi = &y[kStatesPerDg * i];
    const double omega_ref = droop_.omega_n + bias.omega_ref_bias[i];
    const double q_seen = yi[2] + bias.q_sensor_bias[i];
    omega_star[i] = omega_ref - droop_.d_p[i] * yi[1] + yi[3];
    const double v_star = droop_.v_n - droop_.d_q[i] * q_seen + yi[4];
    phasors[i] = {v_star, yi[0]};
    signals[i] = {omega_star[i], omega_ref, droop_.d_p[i] * yi[1] * bias.dp_report_scale[i],
                  droop_.d_q[i] * q_seen};
  }
  const PowerFlow pf = solve_power_flow(net, phasors);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const double* yi = &y[kStatesPerDg * i];
    double* di = &dy[kStatesPerDg * i];
    di[0] = two_pi * (omega_star[i] - net.grid_frequency);
    di[1] = net.filter_cutoff * (pf.p[i] - yi[1]);
    di[2] = net.filter_cutoff * (pf.q[i] - yi[2]);
    di[3] = 0.0;
    di[4] = 0.0;
  }
  if (!net.pcc_closed) {
    const SecondaryRates r = secondary_rates(signals, graph_);
    for (std::size_t i = 0; i < n; ++i) {
      dy[kStatesPerDg * i + 3] = r.d_delta_omega[i];
      dy[kStatesPerDg * i + 4] = r.d_delta_v[i];
    }
  }
}

void Microgrid::step(SimState& state, double dt) const {
  step(state, dt, ControllerBias::none(size()));
}

void Microgrid::step(SimState& state, double dt, const ControllerBias& bias) const {
  if (!(dt > 0.0) || !std::isfinite(dt))
    throw Error(ErrorKind::InvalidInput, "step size must be positive and finite");
  const std::size_t n = size();
  if (state.dgs.size() != n) throw Error(ErrorKind::InvalidInput, "state has wrong DG count");
  if (bias.omega_ref_bias.size() != n || bias.q_sensor_bias.size() != n ||
      bias.dp_report_scale.size() != n)
    throw Error(ErrorKind::InvalidInput, "controller bias has wrong DG count");

  const std::size_t len = kStatesPerDg * n;
  std::vector<double> y(len), k1(len), k2(len), k3(len), k4(len), tmp(len);
  for (std::size_t i = 0; i < n; ++i) {
    const DGState& d = state.dgs[i];
    double* yi = &y[kStatesPerDg * i];
    yi[0] = d.theta;
    yi[1] = d.p_filt;
    yi[2] = d.q_filt;
    yi[3] = d.delta_omega;
    yi[4] = d.delta_v;
  }
  const NetworkModel& net = state.network;
  derivatives(y, net, bias, k1);
  for (std::size_t k = 0; k < len; ++k) tmp[k] = y[k] + 0.5 * dt * k1[k];
  derivatives(tmp, net, bias, k2);
  for (std::size_t k = 0; k < len; ++k) tmp[k] = y[k] + 0.5 * dt * k2[k];
  derivatives(tmp, net, bias, k3);
  for (std::size_t k = 0; k < len; ++k) tmp[k] = y[k] + dt * k3[k];
  derivatives(tmp, net, bias, k4);
  for (std::size_t k = 0; k < len; ++k)
    y[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);

  static constexpr const char* kNames[kStatesPerDg] = {"theta", "p_filt", "q_filt",
                                                       "delta_omega", "delta_v"};
  state.t += dt;
  for (std::size_t i = 0; i < n; ++i) {
    const double* yi = &y[kStatesPerDg * i];
    for (std::size_t k = 0; k < kStatesPerDg; ++k)
      if (!std::isfinite(yi[k])) throw DivergenceError(i, kNames[k], state.t);
    DGState& d = state.dgs[i];
    d.theta = yi[0];
    d.p_filt = yi[1];
    d.q_filt = yi[2];
    d.delta_omega = yi[3];
    d.delta_v = yi[4];
  }
  refresh_outputs(state, bias);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(state.dgs[i].omega)) throw DivergenceError(i, "omega", state.t);
    if (!std::isfinite(state.dgs[i].v) || !(state.dgs[i].v > 0.0))
      throw DivergenceError(i, "v", state.t);
  }
}

void Microgrid::refresh_outputs(SimState& state, const ControllerBias& bias) const {
  const std::size_t n = size();
  std::vector<Phasor> phasors(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SetPoints sp = setpoints(state.dgs[i], i, bias);
    state.dgs[i].omega = sp.omega_star;
    state.dgs[i].v = sp.v_star;
    phasors[i] = {sp.v_star, state.dgs[i].theta};
  }
  state.flow = solve_power_flow(state.network, phasors);
}

SimState settle(const Microgrid& grid, SimState state, double dt, double max_time, double tol) {
  const double t_end = state.t + max_time;
  Vector prev = reduced_coordinates(state);
  while (state.t < t_end) {
    grid.step(state, dt);
    Vector cur = reduced_coordinates(state);
    double rate = 0.0;
    for (std::size_t k = 0; k < cur.size(); ++k)
      rate = std::max(rate, std::abs(cur[k] - prev[k]) / dt);
    prev = std::move(cur);
    if (rate < tol) break;
  }
  return state;
}

// ---------------------------------------------------------------------------

std::vector<std::string> sensor_ids(std::size_t n_dg) {
  std::vector<std::string> ids = dg_sensor_ids(n_dg);
  ids.push_back("pcc.i");
  ids.push_back("pcc.v");
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::string> dg_sensor_ids(std::size_t n_dg) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n_dg; ++i)
    for (const char* q : {"f", "p", "q", "v"}) ids.push_back("dg" + std::to_string(i + 1) + "." + q);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::size_t dg_index_of(std::string_view id) {
  if (id.size() < 5 || id.substr(0, 2) != "dg") return std::string_view::npos;
  const auto dot = id.find('.');
  if (dot == std::string_view::npos || dot <= 2) return std::string_view::npos;
  std::size_t k = 0;
  for (std::size_t c = 2; c < dot; ++c) {
    if (id[c] < '0' || id[c] > '9') return std::string_view::npos;
    k = k * 10 + static_cast<std::size_t>(id[c] - '0');
  }
  return k == 0 ? std::string_view::npos : k - 1;
}

char quantity_of(std::string_view id) {
  const auto dot = id.find('.');
  return (dot == std::string_view::npos || dot + 1 >= id.size()) ? '\0' : id[dot + 1];
}

Vector read_sensors(const Microgrid& grid, const SimState& state) {
  const auto ids = sensor_ids(grid.size());
  Vector values;
  values.reserve(ids.size());
  for (const auto& id : ids) {
    const std::size_t i = dg_index_of(id);
    const char q = quantity_of(id);
    if (i == std::string_view::npos) {
      values.push_back(q == 'i' ? std::abs(state.flow.pcc_current)
                                : std::abs(state.flow.bus_voltage));
      continue;
    }
    switch (q) {
      case 'f': values.push_back(state.dgs[i].omega); break;
      case 'p': values.push_back(state.flow.p[i]); break;
      case 'q': values.push_back(state.flow.q[i]); break;
      default: values.push_back(state.dgs[i].v); break;
    }
  }
  return values;
}

bool ProtectionRelay::observe(double current_reading, double dt) {
  if (tripped_) return false;
  if (current_reading >= pickup_) {
    over_time_ += dt;
  } else {
    over_time_ = 0.0;
  }
  // Small slack so that an integer number of steps reaches the dwell exactly.
  if (over_time_ >= dwell_ - 1e-9 * dt) {
    tripped_ = true;
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

Vector reduced_coordinates(const SimState& state) {
  const std::size_t n = state.dgs.size();
  Vector z;
  z.reserve(5 * n - 1);
  for (std::size_t i = 1; i < n; ++i) z.push_back(state.dgs[i].theta - state.dgs[0].theta);
  for (const auto& d : state.dgs) z.push_back(d.p_filt);
  for (const auto& d : state.dgs) z.push_back(d.q_filt);
  for (const auto& d : state.dgs) z.push_back(d.delta_omega);
  for (const auto& d : state.dgs) z.push_back(d.delta_v);
  return z;
}

namespace {

SimState from_reduced(const Microgrid& grid, const SimState& ref, std::span<const double> z) {
  SimState s = ref;
  const std::size_t n = s.dgs.size();
  std::size_t k = 0;
  for (std::size_t i = 1; i < n; ++i) s.dgs[i].theta = s.dgs[0].theta + z[k++];
  for (auto& d : s.dgs) d.p_filt = z[k++];
  for (auto& d : s.dgs) d.q_filt = z[k++];
  for (auto& d : s.dgs) d.delta_omega = z[k++];
  for (auto& d : s.dgs) d.delta_v = z[k++];
  grid.refresh_outputs(s, ControllerBias::none(n));
  return s;
}

Vector dg_measurements(const Microgrid& grid, const SimState& s) {
  const auto all_ids = sensor_ids(grid.size());
  const Vector all = read_sensors(grid, s);
  Vector out;
  for (std::size_t k = 0; k < all_ids.size(); ++k)
    if (dg_index_of(all_ids[k]) != std::string_view::npos) out.push_back(all[k]);
  return out;
}

}  // namespace

Linearization linearize(const Microgrid& grid, const SimState& eq, double dt,
                        std::size_t substeps) {
  if (substeps == 0) throw Error(ErrorKind::InvalidInput, "substeps must be >= 1");
  const Vector z0 = reduced_coordinates(eq);
  const std::size_t nz = z0.size();
  const Vector m0 = dg_measurements(grid, eq);
  const std::size_t nm = m0.size();

  auto advance = [&](std::span<const double> z, double dload_p, double dload_q) {
    SimState s = from_reduced(grid, eq, z);
    s.network.load_p += dload_p;
    s.network.load_q += dload_q;
    for (std::size_t k = 0; k < substeps; ++k) grid.step(s, dt);
    return reduced_coordinates(s);
  };

  Linearization lin;
  lin.f = Matrix(nz, nz);
  lin.b = Matrix(nz, 2);
  lin.h = Matrix(nm, nz);
  lin.z0 = z0;
  lin.m0 = m0;
  lin.sample_period = dt * static_cast<double>(substeps);

  for (std::size_t c = 0; c < nz; ++c) {
    const double h = 1e-6 * std::max(1.0, std::abs(z0[c]));
    Vector zp = z0, zm = z0;
    zp[c] += h;
    zm[c] -= h;
    const Vector fp = advance(zp, 0.0, 0.0);
    const Vector fm = advance(zm, 0.0, 0.0);
    for (std::size_t r = 0; r < nz; ++r) lin.f(r, c) = (fp[r] - fm[r]) / (2.0 * h);
    const Vector mp = dg_measurements(grid, from_reduced(grid, eq, zp));
    const Vector mm = dg_measurements(grid, from_reduced(grid, eq, zm));
    for (std::size_t r = 0; r < nm; ++r) lin.h(r, c) = (mp[r] - mm[r]) / (2.0 * h);
  }
  const double loads[2] = {eq.network.load_p, eq.network.load_q};
  for (std::size_t c = 0; c < 2; ++c) {
    const double h = 1e-6 * std::max(1.0, loads[c]);
    const Vector fp = advance(z0, c == 0 ? h : 0.0, c == 1 ? h : 0.0);
    const Vector fm = advance(z0, c == 0 ? -h : 0.0, c == 1 ? -h : 0.0);
    for (std::size_t r = 0; r < nz; ++r) lin.b(r, c) = (fp[r] - fm[r]) / (2.0 * h);
  }
  return lin;
}

}  // namespace gridveil::mg
