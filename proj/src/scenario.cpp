#include "gridveil/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "gridveil/error.hpp"

namespace gridveil::sim {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

// A YAML node with the dotted path that reached it, for error messages.
class Field {
 public:
  Field(YAML::Node node, std::string path, int parent_line)
      : node_(std::move(node)), path_(std::move(path)), parent_line_(parent_line) {}

  int line() const {
    const int l = node_.Mark().line;
    return l >= 0 ? l + 1 : parent_line_;
  }
  const std::string& path() const noexcept { return path_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::Schema,
                "field '" + path_ + "' (line " + std::to_string(line()) + "): " + what);
  }

  bool has(const char* key) const { return node_.IsMap() && node_[key].IsDefined() && !node_[key].IsNull(); }

  Field operator[](const char* key) const {
    if (!node_.IsMap()) fail("expected a mapping");
    return Field(node_[key], path_.empty() ? key : path_ + "." + key, line());
  }

  Field at(std::size_t k) const {
    return Field(node_[k], path_ + "[" + std::to_string(k) + "]", line());
  }

  void only(std::initializer_list<const char*> keys) const {
    if (!node_.IsMap()) fail("expected a mapping");
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) ==
          keys.end()) {
        const int l = kv.first.Mark().line + 1;
        throw Error(ErrorKind::Schema, "field '" + (path_.empty() ? key : path_ + "." + key) +
                                           "' (line " + std::to_string(l) + "): unknown field");
      }
    }
  }

  bool is_sequence() const { return node_.IsSequence(); }
  std::size_t size() const { return node_.size(); }

  double number() const {
    if (!node_.IsScalar()) fail("expected a number");
    try {
      const double v = node_.as<double>();
      if (!std::isfinite(v)) fail("must be finite");
      return v;
    } catch (const YAML::Exception&) {
      fail("expected a number, got '" + node_.Scalar() + "'");
    }
  }
  double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("must be > 0");
    return v;
  }
  double non_negative() const {
    const double v = number();
    if (!(v >= 0.0)) fail("must be >= 0");
    return v;
  }
  std::uint64_t unsigned_integer() const {
    const double v = number();
    if (v < 0.0 || v != std::floor(v) || v > 9.007199254740992e15)
      fail("expected a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }
  std::size_t count() const {
    const auto v = unsigned_integer();
    if (v == 0) fail("must be >= 1");
    return static_cast<std::size_t>(v);
  }
  bool boolean() const {
    if (!node_.IsScalar()) fail("expected true or false");
    try {
      return node_.as<bool>();
    } catch (const YAML::Exception&) {
      fail("expected true or false, got '" + node_.Scalar() + "'");
    }
  }
  std::string text() const {
    if (!node_.IsScalar()) fail("expected a string");
    return node_.Scalar();
  }
  Vector numbers() const {
    if (!node_.IsSequence()) fail("expected a list of numbers");
    Vector v;
    for (std::size_t k = 0; k < node_.size(); ++k) v.push_back(at(k).number());
    return v;
  }
  std::size_t dg(std::size_t n_dg) const {
    const std::string s = text();
    if (s.size() < 3 || s.rfind("dg", 0) != 0) fail("expected a DG id like dg1, got '" + s + "'");
    std::size_t k = 0;
    for (std::size_t i = 2; i < s.size(); ++i) {
      if (s[i] < '0' || s[i] > '9') fail("expected a DG id like dg1, got '" + s + "'");
      k = k * 10 + static_cast<std::size_t>(s[i] - '0');
    }
    if (k < 1 || k > n_dg) fail("unknown DG id " + s);
    return k - 1;
  }
  std::vector<std::size_t> dgs(std::size_t n_dg) const {
    if (node_.IsScalar() && node_.Scalar() == "all") {
      std::vector<std::size_t> all(n_dg);
      for (std::size_t i = 0; i < n_dg; ++i) all[i] = i;
      return all;
    }
    if (!node_.IsSequence()) fail("expected a list of DG ids or 'all'");
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < node_.size(); ++k) out.push_back(at(k).dg(n_dg));
    return out;
  }

 private:
  YAML::Node node_;
  std::string path_;
  int parent_line_;
};

std::string dg_name(std::size_t i) { return "dg" + std::to_string(i + 1); }

void read_microgrid(const Field& f, Scenario& s) {
  f.only({"dg_count", "p_rated", "q_rated", "delta_omega_th", "delta_v_th", "omega_n", "v_n",
          "graph", "network", "start_islanded", "islanding_time"});
  if (f.has("dg_count")) {
    s.dg_count = f["dg_count"].count();
    if (s.dg_count < 2) f["dg_count"].fail("a microgrid needs at least 2 DGs");
  }
  const std::size_t n = s.dg_count;
  auto ratings = [&](const char* key, Vector& out) {
    out.assign(n, 10000.0);
    if (!f.has(key)) return;
    const Field r = f[key];
    out = r.numbers();
    if (out.size() != n) r.fail("needs " + std::to_string(n) + " entries");
    for (std::size_t k = 0; k < n; ++k)
      if (!(out[k] > 0.0)) r.at(k).fail("must be > 0");
  };
  ratings("p_rated", s.p_rated);
  ratings("q_rated", s.q_rated);
  if (f.has("delta_omega_th")) s.delta_omega_th = f["delta_omega_th"].positive();
  if (f.has("delta_v_th")) s.delta_v_th = f["delta_v_th"].positive();
  if (f.has("omega_n")) s.omega_n = f["omega_n"].positive();
  if (f.has("v_n")) s.v_n = f["v_n"].positive();
  if (f.has("start_islanded")) s.start_islanded = f["start_islanded"].boolean();
  if (f.has("islanding_time")) s.islanding_time = f["islanding_time"].non_negative();

  // Graph: ring by default.
  s.adjacency = Matrix(n, n);
  s.pinning.assign(n, 0.0);
  std::string topology = "ring";
  std::size_t leader = 0;
  double leader_gain = 1.0;
  if (f.has("graph")) {
    const Field g = f["graph"];
    g.only({"topology", "leader", "leader_gain", "adjacency", "pinning", "k1", "k2"});
    if (g.has("topology")) topology = g["topology"].text();
    if (g.has("k1")) s.k1 = g["k1"].positive();
    if (g.has("k2")) s.k2 = g["k2"].positive();
    if (topology == "ring") {
      if (g.has("leader")) leader = g["leader"].dg(n);
      if (g.has("leader_gain")) leader_gain = g["leader_gain"].positive();
      if (g.has("adjacency") || g.has("pinning"))
        g["topology"].fail("adjacency/pinning need topology: custom");
    } else if (topology == "custom") {
      const Field a = g["adjacency"];
      if (!a.is_sequence() || a.size() != n) a.fail("needs " + std::to_string(n) + " rows");
      for (std::size_t r = 0; r < n; ++r) {
        const Vector row = a.at(r).numbers();
        if (row.size() != n) a.at(r).fail("needs " + std::to_string(n) + " entries");
        for (std::size_t c = 0; c < n; ++c) s.adjacency(r, c) = row[c];
      }
      s.pinning = g["pinning"].numbers();
      if (s.pinning.size() != n) g["pinning"].fail("needs " + std::to_string(n) + " entries");
      try {
        mg::CommGraph check(s.adjacency, s.pinning, s.k1, s.k2);
      } catch (const Error& e) {
        g.fail(e.what());
      }
    } else {
      g["topology"].fail("expected ring or custom");
    }
  }
  if (topology == "ring") {
    const auto ring = mg::CommGraph::ring(n, leader_gain, s.k1, s.k2);
    // Rotate so the configured leader is pinned.
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c)
        s.adjacency((r + leader) % n, (c + leader) % n) = ring.adjacency()(r, c);
    s.pinning[leader] = leader_gain;
  }

  s.network = mg::NetworkModel{};
  s.network.line_impedance.clear();
  const std::complex<double> defaults[4] = {{0.05, 0.5}, {0.07, 0.6}, {0.06, 0.45}, {0.08, 0.55}};
  for (std::size_t i = 0; i < n; ++i) s.network.line_impedance.push_back(defaults[i % 4]);
  s.network.load_p = 20000.0;
  s.network.load_q = 8000.0;
  s.network.load_reference_voltage = s.v_n;
  s.network.grid_voltage = s.v_n;
  s.network.grid_frequency = s.omega_n;
  if (f.has("network")) {
    const Field net = f["network"];
    net.only({"line_impedance", "load_p", "load_q", "load_reference_voltage", "grid_voltage",
              "grid_frequency", "filter_cutoff"});
    if (net.has("line_impedance")) {
      const Field z = net["line_impedance"];
      if (!z.is_sequence() || z.size() != n) z.fail("needs " + std::to_string(n) + " [R, X] pairs");
      for (std::size_t i = 0; i < n; ++i) {
        const Vector rx = z.at(i).numbers();
        if (rx.size() != 2 || rx[0] < 0.0 || !(rx[1] > 0.0)) z.at(i).fail("expected [R >= 0, X > 0]");
        s.network.line_impedance[i] = {rx[0], rx[1]};
      }
    }
    if (net.has("load_p")) s.network.load_p = net["load_p"].positive();
    if (net.has("load_q")) s.network.load_q = net["load_q"].number();
    if (net.has("load_reference_voltage"))
      s.network.load_reference_voltage = net["load_reference_voltage"].positive();
    if (net.has("grid_voltage")) s.network.grid_voltage = net["grid_voltage"].positive();
    if (net.has("grid_frequency")) s.network.grid_frequency = net["grid_frequency"].positive();
    if (net.has("filter_cutoff")) s.network.filter_cutoff = net["filter_cutoff"].positive();
  }
  s.network.pcc_closed = !s.start_islanded;
}

void read_noise(const Field& f, NoiseSettings& n) {
  f.only({"f", "v", "p", "q", "pcc_i", "pcc_v", "load_p", "load_q"});
  auto opt = [&](const char* key, double& out) {
    if (f.has(key)) out = f[key].non_negative();
  };
  opt("f", n.f);
  opt("v", n.v);
  opt("p", n.p);
  opt("q", n.q);
  opt("pcc_i", n.pcc_i);
  opt("pcc_v", n.pcc_v);
  opt("load_p", n.load_p);
  opt("load_q", n.load_q);
  for (const char* key : {"f", "v", "p", "q"})
    if (f.has(key) && !(f[key].number() > 0.0)) f[key].fail("DG sensor noise must be > 0");
}

void read_vddm(const Field& f, VddmSettings& v, std::uint64_t scenario_seed,
               const std::filesystem::path& base_dir) {
  f.only({"bundle", "horizons", "hidden", "activation", "eta", "epochs", "batch_size", "patience",
          "seed", "recon_duration", "drop_probability", "min_length", "max_gap",
          "holdout_fraction"});
  v.train.seed = scenario_seed;
  if (f.has("bundle")) {
    std::filesystem::path p = f["bundle"].text();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    v.bundle = p;
  }
  if (f.has("horizons")) {
    v.horizons = f["horizons"].numbers();
    if (v.horizons.empty()) f["horizons"].fail("needs at least one horizon");
    for (std::size_t k = 0; k < v.horizons.size(); ++k)
      if (!(v.horizons[k] > 0.0)) f["horizons"].at(k).fail("must be > 0");
  }
  if (f.has("hidden")) {
    const Field h = f["hidden"];
    if (!h.is_sequence()) h.fail("expected a list of widths");
    v.hidden.clear();
    for (std::size_t k = 0; k < h.size(); ++k) v.hidden.push_back(h.at(k).count());
  }
  if (f.has("activation")) {
    const auto a = f["activation"].text();
    if (a == "tanh") v.activation = neural::Activation::Tanh;
    else if (a == "relu") v.activation = neural::Activation::Relu;
    else if (a == "identity") v.activation = neural::Activation::Identity;
    else f["activation"].fail("expected tanh, relu or identity");
  }
  if (f.has("eta")) v.train.eta = f["eta"].positive();
  if (f.has("epochs")) v.train.epochs = f["epochs"].count();
  if (f.has("batch_size")) v.train.batch_size = f["batch_size"].count();
  if (f.has("patience")) v.train.patience = f["patience"].unsigned_integer();
  if (f.has("seed")) v.train.seed = f["seed"].unsigned_integer();
  if (f.has("recon_duration")) v.recon_duration = f["recon_duration"].positive();
  if (f.has("drop_probability")) {
    v.drop_probability = f["drop_probability"].non_negative();
    if (v.drop_probability >= 1.0) f["drop_probability"].fail("must be < 1");
  }
  if (f.has("min_length")) v.min_length = f["min_length"].count();
  if (f.has("max_gap")) v.max_gap = f["max_gap"].count();
  if (f.has("holdout_fraction")) {
    v.holdout_fraction = f["holdout_fraction"].positive();
    if (v.holdout_fraction >= 1.0) f["holdout_fraction"].fail("must be < 1");
  }
}

rootkit::AttackObjective read_objective(const Field& f, std::size_t n) {
  const auto kind = f["kind"].text();
  if (kind == "frequency") {
    f.only({"kind", "offset"});
    return rootkit::FrequencyManipulation{f["offset"].number()};
  }
  if (kind == "voltage") {
    f.only({"kind", "target", "ramp", "q_bias"});
    rootkit::VoltageManipulation v;
    v.target_dg = f["target"].dg(n);
    if (f.has("ramp")) v.ramp_v_per_s = f["ramp"].number();
    if (f.has("q_bias")) v.q_bias_var = f["q_bias"].number();
    return v;
  }
  if (kind == "load_sharing") {
    f.only({"kind", "ratios", "ramp_time"});
    rootkit::LoadSharingDisruption l;
    l.share_ratio = f["ratios"].numbers();
    if (l.share_ratio.size() != n) f["ratios"].fail("needs " + std::to_string(n) + " entries");
    for (std::size_t k = 0; k < n; ++k)
      if (!(l.share_ratio[k] > 0.0)) f["ratios"].at(k).fail("must be > 0");
    if (f.has("ramp_time")) l.ramp_time = f["ramp_time"].non_negative();
    return l;
  }
  f["kind"].fail("expected frequency, voltage or load_sharing");
}

void read_rootkit(const Field& f, Scenario& s) {
  f.only({"infection", "fault", "attack"});
  const std::size_t n = s.dg_count;
  RootkitSettings rk;
  const Field inf = f["infection"];
  inf.only({"sensors", "controllers", "pcc_access"});
  if (inf.has("sensors")) {
    const Field sens = inf["sensors"];
    const auto known = mg::sensor_ids(n);
    if (sens.is_sequence()) {
      for (std::size_t k = 0; k < sens.size(); ++k) {
        const auto id = sens.at(k).text();
        if (std::find(known.begin(), known.end(), id) == known.end())
          sens.at(k).fail("unknown sensor id " + id);
        rk.infection.sensors.push_back(id);
      }
    } else if (sens.text() == "all") {
      rk.infection.sensors = known;
    } else if (sens.text() == "dg") {
      rk.infection.sensors = mg::dg_sensor_ids(n);
    } else {
      sens.fail("expected a list of sensor ids, 'all' or 'dg'");
    }
  }
  if (inf.has("controllers")) rk.infection.controllers = inf["controllers"].dgs(n);
  if (inf.has("pcc_access")) rk.infection.pcc_access = inf["pcc_access"].boolean();
  try {
    rk.infection.normalize(n);
  } catch (const Error& e) {
    inf.fail(e.what());
  }

  if (f.has("fault")) {
    const Field ff = f["fault"];
    ff.only({"time", "magnitude_factor", "duration"});
    FaultSettings fs;
    if (ff.has("time")) fs.time = ff["time"].non_negative();
    if (ff.has("magnitude_factor")) fs.magnitude_factor = ff["magnitude_factor"].positive();
    if (ff.has("duration")) fs.duration = ff["duration"].positive();
    if (!rk.infection.pcc_access) ff.fail("forging a fault needs infection.pcc_access: true");
    rk.fault = fs;
  }

  if (f.has("attack")) {
    const Field a = f["attack"];
    a.only({"objective", "targets", "schedule", "mask"});
    AttackSettings at{read_objective(a["objective"], n), std::nullopt,
                      rootkit::FixedSchedule{5.0, s.duration}};
    if (a.has("targets")) {
      const Field t = a["targets"];
      if (!(!t.is_sequence() && t.text() == "auto")) at.targets = t.dgs(n);
    }
    if (a.has("schedule")) {
      const Field sc = a["schedule"];
      const auto policy = sc.has("policy") ? sc["policy"].text() : std::string("fixed");
      if (policy == "fixed") {
        sc.only({"policy", "start", "end"});
        rootkit::FixedSchedule fx{5.0, s.duration};
        if (sc.has("start")) fx.t_start = sc["start"].non_negative();
        if (sc.has("end")) fx.t_end = sc["end"].positive();
        if (!(fx.t_end > fx.t_start)) sc.fail("end must be after start");
        at.schedule = fx;
      } else if (policy == "settled") {
        sc.only({"policy", "tolerance", "duration", "not_before"});
        rootkit::SettledSchedule st{1e-3, s.duration, 0.0};
        if (sc.has("tolerance")) st.tolerance_hz = sc["tolerance"].positive();
        if (sc.has("duration")) st.duration = sc["duration"].positive();
        if (sc.has("not_before")) st.not_before = sc["not_before"].non_negative();
        at.schedule = st;
      } else {
        sc["policy"].fail("expected fixed or settled");
      }
    }
    if (a.has("mask")) {
      const Field m = a["mask"];
      m.only({"enabled", "scope"});
      if (m.has("enabled")) at.mask = m["enabled"].boolean();
      if (m.has("scope")) {
        const auto scope = m["scope"].text();
        if (scope == "targets") at.scope = rootkit::MaskScope::Targets;
        else if (scope == "infection_set") at.scope = rootkit::MaskScope::InfectionSet;
        else m["scope"].fail("expected targets or infection_set");
      }
    }
    rk.attack = std::move(at);
  }
  s.rootkit = std::move(rk);
}

Scenario read_root(const YAML::Node& root, const std::filesystem::path& base_dir) {
  const Field f(root, "", 1);
  if (!root.IsMap()) f.fail("scenario must be a mapping");
  f.only({"schema_version", "name", "seed", "duration", "dt", "decimation", "microgrid", "noise",
          "protection", "detector", "vddm", "rootkit"});
  Scenario s = reference_scenario();
  if (f.has("schema_version")) {
    s.schema_version = static_cast<int>(f["schema_version"].unsigned_integer());
    if (s.schema_version != kSchemaVersion)
      f["schema_version"].fail("unsupported version " + std::to_string(s.schema_version) +
                               " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  if (f.has("name")) {
    s.name = f["name"].text();
    if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos)
      f["name"].fail("must be a non-empty plain name");
  }
  if (f.has("seed")) s.seed = f["seed"].unsigned_integer();
  if (f.has("duration")) s.duration = f["duration"].positive();
  if (f.has("dt")) s.dt = f["dt"].positive();
  if (f.has("decimation")) s.decimation = f["decimation"].count();
  read_microgrid(f.has("microgrid") ? f["microgrid"] : Field(YAML::Node(YAML::NodeType::Map), "microgrid", 1), s);
  if (f.has("noise")) read_noise(f["noise"], s.noise);
  if (f.has("protection")) {
    const Field p = f["protection"];
    p.only({"rated_current", "pickup_factor", "dwell"});
    if (p.has("rated_current")) s.protection.rated_current = p["rated_current"].non_negative();
    if (p.has("pickup_factor")) s.protection.pickup_factor = p["pickup_factor"].positive();
    if (p.has("dwell")) s.protection.dwell = p["dwell"].positive();
  }
  if (s.protection.rated_current == 0.0) s.protection.rated_current = s.rated_current();
  if (f.has("detector")) {
    const Field d = f["detector"];
    d.only({"window", "false_alarm", "tau", "arm_delay"});
    if (d.has("window")) s.detector.window = d["window"].count();
    if (d.has("false_alarm")) {
      s.detector.false_alarm = d["false_alarm"].positive();
      if (s.detector.false_alarm >= 1.0) d["false_alarm"].fail("must be < 1");
    }
    if (d.has("tau")) s.detector.tau = d["tau"].positive();
    if (d.has("arm_delay")) s.detector.arm_delay = d["arm_delay"].non_negative();
  }
  s.vddm.train.seed = s.seed;
  if (f.has("vddm")) read_vddm(f["vddm"], s.vddm, s.seed, base_dir);
  if (f.has("rootkit")) read_rootkit(f["rootkit"], s);

  if (s.islanding_time && s.start_islanded)
    f["microgrid"]["islanding_time"].fail("start_islanded already opens the PCC");
  if (s.islanding_time && *s.islanding_time >= s.duration)
    f["microgrid"]["islanding_time"].fail("must fall inside the run");
  for (double h : s.vddm.horizons) {
    const double k = std::round(h / s.sample_period());
    if (k < 1.0 || std::abs(k * s.sample_period() - h) > 1e-9)
      f["vddm"]["horizons"].fail("horizon " + std::to_string(h) +
                                 " s is not a multiple of the sample period");
  }
  if (s.rootkit && s.rootkit->attack) {
    if (const auto* fx = std::get_if<rootkit::FixedSchedule>(&s.rootkit->attack->schedule)) {
      if (fx->t_end > s.duration + 1e-12)
        f["rootkit"]["attack"]["schedule"]["end"].fail("ends after the run");
      try {
        rootkit::schedule(*fx, s.expected_islanding());
      } catch (const Error& e) {
        f["rootkit"]["attack"]["schedule"].fail(e.what());
      }
    }
  }
  return s;
}

}  // namespace

Vector NoiseSettings::all_sigma(std::size_t n_dg) const {
  Vector out = dg_sigma(n_dg);
  out.push_back(pcc_i);
  out.push_back(pcc_v);
  return out;
}

Vector NoiseSettings::dg_sigma(std::size_t n_dg) const {
  Vector out;
  for (const auto& id : mg::dg_sensor_ids(n_dg)) {
    switch (mg::quantity_of(id)) {
      case 'f': out.push_back(f); break;
      case 'p': out.push_back(p); break;
      case 'q': out.push_back(q); break;
      default: out.push_back(v); break;
    }
  }
  return out;
}

mg::DroopParams Scenario::droop() const {
  return mg::droop_gains_from_ratings(p_rated, q_rated, delta_omega_th, delta_v_th, omega_n, v_n);
}

mg::CommGraph Scenario::graph() const { return mg::CommGraph(adjacency, pinning, k1, k2); }

mg::Microgrid Scenario::microgrid() const { return mg::Microgrid(droop(), graph(), network); }

double Scenario::rated_current() const {
  if (protection.rated_current > 0.0) return protection.rated_current;
  double s = 0.0;
  for (std::size_t i = 0; i < dg_count; ++i) s += std::hypot(p_rated[i], q_rated[i]);
  return s / (1.5 * v_n);
}

std::optional<double> Scenario::expected_islanding() const {
  if (start_islanded) return 0.0;
  std::optional<double> t = islanding_time;
  if (rootkit && rootkit->fault) {
    const double trip = rootkit->fault->time + protection.dwell;
    t = t ? std::min(*t, trip) : trip;
  }
  return t;
}

Scenario reference_scenario() {
  Scenario s;
  s.name = "reference";
  s.p_rated.assign(4, 10000.0);
  s.q_rated.assign(4, 10000.0);
  const auto ring = mg::CommGraph::ring(4, 1.0, s.k1, s.k2);
  s.adjacency = ring.adjacency();
  s.pinning = ring.pinning();
  s.network.line_impedance = {{0.05, 0.5}, {0.07, 0.6}, {0.06, 0.45}, {0.08, 0.55}};
  s.network.load_p = 20000.0;
  s.network.load_q = 8000.0;
  s.protection.rated_current = s.rated_current();
  return s;
}

Scenario parse_scenario_text(std::string_view text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorKind::Schema, "scenario (line " + std::to_string(e.mark.line + 1) +
                                       "): " + e.msg);
  }
  return read_root(root, base_dir);
}

Scenario parse_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read scenario " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario_text(buf.str(), path.parent_path());
}

std::string emit_scenario(const Scenario& s) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  auto vec = [&](const Vector& v) {
    out << YAML::Flow << YAML::BeginSeq;
    for (double x : v) out << x;
    out << YAML::EndSeq;
  };
  auto dgs = [&](const std::vector<std::size_t>& v) {
    out << YAML::Flow << YAML::BeginSeq;
    for (auto i : v) out << dg_name(i);
    out << YAML::EndSeq;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "schema_version" << YAML::Value << s.schema_version;
  out << YAML::Key << "name" << YAML::Value << s.name;
  out << YAML::Key << "seed" << YAML::Value << s.seed;
  out << YAML::Key << "duration" << YAML::Value << s.duration;
  out << YAML::Key << "dt" << YAML::Value << s.dt;
  out << YAML::Key << "decimation" << YAML::Value << s.decimation;

  out << YAML::Key << "microgrid" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "dg_count" << YAML::Value << s.dg_count;
  out << YAML::Key << "p_rated" << YAML::Value;
  vec(s.p_rated);
  out << YAML::Key << "q_rated" << YAML::Value;
  vec(s.q_rated);
  out << YAML::Key << "delta_omega_th" << YAML::Value << s.delta_omega_th;
  out << YAML::Key << "delta_v_th" << YAML::Value << s.delta_v_th;
  out << YAML::Key << "omega_n" << YAML::Value << s.omega_n;
  out << YAML::Key << "v_n" << YAML::Value << s.v_n;
  out << YAML::Key << "graph" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "topology" << YAML::Value << "custom";
  out << YAML::Key << "adjacency" << YAML::Value << YAML::BeginSeq;
  for (std::size_t r = 0; r < s.adjacency.rows(); ++r) {
    const auto row = s.adjacency.row(r);
    vec(Vector(row.begin(), row.end()));
  }
  out << YAML::EndSeq;
  out << YAML::Key << "pinning" << YAML::Value;
  vec(s.pinning);
  out << YAML::Key << "k1" << YAML::Value << s.k1;
  out << YAML::Key << "k2" << YAML::Value << s.k2;
  out << YAML::EndMap;
  out << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "line_impedance" << YAML::Value << YAML::BeginSeq;
  for (const auto& z : s.network.line_impedance) vec({z.real(), z.imag()});
  out << YAML::EndSeq;
  out << YAML::Key << "load_p" << YAML::Value << s.network.load_p;
  out << YAML::Key << "load_q" << YAML::Value << s.network.load_q;
  out << YAML::Key << "load_reference_voltage" << YAML::Value << s.network.load_reference_voltage;
  out << YAML::Key << "grid_voltage" << YAML::Value << s.network.grid_voltage;
  out << YAML::Key << "grid_frequency" << YAML::Value << s.network.grid_frequency;
  out << YAML::Key << "filter_cutoff" << YAML::Value << s.network.filter_cutoff;
  out << YAML::EndMap;
  out << YAML::Key << "start_islanded" << YAML::Value << s.start_islanded;
  if (s.islanding_time) out << YAML::Key << "islanding_time" << YAML::Value << *s.islanding_time;
  out << YAML::EndMap;

  out << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "f" << YAML::Value << s.noise.f;
  out << YAML::Key << "v" << YAML::Value << s.noise.v;
  out << YAML::Key << "p" << YAML::Value << s.noise.p;
  out << YAML::Key << "q" << YAML::Value << s.noise.q;
  out << YAML::Key << "pcc_i" << YAML::Value << s.noise.pcc_i;
  out << YAML::Key << "pcc_v" << YAML::Value << s.noise.pcc_v;
  out << YAML::Key << "load_p" << YAML::Value << s.noise.load_p;
  out << YAML::Key << "load_q" << YAML::Value << s.noise.load_q;
  out << YAML::EndMap;

  out << YAML::Key << "protection" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "rated_current" << YAML::Value << s.rated_current();
  out << YAML::Key << "pickup_factor" << YAML::Value << s.protection.pickup_factor;
  out << YAML::Key << "dwell" << YAML::Value << s.protection.dwell;
  out << YAML::EndMap;

  out << YAML::Key << "detector" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "window" << YAML::Value << s.detector.window;
  out << YAML::Key << "false_alarm" << YAML::Value << s.detector.false_alarm;
  if (s.detector.tau) out << YAML::Key << "tau" << YAML::Value << *s.detector.tau;
  out << YAML::Key << "arm_delay" << YAML::Value << s.detector.arm_delay;
  out << YAML::EndMap;

  const auto& v = s.vddm;
  out << YAML::Key << "vddm" << YAML::Value << YAML::BeginMap;
  if (v.bundle) out << YAML::Key << "bundle" << YAML::Value << v.bundle->string();
  out << YAML::Key << "horizons" << YAML::Value;
  vec(v.horizons);
  out << YAML::Key << "hidden" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto h : v.hidden) out << h;
  out << YAML::EndSeq;
  out << YAML::Key << "activation" << YAML::Value
      << (v.activation == neural::Activation::Tanh   ? "tanh"
          : v.activation == neural::Activation::Relu ? "relu"
                                                     : "identity");
  out << YAML::Key << "eta" << YAML::Value << v.train.eta;
  out << YAML::Key << "epochs" << YAML::Value << v.train.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << v.train.batch_size;
  out << YAML::Key << "patience" << YAML::Value << v.train.patience;
  out << YAML::Key << "seed" << YAML::Value << v.train.seed;
  out << YAML::Key << "recon_duration" << YAML::Value << v.recon_duration;
  out << YAML::Key << "drop_probability" << YAML::Value << v.drop_probability;
  out << YAML::Key << "min_length" << YAML::Value << v.min_length;
  out << YAML::Key << "max_gap" << YAML::Value << v.max_gap;
  out << YAML::Key << "holdout_fraction" << YAML::Value << v.holdout_fraction;
  out << YAML::EndMap;

  if (s.rootkit) {
    const auto& rk = *s.rootkit;
    out << YAML::Key << "rootkit" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "infection" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "sensors" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& id : rk.infection.sensors) out << id;
    out << YAML::EndSeq;
    out << YAML::Key << "controllers" << YAML::Value;
    dgs(rk.infection.controllers);
    out << YAML::Key << "pcc_access" << YAML::Value << rk.infection.pcc_access;
    out << YAML::EndMap;
    if (rk.fault) {
      out << YAML::Key << "fault" << YAML::Value << YAML::BeginMap;
      out << YAML::Key << "time" << YAML::Value << rk.fault->time;
      out << YAML::Key << "magnitude_factor" << YAML::Value << rk.fault->magnitude_factor;
      out << YAML::Key << "duration" << YAML::Value << rk.fault->duration;
      out << YAML::EndMap;
    }
    if (rk.attack) {
      const auto& a = *rk.attack;
      out << YAML::Key << "attack" << YAML::Value << YAML::BeginMap;
      out << YAML::Key << "objective" << YAML::Value << YAML::BeginMap;
      std::visit(overloaded{
                     [&](const rootkit::FrequencyManipulation& f) {
                       out << YAML::Key << "kind" << YAML::Value << "frequency";
                       out << YAML::Key << "offset" << YAML::Value << f.offset_hz;
                     },
                     [&](const rootkit::VoltageManipulation& vm) {
                       out << YAML::Key << "kind" << YAML::Value << "voltage";
                       out << YAML::Key << "target" << YAML::Value << dg_name(vm.target_dg);
                       out << YAML::Key << "ramp" << YAML::Value << vm.ramp_v_per_s;
                       out << YAML::Key << "q_bias" << YAML::Value << vm.q_bias_var;
                     },
                     [&](const rootkit::LoadSharingDisruption& l) {
                       out << YAML::Key << "kind" << YAML::Value << "load_sharing";
                       out << YAML::Key << "ratios" << YAML::Value;
                       vec(l.share_ratio);
                       out << YAML::Key << "ramp_time" << YAML::Value << l.ramp_time;
                     },
                 },
                 a.objective);
      out << YAML::EndMap;
      out << YAML::Key << "targets" << YAML::Value;
      if (a.targets) dgs(*a.targets);
      else out << "auto";
      out << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
      std::visit(overloaded{
                     [&](const rootkit::FixedSchedule& f) {
                       out << YAML::Key << "policy" << YAML::Value << "fixed";
                       out << YAML::Key << "start" << YAML::Value << f.t_start;
                       out << YAML::Key << "end" << YAML::Value << f.t_end;
                     },
                     [&](const rootkit::SettledSchedule& st) {
                       out << YAML::Key << "policy" << YAML::Value << "settled";
                       out << YAML::Key << "tolerance" << YAML::Value << st.tolerance_hz;
                       out << YAML::Key << "duration" << YAML::Value << st.duration;
                       out << YAML::Key << "not_before" << YAML::Value << st.not_before;
                     },
                 },
                 a.schedule);
      out << YAML::EndMap;
      out << YAML::Key << "mask" << YAML::Value << YAML::BeginMap;
      out << YAML::Key << "enabled" << YAML::Value << a.mask;
      out << YAML::Key << "scope" << YAML::Value
          << (a.scope == rootkit::MaskScope::Targets ? "targets" : "infection_set");
      out << YAML::EndMap;
      out << YAML::EndMap;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace gridveil::sim
