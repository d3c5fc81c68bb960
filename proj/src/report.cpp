#include "gridveil/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gridveil/bdd.hpp"
#include "gridveil/error.hpp"

namespace gridveil::sim {

namespace {

std::string dg_name(std::size_t i) { return "dg" + std::to_string(i + 1); }

std::vector<double> series(const csv::Table& t, const std::string& name) {
  if (!t.has(name)) throw Error(ErrorKind::InvalidInput, "telemetry lacks column " + name);
  return t.numbers(name);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

Verdicts analyze(const csv::Table& tel, const csv::Table& events, const Scenario& s) {
  const std::size_t n = s.dg_count;
  const auto t = series(tel, "t");
  const auto islanded = series(tel, "islanded");
  const auto attack = series(tel, "attack");
  const auto fr = series(tel, "freq_residual");
  const auto ps = series(tel, "p_share_residual");
  const auto r_mean = series(tel, "r_mean");
  const auto alarm = series(tel, "alarm");
  std::vector<std::vector<double>> p(n), omega(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = series(tel, dg_name(i) + ".p");
    omega[i] = series(tel, dg_name(i) + ".omega");
    v[i] = series(tel, dg_name(i) + ".v");
  }
  const std::size_t rows = t.size();

  Verdicts out;
  bool diverged = false;
  if (events.has("event")) {
    const std::size_t c = events.column("event");
    for (const auto& row : events.rows) diverged = diverged || row[c] == "divergence";
  }
  out.plant = diverged ? "diverged" : "nominal";

  std::size_t first_island = rows;
  for (std::size_t k = 0; k < rows && first_island == rows; ++k)
    if (islanded[k] != 0.0) first_island = k;
  std::size_t first_attack = rows, last_attack = rows;
  for (std::size_t k = 0; k < rows; ++k) {
    if (attack[k] == 0.0) continue;
    if (first_attack == rows) first_attack = k;
    last_attack = k;
  }
  const bool attacked = first_attack < rows;
  const double t_start = attacked ? t[first_attack > 0 ? first_attack - 1 : 0] : 0.0;
  const double t_end = attacked ? t[last_attack] : 0.0;

  // Pre-attack settled interval: 3 s after islanding until the attack opens.
  double fr_max = 0.0, ps_max = 0.0, share_err = 0.0;
  std::size_t settled = 0;
  if (first_island < rows) {
    const double from = t[first_island] + 3.0;
    for (std::size_t k = first_island; k < rows; ++k) {
      if (t[k] + 1e-9 < from) continue;
      if (attacked && t[k] > t_start + 1e-9) break;
      ++settled;
      fr_max = std::max(fr_max, fr[k]);
      ps_max = std::max(ps_max, ps[k]);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += p[i][k];
      const double fair = total / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        share_err = std::max(share_err, std::abs(p[i][k] - fair) / std::abs(fair));
    }
  }
  if (settled == 0) {
    out.secondary_control = "not_evaluated";
    out.load_sharing = "not_evaluated";
  } else {
    out.secondary_control =
        fr_max < 1e-3 && ps_max < 1e-3 * s.delta_omega_th ? "nominal" : "off_target";
    out.load_sharing = share_err <= 0.01 ? "nominal" : "unequal";
    out.metrics.push_back({"settled_freq_residual_max", fr_max});
    out.metrics.push_back({"settled_p_share_residual_max", ps_max});
    out.metrics.push_back({"settled_share_error_max", share_err});
  }

  const AttackSettings* atk =
      s.rootkit && s.rootkit->attack ? &*s.rootkit->attack : nullptr;
  if (!atk) {
    out.objective = "nominal";
  } else if (!attacked) {
    out.objective = "not_met";
  } else if (const auto* f = std::get_if<rootkit::FrequencyManipulation>(&atk->objective)) {
    const double want = s.omega_n + f->offset_hz;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      std::size_t cnt = 0;
      for (std::size_t k = first_attack; k <= last_attack; ++k)
        if (t[k] > t_end - 1.0 + 1e-9) sum += omega[i][k], ++cnt;
      const double mean = cnt ? sum / static_cast<double>(cnt) : 0.0;
      out.metrics.push_back({dg_name(i) + ".last_second_mean_omega", mean});
      worst = std::max(worst, std::abs(mean - want));
    }
    out.metrics.push_back({"frequency_error_max", worst});
    out.objective = worst <= 0.005 ? "met" : "not_met";
  } else if (const auto* vm = std::get_if<rootkit::VoltageManipulation>(&atk->objective)) {
    const auto& vt = v[vm->target_dg];
    const std::size_t k0 = first_attack > 0 ? first_attack - 1 : 0;
    std::size_t steps = 0, rising = 0;
    for (std::size_t k = k0 + 1; k <= last_attack; ++k, ++steps)
      if (vt[k] >= vt[k - 1]) ++rising;
    const double frac = steps ? static_cast<double>(rising) / static_cast<double>(steps) : 0.0;
    const double rise = (vt[last_attack] - vt[k0]) / vt[k0];
    out.metrics.push_back({"voltage_non_decreasing_fraction", frac});
    out.metrics.push_back({"voltage_relative_rise", rise});
    out.objective = frac >= 0.99 && rise >= 0.02 ? "met" : "not_met";
  } else {
    double pre = 0.0, post = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
      if (t[k] >= t_start - 1.0 - 1e-9 && t[k] <= t_start + 1e-9) pre = std::max(pre, ps[k]);
      if (t[k] > t_start + 1e-9 && t[k] <= t_start + 1.0 + 1e-9) post = std::max(post, ps[k]);
    }
    out.metrics.push_back({"p_share_residual_pre", pre});
    out.metrics.push_back({"p_share_residual_post", post});
    out.objective = post > 10.0 * pre ? "met" : "not_met";
  }

  std::size_t windows = 0, alarms = 0;
  for (std::size_t k = 0; k < rows; ++k) {
    if (!std::isfinite(r_mean[k])) continue;
    if (atk && attack[k] == 0.0) continue;
    ++windows;
    if (alarm[k] != 0.0) ++alarms;
  }
  out.windows = windows;
  out.alarm_rate = windows ? static_cast<double>(alarms) / static_cast<double>(windows) : 0.0;
  const bool quiet = out.alarm_rate <= s.detector.false_alarm + 0.02;
  if (atk) out.stealth = windows == 0 ? "not_evaluated" : quiet ? "maintained" : "violated";
  else out.stealth = quiet ? "nominal" : "false_alarms";
  out.metrics.push_back({"alarm_rate", out.alarm_rate});
  out.metrics.push_back({"alarm_windows", static_cast<double>(windows)});
  return out;
}

nlohmann::ordered_json to_json(const Verdicts& v) {
  nlohmann::ordered_json j;
  j["plant"] = v.plant;
  j["secondary_control"] = v.secondary_control;
  j["load_sharing"] = v.load_sharing;
  j["objective"] = v.objective;
  j["stealth"] = v.stealth;
  nlohmann::ordered_json m;
  for (const auto& [k, x] : v.metrics) m[k] = x;
  j["metrics"] = m;
  return j;
}

std::string verdict_table(const Verdicts& v) {
  std::ostringstream out;
  auto line = [&](const char* k, const std::string& x) {
    out << "  " << k << std::string(20 - std::char_traits<char>::length(k), ' ') << x << "\n";
  };
  out << "verdicts\n";
  line("plant", v.plant);
  line("secondary_control", v.secondary_control);
  line("load_sharing", v.load_sharing);
  line("objective", v.objective);
  line("stealth", v.stealth);
  out << "metrics\n";
  for (const auto& [k, x] : v.metrics) out << "  " << k << " = " << csv::format(x) << "\n";
  return out.str();
}

std::vector<std::string> figure_ids() { return {"frequency", "voltage", "power_share", "alarms"}; }

std::string figure_csv(const std::string& figure, const csv::Table& tel, std::size_t n, double tau) {
  auto need = [&](const std::string& col) {
    if (!tel.has(col))
      throw Error(ErrorKind::InvalidInput, "figure '" + figure + "' needs series " + col);
    return tel.numbers(col);
  };
  const auto t = need("t");
  std::vector<std::string> header{"t"};
  std::vector<std::vector<double>> cols;
  if (figure == "frequency" || figure == "voltage") {
    const char* q = figure == "frequency" ? ".omega" : ".v";
    for (std::size_t i = 0; i < n; ++i) {
      header.push_back(dg_name(i) + q);
      cols.push_back(need(dg_name(i) + q));
    }
  } else if (figure == "power_share") {
    std::vector<std::vector<double>> p;
    for (std::size_t i = 0; i < n; ++i) p.push_back(need(dg_name(i) + ".p"));
    for (std::size_t i = 0; i < n; ++i) {
      header.push_back(dg_name(i) + ".p");
      cols.push_back(p[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      header.push_back(dg_name(i) + ".share");
      std::vector<double> share(t.size());
      for (std::size_t k = 0; k < t.size(); ++k) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += p[j][k];
        share[k] = p[i][k] / total;
      }
      cols.push_back(std::move(share));
    }
  } else if (figure == "alarms") {
    header.insert(header.end(), {"r_mean", "tau", "alarm"});
    cols.push_back(need("r_mean"));
    cols.push_back(std::vector<double>(t.size(), tau));
    cols.push_back(need("alarm"));
  } else {
    throw Error(ErrorKind::InvalidInput, "unknown figure '" + figure + "'");
  }
  csv::Writer w(header);
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (figure == "alarms" && !std::isfinite(cols[0][k])) continue;
    w.cell(t[k]);
    for (const auto& c : cols) w.cell(c[k]);
    w.end_row();
  }
  return w.text();
}

ReportSummary report(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "telemetry.csv"))
    throw Error(ErrorKind::Io, "run dir " + dir.string() + " has no telemetry.csv");
  const auto s = parse_scenario(dir / "scenario.resolved.yaml");
  const auto tel = csv::parse(read_file(dir / "telemetry.csv"));
  const auto events = std::filesystem::exists(dir / "events.csv")
                          ? csv::parse(read_file(dir / "events.csv"))
                          : csv::parse("t,event,detail\n");
  const double tau = s.detector.tau ? *s.detector.tau
                                    : bdd::default_tau(4 * s.dg_count, s.detector.window,
                                                       s.detector.false_alarm);
  ReportSummary out;
  out.verdicts = analyze(tel, events, s);
  const auto fig_dir = dir / "figures";
  std::filesystem::create_directories(fig_dir);
  for (const auto& id : figure_ids()) {
    const auto path = fig_dir / (id + ".csv");
    std::ofstream f(path, std::ios::binary);
    f << figure_csv(id, tel, s.dg_count, tau);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out.figures.push_back(path);
  }
  std::ostringstream text;
  text << "run " << s.name << " (seed " << s.seed << ", " << tel.rows.size() << " samples)\n";
  text << verdict_table(out.verdicts);
  text << "figures\n";
  for (const auto& p : out.figures) text << "  " << p.string() << "\n";
  out.text = text.str();
  std::ofstream(dir / "summary.txt", std::ios::binary) << out.text;
  return out;
}

}  // namespace gridveil::sim
