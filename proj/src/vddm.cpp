#include "gridveil/vddm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "gridveil/binary_io.hpp"
#include "gridveil/error.hpp"

namespace gridveil::vddm {

namespace {

std::size_t index_in(std::span<const std::string> ids, std::string_view id) {
  const auto it = std::find(ids.begin(), ids.end(), id);
  return it == ids.end() ? ids.size() : static_cast<std::size_t>(it - ids.begin());
}

std::vector<std::size_t> horizon_steps(const Vector& horizons, double period) {
  if (horizons.empty()) throw Error(ErrorKind::InvalidConfig, "at least one horizon is required");
  std::vector<std::size_t> steps;
  for (double t : horizons) {
    const double k = std::round(t / period);
    if (!(t > 0.0) || k < 1.0 || std::abs(k * period - t) > 1e-9 * std::max(1.0, t))
      throw Error(ErrorKind::InvalidConfig, "horizon " + std::to_string(t) +
                                                " s is not a positive multiple of the sample period");
    steps.push_back(static_cast<std::size_t>(k));
  }
  return steps;
}

// Marks samples that sit inside a gap run longer than max_gap.
std::vector<bool> low_quality(const MeasurementStream& s, std::size_t max_gap) {
  std::vector<bool> low(s.size(), false);
  std::size_t k = 0;
  while (k < s.size()) {
    if (s.samples[k]) {
      ++k;
      continue;
    }
    std::size_t end = k;
    while (end < s.size() && !s.samples[end]) ++end;
    if (end - k > max_gap) std::fill(low.begin() + static_cast<std::ptrdiff_t>(k),
                                     low.begin() + static_cast<std::ptrdiff_t>(end), true);
    k = end;
  }
  return low;
}

void check_length(const MeasurementStream& s, const CorpusConfig& cfg) {
  if (s.size() < cfg.min_length)
    throw Error(ErrorKind::InsufficientData, "stream has " + std::to_string(s.size()) +
                                                 " samples; at least " +
                                                 std::to_string(cfg.min_length) + " are required");
}

Vector with_horizon(Vector v, double horizon) {
  v.push_back(horizon);
  return v;
}

Vector project_query(const VddmModel& model, const MeasurementVector& m) {
  Vector out;
  out.reserve(model.sensor_ids.size());
  for (const auto& id : model.sensor_ids) {
    const std::size_t k = index_in(m.sensor_ids, id);
    if (k == m.sensor_ids.size())
      throw Error(ErrorKind::InvalidQuery, "query lacks sensor " + id + " used by the model");
    out.push_back(m.values[k]);
  }
  return out;
}

PredictedState run_model(const VddmModel& model, Vector input, double horizon) {
  input.push_back(horizon);
  PredictedState p{model.net.predict(input), horizon, model.model_version};
  for (double v : p.values)
    if (!std::isfinite(v)) throw Error(ErrorKind::Numerical, "model produced a non-finite prediction");
  return p;
}

void check_horizon(double horizon) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw Error(ErrorKind::InvalidQuery, "horizon must be > 0");
}

}  // namespace

void MeasurementVector::validate() const {
  if (sensor_ids.size() != values.size())
    throw Error(ErrorKind::InvalidInput, "measurement ids and values differ in length");
  for (std::size_t k = 1; k < sensor_ids.size(); ++k)
    if (!(sensor_ids[k - 1] < sensor_ids[k]))
      throw Error(ErrorKind::InvalidInput, "measurement ids must be unique and sorted");
}

Vector MeasurementVector::project(std::span<const std::string> ids) const {
  Vector out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const std::size_t k = index_in(sensor_ids, id);
    if (k == sensor_ids.size()) throw Error(ErrorKind::InvalidInput, "measurement lacks " + id);
    out.push_back(values[k]);
  }
  return out;
}

std::size_t MeasurementStream::observed() const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.has_value(); }));
}

void MeasurementStream::validate() const {
  if (!(sample_period > 0.0)) throw Error(ErrorKind::InvalidInput, "sample period must be > 0");
  MeasurementVector{sensor_ids, Vector(sensor_ids.size()), 0.0}.validate();
  for (const auto& s : samples)
    if (s && s->size() != sensor_ids.size())
      throw Error(ErrorKind::InvalidInput, "stream sample width does not match its sensors");
}

Vector labels_from_readings(std::span<const double> r, std::span<const double> d_p,
                            std::span<const double> d_q) {
  const std::size_t n = d_p.size();
  if (r.size() != 4 * n) throw Error(ErrorKind::InvalidInput, "reading width is not 4 per DG");
  Vector out(4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out[4 * i] = r[4 * i];                    // f
    out[4 * i + 1] = r[4 * i + 3];            // v
    out[4 * i + 2] = d_p[i] * r[4 * i + 1];   // p
    out[4 * i + 3] = d_q[i] * r[4 * i + 2];   // q
  }
  return out;
}

AttackerModel make_attacker_model(const mg::Linearization& lin, const mg::DroopParams& droop,
                                  std::span<const std::string> sensors,
                                  std::span<const double> sensor_sigma,
                                  std::span<const double> load_sigma) {
  const std::size_t n = droop.size();
  const auto all = mg::dg_sensor_ids(n);
  if (sensor_sigma.size() != all.size() || load_sigma.size() != 2)
    throw Error(ErrorKind::InvalidConfig, "noise description does not match the plant");
  if (sensors.empty()) throw Error(ErrorKind::InvalidConfig, "attacker reads no DG sensors");

  std::vector<std::size_t> rows;
  for (const auto& id : sensors) {
    const std::size_t k = index_in(all, id);
    if (k == all.size()) throw Error(ErrorKind::InvalidConfig, "unknown DG sensor " + id);
    rows.push_back(k);
  }

  AttackerModel a;
  a.sensor_ids.assign(sensors.begin(), sensors.end());
  const std::size_t nz = lin.f.rows();
  Vector load_var{load_sigma[0] * load_sigma[0], load_sigma[1] * load_sigma[1]};
  Matrix c0 = lin.b * Matrix::diagonal(load_var) * lin.b.transpose();
  for (std::size_t i = 0; i < nz; ++i) c0(i, i) += 1e-10;
  Vector var;
  for (double s : sensor_sigma) var.push_back(s * s);
  const estimator::LinearModel full{lin.f, lin.b, lin.h, c0.symmetrized(), Matrix::diagonal(var)};
  a.model = full.select_outputs(rows);
  for (auto r : rows) a.measurement_offset.push_back(lin.m0[r]);

  a.label_map = Matrix(4 * n, nz);
  a.label_offset.assign(4 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src[4] = {4 * i, 4 * i + 3, 4 * i + 1, 4 * i + 2};
    const double gain[4] = {1.0, 1.0, droop.d_p[i], droop.d_q[i]};
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t z = 0; z < nz; ++z) a.label_map(4 * i + c, z) = gain[c] * lin.h(src[c], z);
      a.label_offset[4 * i + c] = gain[c] * lin.m0[src[c]];
    }
  }
  const auto ss = estimator::steady_state(a.model, a.model.c0, 1e-8, 20000);
  a.initial = {Vector(nz, 0.0), ss.p_pred};
  a.d_p = droop.d_p;
  a.d_q = droop.d_q;
  return a;
}

Corpus build_corpus(const MeasurementStream& stream, const AttackerModel& attacker,
                    const CorpusConfig& cfg) {
  stream.validate();
  if (stream.sensor_ids != attacker.sensor_ids)
    throw Error(ErrorKind::InvalidInput, "stream sensors differ from the attacker model's");
  check_length(stream, cfg);
  const auto steps = horizon_steps(cfg.horizons, stream.sample_period);
  const std::size_t max_h = *std::max_element(steps.begin(), steps.end());
  if (max_h >= stream.size())
    throw Error(ErrorKind::InsufficientData, "longest horizon exceeds the stream");
  if (stream.observed() == 0)
    throw Error(ErrorKind::InsufficientData, "stream has no observed samples");

  std::vector<std::optional<Vector>> dev(stream.size());
  for (std::size_t k = 0; k < stream.size(); ++k)
    if (stream.samples[k]) dev[k] = sub(*stream.samples[k], attacker.measurement_offset);
  const auto imputed = estimator::impute_series(attacker.model, dev, {}, attacker.initial);

  std::vector<Vector> inputs(stream.size()), labels(stream.size());
  for (std::size_t k = 0; k < stream.size(); ++k) {
    inputs[k] = stream.samples[k] ? *stream.samples[k]
                                  : add(imputed.m_reconstructed[k], attacker.measurement_offset);
    labels[k] = add(attacker.label_map * imputed.x_filtered[k], attacker.label_offset);
  }
  const auto low = low_quality(stream, cfg.max_gap);

  Corpus c;
  c.sensor_ids = stream.sensor_ids;
  c.horizons = cfg.horizons;
  const std::size_t span_t = stream.size() - max_h;
  for (std::size_t j = 0; j < steps.size(); ++j) {
    for (std::size_t t = 0; t < span_t; ++t) {
      if (low[t] || low[t + steps[j]]) {
        ++c.excluded;
        continue;
      }
      c.samples.push_back({with_horizon(inputs[t], cfg.horizons[j]), labels[t + steps[j]]});
      c.horizon_index.push_back(j);
      c.time_index.push_back(t);
    }
  }
  if (c.samples.empty()) throw Error(ErrorKind::InsufficientData, "every pair was excluded");
  return c;
}

Corpus build_raw_corpus(const MeasurementStream& stream, std::span<const double> d_p,
                        std::span<const double> d_q, const CorpusConfig& cfg) {
  stream.validate();
  check_length(stream, cfg);
  const auto all = mg::dg_sensor_ids(d_p.size());
  std::vector<std::size_t> cols;
  for (const auto& id : all) {
    const std::size_t k = index_in(stream.sensor_ids, id);
    if (k == stream.sensor_ids.size())
      throw Error(ErrorKind::InsufficientData, "raw labels need sensor " + id);
    cols.push_back(k);
  }
  const auto steps = horizon_steps(cfg.horizons, stream.sample_period);
  const std::size_t max_h = *std::max_element(steps.begin(), steps.end());
  if (max_h >= stream.size())
    throw Error(ErrorKind::InsufficientData, "longest horizon exceeds the stream");

  Corpus c;
  c.sensor_ids = stream.sensor_ids;
  c.horizons = cfg.horizons;
  const std::size_t span_t = stream.size() - max_h;
  Vector ordered(all.size());
  for (std::size_t j = 0; j < steps.size(); ++j) {
    for (std::size_t t = 0; t < span_t; ++t) {
      const auto& now = stream.samples[t];
      const auto& later = stream.samples[t + steps[j]];
      if (!now || !later) {
        ++c.excluded;
        continue;
      }
      for (std::size_t k = 0; k < cols.size(); ++k) ordered[k] = (*later)[cols[k]];
      c.samples.push_back({with_horizon(*now, cfg.horizons[j]), labels_from_readings(ordered, d_p, d_q)});
      c.horizon_index.push_back(j);
      c.time_index.push_back(t);
    }
  }
  if (c.samples.empty()) throw Error(ErrorKind::InsufficientData, "no fully observed pairs");
  return c;
}

std::string model_version(const Corpus& corpus, const neural::LayerSpec& spec,
                          const neural::TrainConfig& cfg) {
  ByteWriter w;
  for (const auto& id : corpus.sensor_ids) w.str(id);
  for (double h : corpus.horizons) w.f64(h);
  std::uint64_t h = fnv1a(w.data());
  ByteWriter rows;
  for (const auto& s : corpus.samples) {
    for (double x : s.input) rows.f64(x);
    for (double x : s.target) rows.f64(x);
  }
  h = fnv1a(rows.data(), h);
  ByteWriter tail;
  for (auto s : spec.sizes) tail.u32(static_cast<std::uint32_t>(s));
  tail.u8(static_cast<std::uint8_t>(spec.activation));
  tail.f64(cfg.eta);
  tail.u64(cfg.epochs);
  tail.u64(cfg.batch_size);
  tail.u64(cfg.seed);
  tail.u64(cfg.patience);
  return hex64(fnv1a(tail.data(), h));
}

TrainedVddm train_vddm(const Corpus& corpus, std::span<const std::size_t> hidden,
                       neural::Activation activation, const neural::TrainConfig& cfg,
                       std::span<const double> d_p, std::span<const double> d_q) {
  if (corpus.samples.empty()) throw Error(ErrorKind::InsufficientData, "empty corpus");
  neural::LayerSpec spec;
  spec.activation = activation;
  spec.sizes.push_back(corpus.samples.front().input.size());
  spec.sizes.insert(spec.sizes.end(), hidden.begin(), hidden.end());
  spec.sizes.push_back(4 * d_p.size());
  if (corpus.samples.front().target.size() != spec.sizes.back())
    throw Error(ErrorKind::InvalidInput, "corpus labels do not match the DG count");

  TrainedVddm out;
  out.result = neural::train(spec, cfg, corpus.samples);
  out.model.net = out.result.model;
  out.model.sensor_ids = corpus.sensor_ids;
  out.model.horizons = corpus.horizons;
  out.model.d_p.assign(d_p.begin(), d_p.end());
  out.model.d_q.assign(d_q.begin(), d_q.end());
  out.model.model_version = model_version(corpus, spec, cfg);
  return out;
}

PredictedState predict_state(const VddmModel& model, const PredictionQuery& q) {
  check_horizon(q.horizon);
  if (q.alpha) throw Error(ErrorKind::InvalidQuery, "predict_state takes no attack vector");
  return run_model(model, project_query(model, q.m), q.horizon);
}

PredictedState evaluate_attack(const VddmModel& model, const PredictionQuery& q,
                               const AlphaBound& alpha_max) {
  check_horizon(q.horizon);
  if (!q.alpha) throw Error(ErrorKind::InvalidQuery, "evaluate_attack needs an attack vector");
  const AttackVector& a = *q.alpha;
  if (a.target_ids.size() != a.deltas.size())
    throw Error(ErrorKind::InvalidQuery, "attack vector ids and deltas differ in length");
  MeasurementVector m = q.m;
  for (std::size_t k = 0; k < a.target_ids.size(); ++k) {
    const auto& id = a.target_ids[k];
    const auto bound = alpha_max.find(id);
    if (bound == alpha_max.end())
      throw Error(ErrorKind::StealthViolation, "no admissible bias on " + id);
    if (!(std::abs(a.deltas[k]) <= bound->second))
      throw Error(ErrorKind::StealthViolation, "|alpha| on " + id + " is " +
                                                   std::to_string(std::abs(a.deltas[k])) +
                                                   " > alpha_max " + std::to_string(bound->second));
    const std::size_t col = index_in(m.sensor_ids, id);
    if (col == m.sensor_ids.size())
      throw Error(ErrorKind::InvalidQuery, "attack targets " + id + " outside the measurement");
    m.values[col] += a.deltas[k];
  }
  return run_model(model, project_query(model, m), q.horizon);
}

FidelityReport fidelity_report(const VddmModel& model, const neural::TrainResult& result,
                               const TruthTrace& trace, std::span<const double> scale) {
  FidelityReport rep;
  rep.train_mse = result.train_mse;
  rep.val_mse = result.val_mse;
  rep.test_mse = result.test_mse;
  rep.horizons = model.horizons;
  rep.model_version = model.model_version;
  const Vector& sc = scale.empty() ? model.net.norm.out_scale : Vector(scale.begin(), scale.end());
  if (sc.size() != 4 * model.dgs())
    throw Error(ErrorKind::InvalidInput, "fidelity scale does not match the outputs");
  if (trace.truth.size() != trace.reported.size())
    throw Error(ErrorKind::InvalidInput, "truth and reported traces differ in length");

  const auto steps = horizon_steps(model.horizons, trace.reported.sample_period);
  double pooled = 0.0;
  std::size_t pooled_n = 0;
  for (std::size_t j = 0; j < steps.size(); ++j) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t + steps[j] < trace.reported.size(); ++t) {
      const auto& s = trace.reported.samples[t];
      if (!s) continue;
      const MeasurementVector m{trace.reported.sensor_ids, *s, 0.0};
      const auto p = run_model(model, project_query(model, m), model.horizons[j]);
      const Vector& truth = trace.truth[t + steps[j]];
      for (std::size_t c = 0; c < p.values.size(); ++c) {
        const double e = (p.values[c] - truth[c]) / sc[c];
        sum += e * e;
      }
      n += p.values.size();
    }
    rep.per_horizon_mse.push_back(n ? sum / static_cast<double>(n) : std::nan(""));
    pooled += sum;
    pooled_n += n;
  }
  rep.trace_mse = pooled_n ? pooled / static_cast<double>(pooled_n) : std::nan("");
  return rep;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint16_t kBundleVersion = 1;
}

std::vector<std::uint8_t> serialize_bundle(const VddmModel& model) {
  ByteWriter w;
  w.bytes("GVDM");
  w.u16(kBundleVersion);
  w.str(model.model_version);
  w.u32(static_cast<std::uint32_t>(model.sensor_ids.size()));
  for (const auto& id : model.sensor_ids) w.str(id);
  w.u32(static_cast<std::uint32_t>(model.horizons.size()));
  for (double h : model.horizons) w.f64(h);
  w.u32(static_cast<std::uint32_t>(model.dgs()));
  for (double x : model.d_p) w.f64(x);
  for (double x : model.d_q) w.f64(x);
  w.blob(neural::serialize(model.net));
  return std::move(w).take();
}

VddmModel deserialize_bundle(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect("GVDM");
  const auto at = r.offset();
  if (r.u16() != kBundleVersion) r.fail("unsupported bundle version", at);
  VddmModel m;
  m.model_version = r.str();
  const auto n_ids = r.u32();
  for (std::uint32_t k = 0; k < n_ids; ++k) m.sensor_ids.push_back(r.str());
  const auto n_h = r.u32();
  for (std::uint32_t k = 0; k < n_h; ++k) m.horizons.push_back(r.f64());
  const auto at_dg = r.offset();
  const auto n_dg = r.u32();
  if (n_dg == 0 || n_dg > 4096) r.fail("bad DG count", at_dg);
  for (std::uint32_t k = 0; k < n_dg; ++k) m.d_p.push_back(r.f64());
  for (std::uint32_t k = 0; k < n_dg; ++k) m.d_q.push_back(r.f64());
  const auto at_blob = r.offset();
  const auto blob = r.blob();
  try {
    m.net = neural::deserialize(blob);
  } catch (const Error& e) {
    r.fail(std::string("embedded network: ") + e.what(), at_blob);
  }
  if (m.net.weights.spec.inputs() != m.sensor_ids.size() + 1 ||
      m.net.weights.spec.outputs() != 4 * m.dgs())
    r.fail("network shape does not match the manifest", at_blob);
  if (!r.at_end()) r.fail("trailing bytes");
  return m;
}

void save_bundle(const std::filesystem::path& path, const VddmModel& model) {
  const auto bytes = serialize_bundle(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

VddmModel load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_bundle(bytes);
}

}  // namespace gridveil::vddm
