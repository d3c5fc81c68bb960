#include "gridveil/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gridveil/binary_io.hpp"
#include "gridveil/error.hpp"
#include "gridveil/kernels/kernels.hpp"

namespace gridveil::neural {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Identity: return z;
  }
  return z;
}

// Derivative expressed through the activation output y = act(z).
double activate_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

struct Trace {
  std::vector<Vector> z;  // pre-activation per layer
  std::vector<Vector> a;  // a[0] = input, a[k+1] = output of layer k
};

void forward_trace(const NetworkWeights& w, std::span<const double> input, Trace& tr) {
  const std::size_t layers = w.spec.layers();
  tr.a.resize(layers + 1);
  tr.z.resize(layers);
  tr.a[0].assign(input.begin(), input.end());
  for (std::size_t k = 0; k < layers; ++k) {
    Vector& z = tr.z[k];
    z.resize(w.w[k].rows());
    kernels::gemv(w.w[k].data(), w.w[k].rows(), w.w[k].cols(), tr.a[k], z);
    for (std::size_t r = 0; r < z.size(); ++r) z[r] += w.b[k][r];
    Vector& out = tr.a[k + 1];
    out.resize(z.size());
    const bool hidden = k + 1 < layers;
    for (std::size_t r = 0; r < z.size(); ++r)
      out[r] = hidden ? activate(w.spec.activation, z[r]) : z[r];
  }
}

Gradients zero_gradients(const NetworkWeights& w) {
  Gradients g;
  for (std::size_t k = 0; k < w.w.size(); ++k) {
    g.dw.emplace_back(w.w[k].rows(), w.w[k].cols());
    g.db.emplace_back(w.b[k].size(), 0.0);
  }
  return g;
}

}  // namespace

void LayerSpec::validate() const {
  if (sizes.size() < 2) throw Error(ErrorKind::InvalidConfig, "layer spec needs >= 2 widths");
  for (auto s : sizes)
    if (s == 0) throw Error(ErrorKind::InvalidConfig, "layer widths must be >= 1");
}

NetworkWeights NetworkWeights::zeros(const LayerSpec& spec) {
  spec.validate();
  NetworkWeights w;
  w.spec = spec;
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    w.w.emplace_back(spec.sizes[k + 1], spec.sizes[k]);
    w.b.emplace_back(spec.sizes[k + 1], 0.0);
  }
  return w;
}

NetworkWeights NetworkWeights::glorot(const LayerSpec& spec, Rng& rng) {
  NetworkWeights w = zeros(spec);
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(spec.sizes[k] + spec.sizes[k + 1]));
    for (double& v : w.w[k].data()) v = rng.uniform(-limit, limit);
  }
  return w;
}

bool NetworkWeights::all_finite() const {
  for (const auto& m : w)
    if (!m.all_finite()) return false;
  for (const auto& v : b)
    for (double x : v)
      if (!std::isfinite(x)) return false;
  return true;
}

void NetworkWeights::validate() const {
  spec.validate();
  if (w.size() != spec.layers() || b.size() != spec.layers())
    throw Error(ErrorKind::InvalidInput, "weights do not match the layer spec");
  for (std::size_t k = 0; k < spec.layers(); ++k)
    if (w[k].rows() != spec.sizes[k + 1] || w[k].cols() != spec.sizes[k] ||
        b[k].size() != spec.sizes[k + 1])
      throw Error(ErrorKind::InvalidInput, "layer " + std::to_string(k) + " has the wrong shape");
  if (!all_finite()) throw Error(ErrorKind::InvalidInput, "weights contain non-finite values");
}

void TrainConfig::validate() const {
  if (!(eta > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning rate must be > 0");
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch size must be >= 1");
}

Vector forward(const NetworkWeights& w, std::span<const double> input) {
  if (w.spec.sizes.empty() || input.size() != w.spec.inputs())
    throw Error(ErrorKind::InvalidInput, "forward: input width " + std::to_string(input.size()) +
                                             " does not match the network");
  Trace tr;
  forward_trace(w, input, tr);
  return std::move(tr.a.back());
}

LossGradient loss_and_gradient(const NetworkWeights& w, std::span<const Sample> batch) {
  if (batch.empty()) throw Error(ErrorKind::InvalidInput, "empty batch");
  const std::size_t layers = w.spec.layers();
  const std::size_t outputs = w.spec.outputs();
  const double inv = 1.0 / static_cast<double>(batch.size() * outputs);

  LossGradient lg{0.0, zero_gradients(w)};
  Trace tr;
  Vector delta, back;
  for (const Sample& s : batch) {
    if (s.input.size() != w.spec.inputs() || s.target.size() != outputs)
      throw Error(ErrorKind::InvalidInput, "sample shape does not match the network");
    forward_trace(w, s.input, tr);
    const Vector& y = tr.a.back();
    delta.resize(outputs);
    for (std::size_t r = 0; r < outputs; ++r) {
      const double e = y[r] - s.target[r];
      lg.loss += e * e * inv;
      delta[r] = 2.0 * e * inv;
    }
    for (std::size_t k = layers; k-- > 0;) {
      Matrix& dw = lg.grad.dw[k];
      for (std::size_t r = 0; r < delta.size(); ++r) {
        lg.grad.db[k][r] += delta[r];
        kernels::axpy(delta[r], tr.a[k], dw.row(r));
      }
      if (k == 0) break;
      back.assign(w.w[k].cols(), 0.0);
      for (std::size_t r = 0; r < delta.size(); ++r) kernels::axpy(delta[r], w.w[k].row(r), back);
      for (std::size_t c = 0; c < back.size(); ++c)
        back[c] *= activate_grad(w.spec.activation, tr.z[k - 1][c], tr.a[k][c]);
      delta.swap(back);
    }
  }
  return lg;
}

double mse(const NetworkWeights& w, std::span<const Sample> batch) {
  if (batch.empty()) throw Error(ErrorKind::InvalidInput, "empty batch");
  double total = 0.0;
  for (const Sample& s : batch) {
    const Vector y = forward(w, s.input);
    for (std::size_t r = 0; r < y.size(); ++r) total += (y[r] - s.target[r]) * (y[r] - s.target[r]);
  }
  return total / static_cast<double>(batch.size() * w.spec.outputs());
}

UpdateResult backprop_update(const TrainConfig& cfg, const NetworkWeights& w,
                             std::span<const Sample> batch) {
  cfg.validate();
  const LossGradient lg = loss_and_gradient(w, batch);
  if (!std::isfinite(lg.loss)) throw Error(ErrorKind::Divergence, "non-finite batch loss");
  UpdateResult out{w, lg.loss};
  for (std::size_t k = 0; k < w.w.size(); ++k) {
    kernels::axpy(-cfg.eta, lg.grad.dw[k].data(), out.weights.w[k].data());
    kernels::axpy(-cfg.eta, lg.grad.db[k], out.weights.b[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------

Normalization Normalization::identity(std::size_t in, std::size_t out) {
  return {Vector(in, 0.0), Vector(in, 1.0), Vector(out, 0.0), Vector(out, 1.0)};
}

Normalization Normalization::fit(std::span<const Sample> data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error(ErrorKind::InvalidInput, "cannot fit normalization on no rows");
  const std::size_t in = data[rows[0]].input.size();
  const std::size_t out = data[rows[0]].target.size();
  Normalization n = identity(in, out);
  auto fit_one = [&](auto member, Vector& mean, Vector& scale) {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(scale.begin(), scale.end(), 0.0);
    for (auto r : rows) {
      const Vector& v = data[r].*member;
      for (std::size_t c = 0; c < v.size(); ++c) mean[c] += v[c];
    }
    for (double& m : mean) m /= static_cast<double>(rows.size());
    for (auto r : rows) {
      const Vector& v = data[r].*member;
      for (std::size_t c = 0; c < v.size(); ++c) scale[c] += (v[c] - mean[c]) * (v[c] - mean[c]);
    }
    for (std::size_t c = 0; c < scale.size(); ++c) {
      const double sd = std::sqrt(scale[c] / static_cast<double>(rows.size()));
      // Constant features keep unit scale.
      scale[c] = sd > 1e-12 * std::max(1.0, std::abs(mean[c])) ? sd : 1.0;
    }
  };
  fit_one(&Sample::input, n.in_mean, n.in_scale);
  fit_one(&Sample::target, n.out_mean, n.out_scale);
  return n;
}

Vector Normalization::input(std::span<const double> raw) const {
  if (raw.size() != in_mean.size()) throw Error(ErrorKind::InvalidInput, "input width mismatch");
  Vector v(raw.size());
  for (std::size_t c = 0; c < raw.size(); ++c) v[c] = (raw[c] - in_mean[c]) / in_scale[c];
  return v;
}

Vector Normalization::output(std::span<const double> raw) const {
  if (raw.size() != out_mean.size()) throw Error(ErrorKind::InvalidInput, "target width mismatch");
  Vector v(raw.size());
  for (std::size_t c = 0; c < raw.size(); ++c) v[c] = (raw[c] - out_mean[c]) / out_scale[c];
  return v;
}

Vector Normalization::denormalize_output(std::span<const double> y) const {
  Vector v(y.size());
  for (std::size_t c = 0; c < y.size(); ++c) v[c] = y[c] * out_scale[c] + out_mean[c];
  return v;
}

Vector TrainedModel::predict(std::span<const double> raw_input) const {
  return norm.denormalize_output(forward(weights, norm.input(raw_input)));
}

DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed ^ 0x5eed5117ull);
  shuffle(idx, rng);
  const std::size_t n_train = n * 70 / 100;
  const std::size_t n_val = n * 15 / 100;
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                      idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

double normalized_mse(const TrainedModel& model, std::span<const Sample> data,
                      std::span<const std::size_t> rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (auto r : rows) {
    const Vector y = forward(model.weights, model.norm.input(data[r].input));
    const Vector t = model.norm.output(data[r].target);
    for (std::size_t c = 0; c < y.size(); ++c) total += (y[c] - t[c]) * (y[c] - t[c]);
  }
  return total / static_cast<double>(rows.size() * model.weights.spec.outputs());
}

TrainResult train(const LayerSpec& spec, const TrainConfig& cfg, std::span<const Sample> dataset) {
  spec.validate();
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorKind::InsufficientData, "training dataset is empty");
  for (const auto& s : dataset)
    if (s.input.size() != spec.inputs() || s.target.size() != spec.outputs())
      throw Error(ErrorKind::InvalidInput, "dataset sample does not match the layer spec");

  TrainResult result;
  result.split = split_dataset(dataset.size(), cfg.seed);
  if (result.split.train.empty())
    throw Error(ErrorKind::InsufficientData, "dataset too small for a training split");
  // Tiny datasets validate on the training split.
  const auto& val_rows =
      result.split.validation.empty() ? result.split.train : result.split.validation;

  const Normalization norm = Normalization::fit(dataset, result.split.train);
  std::vector<Sample> train_set;
  train_set.reserve(result.split.train.size());
  for (auto r : result.split.train)
    train_set.push_back({norm.input(dataset[r].input), norm.output(dataset[r].target)});

  Rng rng(cfg.seed);
  TrainedModel current{NetworkWeights::glorot(spec, rng), norm};
  result.model = current;
  double best = std::numeric_limits<double>::infinity();
  result.best_epoch = 0;

  std::vector<std::size_t> order(train_set.size());
  std::vector<Sample> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      UpdateResult up;
      try {
        up = backprop_update(cfg, current.weights, batch);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Divergence)
          throw Error(ErrorKind::Divergence, "training diverged in epoch " + std::to_string(epoch));
        throw;
      }
      current.weights = std::move(up.weights);
    }
    const double train_mse = mse(current.weights, train_set);
    const double val_mse = normalized_mse(current, dataset, val_rows);
    if (!std::isfinite(train_mse) || !std::isfinite(val_mse) || !current.weights.all_finite())
      throw Error(ErrorKind::Divergence, "training diverged in epoch " + std::to_string(epoch));
    if (val_mse < best) {
      best = val_mse;
      result.best_epoch = epoch;
      result.model = current;
    }
    result.history.push_back({epoch, train_mse, val_mse, best});
    if (epoch - result.best_epoch > cfg.patience) break;
  }
  result.train_mse = result.history[result.best_epoch - 1].train_mse;
  result.val_mse = result.history[result.best_epoch - 1].val_mse;
  result.test_mse = normalized_mse(result.model, dataset, result.split.test);
  return result;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint16_t kBlobVersion = 1;

void write_vector(ByteWriter& w, const Vector& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (double x : v) w.f64(x);
}

Vector read_vector(ByteReader& r) {
  const auto n = r.u32();
  Vector v;
  v.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) v.push_back(r.f64());
  return v;
}
}  // namespace

std::vector<std::uint8_t> serialize(const TrainedModel& model) {
  model.weights.validate();
  ByteWriter w;
  w.bytes("GVNN");
  w.u16(kBlobVersion);
  const LayerSpec& spec = model.weights.spec;
  w.u32(static_cast<std::uint32_t>(spec.sizes.size()));
  for (auto s : spec.sizes) w.u32(static_cast<std::uint32_t>(s));
  w.u8(static_cast<std::uint8_t>(spec.activation));
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    for (double x : model.weights.w[k].data()) w.f64(x);
    for (double x : model.weights.b[k]) w.f64(x);
  }
  write_vector(w, model.norm.in_mean);
  write_vector(w, model.norm.in_scale);
  write_vector(w, model.norm.out_mean);
  write_vector(w, model.norm.out_scale);
  return std::move(w).take();
}

TrainedModel deserialize(std::span<const std::uint8_t> blob) {
  ByteReader r(blob);
  r.expect("GVNN");
  const auto at_version = r.offset();
  if (r.u16() != kBlobVersion) r.fail("unsupported GVNN version", at_version);
  LayerSpec spec;
  const auto at_layers = r.offset();
  const auto n = r.u32();
  if (n < 2 || n > 1024) r.fail("bad layer count", at_layers);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    const auto s = r.u32();
    if (s == 0 || s > (1u << 20)) r.fail("bad layer width", at);
    spec.sizes.push_back(s);
  }
  const auto at_act = r.offset();
  const auto act = r.u8();
  if (act > 2) r.fail("unknown activation", at_act);
  spec.activation = static_cast<Activation>(act);
  TrainedModel model{NetworkWeights::zeros(spec), {}};
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    for (double& x : model.weights.w[k].data()) x = r.f64();
    for (double& x : model.weights.b[k]) x = r.f64();
  }
  model.norm.in_mean = read_vector(r);
  model.norm.in_scale = read_vector(r);
  model.norm.out_mean = read_vector(r);
  model.norm.out_scale = read_vector(r);
  if (model.norm.in_mean.size() != spec.inputs() || model.norm.in_scale.size() != spec.inputs() ||
      model.norm.out_mean.size() != spec.outputs() || model.norm.out_scale.size() != spec.outputs())
    r.fail("normalization does not match the layer spec");
  if (!r.at_end()) r.fail("trailing bytes");
  return model;
}

}  // namespace gridveil::neural
