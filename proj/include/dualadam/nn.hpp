#pragma once

// Small fully connected classifiers with hand-written backprop, synthetic
// datasets, and a seeded mini-batch training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualadam/common.hpp"
#include "dualadam/optim.hpp"

namespace dualadam {

enum class Activation { Relu, Tanh };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw Error("unknown activation '" + std::string(s) + "'; valid: relu, tanh");
}

/// Parameters live in one flat vector; layer l stores its weight matrix
/// (n_out x n_in, row major) followed by its bias vector.
struct Network {
  std::vector<int> layer_sizes;
  Activation activation = Activation::Tanh;
  Vector params;

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < l; ++k)
      off += static_cast<std::size_t>(layer_sizes[k] + 1) * static_cast<std::size_t>(layer_sizes[k + 1]);
    return off;
  }
  std::size_t bias_offset(std::size_t l) const {
    return weight_offset(l) +
           static_cast<std::size_t>(layer_sizes[l]) * static_cast<std::size_t>(layer_sizes[l + 1]);
  }
  int input_width() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
};

inline std::size_t parameter_count(std::span<const int> layer_sizes) {
  std::size_t p = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    p += static_cast<std::size_t>(layer_sizes[l]) * static_cast<std::size_t>(layer_sizes[l + 1]) +
         static_cast<std::size_t>(layer_sizes[l + 1]);
  return p;
}

/// Uniform(-sqrt(6/(n_in+n_out)), +sqrt(6/(n_in+n_out))) weights, zero biases.
inline Network make_network(std::vector<int> layer_sizes, Activation act, std::uint64_t seed) {
  require(layer_sizes.size() >= 2, "network needs at least an input and an output layer");
  for (int s : layer_sizes) require(s >= 1, "layer sizes must be positive");
  Network net{std::move(layer_sizes), act, {}};
  net.params.assign(parameter_count(net.layer_sizes), 0.0);
  Rng rng = make_rng(seed, 0x696e6974ULL);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const int n_in = net.layer_sizes[l], n_out = net.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / (n_in + n_out));
    std::uniform_real_distribution<double> uni(-limit, limit);
    const std::size_t w = net.weight_offset(l);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_in * n_out); ++i) net.params[w + i] = uni(rng);
  }
  return net;
}

struct Dataset {
  std::size_t n = 0;
  std::size_t dim = 0;
  int classes = 0;
  Vector inputs;  // n x dim, row major
  std::vector<int> labels;
  std::vector<std::size_t> train, val, test;

  std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dim, dim}; }
};

namespace detail {
inline void assign_splits(Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> idx(ds.n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 0x73706c74ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.64 * static_cast<double>(ds.n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.16 * static_cast<double>(ds.n)));
  ds.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
}

// Class k receives n/C points, the first n%C classes one extra.
inline std::size_t class_count(std::size_t n, int classes, int k) {
  return n / static_cast<std::size_t>(classes) +
         (static_cast<std::size_t>(k) < n % static_cast<std::size_t>(classes) ? 1 : 0);
}
}  // namespace detail

/// Two interleaving half circles with Gaussian coordinate noise.
inline Dataset make_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  require(n >= 10, "dataset needs n >= 10");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  Dataset ds{n, 2, 2, Vector(2 * n), std::vector<int>(n), {}, {}, {}};
  Rng rng = make_rng(seed, 0x6d6f6f6eULL);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t i = 0;
  for (int k = 0; k < 2; ++k) {
    for (std::size_t j = 0; j < detail::class_count(n, 2, k); ++j, ++i) {
      const double a = angle(rng);
      double x = k == 0 ? std::cos(a) : 1.0 - std::cos(a);
      double y = k == 0 ? std::sin(a) : 0.5 - std::sin(a);
      x += noise_sigma * normal(rng);
      y += noise_sigma * normal(rng);
      ds.inputs[2 * i] = x;
      ds.inputs[2 * i + 1] = y;
      ds.labels[i] = k;
    }
  }
  detail::assign_splits(ds, seed);
  return ds;
}

/// `classes` interleaved spiral arms (4 radians each) with Gaussian angle noise.
inline Dataset make_spirals(std::size_t n, int classes, double noise_sigma, std::uint64_t seed) {
  require(n >= 10, "dataset needs n >= 10");
  require(classes >= 2, "spirals need at least 2 classes");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  Dataset ds{n, 2, classes, Vector(2 * n), std::vector<int>(n), {}, {}, {}};
  Rng rng = make_rng(seed, 0x73706972ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t i = 0;
  for (int k = 0; k < classes; ++k) {
    const std::size_t m = detail::class_count(n, classes, k);
    for (std::size_t j = 0; j < m; ++j, ++i) {
      const double r = (static_cast<double>(j) + 0.5) / static_cast<double>(m);
      const double t = 2.0 * std::numbers::pi * k / classes + 4.0 * r +
                       noise_sigma * normal(rng);
      ds.inputs[2 * i] = r * std::cos(t);
      ds.inputs[2 * i + 1] = r * std::sin(t);
      ds.labels[i] = k;
    }
  }
  detail::assign_splits(ds, seed);
  return ds;
}

/// A contiguous copy of selected dataset rows.
struct Batch {
  std::size_t size = 0;
  std::size_t dim = 0;
  Vector inputs;
  std::vector<int> labels;
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> idx) {
  Batch b{idx.size(), ds.dim, Vector(idx.size() * ds.dim), std::vector<int>(idx.size())};
  for (std::size_t s = 0; s < idx.size(); ++s) {
    const auto r = ds.row(idx[s]);
    std::copy(r.begin(), r.end(), b.inputs.begin() + static_cast<std::ptrdiff_t>(s * ds.dim));
    b.labels[s] = ds.labels[idx[s]];
  }
  return b;
}

/// Per-layer activations kept for the backward pass. acts[0] is the input,
/// pre[l] the pre-activation of layer l+1; the last pre[] holds the logits.
struct ForwardCache {
  std::vector<Vector> acts;
  std::vector<Vector> pre;
};

namespace detail {
inline void check_batch(const Network& net, const Batch& b) {
  require(b.size > 0, "batch must be non-empty");
  require(b.dim == static_cast<std::size_t>(net.input_width()),
          "batch width " + std::to_string(b.dim) + " does not match input layer " +
              std::to_string(net.input_width()));
  for (int y : b.labels)
    if (y < 0 || y >= net.num_classes())
      throw Error("label " + std::to_string(y) + " out of range [0, " +
                  std::to_string(net.num_classes()) + ")");
}
}  // namespace detail

inline ForwardCache forward(const Network& net, const Batch& b,
                            std::span<const double> params = {}) {
  detail::check_batch(net, b);
  const std::span<const double> P = params.empty() ? std::span<const double>(net.params) : params;
  ForwardCache c;
  c.acts.push_back(b.inputs);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto n_in = static_cast<std::size_t>(net.layer_sizes[l]);
    const auto n_out = static_cast<std::size_t>(net.layer_sizes[l + 1]);
    const double* W = P.data() + net.weight_offset(l);
    const double* bias = P.data() + net.bias_offset(l);
    const Vector& a = c.acts.back();
    Vector z(b.size * n_out);
    for (std::size_t s = 0; s < b.size; ++s) {
      const double* x = a.data() + s * n_in;
      for (std::size_t o = 0; o < n_out; ++o) {
        const double* w = W + o * n_in;
        double acc = bias[o];
        for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
        z[s * n_out + o] = acc;
      }
    }
    const bool hidden = l + 1 < net.num_layers();
    c.pre.push_back(std::move(z));
    if (hidden) {
      Vector h = c.pre.back();
      for (double& v : h) v = net.activation == Activation::Relu ? std::max(0.0, v) : std::tanh(v);
      c.acts.push_back(std::move(h));
    }
  }
  return c;
}

namespace detail {
// Mean cross entropy; writes d(loss)/d(logits) into `dlogits` if non-null.
inline double cross_entropy(std::span<const double> logits, std::span<const int> labels,
                            std::size_t classes, Vector* dlogits) {
  const std::size_t b = labels.size();
  double total = 0.0;
  if (dlogits) dlogits->assign(b * classes, 0.0);
  for (std::size_t s = 0; s < b; ++s) {
    const double* z = logits.data() + s * classes;
    const double zmax = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(sum);
    total += lse - z[labels[s]];
    if (dlogits) {
      for (std::size_t k = 0; k < classes; ++k)
        (*dlogits)[s * classes + k] = std::exp(z[k] - lse) / static_cast<double>(b);
      (*dlogits)[s * classes + static_cast<std::size_t>(labels[s])] -= 1.0 / static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}
}  // namespace detail

struct LossGrad {
  double loss;
  Vector grad;
};

/// Batch-mean cross-entropy and its gradient with respect to all parameters.
/// `params` overrides net.params when non-empty.
inline LossGrad loss_and_grad(const Network& net, const Batch& b,
                              std::span<const double> params = {}) {
  const std::span<const double> P = params.empty() ? std::span<const double>(net.params) : params;
  const ForwardCache c = forward(net, b, P);
  const auto C = static_cast<std::size_t>(net.num_classes());
  Vector delta;
  LossGrad out{detail::cross_entropy(c.pre.back(), b.labels, C, &delta), Vector(P.size(), 0.0)};

  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const auto n_in = static_cast<std::size_t>(net.layer_sizes[l]);
    const auto n_out = static_cast<std::size_t>(net.layer_sizes[l + 1]);
    const double* W = P.data() + net.weight_offset(l);
    double* dW = out.grad.data() + net.weight_offset(l);
    double* db = out.grad.data() + net.bias_offset(l);
    const Vector& a = c.acts[l];
    for (std::size_t s = 0; s < b.size; ++s) {
      const double* x = a.data() + s * n_in;
      const double* d = delta.data() + s * n_out;
      for (std::size_t o = 0; o < n_out; ++o) {
        db[o] += d[o];
        double* row = dW + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) row[i] += d[o] * x[i];
      }
    }
    if (l == 0) break;
    Vector prev(b.size * n_in, 0.0);
    const Vector& z_prev = c.pre[l - 1];
    for (std::size_t s = 0; s < b.size; ++s) {
      const double* d = delta.data() + s * n_out;
      double* pd = prev.data() + s * n_in;
      for (std::size_t o = 0; o < n_out; ++o) {
        const double* w = W + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) pd[i] += d[o] * w[i];
      }
      for (std::size_t i = 0; i < n_in; ++i) {
        const double z = z_prev[s * n_in + i];
        if (net.activation == Activation::Relu) {
          pd[i] *= z > 0.0 ? 1.0 : 0.0;
        } else {
          const double th = c.acts[l][s * n_in + i];
          pd[i] *= 1.0 - th * th;
        }
      }
    }
    delta = std::move(prev);
  }
  return out;
}

struct Evaluation {
  double loss;
  double accuracy;
};

inline Evaluation evaluate(const Network& net, const Batch& b, std::span<const double> params = {}) {
  const ForwardCache c = forward(net, b, params);
  const auto C = static_cast<std::size_t>(net.num_classes());
  const Vector& z = c.pre.back();
  std::size_t correct = 0;
  for (std::size_t s = 0; s < b.size; ++s) {
    const auto first = z.begin() + static_cast<std::ptrdiff_t>(s * C);
    const auto pred = std::max_element(first, first + static_cast<std::ptrdiff_t>(C)) - first;
    if (pred == b.labels[s]) ++correct;
  }
  return {detail::cross_entropy(z, b.labels, C, nullptr),
          static_cast<double>(correct) / static_cast<double>(b.size)};
}

struct EpochRecord {
  std::int64_t epoch;
  double train_loss;
  double val_loss;
  double test_accuracy;
  double generalization_gap;  // val_loss - train_loss
  double alpha;
  double train_accuracy;
  double val_accuracy;
};

struct TrainRun {
  std::vector<EpochRecord> epochs;
  Vector final_params;
  bool diverged = false;
  std::int64_t iterations = 0;
};

struct TrainOptions {
  std::int64_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 1;  // record every k-th epoch (the last one always)
};

inline std::int64_t iterations_per_epoch(std::size_t train_size, std::size_t batch_size) {
  require(batch_size >= 1, "batch_size must be >= 1");
  return static_cast<std::int64_t>((train_size + batch_size - 1) / batch_size);
}

/// Batch order of epoch k: a pure function of (seed, k).
inline std::vector<std::size_t> epoch_order(std::span<const std::size_t> train, std::uint64_t seed,
                                            std::int64_t epoch) {
  std::vector<std::size_t> order(train.begin(), train.end());
  Rng rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)), 0x73687566ULL);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Mini-batch training from `net`'s current parameters. One optimizer step
/// per batch; a partial final batch is kept.
inline TrainRun train(const Network& net, const Dataset& ds, const OptimizerConfig& cfg,
                      const TrainOptions& opt) {
  cfg.validate();
  require(opt.epochs >= 1, "epochs must be >= 1");
  require(opt.batch_size >= 1 && opt.batch_size <= ds.train.size(),
          "batch_size must lie in [1, train split size]");
  require(opt.eval_every >= 1, "eval_every must be >= 1");

  const Batch train_all = make_batch(ds, ds.train);
  const Batch val_all = make_batch(ds, ds.val);
  const Batch test_all = make_batch(ds, ds.test);

  TrainRun run;
  Network work = net;
  OptimizerState state(work.params.size());
  double alpha = effective_alpha(cfg, 1, 0);

  for (std::int64_t e = 0; e < opt.epochs && !run.diverged; ++e) {
    const auto order = epoch_order(ds.train, opt.seed, e);
    for (std::size_t lo = 0; lo < order.size(); lo += opt.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + opt.batch_size);
      const Batch b = make_batch(ds, std::span(order).subspan(lo, hi - lo));
      LossGrad lg = loss_and_grad(work, b);
      if (!std::isfinite(lg.loss) ||
          !std::all_of(lg.grad.begin(), lg.grad.end(), [](double v) { return std::isfinite(v); })) {
        run.diverged = true;
        break;
      }
      alpha = step(state, work.params, lg.grad, cfg, e).alpha;
      ++run.iterations;
    }
    if (run.diverged) break;
    const bool last = e + 1 == opt.epochs;
    if (!last && (e + 1) % opt.eval_every != 0) continue;
    const Evaluation tr = evaluate(work, train_all);
    const Evaluation va = evaluate(work, val_all);
    const Evaluation te = evaluate(work, test_all);
    run.epochs.push_back({e + 1, tr.loss, va.loss, te.accuracy, va.loss - tr.loss, alpha,
                          tr.accuracy, va.accuracy});
    if (!std::isfinite(tr.loss)) run.diverged = true;
  }
  run.final_params = work.params;
  return run;
}

/// Full-split loss gradient, the oracle used by Hessian measurements.
inline auto split_loss_grad(const Network& net, const Dataset& ds, std::span<const std::size_t> split) {
  return [&net, b = make_batch(ds, split)](std::span<const double> params) {
    return loss_and_grad(net, b, params).grad;
  };
}

inline auto split_loss(const Network& net, const Dataset& ds, std::span<const std::size_t> split) {
  return [&net, b = make_batch(ds, split)](std::span<const double> params) {
    return evaluate(net, b, params).loss;
  };
}

// Parameter file: one JSON header line, then one value per line.
inline void save_params(const std::string& path, const Network& net, std::span<const double> params,
                        const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header = extra;
  header["layer_sizes"] = net.layer_sizes;
  header["activation"] = to_string(net.activation);
  header["num_params"] = params.size();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open " + path + " for writing");
  out << header.dump() << '\n';
  for (double v : params) out << fmt_num(v) << '\n';
}

struct LoadedParams {
  Network net;
  nlohmann::json header;
};

inline LoadedParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("parameter file not found: " + path);
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": malformed JSON header: " + e.what());
  }
  LoadedParams lp;
  lp.header = header;
  lp.net.layer_sizes = header.at("layer_sizes").get<std::vector<int>>();
  lp.net.activation = parse_activation(header.at("activation").get<std::string>());
  const std::size_t p = parameter_count(lp.net.layer_sizes);
  lp.net.params.reserve(p);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    lp.net.params.push_back(std::stod(line));
  }
  if (lp.net.params.size() != p)
    throw Error(path + ": expected " + std::to_string(p) + " parameters, found " +
                std::to_string(lp.net.params.size()));
  return lp;
}

}  // namespace dualadam
