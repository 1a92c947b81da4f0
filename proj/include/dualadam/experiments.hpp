#pragma once

// Subcommand orchestration: config -> experiment -> artifacts in a run
// directory, closed by manifest.json. Shared by the CLI and the acceptance
// suite so both see the same defaults.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualadam/analysis.hpp"
#include "dualadam/common.hpp"
#include "dualadam/config.hpp"
#include "dualadam/escape.hpp"
#include "dualadam/io.hpp"
#include "dualadam/landscape.hpp"
#include "dualadam/nn.hpp"
#include "dualadam/optim.hpp"
#include "dualadam/parallel.hpp"

namespace dualadam {

namespace fs = std::filesystem;

inline constexpr const char* kArtifactVersion = "1.0";

/// Iterations of the reference training run in which the linear rate 8e-5
/// switched after 15.98% of training. Sweep rates are transposed by
/// T_reference / T_desk so each rate keeps its switch fraction.
inline constexpr double kReferenceIterations = 12500.0 / 0.1598;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"trajectory", "train", "hessian", "escape", "sweep"};
  return names;
}

namespace header {
inline const std::vector<std::string> trajectory{"step", "x", "y", "loss", "alpha", "update_norm"};
inline const std::vector<std::string> contour{"x", "y", "loss"};
inline const std::vector<std::string> train{"epoch", "train_loss", "val_loss", "test_acc", "gen_gap", "alpha"};
inline const std::vector<std::string> summary{"optimizer", "mean_acc", "std_acc", "mean_gap"};
inline const std::vector<std::string> slice{"zeta", "loss"};
inline const std::vector<std::string> escape{"H_phi", "dynamics", "median_steps", "mean_steps",
                                             "censoring_rate"};
inline const std::vector<std::string> sweep_rate{"switching_rate", "train_loss_mean", "train_loss_std",
                                                 "val_acc_mean", "val_acc_std"};
inline const std::vector<std::string> sweep_mechanism{"mechanism", "parameter", "train_loss_mean",
                                                      "train_loss_std", "val_acc_mean", "val_acc_std"};
inline const std::vector<std::string> sweep_runs{"cell", "seed", "train_loss", "val_acc"};
}  // namespace header

/// Output of one subcommand before the manifest is written.
struct RunResult {
  std::vector<std::string> files;  // relative to the run directory
  Json resolved;                   // effective parameters, defaults filled in
  std::int64_t diverged_runs = 0;
};

// ---------------------------------------------------------------- data/net

struct DataSpec {
  std::string kind = "two_moons";
  std::size_t n = 400;
  double noise = 0.2;
  int classes = 2;

  Dataset make(std::uint64_t seed) const {
    if (kind == "two_moons") return make_two_moons(n, noise, seed);
    if (kind == "spirals") return make_spirals(n, classes, noise, seed);
    throw Error("unknown dataset '" + kind + "'; valid datasets: two_moons, spirals");
  }
  int num_classes() const { return kind == "two_moons" ? 2 : classes; }
  Json to_json() const { return {{"kind", kind}, {"n", n}, {"noise", noise}, {"classes", num_classes()}}; }
  static DataSpec from_json(const Json& j) {
    DataSpec d;
    d.kind = j.at("kind").get<std::string>();
    d.n = j.at("n").get<std::size_t>();
    d.noise = j.at("noise").get<double>();
    d.classes = j.at("classes").get<int>();
    return d;
  }
};

struct TrainSpec {
  DataSpec data;
  std::vector<int> hidden{32, 32};
  Activation activation = Activation::Tanh;
  std::int64_t epochs = 200;
  std::size_t batch_size = 32;
  double switch_fraction = 0.16;
  std::vector<OptimizerKind> optimizers{OptimizerKind::Adam, OptimizerKind::DualAdam};
  Config source;

  std::vector<int> layer_sizes() const {
    std::vector<int> s{2};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(data.num_classes());
    return s;
  }

  std::int64_t total_iterations() const {
    return epochs * iterations_per_epoch(data.make(0).train.size(), batch_size);
  }

  /// DualAdam takes its linear rate from `switch_fraction` unless the
  /// config sets one explicitly.
  OptimizerConfig optimizer(OptimizerKind kind, std::size_t train_size) const {
    OptimizerConfig c = optimizer_config(source, kind);
    const bool explicit_rate = source.has("schedule.rate") || source.has(to_string(kind) + ".schedule.rate");
    if (!explicit_rate && c.schedule.kind == ScheduleKind::Linear) {
      const std::int64_t total = epochs * iterations_per_epoch(train_size, batch_size);
      c.schedule.rate = rate_for_switch_fraction(switch_fraction, total);
    }
    return c;
  }
};

inline std::vector<std::string> train_keys() {
  return {"data.kind", "data.n", "data.noise", "data.classes", "hidden", "activation",
          "epochs", "batch_size", "switch_fraction"};
}

inline TrainSpec train_spec(const Config& c, TrainSpec d = {}) {
  d.data.kind = c.get("data.kind", d.data.kind);
  d.data.n = c.get("data.n", d.data.n);
  d.data.noise = c.get("data.noise", d.data.noise);
  d.data.classes = c.get("data.classes", d.data.classes);
  d.hidden = c.get("hidden", d.hidden);
  d.activation = parse_activation(c.get("activation", to_string(d.activation)));
  d.epochs = c.get("epochs", d.epochs);
  d.batch_size = c.get("batch_size", d.batch_size);
  d.switch_fraction = c.get("switch_fraction", d.switch_fraction);
  std::vector<std::string> names;
  for (auto k : d.optimizers) names.push_back(to_string(k));
  d.optimizers = optimizer_list(c, names);
  d.source = c;
  require(!d.hidden.empty(), "hidden must list at least one layer width");
  for (int w : d.hidden) require(w >= 1, "hidden layer widths must be >= 1");
  require(d.epochs >= 1, "epochs must be >= 1");
  require(d.switch_fraction > 0.0 && d.switch_fraction <= 1.0, "switch_fraction must lie in (0, 1]");
  d.data.make(0);  // validates kind and sizes
  return d;
}

inline Json to_json(const TrainSpec& s) {
  std::vector<std::string> opts;
  for (auto k : s.optimizers) opts.push_back(to_string(k));
  return {{"data", s.data.to_json()}, {"hidden", s.hidden},
          {"activation", to_string(s.activation)}, {"epochs", s.epochs},
          {"batch_size", s.batch_size}, {"switch_fraction", s.switch_fraction},
          {"optimizer", opts}};
}

/// One seeded training run: dataset and initialization both follow `seed`.
struct SeedRun {
  Network net;
  Dataset data;
  OptimizerConfig cfg;
  TrainRun run;
};

inline SeedRun train_one(const TrainSpec& s, OptimizerKind kind, std::uint64_t seed,
                         std::int64_t eval_every = 1) {
  SeedRun r{make_network(s.layer_sizes(), s.activation, seed), s.data.make(seed), {}, {}};
  r.cfg = s.optimizer(kind, r.data.train.size());
  TrainOptions to;
  to.epochs = s.epochs;
  to.batch_size = s.batch_size;
  to.seed = seed;
  to.eval_every = eval_every;
  r.run = train(r.net, r.data, r.cfg, to);
  return r;
}

// ------------------------------------------------------------- trajectory

struct TrajectorySpec {
  std::string landscape = "two_basin";
  Point2 start{-0.9, 0.1};
  NoiseModel noise{NoiseKind::IsotropicGaussian, 0.05, 1};
  std::int64_t max_steps = 5000;
  double basin_radius = 0.5;
  int contour_nx = 121;
  int contour_ny = 61;
  std::vector<OptimizerKind> optimizers{OptimizerKind::Adam, OptimizerKind::InvAdam};
  Config source;

  Landscape make_landscape() const {
    if (landscape == "two_basin") return two_basin();
    if (landscape == "eggholder") return eggholder();
    throw Error("unknown landscape '" + landscape + "'; valid landscapes: two_basin, eggholder");
  }

  /// The InvAdam update is m̂·sqrt(v̂), so its step is measured in squared
  /// gradient units and needs a much larger learning rate than Adam's.
  OptimizerConfig optimizer(OptimizerKind kind) const {
    OptimizerConfig d;
    d.learning_rate = kind == OptimizerKind::InvAdam ? 30.0 : 0.01;
    return optimizer_config(source, kind, d);
  }
};

inline TrajectorySpec trajectory_spec(const Config& c) {
  c.validate_keys(with_optimizer_keys({"landscape", "start", "noise.kind", "noise.sigma",
                                       "noise.batch_size", "max_steps", "basin_radius",
                                       "contour.nx", "contour.ny"}));
  TrajectorySpec s;
  s.landscape = c.get("landscape", s.landscape);
  if (c.has("start")) {
    const auto v = c.get<std::vector<double>>("start", {});
    require(v.size() == 2, "start must be [x, y]");
    s.start = {v[0], v[1]};
  } else if (s.landscape == "eggholder") {
    s.start = {0.0, 0.0};
  }
  s.noise.kind = parse_noise(c.get("noise.kind", to_string(s.noise.kind)));
  s.noise.sigma = c.get("noise.sigma", s.noise.sigma);
  s.noise.batch_size = c.get("noise.batch_size", s.noise.batch_size);
  s.max_steps = c.get("max_steps", s.max_steps);
  s.basin_radius = c.get("basin_radius", s.basin_radius);
  s.contour_nx = c.get("contour.nx", s.contour_nx);
  s.contour_ny = c.get("contour.ny", s.contour_ny);
  s.optimizers = optimizer_list(c, {"adam", "invadam"});
  s.source = c;
  s.noise.validate();
  require(s.max_steps >= 1, "max_steps must be >= 1");
  require(s.contour_nx >= 2 && s.contour_ny >= 2, "contour mesh needs at least 2 points per axis");
  const Landscape L = s.make_landscape();
  require(L.domain.contains(s.start), "start lies outside the " + L.name + " domain");
  for (auto k : s.optimizers) s.optimizer(k);
  return s;
}

inline RunResult cmd_trajectory(const Config& c, const std::vector<std::uint64_t>& seeds,
                                const fs::path& dir, unsigned jobs) {
  const TrajectorySpec s = trajectory_spec(c);
  const Landscape L = s.make_landscape();
  RunResult res;

  struct Task {
    OptimizerKind kind;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (auto k : s.optimizers)
    for (auto seed : seeds) tasks.push_back({k, seed});
  std::vector<Trajectory> out(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    TrajectoryOptions to;
    to.start = s.start;
    to.noise = s.noise;
    to.max_steps = s.max_steps;
    to.seed = tasks[i].seed;
    to.basin_radius = s.basin_radius;
    out[i] = run_trajectory(L, s.optimizer(tasks[i].kind), to);
  });

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string stem = "trajectory_" + to_string(tasks[i].kind) + "_s" + std::to_string(tasks[i].seed);
    CsvWriter w(dir / (stem + ".csv"), header::trajectory);
    for (const auto& st : out[i].steps)
      w.row({st.t, st.x, st.y, st.loss, st.alpha, st.update_norm});
    write_json(dir / (stem + ".json"),
               {{"landscape", L.name}, {"optimizer", to_string(tasks[i].kind)},
                {"seed", tasks[i].seed}, {"terminal_basin", to_string(out[i].terminal_basin)},
                {"diverged", out[i].diverged}, {"clamped_steps", out[i].clamped_steps}});
    res.files.push_back(stem + ".csv");
    res.files.push_back(stem + ".json");
    res.diverged_runs += out[i].diverged;
  }

  CsvWriter contour(dir / "contour.csv", header::contour);
  for (int j = 0; j < s.contour_ny; ++j)
    for (int i = 0; i < s.contour_nx; ++i) {
      const double x = L.domain.xmin + (L.domain.xmax - L.domain.xmin) * i / (s.contour_nx - 1);
      const double y = L.domain.ymin + (L.domain.ymax - L.domain.ymin) * j / (s.contour_ny - 1);
      contour.row({x, y, L.eval({x, y})});
    }
  res.files.push_back("contour.csv");

  Json opts = Json::object();
  for (auto k : s.optimizers) opts[to_string(k)] = to_json(s.optimizer(k));
  res.resolved = {{"landscape", s.landscape}, {"start", {s.start[0], s.start[1]}},
                  {"noise", {{"kind", to_string(s.noise.kind)}, {"sigma", s.noise.sigma},
                             {"batch_size", s.noise.batch_size}}},
                  {"max_steps", s.max_steps}, {"basin_radius", s.basin_radius},
                  {"contour", {{"nx", s.contour_nx}, {"ny", s.contour_ny}}}, {"optimizers", opts}};
  return res;
}

// ------------------------------------------------------------------ train

inline RunResult cmd_train(const Config& c, const std::vector<std::uint64_t>& seeds,
                           const fs::path& dir, unsigned jobs) {
  c.validate_keys(with_optimizer_keys(train_keys()));
  const TrainSpec s = train_spec(c);
  RunResult res;

  struct Task {
    OptimizerKind kind;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (auto k : s.optimizers)
    for (auto seed : seeds) tasks.push_back({k, seed});
  std::vector<SeedRun> out(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) { out[i] = train_one(s, tasks[i].kind, tasks[i].seed); });

  CsvWriter summary(dir / "summary.csv", header::summary);
  Json opts = Json::object();
  for (auto k : s.optimizers) {
    std::vector<double> acc, gap;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].kind != k) continue;
      const auto& r = out[i];
      const std::string stem = to_string(k) + "_s" + std::to_string(tasks[i].seed);
      CsvWriter w(dir / ("train_" + stem + ".csv"), header::train);
      for (const auto& e : r.run.epochs)
        w.row({e.epoch, e.train_loss, e.val_loss, e.test_accuracy, e.generalization_gap, e.alpha});
      Json extra = {{"seed", tasks[i].seed}, {"optimizer", to_string(k)}, {"data", s.data.to_json()}};
      save_params((dir / ("theta_" + stem + ".txt")).string(), r.net, r.run.final_params, extra);
      res.files.push_back("train_" + stem + ".csv");
      res.files.push_back("theta_" + stem + ".txt");
      res.diverged_runs += r.run.diverged;
      if (!r.run.epochs.empty()) {
        acc.push_back(r.run.epochs.back().test_accuracy);
        gap.push_back(r.run.epochs.back().generalization_gap);
      }
    }
    const double sd = acc.size() >= 2 ? stddev(acc) : 0.0;
    summary.row({to_string(k), mean(acc), sd, mean(gap)});
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) opts[to_string(tasks[i].kind)] = to_json(out[i].cfg);
  res.files.push_back("summary.csv");
  res.resolved = to_json(s);
  res.resolved["optimizers"] = opts;
  return res;
}

// ---------------------------------------------------------------- hessian

struct HessianSpec {
  std::string source = "theta";  // or "quadratic"
  std::string theta;
  std::string split = "train";
  HessianOptions hessian{};
  double zeta_half_width = 1.0;
  int zeta_points = 41;
};

inline HessianSpec hessian_spec(const Config& c) {
  c.validate_keys({"source", "theta", "split", "k", "power_iters", "probes", "hvp_step",
                   "zeta.half_width", "zeta.points", "seed", "seeds"});
  HessianSpec s;
  s.source = c.get("source", s.source);
  s.theta = c.get("theta", s.theta);
  s.split = c.get("split", s.split);
  s.hessian.k = c.get("k", s.hessian.k);
  s.hessian.power_iters = c.get("power_iters", s.hessian.power_iters);
  s.hessian.probes = c.get("probes", s.hessian.probes);
  s.hessian.hvp_step = c.get("hvp_step", s.hessian.hvp_step);
  s.zeta_half_width = c.get("zeta.half_width", s.zeta_half_width);
  s.zeta_points = c.get("zeta.points", s.zeta_points);
  require(s.source == "theta" || s.source == "quadratic",
          "unknown hessian source '" + s.source + "'; valid sources: theta, quadratic");
  require(s.split == "train" || s.split == "val" || s.split == "test",
          "split must be one of train, val, test");
  if (s.source == "theta") require(!s.theta.empty(), "hessian source 'theta' needs a 'theta' path");
  return s;
}

inline RunResult cmd_hessian(const Config& c, const std::vector<std::uint64_t>& seeds,
                             const fs::path& dir, unsigned jobs) {
  HessianSpec s = hessian_spec(c);
  s.hessian.seed = seeds.empty() ? 0 : seeds.front();
  s.hessian.jobs = jobs;
  const auto zetas = default_zeta_grid(s.zeta_half_width, s.zeta_points);
  RunResult res;
  HessianReport report;
  FlatnessSlice slice;

  if (s.source == "quadratic") {
    // L = (3x² + y²)/2, the analysis self-test fixture.
    const Vector theta{0.0, 0.0};
    GradientFn grad = [](std::span<const double> t) { return Vector{3.0 * t[0], t[1]}; };
    LossFn loss = [](std::span<const double> t) { return 0.5 * (3.0 * t[0] * t[0] + t[1] * t[1]); };
    if (!c.has("k")) s.hessian.k = 2;
    report = hessian_report(grad, theta, s.hessian);
    slice = flatness_slice(loss, theta, zetas, s.hessian.seed);
    res.resolved["fixture"] = "quadratic diag(3,1)";
  } else {
    const LoadedParams lp = load_params(s.theta);
    require(lp.header.contains("data"), s.theta + ": header has no dataset description");
    const DataSpec data = DataSpec::from_json(lp.header.at("data"));
    const std::uint64_t data_seed = lp.header.value("seed", std::uint64_t{0});
    Network net = lp.net;
    const Dataset ds = data.make(data_seed);
    const auto& split = s.split == "train" ? ds.train : (s.split == "val" ? ds.val : ds.test);
    const Batch b = make_batch(ds, split);
    GradientFn grad = [&](std::span<const double> t) { return loss_and_grad(net, b, t).grad; };
    LossFn loss = [&](std::span<const double> t) { return evaluate(net, b, t).loss; };
    report = hessian_report(grad, net.params, s.hessian);
    slice = flatness_slice(loss, net.params, zetas, s.hessian.seed);
    res.resolved["theta"] = s.theta;
    res.resolved["data"] = data.to_json();
    res.resolved["data_seed"] = data_seed;
  }

  write_json(dir / "hessian_report.json", to_json(report));
  write_json(dir / "slice.json", to_json(slice));
  CsvWriter w(dir / "slice.csv", header::slice);
  for (std::size_t i = 0; i < slice.zetas.size(); ++i) w.row({slice.zetas[i], slice.losses[i]});
  res.files = {"hessian_report.json", "slice.json", "slice.csv"};
  res.resolved.update(Json{{"source", s.source}, {"split", s.split}, {"k", s.hessian.k},
                           {"power_iters", s.hessian.power_iters}, {"probes", s.hessian.probes},
                           {"hvp_step", report.hvp_step}, {"seed", s.hessian.seed},
                           {"zeta", {{"half_width", s.zeta_half_width}, {"points", s.zeta_points}}}});
  return res;
}

// ----------------------------------------------------------------- escape

inline EscapeGridOptions escape_spec(const Config& c) {
  c.validate_keys({"sharpness", "delta_l", "h_chi", "noise.kind", "noise.sigma", "noise.batch_size",
                   "max_steps", "trials", "bootstrap", "adam.lr", "invadam.lr", "seed", "seeds"});
  EscapeGridOptions o;
  o.sharpness = c.get("sharpness", o.sharpness);
  o.delta_l = c.get("delta_l", o.delta_l);
  o.h_chi = c.get("h_chi", o.h_chi);
  o.run.noise.kind = parse_noise(c.get("noise.kind", to_string(o.run.noise.kind)));
  o.run.noise.sigma = c.get("noise.sigma", o.run.noise.sigma);
  o.run.noise.batch_size = c.get("noise.batch_size", o.run.noise.batch_size);
  o.run.max_steps = c.get("max_steps", o.run.max_steps);
  o.run.trials = c.get("trials", o.run.trials);
  o.bootstrap_replicates = c.get("bootstrap", o.bootstrap_replicates);
  o.adam.learning_rate = c.get("adam.lr", o.adam.learning_rate);
  o.invadam.learning_rate = c.get("invadam.lr", o.invadam.learning_rate);
  require(!o.sharpness.empty(), "sharpness grid is empty");
  o.adam.validate();
  o.invadam.validate();
  o.run.noise.validate();
  for (double h : o.sharpness) make_barrier(h, o.delta_l, o.h_chi);
  return o;
}

inline RunResult cmd_escape(const Config& c, const std::vector<std::uint64_t>& seeds,
                            const fs::path& dir, unsigned jobs) {
  EscapeGridOptions o = escape_spec(c);
  o.run.seed = seeds.empty() ? 0 : seeds.front();
  o.run.jobs = jobs;
  RunResult res;
  EscapeComparison cmp;
  std::string fit_error;
  try {
    cmp = compare_escape(o);
  } catch (const Error& e) {
    // A censored grid still gets its per-cell artifacts; only the fit fails.
    fit_error = e.what();
    cmp = EscapeComparison{};
    cmp.sharpness = o.sharpness;
    for (std::size_t k = 0; k < o.sharpness.size(); ++k) {
      const BarrierPotential pot = make_barrier(o.sharpness[k], o.delta_l, o.h_chi);
      EscapeOptions ro = o.run;
      ro.seed = mix_seed(o.run.seed, 2 * k);
      cmp.adam.push_back(run_escape(pot, o.adam, ro));
      ro.seed = mix_seed(o.run.seed, 2 * k + 1);
      cmp.invadam.push_back(run_escape(pot, o.invadam, ro));
    }
  }

  CsvWriter w(dir / "escape_summary.csv", header::escape);
  for (std::size_t k = 0; k < cmp.sharpness.size(); ++k) {
    const std::string h = fmt_num(cmp.sharpness[k]);
    for (const auto* dyn : {"adam", "invadam"}) {
      const EscapeStats& st = std::string(dyn) == "adam" ? cmp.adam[k] : cmp.invadam[k];
      const std::string name = std::string("escape_") + dyn + "_H" + h + ".json";
      Json j = to_json(st);
      j["H_phi"] = cmp.sharpness[k];
      j["dynamics"] = dyn;
      write_json(dir / name, j);
      res.files.push_back(name);
      w.row({cmp.sharpness[k], std::string(dyn), st.median, st.mean, st.censoring_rate});
    }
  }
  res.files.push_back("escape_summary.csv");

  Json fit;
  if (fit_error.empty() && cmp.sharpness.size() >= 4) {
    fit = {{"adam", to_json(cmp.adam_fit)}, {"invadam", to_json(cmp.invadam_fit)},
           {"ratio_monotone_confidence", cmp.ratio_monotone_confidence},
           {"decay_order_confidence", cmp.decay_order_confidence},
           {"bootstrap_replicates", cmp.bootstrap_replicates}};
  } else {
    fit = {{"error", fit_error.empty() ? "scaling_fit: need at least 4 grid points" : fit_error}};
  }
  write_json(dir / "scaling_fit.json", fit);
  res.files.push_back("scaling_fit.json");

  res.resolved = {{"sharpness", o.sharpness}, {"delta_l", o.delta_l}, {"h_chi", o.h_chi},
                  {"noise", {{"kind", to_string(o.run.noise.kind)}, {"sigma", o.run.noise.sigma},
                             {"batch_size", o.run.noise.batch_size}}},
                  {"max_steps", o.run.max_steps}, {"trials", o.run.trials},
                  {"bootstrap", o.bootstrap_replicates}, {"adam", to_json(o.adam)},
                  {"invadam", to_json(o.invadam)}, {"seed", o.run.seed}};
  return res;
}

// ------------------------------------------------------------------ sweep

struct SweepCell {
  std::string mechanism;  // linear, exponential, fixed_epoch
  double parameter = 0.0; // reference-scale rate, base, or epoch
};

struct SweepSpec {
  TrainSpec train;
  std::string mode = "rate";  // or "mechanism"
  std::vector<SweepCell> cells;
  double reference_iterations = kReferenceIterations;

  /// Schedule for a cell. Linear rates are transposed from the reference
  /// run length to this run's length.
  OptimizerConfig optimizer(const SweepCell& cell, std::size_t train_size) const {
    OptimizerConfig c = optimizer_config(train.source, OptimizerKind::DualAdam);
    const std::int64_t total = train.epochs * iterations_per_epoch(train_size, train.batch_size);
    c.schedule.kind = parse_schedule(cell.mechanism);
    if (c.schedule.kind == ScheduleKind::Linear)
      c.schedule.rate = cell.parameter * reference_iterations / static_cast<double>(total);
    else if (c.schedule.kind == ScheduleKind::Exponential)
      c.schedule.base = cell.parameter;
    else if (c.schedule.kind == ScheduleKind::FixedEpoch)
      c.schedule.switch_epoch = static_cast<std::int64_t>(cell.parameter);
    c.validate();
    return c;
  }
};

inline std::vector<double> default_rate_grid() {
  std::vector<double> g{0.0};
  for (int i = 1; i <= 10; ++i) g.push_back(i * 1e-5);
  return g;
}

inline SweepSpec sweep_spec(const Config& c) {
  auto keys = train_keys();
  for (const char* k : {"mode", "rates", "mechanism.linear", "mechanism.exponential",
                        "mechanism.fixed_epoch", "reference_iterations"})
    keys.push_back(k);
  c.validate_keys(with_optimizer_keys(keys));
  SweepSpec s;
  TrainSpec d;
  d.data = {"spirals", 300, 0.8, 3};
  d.hidden = {64, 64};
  d.epochs = 300;
  d.batch_size = 16;
  d.optimizers = {OptimizerKind::DualAdam};
  s.train = train_spec(c, d);
  s.mode = c.get("mode", s.mode);
  s.reference_iterations = c.get("reference_iterations", s.reference_iterations);
  require(s.reference_iterations > 0.0, "reference_iterations must be > 0");
  if (s.mode == "rate") {
    for (double r : c.get("rates", default_rate_grid())) s.cells.push_back({"linear", r});
  } else if (s.mode == "mechanism") {
    for (double r : c.get("mechanism.linear", std::vector<double>{5e-5, 8e-5, 1e-4}))
      s.cells.push_back({"linear", r});
    for (double b : c.get("mechanism.exponential", std::vector<double>{0.8, 0.9, 0.99}))
      s.cells.push_back({"exponential", b});
    for (double e : c.get("mechanism.fixed_epoch", std::vector<double>{10, 30, 50}))
      s.cells.push_back({"fixed_epoch", e});
  } else {
    throw Error("unknown sweep mode '" + s.mode + "'; valid modes: rate, mechanism");
  }
  require(!s.cells.empty(), "sweep grid is empty");
  return s;
}

struct SweepOutcome {
  SweepCell cell;
  std::vector<double> train_loss;  // per seed
  std::vector<double> val_acc;
  std::int64_t diverged = 0;
};

inline std::vector<SweepOutcome> run_sweep(const SweepSpec& s, const std::vector<std::uint64_t>& seeds,
                                           unsigned jobs) {
  const std::size_t n_seeds = seeds.size();
  std::vector<SweepOutcome> out(s.cells.size());
  std::vector<TrainRun> runs(s.cells.size() * n_seeds);
  parallel_for(runs.size(), jobs, [&](std::size_t i) {
    const SweepCell& cell = s.cells[i / n_seeds];
    const std::uint64_t seed = seeds[i % n_seeds];
    const Dataset ds = s.train.data.make(seed);
    const Network net = make_network(s.train.layer_sizes(), s.train.activation, seed);
    TrainOptions to;
    to.epochs = s.train.epochs;
    to.batch_size = s.train.batch_size;
    to.seed = seed;
    to.eval_every = s.train.epochs;
    runs[i] = train(net, ds, s.optimizer(cell, ds.train.size()), to);
  });
  for (std::size_t c = 0; c < s.cells.size(); ++c) {
    out[c].cell = s.cells[c];
    for (std::size_t j = 0; j < n_seeds; ++j) {
      const TrainRun& r = runs[c * n_seeds + j];
      out[c].diverged += r.diverged;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      out[c].train_loss.push_back(r.epochs.empty() ? nan : r.epochs.back().train_loss);
      out[c].val_acc.push_back(r.epochs.empty() ? nan : r.epochs.back().val_accuracy);
    }
  }
  return out;
}

inline RunResult cmd_sweep(const Config& c, const std::vector<std::uint64_t>& seeds,
                           const fs::path& dir, unsigned jobs) {
  const SweepSpec s = sweep_spec(c);
  const auto out = run_sweep(s, seeds, jobs);
  RunResult res;
  const bool rate = s.mode == "rate";
  CsvWriter w(dir / "sweep.csv", rate ? header::sweep_rate : header::sweep_mechanism);
  CsvWriter runs(dir / "sweep_runs.csv", header::sweep_runs);
  auto sd = [](const std::vector<double>& v) { return v.size() >= 2 ? stddev(v) : 0.0; };
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& o = out[i];
    if (rate)
      w.row({o.cell.parameter, mean(o.train_loss), sd(o.train_loss), mean(o.val_acc), sd(o.val_acc)});
    else
      w.row({o.cell.mechanism, o.cell.parameter, mean(o.train_loss), sd(o.train_loss), mean(o.val_acc),
             sd(o.val_acc)});
    for (std::size_t j = 0; j < seeds.size(); ++j)
      runs.row({static_cast<std::int64_t>(i), static_cast<std::int64_t>(seeds[j]), o.train_loss[j],
                o.val_acc[j]});
    res.diverged_runs += o.diverged;
  }
  res.files = {"sweep.csv", "sweep_runs.csv"};
  res.resolved = to_json(s.train);
  res.resolved["mode"] = s.mode;
  res.resolved["reference_iterations"] = s.reference_iterations;
  res.resolved["total_iterations"] = s.train.total_iterations();
  Json cells = Json::array();
  for (const auto& cell : s.cells) cells.push_back({{"mechanism", cell.mechanism}, {"parameter", cell.parameter}});
  res.resolved["cells"] = cells;
  return res;
}

// ---------------------------------------------------------- run directory

inline fs::path default_output_root() {
  if (const char* env = std::getenv("DUALADAM_OUT"); env && *env) return env;
  return "runs";
}

/// Creates `<root>/<UTC timestamp>-<subcommand>`, adding a numeric suffix
/// rather than reusing an existing directory.
inline fs::path make_run_dir(const fs::path& root, const std::string& subcommand) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  fs::create_directories(root);
  const std::string base = std::string(stamp) + "-" + subcommand;
  for (int i = 1;; ++i) {
    const fs::path p = root / (i == 1 ? base : base + "-" + std::to_string(i));
    if (fs::create_directory(p)) return p;
  }
}

struct RunSummary {
  fs::path dir;
  RunResult result;
  int exit_code = 0;
};

/// Runs a subcommand into a fresh run directory and writes the manifest
/// last. Exit code 0 iff everything was written and no run diverged.
inline RunSummary run_subcommand(const std::string& subcommand, const Config& config,
                                 std::vector<std::uint64_t> seeds, const fs::path& root, unsigned jobs) {
  using Cmd = RunResult (*)(const Config&, const std::vector<std::uint64_t>&, const fs::path&, unsigned);
  static const std::map<std::string, Cmd> table{{"trajectory", cmd_trajectory}, {"train", cmd_train},
                                                {"hessian", cmd_hessian},       {"escape", cmd_escape},
                                                {"sweep", cmd_sweep}};
  const auto it = table.find(subcommand);
  if (it == table.end())
    throw Error("unknown subcommand '" + subcommand +
                "'; valid subcommands: trajectory, train, hessian, escape, sweep");
  if (seeds.empty()) seeds = config_seeds(config, 0);
  require(jobs >= 1, "jobs must be >= 1");

  const auto t0 = std::chrono::steady_clock::now();
  RunSummary out;
  out.dir = make_run_dir(root, subcommand);
  out.result = it->second(config, seeds, out.dir, jobs);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  for (const auto& f : out.result.files)
    require(fs::exists(out.dir / f), "artifact missing after run: " + f);
  write_json(out.dir / "manifest.json",
             {{"artifact_version", kArtifactVersion}, {"subcommand", subcommand},
              {"config", config.to_json()}, {"resolved", out.result.resolved}, {"seeds", seeds},
              {"files", out.result.files}, {"diverged_runs", out.result.diverged_runs},
              {"wall_clock_seconds", seconds}});
  out.exit_code = out.result.diverged_runs == 0 ? 0 : 2;
  return out;
}

/// Expected CSV header for an artifact name, or empty for non-CSV files.
inline std::vector<std::string> expected_header(const std::string& name, const Json& manifest) {
  if (!name.ends_with(".csv")) return {};
  if (name.starts_with("trajectory_")) return header::trajectory;
  if (name == "contour.csv") return header::contour;
  if (name.starts_with("train_")) return header::train;
  if (name == "summary.csv") return header::summary;
  if (name == "slice.csv") return header::slice;
  if (name == "escape_summary.csv") return header::escape;
  if (name == "sweep_runs.csv") return header::sweep_runs;
  if (name == "sweep.csv") {
    const std::string mode = manifest.value("resolved", Json::object()).value("mode", std::string("rate"));
    return mode == "mechanism" ? header::sweep_mechanism : header::sweep_rate;
  }
  return {"<unknown csv artifact>"};
}

/// Validates a run directory: manifest present and complete, every listed
/// file present, every CSV with its schema. Returns the problems found.
inline std::vector<std::string> check_run_dir(const fs::path& dir) {
  std::vector<std::string> problems;
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) return {mpath.string() + ": missing"};
  Json m;
  try {
    m = Json::parse(read_file(mpath));
  } catch (const Json::exception& e) {
    return {mpath.string() + ": " + e.what()};
  }
  for (const char* key : {"artifact_version", "subcommand", "config", "seeds", "files", "wall_clock_seconds"})
    if (!m.contains(key)) problems.push_back(mpath.string() + ": missing field '" + key + "'");
  if (!problems.empty()) return problems;
  if (m["artifact_version"] != kArtifactVersion)
    problems.push_back(mpath.string() + ": artifact version " + m["artifact_version"].dump() +
                       ", expected \"" + kArtifactVersion + "\"");
  for (const auto& f : m["files"]) {
    const std::string name = f.get<std::string>();
    const fs::path p = dir / name;
    if (!fs::exists(p)) {
      problems.push_back(p.string() + ": listed in manifest but missing");
      continue;
    }
    const auto hdr = expected_header(name, m);
    if (!hdr.empty()) {
      if (const auto err = check_csv(p, hdr); !err.empty()) problems.push_back(err);
    } else if (name.ends_with(".json")) {
      if (!Json::accept(read_file(p))) problems.push_back(p.string() + ": malformed JSON");
    }
  }
  return problems;
}

}  // namespace dualadam
