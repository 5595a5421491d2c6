#pragma once

// Scripted studies: POD and estimator convergence in the number of
// trajectories, S-ROM versus G-ROM prediction, stochastic ensembles and the
// (r, Gap) space-time sweep. Each study returns a StudyReport, which is
// written as report.json plus one CSV per table.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "srom/closure.hpp"
#include "srom/config.hpp"
#include "srom/error.hpp"
#include "srom/fem.hpp"
#include "srom/galerkin.hpp"
#include "srom/io.hpp"
#include "srom/parallel.hpp"
#include "srom/pod.hpp"
#include "srom/random.hpp"
#include "srom/srom.hpp"

namespace srom {

// ---------------------------------------------------------------------------
// Metrics

/// RMSE(t_l) = ||predicted(:, l) - reference(:, l)||_2.
inline Eigen::VectorXd rmse_curve(const Eigen::MatrixXd& predicted,
                                  const Eigen::MatrixXd& reference) {
  require(predicted.rows() == reference.rows() && predicted.cols() == reference.cols(),
          "rmse_curve: prediction and reference are on different grids");
  return (predicted - reference).colwise().norm().transpose();
}

inline Eigen::VectorXd rmse_curve(const Trajectory& predicted, const CoefficientTrajectory& reference) {
  require(std::abs(predicted.delta - reference.delta) <= 1e-12 * reference.delta,
          "rmse_curve: time steps differ");
  return rmse_curve(predicted.values, reference.values);
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares of log(y) on log(x).
inline SlopeFit fit_loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), "fit_loglog_slope: length mismatch");
  require(xs.size() >= 3, "fit_loglog_slope: need at least 3 points");
  const std::size_t n = xs.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0) || !std::isfinite(xs[i]) || !std::isfinite(ys[i]))
      throw InvalidArgument("fit_loglog_slope: values must be positive and finite");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  require(sxx > 0.0, "fit_loglog_slope: x values must not all coincide");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  const double ss_res = std::max(0.0, syy - fit.slope * sxy);
  fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

/// Box-plot summary: quartiles by linear interpolation, whiskers at the most
/// extreme samples within 1.5 IQR of the box, everything beyond is an outlier.
struct BoxStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::vector<double> outliers;
};

inline BoxStats box_stats(std::vector<double> values) {
  require(!values.empty(), "box_stats: empty sample");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.median = percentile(values, 50.0);
  b.q1 = percentile(values, 25.0);
  b.q3 = percentile(values, 75.0);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double v : values) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
    } else {
      b.whisker_low = std::min(b.whisker_low, v);
      b.whisker_high = std::max(b.whisker_high, v);
    }
  }
  return b;
}

inline double median(std::vector<double> values) { return percentile(std::move(values), 50.0); }

// ---------------------------------------------------------------------------
// Reports

struct Column {
  std::string name;
  std::string unit;
  std::vector<double> values;
};

struct Table {
  std::string name;
  std::vector<Column> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().values.size(); }

  Table& add(std::string column, std::string unit, std::vector<double> values) {
    require(columns.empty() || values.size() == rows(), "table '" + name + "': ragged column");
    columns.push_back({std::move(column), std::move(unit), std::move(values)});
    return *this;
  }

  const Column& column(const std::string& column_name) const {
    for (const auto& c : columns)
      if (c.name == column_name) return c;
    throw InvalidArgument("table '" + name + "' has no column '" + column_name + "'");
  }
};

struct StudyReport {
  std::string study_id;
  nlohmann::json config;
  std::vector<Table> tables;
  std::map<std::string, SlopeFit> slopes;
  nlohmann::json markers = nlohmann::json::object();
  std::uint64_t seed = 0;

  const Table& table(const std::string& name) const {
    for (const auto& t : tables)
      if (t.name == name) return t;
    throw InvalidArgument("report '" + study_id + "' has no table '" + name + "'");
  }
};

inline std::string table_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + t.columns[c].name;
  out += "\n";
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      out += (c ? "," : "") + format_double(t.columns[c].values[i]);
    out += "\n";
  }
  return out;
}

inline Table parse_table_csv(const std::string& name, const std::string& text,
                             const std::vector<std::string>& units) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw MissingInput(name + ".csv: empty file");
  Table t;
  t.name = name;
  {
    std::istringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) t.columns.push_back({cell, "", {}});
  }
  if (units.size() != t.columns.size())
    throw MissingInput(name + ".csv: column count does not match report.json");
  for (std::size_t c = 0; c < units.size(); ++c) t.columns[c].unit = units[c];
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(row, cell, ',')) {
      if (c >= t.columns.size()) throw MissingInput(name + ".csv: too many cells in a row");
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw MissingInput(name + ".csv: unparsable cell '" + cell + "'");
      t.columns[c++].values.push_back(v);
    }
    if (c != t.columns.size()) throw MissingInput(name + ".csv: too few cells in a row");
  }
  return t;
}

inline nlohmann::json report_to_json(const StudyReport& r) {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& t : r.tables) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : t.columns) cols.push_back({{"name", c.name}, {"unit", c.unit}});
    tables.push_back({{"name", t.name}, {"file", t.name + ".csv"}, {"rows", t.rows()},
                      {"columns", cols}});
  }
  nlohmann::json slopes = nlohmann::json::object();
  for (const auto& [key, s] : r.slopes)
    slopes[key] = {{"slope", s.slope}, {"intercept", s.intercept}, {"r_squared", s.r_squared}};
  return {{"study_id", r.study_id}, {"seed", r.seed},     {"config", r.config},
          {"tables", tables},       {"slopes", slopes},   {"markers", r.markers}};
}

inline void write_report(const std::filesystem::path& dir, const StudyReport& r) {
  std::filesystem::create_directories(dir);
  for (const auto& t : r.tables) write_file(dir / (t.name + ".csv"), table_csv(t));
  write_file(dir / "report.json", report_to_json(r).dump(2) + "\n");
}

inline StudyReport read_report(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "report.json"));
  } catch (const nlohmann::json::exception& e) {
    throw MissingInput((dir / "report.json").string() + ": " + e.what());
  }
  StudyReport r;
  try {
    r.study_id = j.at("study_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    r.markers = j.at("markers");
    for (const auto& [key, s] : j.at("slopes").items())
      r.slopes[key] = {s.at("slope").get<double>(), s.at("intercept").get<double>(),
                       s.at("r_squared").get<double>()};
    for (const auto& t : j.at("tables")) {
      std::vector<std::string> units;
      for (const auto& c : t.at("columns")) units.push_back(c.at("unit").get<std::string>());
      const std::string name = t.at("name").get<std::string>();
      r.tables.push_back(parse_table_csv(name, read_file(dir / t.at("file").get<std::string>()), units));
    }
  } catch (const nlohmann::json::exception& e) {
    throw MissingInput((dir / "report.json").string() + ": " + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the studies and the CLI

inline std::vector<SnapshotMatrix> generate_training(const PipelineConfig& c, std::size_t threads = 0) {
  return generate_dataset(c.initial_condition, c.physics.nu, c.physics.dt, c.physics.T,
                          assemble_fem_operators(c.physics.n_elements), c.data.num_trajectories,
                          c.data.seed, threads, SeedDomain::training_ic);
}

/// Held-out trajectories on the prediction window [0, horizon].
inline std::vector<SnapshotMatrix> generate_test(const PipelineConfig& c, int n,
                                                 std::size_t threads = 0) {
  return generate_dataset(c.initial_condition, c.physics.nu, c.physics.dt, c.study.horizon,
                          assemble_fem_operators(c.physics.n_elements), n, c.data.seed, threads,
                          SeedDomain::test_ic);
}

struct TrainedModel {
  PodBasis basis;
  ClosureFit fit;
  SromModel srom;
  SromModel grom;
};

inline TrainedModel train_model(const PipelineConfig& c, std::span<const SnapshotMatrix> training,
                                const PodBasis& basis, int gap, std::size_t threads = 0) {
  const FemOperators fem = assemble_fem_operators(c.physics.n_elements);
  TrainedModel out;
  out.basis = basis;
  const GalerkinOperators ops = assemble_galerkin(basis, c.physics.nu, fem);
  const auto trajs = project_dataset(training, basis, gap, threads);
  out.fit = fit_closure(trajs, ops, c.regression.regularization(), threads);
  const double delta = trajs.front().delta;
  out.srom = make_srom_model(ops, out.fit.params, delta);
  out.srom.basis_fingerprint = basis_fingerprint(basis);
  out.srom.provenance = {c.physics.nu, static_cast<int>(training.size()), gap, c.data.seed,
                         training.front().t0,
                         training.front().t0 + training.front().dt * double(training.front().n_times() - 1)};
  out.grom = make_grom_model(ops, delta);
  out.grom.basis_fingerprint = out.srom.basis_fingerprint;
  out.grom.provenance = out.srom.provenance;
  return out;
}

struct Prediction {
  CoefficientTrajectory reference;
  Trajectory srom;
  Trajectory grom;
  Eigen::VectorXd rmse_srom;  // NaN after a blowup
  Eigen::VectorXd rmse_grom;
  double mean_rmse_srom = 0.0;  // time average, +inf after a blowup
  double mean_rmse_grom = 0.0;
};

namespace detail {

inline Eigen::VectorXd padded_rmse(const Trajectory& t, const Eigen::MatrixXd& reference) {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(reference.cols(), std::numeric_limits<double>::quiet_NaN());
  const Eigen::Index n = t.values.cols();
  out.head(n) = rmse_curve(t.values, reference.leftCols(n));
  return out;
}

inline double time_average(const Trajectory& t, const Eigen::VectorXd& rmse) {
  return t.blew_up() ? std::numeric_limits<double>::infinity() : rmse.mean();
}

}  // namespace detail

/// Deterministic S-ROM and G-ROM runs from the r-mode projection of each
/// test initial condition, scored against the projected FOM.
inline std::vector<Prediction> evaluate_predictions(const SromModel& srom_model,
                                                    const SromModel& grom_model,
                                                    const PodBasis& basis,
                                                    std::span<const SnapshotMatrix> test, int gap,
                                                    std::size_t threads = 0) {
  std::vector<Prediction> out(test.size());
  parallel_for(test.size(), threads, [&](std::size_t j) {
    Prediction& p = out[j];
    p.reference = project_trajectory(test[j], basis, gap);
    require(std::abs(p.reference.delta - srom_model.delta) <= 1e-12 * srom_model.delta,
            "evaluate: model time step does not match the test data at this gap");
    const long n_steps = p.reference.n_times() - 1;
    const Eigen::VectorXd a0 = p.reference.values.col(0);
    p.srom = simulate_deterministic(srom_model, a0, n_steps);
    p.grom = simulate_deterministic(grom_model, a0, n_steps);
    p.rmse_srom = detail::padded_rmse(p.srom, p.reference.values);
    p.rmse_grom = detail::padded_rmse(p.grom, p.reference.values);
    p.mean_rmse_srom = detail::time_average(p.srom, p.rmse_srom);
    p.mean_rmse_grom = detail::time_average(p.grom, p.rmse_grom);
  });
  return out;
}

/// floor(10^(1 + 2j/9)), j = 0..9, clipped to M/2 and deduplicated.
inline std::vector<int> default_ladder(int m_bar) {
  std::vector<int> out;
  const int cap = m_bar / 2;
  for (int j = 0; j <= 9; ++j) {
    const int m = std::min(cap, static_cast<int>(std::floor(std::pow(10.0, 1.0 + 2.0 * j / 9.0))));
    if (m >= 1 && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

inline std::vector<int> resolve_ladder(const PipelineConfig& c, int m_bar) {
  std::vector<int> ladder = c.study.ladder.empty() ? default_ladder(m_bar) : c.study.ladder;
  std::sort(ladder.begin(), ladder.end());
  ladder.erase(std::unique(ladder.begin(), ladder.end()), ladder.end());
  for (int m : ladder) require(m >= 1 && m <= m_bar, "study ladder exceeds the dataset size");
  if (ladder.size() < 3)
    throw InvalidArgument("study: the dataset (M=" + std::to_string(m_bar) +
                          ") is too small for a ladder of at least 3 rungs");
  return ladder;
}

namespace detail {

inline std::vector<double> to_doubles(const std::vector<int>& v) { return {v.begin(), v.end()}; }

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline StudyReport new_report(const std::string& id, const PipelineConfig& c) {
  StudyReport r;
  r.study_id = id;
  r.config = config_to_json(c);
  r.seed = c.data.seed;
  return r;
}

/// Slope over the rungs with positive error (zero errors carry no rate).
inline std::optional<SlopeFit> ladder_slope(const std::vector<double>& ms,
                                            const std::vector<double>& errs) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < ms.size(); ++i)
    if (errs[i] > 0.0 && std::isfinite(errs[i])) {
      x.push_back(ms[i]);
      y.push_back(errs[i]);
    }
  if (x.size() < 3) return std::nullopt;
  return fit_loglog_slope(x, y);
}

inline bool pair_averaged_decreasing(const std::vector<double>& errs) {
  for (std::size_t i = 0; i + 2 < errs.size(); ++i)
    if (errs[i + 1] + errs[i + 2] > errs[i] + errs[i + 1]) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Studies

/// Mode and eigenvalue errors of bases built from the first M trajectories,
/// against the basis from all of them.
inline StudyReport pod_convergence_study(const PipelineConfig& c,
                                         std::span<const SnapshotMatrix> training,
                                         std::size_t threads = 0) {
  const int m_bar = static_cast<int>(training.size());
  const std::vector<int> ladder = resolve_ladder(c, m_bar);
  const int r = c.reduction.r;
  const FemOperators fem = assemble_fem_operators(c.physics.n_elements);
  const PodBasis reference = ensemble_pod(training, r, threads);

  std::vector<PodErrors> errors;
  for (int m : ladder) {
    const PodBasis b = align_basis(ensemble_pod(training.first(m), r, threads), reference);
    errors.push_back(pod_errors(b, reference, fem));
  }

  StudyReport rep = detail::new_report("pod-convergence", c);
  const std::vector<double> ms = detail::to_doubles(ladder);
  Table t{"pod_errors", {}};
  t.add("M", "trajectories", ms);
  nlohmann::json monotone = nlohmann::json::object();
  for (int j = 0; j < r; ++j) {
    std::vector<double> e;
    for (const auto& pe : errors) e.push_back(pe.mode_l2(j));
    const std::string key = "mode_" + std::to_string(j + 1) + "_l2_error";
    if (auto s = detail::ladder_slope(ms, e)) rep.slopes[key] = *s;
    monotone[key] = detail::pair_averaged_decreasing(e);
    t.add(key, "L2(0,1) norm", std::move(e));
  }
  for (int j = 0; j < r; ++j) {
    std::vector<double> e;
    for (const auto& pe : errors) e.push_back(pe.eigenvalue_abs(j));
    const std::string key = "eigenvalue_" + std::to_string(j + 1) + "_error";
    if (auto s = detail::ladder_slope(ms, e)) rep.slopes[key] = *s;
    monotone[key] = detail::pair_averaged_decreasing(e);
    t.add(key, "squared nodal amplitude", std::move(e));
  }
  rep.tables.push_back(std::move(t));

  Table spectrum{"spectrum", {}};
  const Eigen::Index n_eig = reference.eigenvalues.size();
  std::vector<double> idx(n_eig), eig(n_eig), cum(n_eig);
  const double total = reference.eigenvalues.sum();
  double running = 0.0;
  for (Eigen::Index i = 0; i < n_eig; ++i) {
    idx[i] = double(i + 1);
    eig[i] = reference.eigenvalues(i);
    running += eig[i];
    cum[i] = total > 0.0 ? running / total : 1.0;
  }
  spectrum.add("index", "1", idx).add("eigenvalue", "squared nodal amplitude", eig)
      .add("cumulative_energy", "fraction", cum);
  rep.tables.push_back(std::move(spectrum));

  Table energy{"energy_capture", {}};
  std::vector<double> traj(m_bar), frac(m_bar);
  for (int m = 0; m < m_bar; ++m) {
    traj[m] = m;
    frac[m] = energy_capture(training[m], reference).fraction;
  }
  const double min_frac = *std::min_element(frac.begin(), frac.end());
  energy.add("trajectory", "index", traj).add("fraction", "fraction", frac);
  rep.tables.push_back(std::move(energy));

  rep.markers["ladder"] = ladder;
  rep.markers["reference_trajectories"] = m_bar;
  rep.markers["pair_averaged_decreasing"] = monotone;
  rep.markers["min_energy_capture"] = min_frac;
  return rep;
}

/// Closure estimators from the first M projected trajectories against the
/// estimator from all of them, with one fixed basis; plus trajectory-wise
/// (unregularized) fits that expose overfitting.
inline StudyReport estimator_convergence_study(const PipelineConfig& c,
                                               std::span<const SnapshotMatrix> training,
                                               std::size_t threads = 0) {
  const int m_bar = static_cast<int>(training.size());
  const std::vector<int> ladder = resolve_ladder(c, m_bar);
  const FemOperators fem = assemble_fem_operators(c.physics.n_elements);
  const PodBasis basis = ensemble_pod(training, c.reduction.r, threads);
  const GalerkinOperators ops = assemble_galerkin(basis, c.physics.nu, fem);
  const auto trajs = project_dataset(training, basis, c.reduction.gap, threads);
  const std::span<const CoefficientTrajectory> all(trajs);
  const Regularization reg = c.regression.regularization();
  const ClosureFit reference = fit_closure(all, ops, reg, threads);

  StudyReport rep = detail::new_report("estimator-convergence", c);
  std::vector<double> ms = detail::to_doubles(ladder), ea, eb, es, lam, loss, snorm, a11, b111;
  for (int m : ladder) {
    const ClosureFit f = fit_closure(all.first(m), ops, reg, threads);
    const EstimatorErrors e = estimator_errors(f.params, reference.params);
    ea.push_back(e.a_tilde);
    eb.push_back(e.b_tilde);
    es.push_back(e.sigma);
    lam.push_back(f.params.lambda_used);
    loss.push_back(f.params.fit_loss);
    snorm.push_back(f.params.sigma.norm());
    a11.push_back(f.params.A_tilde(0, 0));
    b111.push_back(f.params.B_tilde[0](0, 0));
  }
  if (auto s = detail::ladder_slope(ms, ea)) rep.slopes["a_tilde_error"] = *s;
  if (auto s = detail::ladder_slope(ms, eb)) rep.slopes["b_tilde_error"] = *s;
  if (auto s = detail::ladder_slope(ms, es)) rep.slopes["sigma_error"] = *s;
  const double top_sigma = snorm.back();
  Table t{"estimator_errors", {}};
  t.add("M", "trajectories", ms)
      .add("a_tilde_error", "1/time", ea)
      .add("b_tilde_error", "1/(amplitude time)", eb)
      .add("sigma_error", "amplitude/sqrt(time)", es)
      .add("lambda", "normal-matrix units", lam)
      .add("fit_loss", "amplitude^2/time^2", loss)
      .add("sigma_norm", "amplitude/sqrt(time)", snorm)
      .add("a_tilde_11", "1/time", a11)
      .add("b_tilde_111", "1/(amplitude time)", b111);
  rep.tables.push_back(std::move(t));

  const int n_single = std::min(c.study.single_fits, m_bar);
  std::vector<double> idx(n_single), s_a11(n_single), s_b111(n_single), s_sigma(n_single),
      s_loss(n_single);
  parallel_for(n_single, threads, [&](std::size_t m) {
    const ClosureFit f = fit_closure(all.subspan(m, 1), ops, Regularization{}, 1);
    idx[m] = double(m);
    s_a11[m] = f.params.A_tilde(0, 0);
    s_b111[m] = f.params.B_tilde[0](0, 0);
    s_sigma[m] = f.params.sigma.norm();
    s_loss[m] = f.params.fit_loss;
  });
  Table single{"single_trajectory", {}};
  single.add("trajectory", "index", idx)
      .add("a_tilde_11", "1/time", s_a11)
      .add("b_tilde_111", "1/(amplitude time)", s_b111)
      .add("sigma_norm", "amplitude/sqrt(time)", s_sigma)
      .add("fit_loss", "amplitude^2/time^2", s_loss);
  rep.tables.push_back(std::move(single));

  rep.markers["ladder"] = ladder;
  rep.markers["reference_trajectories"] = m_bar;
  rep.markers["reference_lambda"] = reference.params.lambda_used;
  rep.markers["reference_sigma_norm"] = reference.params.sigma.norm();
  rep.markers["ladder_top_sigma_norm"] = top_sigma;
  if (n_single > 0) {
    const double worst = *std::max_element(s_sigma.begin(), s_sigma.end());
    rep.markers["single_sigma_norm_max"] = worst;
    rep.markers["overfitting_ratio"] = worst > 0.0 ? top_sigma / worst
                                                   : std::numeric_limits<double>::infinity();
  }
  return rep;
}

namespace detail {

inline Table prediction_boxplot_table(const std::string& name, const std::vector<Prediction>& preds,
                                      bool use_srom, double delta) {
  const Eigen::Index n_t = preds.front().reference.n_times();
  std::vector<double> t(n_t), med(n_t), q1(n_t), q3(n_t), wl(n_t), wh(n_t), n_out(n_t), n_valid(n_t);
  for (Eigen::Index l = 0; l < n_t; ++l) {
    std::vector<double> sample;
    for (const auto& p : preds) {
      const double v = (use_srom ? p.rmse_srom : p.rmse_grom)(l);
      if (std::isfinite(v)) sample.push_back(v);
    }
    t[l] = double(l) * delta;
    n_valid[l] = double(sample.size());
    if (sample.empty()) {
      med[l] = q1[l] = q3[l] = wl[l] = wh[l] = std::numeric_limits<double>::quiet_NaN();
      n_out[l] = 0;
      continue;
    }
    const BoxStats b = box_stats(sample);
    med[l] = b.median;
    q1[l] = b.q1;
    q3[l] = b.q3;
    wl[l] = b.whisker_low;
    wh[l] = b.whisker_high;
    n_out[l] = double(b.outliers.size());
  }
  Table out{name, {}};
  out.add("t", "time", t)
      .add("median", "coefficient norm", med)
      .add("q1", "coefficient norm", q1)
      .add("q3", "coefficient norm", q3)
      .add("whisker_low", "coefficient norm", wl)
      .add("whisker_high", "coefficient norm", wh)
      .add("outliers", "count", n_out)
      .add("valid", "count", n_valid);
  return out;
}

inline nlohmann::json box_json(const BoxStats& b) {
  return {{"median", b.median}, {"q1", b.q1}, {"q3", b.q3}, {"whisker_low", b.whisker_low},
          {"whisker_high", b.whisker_high}, {"outliers", b.outliers}};
}

}  // namespace detail

/// Deterministic S-ROM versus G-ROM on held-out initial conditions over
/// [0, horizon]. A blown-up trajectory counts as +inf in the time-averaged
/// medians.
inline StudyReport prediction_study(const PipelineConfig& c, std::span<const SnapshotMatrix> training,
                                    std::size_t threads = 0) {
  const PodBasis basis = ensemble_pod(training, c.reduction.r, threads);
  const TrainedModel model = train_model(c, training, basis, c.reduction.gap, threads);
  const auto test = generate_test(c, c.study.num_test, threads);
  const auto preds = evaluate_predictions(model.srom, model.grom, basis, test, c.reduction.gap, threads);

  StudyReport rep = detail::new_report("prediction", c);
  const std::size_t n = preds.size();
  std::vector<double> idx(n), s_avg(n), g_avg(n), s_blow(n), g_blow(n);
  for (std::size_t j = 0; j < n; ++j) {
    idx[j] = double(j);
    s_avg[j] = preds[j].mean_rmse_srom;
    g_avg[j] = preds[j].mean_rmse_grom;
    s_blow[j] = preds[j].srom.blew_up() ? double(*preds[j].srom.blowup_step) : -1.0;
    g_blow[j] = preds[j].grom.blew_up() ? double(*preds[j].grom.blowup_step) : -1.0;
  }
  Table summary{"time_averaged_rmse", {}};
  summary.add("trajectory", "index", idx)
      .add("srom", "coefficient norm", s_avg)
      .add("grom", "coefficient norm", g_avg)
      .add("srom_blowup_step", "step (-1 = none)", s_blow)
      .add("grom_blowup_step", "step (-1 = none)", g_blow);
  rep.tables.push_back(std::move(summary));

  std::vector<double> lt, ltraj, ls, lg;
  for (std::size_t j = 0; j < n; ++j)
    for (Eigen::Index l = 0; l < preds[j].reference.n_times(); ++l) {
      ltraj.push_back(double(j));
      lt.push_back(double(l) * model.srom.delta);
      ls.push_back(preds[j].rmse_srom(l));
      lg.push_back(preds[j].rmse_grom(l));
    }
  Table curves{"rmse_curves", {}};
  curves.add("trajectory", "index", ltraj).add("t", "time", lt)
      .add("srom", "coefficient norm", ls).add("grom", "coefficient norm", lg);
  rep.tables.push_back(std::move(curves));
  rep.tables.push_back(detail::prediction_boxplot_table("boxplot_srom", preds, true, model.srom.delta));
  rep.tables.push_back(detail::prediction_boxplot_table("boxplot_grom", preds, false, model.srom.delta));

  const double med_s = median(s_avg), med_g = median(g_avg);
  rep.markers["median_srom"] = med_s;
  rep.markers["median_grom"] = med_g;
  rep.markers["median_ratio"] = med_s / med_g;
  rep.markers["srom_boxplot"] = detail::box_json(box_stats(s_avg));
  rep.markers["grom_boxplot"] = detail::box_json(box_stats(g_avg));
  rep.markers["srom_blowups"] = std::count_if(s_blow.begin(), s_blow.end(), [](double v) { return v >= 0; });
  rep.markers["grom_blowups"] = std::count_if(g_blow.begin(), g_blow.end(), [](double v) { return v >= 0; });
  rep.markers["lambda"] = model.fit.params.lambda_used;
  rep.markers["n_steps"] = preds.front().reference.n_times() - 1;
  return rep;
}

/// Stochastic ensemble from held-out initial condition 0, and repetitions
/// j = 0..R-1, each an ensemble from held-out initial condition j with its
/// own noise seed, scored by the RMSE of the ensemble mean.
inline StudyReport ensemble_study(const PipelineConfig& c, std::span<const SnapshotMatrix> training,
                                  std::size_t threads = 0) {
  const auto& ec = c.study.ensemble;
  const PodBasis basis = ensemble_pod(training, c.reduction.r, threads);
  const TrainedModel model = train_model(c, training, basis, c.reduction.gap, threads);
  const auto test = generate_test(c, ec.repetitions, threads);
  const int r = c.reduction.r;

  std::vector<CoefficientTrajectory> refs(test.size());
  for (std::size_t j = 0; j < test.size(); ++j) refs[j] = project_trajectory(test[j], basis, c.reduction.gap);
  const long n_steps = refs.front().n_times() - 1;
  const auto ensemble_seed = [&](std::size_t j) {
    return sub_seed(c.data.seed, j, SeedDomain::ensemble_noise);
  };

  StudyReport rep = detail::new_report("ensemble", c);
  const EnsembleResult showcase = simulate_ensemble(model.srom, refs[0].values.col(0), n_steps,
                                                    ec.size, ensemble_seed(0), ec.levels, threads);
  const Trajectory det0 = simulate_deterministic(model.srom, refs[0].values.col(0), n_steps);
  {
    std::vector<double> t, mode, ref, det, mean;
    std::vector<std::vector<double>> bands(showcase.levels.size());
    for (Eigen::Index l = 0; l <= n_steps; ++l)
      for (int k = 0; k < r; ++k) {
        t.push_back(double(l) * model.srom.delta);
        mode.push_back(k + 1);
        ref.push_back(refs[0].values(k, l));
        det.push_back(l < det0.values.cols() ? det0.values(k, l) : std::numeric_limits<double>::quiet_NaN());
        mean.push_back(showcase.mean(k, l));
        for (std::size_t q = 0; q < bands.size(); ++q) bands[q].push_back(showcase.percentiles[q](k, l));
      }
    Table bt{"ensemble_bands", {}};
    bt.add("t", "time", t).add("mode", "index", mode).add("reference", "coefficient", ref)
        .add("deterministic", "coefficient", det).add("mean", "coefficient", mean);
    for (std::size_t q = 0; q < bands.size(); ++q)
      bt.add("p" + format_double(showcase.levels[q]), "coefficient", bands[q]);
    rep.tables.push_back(std::move(bt));
  }

  double width0 = 0.0;
  for (const auto& p : showcase.percentiles)
    width0 = std::max(width0, (p.col(0) - showcase.percentiles.front().col(0)).cwiseAbs().maxCoeff());
  bool nested = true;
  for (std::size_t q = 0; q + 1 < showcase.percentiles.size(); ++q)
    nested = nested && (showcase.percentiles[q].array() <= showcase.percentiles[q + 1].array()).all();

  const std::size_t n_rep = refs.size();
  std::vector<double> idx(n_rep), ens_rmse(n_rep), det_rmse(n_rep), invalid(n_rep);
  parallel_for(n_rep, threads, [&](std::size_t j) {
    idx[j] = double(j);
    const Eigen::VectorXd a0 = refs[j].values.col(0);
    const Trajectory det = simulate_deterministic(model.srom, a0, n_steps);
    det_rmse[j] = detail::time_average(det, detail::padded_rmse(det, refs[j].values));
    try {
      const EnsembleResult e = simulate_ensemble(model.srom, a0, n_steps, ec.size, ensemble_seed(j),
                                                 ec.levels, 1);
      ens_rmse[j] = rmse_curve(e.mean, refs[j].values).mean();
      invalid[j] = e.n_invalid;
    } catch (const NumericalError&) {
      ens_rmse[j] = std::numeric_limits<double>::infinity();
      invalid[j] = ec.size;
    }
  });
  Table rt{"repetitions", {}};
  rt.add("repetition", "index", idx)
      .add("ensemble_mean_rmse", "coefficient norm", ens_rmse)
      .add("deterministic_rmse", "coefficient norm", det_rmse)
      .add("invalid_members", "count", invalid);
  rep.tables.push_back(std::move(rt));

  const double med_e = median(ens_rmse), med_d = median(det_rmse);
  rep.markers["band_width_t0"] = width0;
  rep.markers["bands_nested"] = nested;
  rep.markers["showcase_invalid_members"] = showcase.n_invalid;
  rep.markers["median_ensemble_mean_rmse"] = med_e;
  rep.markers["median_deterministic_rmse"] = med_d;
  rep.markers["median_ratio"] = med_e / med_d;
  rep.markers["ensemble_boxplot"] = detail::box_json(box_stats(ens_rmse));
  rep.markers["sigma"] = detail::to_std(model.fit.params.sigma);
  return rep;
}

/// Cell status codes in the sweep table.
enum class SweepStatus { ok = 0, blowup = 1, fit_failed = 2 };

/// Average RMSE over (r, Gap): the mean over test trajectories of RMSE(t_l),
/// then averaged over time. A cell with at least one blown-up prediction, or
/// whose fit fails, is marked with NaN.
inline StudyReport spacetime_sweep(const PipelineConfig& c, std::span<const SnapshotMatrix> training,
                                   std::size_t threads = 0) {
  const auto& sc = c.study.sweep;
  require(!sc.r_values.empty() && !sc.gaps.empty(), "sweep: empty grid");
  std::vector<int> gaps = sc.gaps;
  std::sort(gaps.begin(), gaps.end());
  const int r_max = *std::max_element(sc.r_values.begin(), sc.r_values.end());
  const PodBasis full = ensemble_pod(training, r_max, threads);
  const auto test = generate_test(c, sc.num_test, threads);

  struct Cell {
    int r = 0;
    int gap = 0;
    double value = std::numeric_limits<double>::quiet_NaN();
    int blowups = 0;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    SweepStatus status = SweepStatus::ok;
  };
  std::vector<Cell> cells;
  for (int r : sc.r_values)
    for (int g : gaps) cells.push_back({r, g});

  parallel_for(cells.size(), threads, [&](std::size_t i) {
    Cell& cell = cells[i];
    const PodBasis basis = full.truncated(cell.r);
    try {
      const TrainedModel m = train_model(c, training, basis, cell.gap, 1);
      cell.lambda = m.fit.params.lambda_used;
      const auto preds = evaluate_predictions(m.srom, m.grom, basis, test, cell.gap, 1);
      Eigen::VectorXd mean_curve = Eigen::VectorXd::Zero(preds.front().reference.n_times());
      for (const auto& p : preds) {
        if (p.srom.blew_up()) ++cell.blowups;
        else mean_curve += p.rmse_srom;
      }
      if (cell.blowups > 0) {
        cell.status = SweepStatus::blowup;
      } else {
        cell.value = (mean_curve / double(preds.size())).mean();
      }
    } catch (const NumericalError&) {
      cell.status = SweepStatus::fit_failed;
    }
  });

  StudyReport rep = detail::new_report("sweep", c);
  std::vector<double> cr, cg, cv, cb, cl, cs;
  for (const auto& cell : cells) {
    cr.push_back(cell.r);
    cg.push_back(cell.gap);
    cv.push_back(cell.value);
    cb.push_back(cell.blowups);
    cl.push_back(cell.lambda);
    cs.push_back(static_cast<int>(cell.status));
  }
  Table t{"sweep", {}};
  t.add("r", "modes", cr).add("gap", "fine steps", cg)
      .add("average_rmse", "coefficient norm (NaN = blowup marker)", cv)
      .add("blowups", "count", cb).add("lambda", "normal-matrix units", cl)
      .add("status", "0 ok, 1 blowup, 2 fit failed", cs);
  rep.tables.push_back(std::move(t));

  nlohmann::json max_stable = nlohmann::json::object(), argmin = nlohmann::json::object(),
                 interior = nlohmann::json::object();
  for (int r : sc.r_values) {
    int stable = 0;
    bool contiguous = true;
    double best = std::numeric_limits<double>::infinity();
    int best_gap = 0;
    for (const auto& cell : cells) {
      if (cell.r != r) continue;
      const bool ok = cell.status == SweepStatus::ok;
      if (ok && contiguous) stable = cell.gap;
      contiguous = contiguous && ok;
      if (ok && cell.value < best) {
        best = cell.value;
        best_gap = cell.gap;
      }
    }
    const std::string key = std::to_string(r);
    max_stable[key] = stable;
    argmin[key] = best_gap;
    interior[key] = best_gap != 0 && best_gap != gaps.front() && best_gap != gaps.back();
  }
  rep.markers["max_stable_gap"] = max_stable;
  rep.markers["argmin_gap"] = argmin;
  rep.markers["interior_minimum"] = interior;
  rep.markers["num_test"] = sc.num_test;
  return rep;
}

}  // namespace srom
