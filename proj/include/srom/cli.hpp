#pragma once

// Command-line front end. Every subcommand reads --config, applies flag
// overrides, writes its artifacts under --out and prints exactly one JSON
// summary line on stdout. Diagnostics go to stderr.
//
// Exit codes: 0 success, 2 invalid arguments or config, 3 missing or
// inconsistent input files, 4 numerical failure, 1 anything else.

#include <CLI11.hpp>

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "srom/closure.hpp"
#include "srom/config.hpp"
#include "srom/error.hpp"
#include "srom/experiments.hpp"
#include "srom/fem.hpp"
#include "srom/galerkin.hpp"
#include "srom/io.hpp"
#include "srom/pod.hpp"
#include "srom/random.hpp"
#include "srom/srom.hpp"

namespace srom::cli {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kInvalidConfig = 2,
  kMissingInput = 3,
  kNumerical = 4,
};

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::invalid_argument: return kInvalidConfig;
    case ErrorCategory::missing_input: return kMissingInput;
    case ErrorCategory::numerical: return kNumerical;
  }
  return kUnexpected;
}

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::invalid_argument: return "invalid_config";
    case ErrorCategory::missing_input: return "missing_input";
    case ErrorCategory::numerical: return "numerical";
  }
  return "unexpected";
}

/// Flags shared by all subcommands. Unset optionals leave the config alone.
struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string basis;
  std::string coeffs;
  std::string model;
  std::size_t threads = 0;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_traj;
  std::optional<int> num_test;
  std::optional<int> r;
  std::optional<int> gap;
  std::optional<std::string> reg;
  std::optional<double> lambda;
  std::optional<int> mesh_size;
  bool test_domain = false;
  int ic_index = 0;
  std::optional<long> steps;
  int ensemble = 0;
  std::string study;
};

inline PipelineConfig resolve_config(const Options& o) {
  PipelineConfig c = load_config(o.config);
  if (o.seed) c.data.seed = *o.seed;
  if (o.num_traj) c.data.num_trajectories = *o.num_traj;
  if (o.num_test) {
    c.study.num_test = *o.num_test;
    c.study.sweep.num_test = *o.num_test;
  }
  if (o.r) c.reduction.r = *o.r;
  if (o.gap) c.reduction.gap = *o.gap;
  if (o.reg) c.regression.mode = parse_regularization_mode(*o.reg);
  if (o.lambda) c.regression.lambda = *o.lambda;
  if (o.mesh_size) c.regression.mesh_size = *o.mesh_size;
  c.validate();
  return c;
}

inline std::filesystem::path out_dir(const Options& o, const std::string& fallback) {
  return o.out.empty() ? std::filesystem::path(fallback) : std::filesystem::path(o.out);
}

inline std::filesystem::path data_dir(const Options& o, const PipelineConfig& c) {
  return o.data.empty() ? std::filesystem::path(c.data.dir) : std::filesystem::path(o.data);
}

inline PodBasis load_basis_checked(const std::string& path, const PipelineConfig& c) {
  if (path.empty()) throw InvalidArgument("--basis is required");
  PodBasis b = read_basis(path);
  if (b.n_nodes() != c.physics.n_elements + 1)
    throw MissingInput(path + ": basis has " + std::to_string(b.n_nodes()) +
                       " nodes but the config mesh has " + std::to_string(c.physics.n_elements + 1));
  return b;
}

inline SromModel load_model_checked(const std::string& path, const PodBasis& basis) {
  if (path.empty()) throw InvalidArgument("--model is required");
  SromModel m = read_model(path);
  if (m.basis_fingerprint != basis_fingerprint(basis))
    throw MissingInput(path + ": model was fitted on a different basis (fingerprint mismatch)");
  return m;
}

/// Training data from --data when given (verified against its manifest),
/// otherwise generated in memory from the config.
inline std::vector<SnapshotMatrix> training_data(const Options& o, const PipelineConfig& c,
                                                 std::ostream& err) {
  if (!o.data.empty()) {
    LoadedDataset d = load_dataset(o.data, c);
    if (d.manifest.domain != SeedDomain::training_ic)
      throw MissingInput(o.data + ": not a training dataset");
    return std::move(d.trajectories);
  }
  err << "generating " << c.data.num_trajectories << " training trajectories in memory\n";
  return generate_training(c, o.threads);
}

inline nlohmann::json cmd_generate(const Options& o, const PipelineConfig& c, std::ostream& err) {
  const auto dir = out_dir(o, c.data.dir);
  const SeedDomain domain = o.test_domain ? SeedDomain::test_ic : SeedDomain::training_ic;
  const int n = c.data.num_trajectories;
  const double T = o.test_domain ? c.study.horizon : c.physics.T;
  err << "solving " << n << " full-order trajectories on [0, " << T << "]\n";
  const auto data = generate_dataset(c.initial_condition, c.physics.nu, c.physics.dt, T,
                                     assemble_fem_operators(c.physics.n_elements), n, c.data.seed,
                                     o.threads, domain);
  const Manifest m = write_dataset(dir, c, data, domain);
  return {{"out", dir.string()}, {"num_trajectories", n}, {"domain", to_string(domain)},
          {"config_hash", m.config_hash}};
}

inline nlohmann::json cmd_pod(const Options& o, const PipelineConfig& c, std::ostream& err) {
  const LoadedDataset d = load_dataset(data_dir(o, c), c);
  err << "ensemble POD over " << d.trajectories.size() << " trajectories\n";
  const PodBasis b = ensemble_pod(d.trajectories, c.reduction.r, o.threads);
  const auto dir = out_dir(o, "pod");
  write_basis(dir / "basis.srom", b);
  Table spectrum{"eigenvalues", {}};
  std::vector<double> idx, eig;
  for (Eigen::Index i = 0; i < b.eigenvalues.size(); ++i) {
    idx.push_back(double(i + 1));
    eig.push_back(b.eigenvalues(i));
  }
  spectrum.add("index", "1", idx).add("eigenvalue", "squared nodal amplitude", eig);
  write_file(dir / "eigenvalues.csv", table_csv(spectrum));
  return {{"out", dir.string()}, {"r", b.r()}, {"basis_fingerprint", basis_fingerprint(b)}};
}

inline nlohmann::json cmd_project(const Options& o, const PipelineConfig& c, std::ostream& err) {
  const LoadedDataset d = load_dataset(data_dir(o, c), c);
  const PodBasis b = load_basis_checked(o.basis, c);
  err << "projecting " << d.trajectories.size() << " trajectories onto " << b.r() << " modes\n";
  const auto trajs = project_dataset(d.trajectories, b, c.reduction.gap, o.threads);
  const auto dir = out_dir(o, "coefficients");
  PipelineConfig mc = c;
  mc.data.seed = d.manifest.seed;
  write_coefficients(dir, mc, trajs, basis_fingerprint(b), d.manifest.domain, d.manifest.physics.T);
  return {{"out", dir.string()}, {"num_trajectories", trajs.size()}, {"gap", c.reduction.gap},
          {"delta", trajs.front().delta}};
}

inline nlohmann::json lcurve_json(const LCurve& l) {
  return {{"lambdas", l.lambdas},     {"residuals", l.residuals}, {"norms", l.norms},
          {"curvature", l.curvature}, {"selected", l.selected},   {"selected_index", l.selected_index},
          {"degenerate", l.degenerate}, {"flat", l.flat}};
}

inline nlohmann::json cmd_fit(const Options& o, const PipelineConfig& c, std::ostream& err) {
  if (o.coeffs.empty()) throw InvalidArgument("--coeffs is required");
  const LoadedCoefficients d = load_coefficients(o.coeffs);
  check_compatible(d.manifest, c, o.coeffs);
  const PodBasis b = load_basis_checked(o.basis, c);
  const std::string fp = basis_fingerprint(b);
  if (d.manifest.basis_fingerprint != fp)
    throw MissingInput(o.coeffs + ": coefficients were projected on a different basis");
  if (d.trajectories.empty()) throw MissingInput(o.coeffs + ": no trajectories");
  const GalerkinOperators ops =
      assemble_galerkin(b, c.physics.nu, assemble_fem_operators(c.physics.n_elements));
  err << "fitting closure on " << d.trajectories.size() << " trajectories (regularization "
      << to_string(c.regression.mode) << ")\n";
  const ClosureFit fit = fit_closure(d.trajectories, ops, c.regression.regularization(), o.threads);
  SromModel model = make_srom_model(ops, fit.params, d.trajectories.front().delta);
  model.basis_fingerprint = fp;
  const auto& first = d.trajectories.front();
  model.provenance = {c.physics.nu, static_cast<int>(d.trajectories.size()), d.manifest.gap,
                      d.manifest.seed, first.t0,
                      first.t0 + first.delta * double(first.n_times() - 1)};
  const auto dir = out_dir(o, "model");
  write_model(dir / "model.json", model);
  nlohmann::json report = {{"lambda", fit.params.lambda_used},
                           {"fit_loss", fit.params.fit_loss},
                           {"sigma", detail::to_std(fit.params.sigma)},
                           {"normal_equation_sigma", detail::to_std(fit.normal_equation_sigma)},
                           {"n_samples", fit.system.n_samples},
                           {"n_trajectories", fit.system.n_trajectories}};
  if (fit.lcurve) report["lcurve"] = lcurve_json(*fit.lcurve);
  write_file(dir / "fit_report.json", report.dump(2) + "\n");
  return {{"out", dir.string()}, {"lambda", fit.params.lambda_used},
          {"fit_loss", fit.params.fit_loss}, {"sigma_norm", fit.params.sigma.norm()}};
}

inline nlohmann::json cmd_simulate(const Options& o, const PipelineConfig& c, std::ostream& err) {
  const PodBasis b = load_basis_checked(o.basis, c);
  const SromModel model = load_model_checked(o.model, b);
  require(o.ic_index >= 0, "--ic-index must be >= 0");
  NormalStream rng(sub_seed(c.data.seed, static_cast<std::uint64_t>(o.ic_index), SeedDomain::test_ic));
  const Eigen::VectorXd u0 = sample_initial_condition(c.initial_condition, c.physics.n_elements, rng);
  const Eigen::VectorXd a0 = b.modes.transpose() * u0;
  const long n_steps = o.steps ? *o.steps : std::lround(c.study.horizon / model.delta);
  require(n_steps >= 0, "--steps must be >= 0");
  const auto dir = out_dir(o, "simulation");
  nlohmann::json summary = {{"out", dir.string()}, {"n_steps", n_steps}, {"ic_index", o.ic_index}};
  if (o.ensemble <= 0) {
    const Trajectory t = simulate_deterministic(model, a0, n_steps);
    write_file(dir / "trajectory.csv", trajectory_csv(t.values, model.delta));
    write_file(dir / "trajectory.srom", encode_container(t.values, model.delta, 0.0));
    summary["blowup_step"] = t.blowup_step ? nlohmann::json(*t.blowup_step) : nlohmann::json(nullptr);
    if (t.blew_up()) err << "trajectory blew up at step " << *t.blowup_step << "\n";
    return summary;
  }
  const std::uint64_t seed = sub_seed(c.data.seed, static_cast<std::uint64_t>(o.ic_index),
                                      SeedDomain::ensemble_noise);
  err << "simulating " << o.ensemble << " ensemble members\n";
  const EnsembleResult e = simulate_ensemble(model, a0, n_steps, o.ensemble, seed,
                                             c.study.ensemble.levels, o.threads);
  write_file(dir / "mean.csv", trajectory_csv(e.mean, model.delta));
  for (std::size_t q = 0; q < e.levels.size(); ++q)
    write_file(dir / ("p" + format_double(e.levels[q]) + ".csv"),
               trajectory_csv(e.percentiles[q], model.delta));
  Eigen::MatrixXd members = Eigen::MatrixXd::Constant(
      model.r * o.ensemble, n_steps + 1, std::numeric_limits<double>::quiet_NaN());
  for (int j = 0; j < o.ensemble; ++j) {
    const auto& v = e.members[j].values;
    members.block(j * model.r, 0, model.r, v.cols()) = v;
  }
  write_file(dir / "members.srom", encode_container(members, model.delta, 0.0));
  summary["n_ensemble"] = o.ensemble;
  summary["n_invalid"] = e.n_invalid;
  summary["seed"] = seed;
  return summary;
}

inline nlohmann::json cmd_evaluate(const Options& o, const PipelineConfig& c, std::ostream& err) {
  const PodBasis b = load_basis_checked(o.basis, c);
  const SromModel model = load_model_checked(o.model, b);
  const int gap = static_cast<int>(std::lround(model.delta / c.physics.dt));
  std::vector<SnapshotMatrix> test;
  if (!o.data.empty()) {
    LoadedDataset d = load_dataset(o.data, c);
    if (d.manifest.domain == SeedDomain::training_ic)
      err << "warning: evaluating on training trajectories\n";
    test = std::move(d.trajectories);
  } else {
    err << "generating " << c.study.num_test << " held-out trajectories\n";
    test = generate_test(c, c.study.num_test, o.threads);
  }
  SromModel grom = make_grom_model(model.galerkin, model.delta);
  const auto preds = evaluate_predictions(model, grom, b, test, gap, o.threads);
  std::vector<double> traj, t, s, g, js, jg;
  for (std::size_t j = 0; j < preds.size(); ++j) {
    js.push_back(preds[j].mean_rmse_srom);
    jg.push_back(preds[j].mean_rmse_grom);
    for (Eigen::Index l = 0; l < preds[j].rmse_srom.size(); ++l) {
      traj.push_back(double(j));
      t.push_back(double(l) * model.delta);
      s.push_back(preds[j].rmse_srom(l));
      g.push_back(preds[j].rmse_grom(l));
    }
  }
  const auto dir = out_dir(o, "evaluation");
  Table curves{"rmse", {}};
  curves.add("trajectory", "index", traj).add("t", "time", t)
      .add("srom", "coefficient norm", s).add("grom", "coefficient norm", g);
  write_file(dir / "rmse.csv", table_csv(curves));
  std::vector<double> idx(preds.size());
  for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = double(j);
  Table summary{"time_averaged_rmse", {}};
  summary.add("trajectory", "index", idx).add("srom", "coefficient norm", js)
      .add("grom", "coefficient norm", jg);
  write_file(dir / "time_averaged_rmse.csv", table_csv(summary));
  return {{"out", dir.string()}, {"num_test", preds.size()},
          {"median_srom", median(js)}, {"median_grom", median(jg)}};
}

inline nlohmann::json cmd_study(const Options& o, const PipelineConfig& c, std::ostream& err) {
  const auto training = training_data(o, c, err);
  err << "running study '" << o.study << "'\n";
  StudyReport rep;
  if (o.study == "pod-convergence") rep = pod_convergence_study(c, training, o.threads);
  else if (o.study == "estimator-convergence") rep = estimator_convergence_study(c, training, o.threads);
  else if (o.study == "prediction") rep = prediction_study(c, training, o.threads);
  else if (o.study == "ensemble") rep = ensemble_study(c, training, o.threads);
  else if (o.study == "sweep") rep = spacetime_sweep(c, training, o.threads);
  else throw InvalidArgument("unknown study '" + o.study + "'");
  const auto dir = out_dir(o, "study-" + o.study);
  write_report(dir, rep);
  return {{"out", dir.string()}, {"study", rep.study_id}, {"markers", rep.markers}};
}

/// Parses argv and runs one subcommand. Streams are injectable for tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Stochastic reduced-order models for viscous Burgers from multi-trajectory data"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "pipeline config (JSON)")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--threads", o.threads, "worker threads (0 = all cores)");
    sub->add_option("--seed", o.seed, "top-level seed");
  };
  const auto reduction = [&](CLI::App* sub) {
    sub->add_option("--r", o.r, "number of POD modes");
    sub->add_option("--gap", o.gap, "downsampling factor delta / dt");
  };
  const auto regression = [&](CLI::App* sub) {
    sub->add_option("--reg", o.reg, "regularization: none | fixed | lcurve");
    sub->add_option("--lambda", o.lambda, "Tikhonov parameter for --reg fixed");
    sub->add_option("--mesh-size", o.mesh_size, "L-curve mesh size");
  };

  auto* gen = app.add_subcommand("generate", "solve full-order trajectories from random initial conditions");
  common(gen);
  gen->add_option("--num-traj", o.num_traj, "number of trajectories");
  gen->add_flag("--test", o.test_domain, "draw held-out initial conditions on the prediction window");

  auto* pod = app.add_subcommand("pod", "ensemble POD basis from a dataset");
  common(pod);
  reduction(pod);
  pod->add_option("--data", o.data, "dataset directory");

  auto* proj = app.add_subcommand("project", "project a dataset onto a basis");
  common(proj);
  reduction(proj);
  proj->add_option("--data", o.data, "dataset directory");
  proj->add_option("--basis", o.basis, "basis file")->required();

  auto* fit = app.add_subcommand("fit", "infer closure and noise from projected trajectories");
  common(fit);
  regression(fit);
  fit->add_option("--coeffs", o.coeffs, "coefficient dataset directory")->required();
  fit->add_option("--basis", o.basis, "basis file")->required();

  auto* sim = app.add_subcommand("simulate", "run a model from a held-out initial condition");
  common(sim);
  sim->add_option("--model", o.model, "model file")->required();
  sim->add_option("--basis", o.basis, "basis file")->required();
  sim->add_option("--ic-index", o.ic_index, "held-out initial condition index");
  sim->add_option("--steps", o.steps, "number of steps (default: horizon / delta)");
  sim->add_option("--ensemble", o.ensemble, "ensemble size (0 = deterministic)");

  auto* eval = app.add_subcommand("evaluate", "RMSE of S-ROM and G-ROM against the projected FOM");
  common(eval);
  eval->add_option("--model", o.model, "model file")->required();
  eval->add_option("--basis", o.basis, "basis file")->required();
  eval->add_option("--data", o.data, "held-out dataset directory (default: generate)");
  eval->add_option("--num-test", o.num_test, "number of held-out initial conditions");

  auto* study = app.add_subcommand("study", "run a scripted study");
  common(study);
  reduction(study);
  regression(study);
  study->add_option("name", o.study, "pod-convergence | estimator-convergence | prediction | ensemble | sweep")
      ->required()
      ->check(CLI::IsMember({"pod-convergence", "estimator-convergence", "prediction", "ensemble", "sweep"}));
  study->add_option("--data", o.data, "training dataset directory (default: generate)");
  study->add_option("--num-traj", o.num_traj, "training trajectories when generating");
  study->add_option("--num-test", o.num_test, "held-out initial conditions");

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    out << nlohmann::json{{"status", "error"}, {"category", "invalid_config"}, {"message", e.what()}}.dump()
        << "\n";
    return kInvalidConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const PipelineConfig c = resolve_config(o);
    nlohmann::json summary;
    if (gen->parsed()) summary = cmd_generate(o, c, err);
    else if (pod->parsed()) summary = cmd_pod(o, c, err);
    else if (proj->parsed()) summary = cmd_project(o, c, err);
    else if (fit->parsed()) summary = cmd_fit(o, c, err);
    else if (sim->parsed()) summary = cmd_simulate(o, c, err);
    else if (eval->parsed()) summary = cmd_evaluate(o, c, err);
    else summary = cmd_study(o, c, err);
    summary["command"] = command;
    summary["status"] = "ok";
    out << summary.dump() << "\n";
    return kOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    out << nlohmann::json{{"command", command}, {"status", "error"},
                          {"category", category_name(e.category())}, {"message", e.what()}}.dump()
        << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    out << nlohmann::json{{"command", command}, {"status", "error"}, {"category", "unexpected"},
                          {"message", e.what()}}.dump()
        << "\n";
    return kUnexpected;
  }
}

}  // namespace srom::cli
