#include "dive/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "dive/compare.hpp"
#include "dive/fast.hpp"
#include "dive/io.hpp"
#include "dive/mstep.hpp"
#include "dive/objective.hpp"
#include "dive/parallel.hpp"
#include "dive/synthetic.hpp"

namespace dive {

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
      return 2;
    case ErrorCode::io_format:
    case ErrorCode::io_version:
    case ErrorCode::io_corrupt:
    case ErrorCode::fingerprint_mismatch:
      return 3;
    default:
      return 4;
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_format, "cannot create output directory: " + dir);
}

struct DatasetArgs {
  std::string values, rows, adjacency;

  void attach(CLI::App* cmd) {
    cmd->add_option("--values", values, "value matrix (DIVEMTRX binary or CSV)")->required();
    cmd->add_option("--rows", rows, "observation rows CSV (subject_id,visit_id,age)")->required();
    cmd->add_option("--adjacency", adjacency, "mesh edge list CSV (l1,l2)")->required();
  }

  Dataset load() const { return load_dataset(values, rows, adjacency); }
};

ModelCheckpoint load_checkpoint_for(const std::string& model_path, const Dataset& data) {
  ModelCheckpoint cp = load_model(model_path);
  if (!(cp.fingerprint == dataset_fingerprint(data)))
    throw Error(ErrorCode::fingerprint_mismatch,
                model_path + " was fitted on a different dataset");
  cp.model.validate(data);
  return cp;
}

int run_simulate(const std::string& preset, const std::string& scenario_path,
                 std::uint64_t seed, bool seed_given, const std::string& out) {
  ScenarioConfig cfg;
  if (!scenario_path.empty()) {
    cfg = scenario_from_json_file(scenario_path);
    if (seed_given) cfg.seed = seed;
  } else {
    cfg = preset_scenario(preset.empty() ? "easy" : preset, seed);
  }
  cfg.validate();

  ensure_dir(out);
  auto [data, truth] = generate_dataset(cfg);
  const auto covariates =
      make_covariates(data, truth, default_covariate_specs(), cfg.seed + 1000003);

  save_scenario_json(out + "/scenario.json", cfg);
  save_values_binary(out + "/values.bin", data.values);
  save_rows_csv(out + "/rows.csv", data.rows);
  save_adjacency_csv(out + "/adjacency.csv", data.adjacency);
  save_ground_truth(out, truth, data.subject_ids);
  save_covariates_csv(out + "/covariates.csv", data, covariates);

  std::printf("simulate: wrote %lld rows x %lld vertices to %s\n",
              static_cast<long long>(data.row_count()),
              static_cast<long long>(data.vertex_count()), out.c_str());
  return 0;
}

int run_fit(const DatasetArgs& dargs, const FitConfig& cfg, const std::string& mode_name,
            const std::string& atlas_path, const std::string& out) {
  const Dataset data = dargs.load();

  FitMode mode = FitMode::full();
  if (mode_name == "roi") {
    if (atlas_path.empty())
      throw Error(ErrorCode::config, "--mode roi requires --atlas");
    mode = FitMode::roi(load_label_file(atlas_path, data.vertex_count()));
  } else if (mode_name == "no-staging") {
    mode = FitMode::no_staging();
  } else if (mode_name != "full") {
    throw Error(ErrorCode::config, "unknown mode: " + mode_name);
  }

  ensure_dir(out);
  Priors priors;  // uniform
  auto [model, report] = gem_fit(data, cfg, priors, mode);

  save_model(out + "/model.dive", model, dataset_fingerprint(data));
  write_trace_csv(out + "/trace.csv", report);
  write_trajectories_csv(out + "/trajectories.csv", model, data);
  write_stages_csv(out + "/stages.csv", model, data);
  // wall time stays off report.csv so seeded runs are byte-identical
  write_metrics_csv(out + "/report.csv",
                    {{"final_objective", report.outer_objectives.back()},
                     {"iterations", static_cast<double>(report.iterations)},
                     {"converged", report.converged ? 1.0 : 0.0},
                     {"diverged", report.diverged ? 1.0 : 0.0},
                     {"worst_monotone_delta", report.worst_monotone_delta},
                     {"empty_cluster_events", static_cast<double>(report.empty_clusters.size())}});

  std::printf("fit: %s after %d iteration(s), objective %.17g, %.2fs\n",
              report.converged ? "converged" : "stopped", report.iterations,
              report.outer_objectives.back(), report.wall_seconds);
  if (report.diverged) std::printf("fit: diverged; returned the last finite state\n");
  return 0;
}

int run_evaluate(const DatasetArgs& dargs, const std::string& model_path,
                 const std::string& labels_path, const std::string& stages_path,
                 const std::string& traj_path, const std::string& out) {
  const Dataset data = dargs.load();
  const ModelCheckpoint cp = load_checkpoint_for(model_path, data);
  const GroundTruth truth = load_ground_truth(data, labels_path, stages_path, traj_path);
  if (static_cast<int>(truth.trajectories.size()) != cp.model.K)
    throw Error(ErrorCode::config, "checkpoint K does not match ground-truth cluster count");

  const auto perm = match_labels(cp.model.posteriors, truth.labels, cp.model.K);
  const auto ages = baseline_ages(data);
  const DpsAlignment align = align_dps(cp.model.stages, truth.stages, ages);

  const double derr = dps_error(cp.model.stages, truth.stages, ages);
  const double cerr = center_error(cp.model.trajectories, truth.trajectories, perm, align);
  const double agree = label_agreement(cp.model.posteriors, truth.labels, perm);

  ensure_dir(out);
  write_metrics_csv(out + "/report.csv", {{"dps_error", derr},
                                          {"center_error", cerr},
                                          {"agreement", agree},
                                          {"align_scale", align.scale},
                                          {"align_offset", align.offset}});
  std::printf("dps_error=%.17g\ncenter_error=%.17g\nagreement=%.17g\n", derr, cerr, agree);
  return 0;
}

int run_compare(const DatasetArgs& dargs, const std::string& covariates_path, CompareConfig cfg,
                const std::string& atlas_path, const std::string& out) {
  const Dataset data = dargs.load();
  const auto covariates = load_covariates_csv(covariates_path, data);
  if (covariates.empty()) throw Error(ErrorCode::config, "no covariates in " + covariates_path);

  if (!atlas_path.empty()) {
    cfg.roi_atlas = load_label_file(atlas_path, data.vertex_count());
  } else {
    // coarse random patches standing in for an anatomical atlas
    cfg.roi_atlas = make_patch_labels(data.adjacency, cfg.fit.K, cfg.seed + 77);
  }

  ensure_dir(out);
  const ComparisonReport report = run_comparison(data, covariates, cfg);
  write_comparison_csv(out + "/report.csv", report);

  for (std::size_t m = 0; m < report.model_names.size(); ++m) {
    std::printf("%s:", report.model_names[m].c_str());
    for (std::size_t c = 0; c < report.covariate_names.size(); ++c)
      std::printf(" rho_%s=%.3f+/-%.3f", report.covariate_names[c].c_str(),
                  report.rho_mean(static_cast<int>(m), static_cast<int>(c)),
                  report.rho_sd(static_cast<int>(m), static_cast<int>(c)));
    std::printf(" rmse=%.4f+/-%.4f\n", report.rmse_mean(static_cast<int>(m)),
                report.rmse_sd(static_cast<int>(m)));
  }
  for (const auto& failure : report.fold_failures)
    std::fprintf(stderr, "warning: %s\n", failure.c_str());
  return 0;
}

int run_audit(const DatasetArgs& dargs, const std::string& model_path, double tol,
              const std::string& out) {
  const Dataset data = dargs.load();
  const ModelCheckpoint cp = load_checkpoint_for(model_path, data);
  const EquivalenceReport report = audit_equivalence(data, cp.model, tol);

  ensure_dir(out);
  write_audit_csv(out + "/report.csv", report);
  std::printf("audit: %s max_theta_deviation=%.3e max_stage_deviation=%.3e tol=%.1e\n",
              report.pass ? "PASS" : "FAIL", report.max_theta_deviation,
              report.max_stage_deviation, report.tol);
  return report.pass ? 0 : 5;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"DIVE: vertex-wise trajectory clustering with subject staging"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset with ground truth");
  std::string sim_preset, sim_scenario, sim_out = ".";
  std::uint64_t sim_seed = 0;
  sim->add_option("--preset", sim_preset, "easy | medium | hard");
  sim->add_option("--scenario", sim_scenario, "scenario config JSON");
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--out", sim_out, "output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "fit the model to a dataset");
  DatasetArgs fit_data;
  fit_data.attach(fit);
  FitConfig fit_cfg;
  std::string fit_mode = "full", fit_atlas, fit_out = ".";
  bool fit_slow = false;
  fit->add_option("--k", fit_cfg.K, "cluster count")->required();
  fit->add_option("--seed", fit_cfg.seed, "RNG seed");
  fit->add_option("--max-iters", fit_cfg.max_outer_iters, "outer iteration cap");
  fit->add_option("--tol", fit_cfg.objective_rel_tol, "relative objective tolerance");
  fit->add_option("--multi-starts", fit_cfg.theta_multi_starts, "trajectory optimizer starts");
  fit->add_option("--lambda-max", fit_cfg.lambda_grid.max, "lambda grid maximum");
  fit->add_option("--lambda-points", fit_cfg.lambda_grid.points, "lambda grid points");
  fit->add_option("--threads", fit_cfg.threads, "worker threads (or DIVE_THREADS)");
  fit->add_option("--mode", fit_mode, "full | roi | no-staging");
  fit->add_option("--atlas", fit_atlas, "per-vertex label CSV for --mode roi");
  fit->add_flag("--slow", fit_slow, "use the slow per-vertex sub-updates");
  fit->add_option("--out", fit_out, "output directory")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint against ground truth");
  DatasetArgs eval_data;
  eval_data.attach(eval);
  std::string eval_model, eval_labels, eval_stages, eval_traj, eval_out = ".";
  eval->add_option("--model", eval_model, "model checkpoint")->required();
  eval->add_option("--truth-labels", eval_labels, "truth_labels.csv")->required();
  eval->add_option("--truth-stages", eval_stages, "truth_stages.csv")->required();
  eval->add_option("--truth-trajectories", eval_traj, "truth_trajectories.csv")->required();
  eval->add_option("--out", eval_out, "output directory")->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "cross-validated model comparison");
  DatasetArgs cmp_data;
  cmp_data.attach(cmp);
  CompareConfig cmp_cfg;
  std::string cmp_cov, cmp_atlas, cmp_out = ".";
  bool cmp_spearman = false;
  cmp->add_option("--covariates", cmp_cov, "covariates CSV")->required();
  cmp->add_option("--k", cmp_cfg.fit.K, "cluster count")->required();
  cmp->add_option("--folds", cmp_cfg.folds, "cross-validation folds");
  cmp->add_option("--seed", cmp_cfg.seed, "RNG seed");
  cmp->add_option("--max-iters", cmp_cfg.fit.max_outer_iters, "outer iteration cap");
  cmp->add_option("--threads", cmp_cfg.fit.threads, "worker threads");
  cmp->add_option("--atlas", cmp_atlas, "ROI atlas labels (default: random patches)");
  cmp->add_flag("--spearman", cmp_spearman, "rank correlation instead of Pearson");
  cmp->add_option("--out", cmp_out, "output directory")->required();

  // audit
  auto* aud = app.add_subcommand("audit", "verify fast/slow gradient equivalence");
  DatasetArgs aud_data;
  aud_data.attach(aud);
  std::string aud_model, aud_out = ".";
  double aud_tol = 1e-8;
  aud->add_option("--model", aud_model, "model checkpoint")->required();
  aud->add_option("--tol", aud_tol, "relative deviation tolerance");
  aud->add_option("--out", aud_out, "output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand(sim))
      return run_simulate(sim_preset, sim_scenario, sim_seed, !sim_seed_opt->empty(), sim_out);
    if (app.got_subcommand(fit)) {
      fit_cfg.use_fast_path = !fit_slow;
      return run_fit(fit_data, fit_cfg, fit_mode, fit_atlas, fit_out);
    }
    if (app.got_subcommand(eval))
      return run_evaluate(eval_data, eval_model, eval_labels, eval_stages, eval_traj, eval_out);
    if (app.got_subcommand(cmp)) {
      cmp_cfg.method = cmp_spearman ? CorrelationMethod::spearman : CorrelationMethod::pearson;
      cmp_cfg.fit.seed = cmp_cfg.seed;
      return run_compare(cmp_data, cmp_cov, cmp_cfg, cmp_atlas, cmp_out);
    }
    if (app.got_subcommand(aud)) return run_audit(aud_data, aud_model, aud_tol, aud_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dive
