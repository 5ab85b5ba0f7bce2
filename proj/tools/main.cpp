#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gcfpca/csv.hpp"
#include "gcfpca/errors.hpp"
#include "gcfpca/ingest.hpp"
#include "gcfpca/pipeline.hpp"
#include "gcfpca/simlab.hpp"
#include "gcfpca/version.hpp"

namespace {

using nlohmann::json;

// Machine-readable failure report on stderr; stdout stays a progress log.
void emit_error(const std::string& type, const std::string& message) {
  json err;
  err["error"] = {{"type", type}, {"message", message}};
  std::cerr << err.dump() << std::endl;
}

constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitIo = 4;

template <typename Fn>
int run_guarded(Fn&& body) {
  try {
    return body();
  } catch (const gcfpca::ValidationError& e) {
    emit_error("validation", e.what());
    return kExitValidation;
  } catch (const gcfpca::ConvergenceError& e) {
    emit_error("convergence", e.what());
    return kExitConvergence;
  } catch (const gcfpca::IoError& e) {
    emit_error("io", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 1;
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw gcfpca::IoError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw gcfpca::IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Shared fit parameters, defaults mirroring the pipeline defaults.
struct FitFlags {
  std::string family = "gaussian";
  double bin_frac = 0.05;
  bool cyclic = true;
  int n_basis = 14;
  double pve = 0.95;
  int fixed_l = 0;
  double level = 0.95;
  int cma_draws = 10000;
  std::uint64_t seed = 1;
  int threads = 0;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--family", f.family, "Outcome family: gaussian, bernoulli, or poisson")
      ->capture_default_str();
  cmd->add_option("--bin-frac", f.bin_frac,
                  "Window width for the local fits, as a fraction of the grid")
      ->check(CLI::Range(1e-9, 1.0))
      ->capture_default_str();
  cmd->add_flag("--cyclic,!--no-cyclic", f.cyclic,
                "Wrap the local windows around the domain ends")
      ->capture_default_str();
  cmd->add_option("--n-basis", f.n_basis, "Spline dimension per fixed-effect curve")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--pve", f.pve, "Variance fraction for choosing the component count")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--fixed-L", f.fixed_l, "Fixed component count (overrides --pve when > 0)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--level", f.level, "Confidence level for the coefficient bands")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--cma-draws", f.cma_draws,
                  "Monte Carlo draws for the simultaneous band quantile")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Seed for the simultaneous band draws")
      ->capture_default_str();
  cmd->add_option("--threads", f.threads, "Worker threads (0 = all hardware threads)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

gcfpca::PipelineOptions to_pipeline_options(const FitFlags& f) {
  gcfpca::PipelineOptions opt;
  opt.family = gcfpca::parse_family(f.family);
  opt.bin_fraction = f.bin_frac;
  opt.cyclic_bins = f.cyclic;
  opt.n_fixed_basis = f.n_basis;
  opt.truncation.pve = f.pve;
  opt.truncation.fixed_L = f.fixed_l;
  opt.n_threads = f.threads;
  return opt;
}

json fit_flags_json(const FitFlags& f) {
  json cfg;
  cfg["family"] = f.family;
  cfg["bin_frac"] = f.bin_frac;
  cfg["cyclic"] = f.cyclic;
  cfg["n_basis"] = f.n_basis;
  cfg["pve"] = f.pve;
  cfg["fixed_L"] = f.fixed_l;
  cfg["level"] = f.level;
  cfg["cma_draws"] = f.cma_draws;
  cfg["seed"] = f.seed;
  cfg["threads"] = f.threads;
  return cfg;
}

// Scenario selection shared by `simulate` and `replicate`: start from the
// defaults or a JSON file, then apply explicitly passed flags on top.
struct ScenarioFlags {
  std::string scenario_path;
  std::string id;
  int I = 0;
  int K = 0;
  std::string family;
  std::string eigenbasis;
  std::string covariate;
  double gaussian_sd = 0.0;
  double bin_frac = 0.0;
  std::uint64_t seed = 0;
};

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& f) {
  cmd->add_option("--scenario", f.scenario_path, "Scenario JSON file to start from");
  cmd->add_option("--id", f.id, "Scenario identifier");
  cmd->add_option("--I", f.I, "Number of subjects")->check(CLI::PositiveNumber);
  cmd->add_option("--K", f.K, "Grid points per subject")->check(CLI::PositiveNumber);
  cmd->add_option("--family", f.family, "Outcome family: gaussian, bernoulli, or poisson");
  cmd->add_option("--eigenbasis", f.eigenbasis,
                  "True eigenfunctions: fourier or orthogonal_polynomial");
  cmd->add_option("--covariate", f.covariate, "Covariate draw: bernoulli_half or standard_normal");
  cmd->add_option("--gaussian-sd", f.gaussian_sd, "Residual standard deviation (gaussian family)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--bin-frac", f.bin_frac, "Window fraction used when fitting the scenario")
      ->check(CLI::Range(1e-9, 1.0));
  cmd->add_option("--seed", f.seed, "Master seed for the scenario");
}

gcfpca::SimScenario resolve_scenario(const CLI::App* cmd, const ScenarioFlags& f) {
  gcfpca::SimScenario sc;
  if (!f.scenario_path.empty()) {
    sc = gcfpca::scenario_from_json(read_text_file(f.scenario_path));
  }
  if (cmd->count("--id") > 0) sc.id = f.id;
  if (cmd->count("--I") > 0) sc.I = f.I;
  if (cmd->count("--K") > 0) sc.K = f.K;
  if (cmd->count("--family") > 0) sc.family = gcfpca::parse_family(f.family);
  if (cmd->count("--eigenbasis") > 0) {
    if (f.eigenbasis == "fourier") {
      sc.eigenbasis = gcfpca::ClosedFormBasisKind::fourier;
    } else if (f.eigenbasis == "orthogonal_polynomial") {
      sc.eigenbasis = gcfpca::ClosedFormBasisKind::orthogonal_polynomial;
    } else {
      throw gcfpca::ValidationError("unknown eigenbasis '" + f.eigenbasis + "'");
    }
  }
  if (cmd->count("--covariate") > 0) {
    if (f.covariate == "bernoulli_half") {
      sc.covariate_kind = gcfpca::CovariateKind::bernoulli_half;
    } else if (f.covariate == "standard_normal") {
      sc.covariate_kind = gcfpca::CovariateKind::standard_normal;
    } else {
      throw gcfpca::ValidationError("unknown covariate kind '" + f.covariate + "'");
    }
  }
  if (cmd->count("--gaussian-sd") > 0) sc.gaussian_sd = f.gaussian_sd;
  if (cmd->count("--bin-frac") > 0) sc.bin_fraction = f.bin_frac;
  if (cmd->count("--seed") > 0) sc.seed = f.seed;
  return sc;
}

int cmd_fit(const std::string& input, const std::string& output_dir, const FitFlags& flags,
            bool missing_at_random) {
  using namespace gcfpca;
  std::cout << "loading " << input << "\n";
  LongDataset data = load_long_csv(input, missing_at_random);
  std::cout << "loaded I=" << data.n_subjects() << " subjects, K=" << data.n_grid()
            << " grid points, p=" << data.n_covariates() << " covariates, missing fraction "
            << data.missing_fraction() << "\n";

  PipelineOptions opt = to_pipeline_options(flags);
  PipelineResult result = fit_gcfpca(data, opt);
  const GcFpcaFit& fit = result.fit;
  std::cout << "local stage: " << result.bins.bins.size() << " windows, "
            << result.local_fits.n_failed << " failed (" << result.timings.local_s << "s)\n";
  std::cout << "covariance stage: kept " << fit.eigensystem.eigenvalues.size()
            << " components, variance fraction " << fit.eigensystem.pve << " ("
            << result.timings.fpca_s << "s)\n";
  std::cout << "joint stage: " << (fit.converged ? "converged" : "did not converge") << " in "
            << fit.n_outer << " outer iterations (" << result.timings.joint_s << "s)\n";

  const VectorXd& points = fit.eigensystem.grid;
  std::vector<CurveBand> pointwise = fixed_effect_curves(fit, points, flags.level);
  std::vector<CmaBand> simultaneous;
  const int q = static_cast<int>(fit.beta_coefs.rows());
  simultaneous.reserve(static_cast<std::size_t>(q));
  for (int r = 0; r < q; ++r) {
    simultaneous.push_back(
        cma_bands(fit, r, points, flags.level, flags.cma_draws, flags.seed, flags.threads));
  }

  json cfg = fit_flags_json(flags);
  cfg["command"] = "fit";
  cfg["input"] = input;
  cfg["missing_at_random"] = missing_at_random;
  const std::string cfg_line = cfg.dump();

  ensure_dir(output_dir);
  write_beta_curves_csv(join_path(output_dir, "beta_curves.csv"), cfg_line, points, pointwise,
                        simultaneous);
  write_eigenfunctions_csv(join_path(output_dir, "eigenfunctions.csv"), cfg_line,
                           fit.eigensystem);
  write_eigenvalues_csv(join_path(output_dir, "eigenvalues.csv"), cfg_line, fit.eigensystem);
  write_scores_csv(join_path(output_dir, "scores.csv"), cfg_line, fit.subject_ids, fit.scores);
  write_fit_meta_json(join_path(output_dir, "fit_meta.json"), cfg_line, result, flags.level,
                      flags.cma_draws);
  std::cout << "wrote beta_curves.csv, eigenfunctions.csv, eigenvalues.csv, scores.csv, "
               "fit_meta.json to "
            << output_dir << "\n";
  return 0;
}

int cmd_simulate(const CLI::App* cmd, const ScenarioFlags& flags, const std::string& output_dir) {
  using namespace gcfpca;
  SimScenario sc = resolve_scenario(cmd, flags);
  std::cout << "generating scenario '" << sc.id << "' (I=" << sc.I << ", K=" << sc.K
            << ", family=" << sc.family.name() << ")\n";
  GeneratedData gen = generate_dataset(sc);

  json cfg;
  cfg["command"] = "simulate";
  cfg["scenario"] = json::parse(scenario_to_json(sc));
  const std::string cfg_line = cfg.dump();

  ensure_dir(output_dir);
  {
    std::ofstream out(join_path(output_dir, "scenario.json"));
    if (!out) throw IoError("cannot open scenario.json for writing");
    out << scenario_to_json(sc) << "\n";
  }
  write_dataset_csv(join_path(output_dir, "dataset.csv"), cfg_line, gen.data);
  write_truth_curves_csv(join_path(output_dir, "truth_curves.csv"), cfg_line, gen.data.grid,
                         gen.truth);
  write_truth_scores_csv(join_path(output_dir, "truth_scores.csv"), cfg_line,
                         gen.data.subject_ids, gen.truth);
  write_truth_eta_csv(join_path(output_dir, "truth_eta.csv"), cfg_line, gen.data.subject_ids,
                      gen.data.grid, gen.truth);
  std::cout << "wrote dataset.csv (+ scenario.json, truth files) to " << output_dir << "\n";
  return 0;
}

int cmd_replicate(const CLI::App* cmd, const ScenarioFlags& flags, const std::string& output_dir,
                  int n_reps, double level, int threads) {
  using namespace gcfpca;
  SimScenario sc = resolve_scenario(cmd, flags);
  std::cout << "running " << n_reps << " replicates of scenario '" << sc.id << "' (I=" << sc.I
            << ", K=" << sc.K << ", family=" << sc.family.name() << ")\n";
  ReplicationSummary summary = run_replications(sc, n_reps, threads, level);
  for (const ReplicateRecord& rec : summary.records) {
    if (!rec.ok) std::cout << "replicate " << rec.rep << " failed: " << rec.message << "\n";
  }
  std::cout << (summary.n_reps - summary.n_failed) << "/" << summary.n_reps
            << " replicates succeeded\n";

  json cfg;
  cfg["command"] = "replicate";
  cfg["scenario"] = json::parse(scenario_to_json(sc));
  cfg["n_reps"] = n_reps;
  cfg["level"] = level;
  const std::string cfg_line = cfg.dump();

  ensure_dir(output_dir);
  write_replicate_metrics_csv(join_path(output_dir, "replicates.csv"), cfg_line, summary);
  write_summary_table_csv(join_path(output_dir, "summary_table.csv"), cfg_line, {summary});
  std::cout << "wrote replicates.csv and summary_table.csv to " << output_dir << "\n";

  if (summary.n_failed * 5 > summary.n_reps) {  // fewer than 80% succeeded
    emit_error("convergence", std::to_string(summary.n_failed) + " of " +
                                  std::to_string(summary.n_reps) + " replicates failed");
    return kExitConvergence;
  }
  return 0;
}

int cmd_binarize(const std::string& input, const std::string& output, double threshold) {
  using namespace gcfpca;
  std::cout << "loading " << input << "\n";
  MultiDayData raw = load_multiday_csv(input);
  std::vector<std::string> warnings;
  LongDataset binary = binarize_profiles(raw.profiles, raw.grid, threshold, &warnings);
  for (const std::string& w : warnings) std::cout << "warning: " << w << "\n";
  std::cout << "binarized " << binary.n_subjects() << " subjects on " << binary.n_grid()
            << " grid points (skipped " << (raw.profiles.size() - binary.subject_ids.size())
            << ")\n";

  json cfg;
  cfg["command"] = "binarize";
  cfg["input"] = input;
  cfg["threshold"] = threshold;
  write_dataset_csv(output, cfg.dump(), binary);
  std::cout << "wrote " << output << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized conditional functional principal component analysis"};
  app.set_version_flag("--version", std::string("gcfpca ") + gcfpca::kVersion);
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "Fit the model to a long-format CSV");
  std::string fit_input, fit_output = "gcfpca_fit";
  bool fit_mar = false;
  fit->add_option("--input", fit_input, "Long CSV: subject_id,s,value[,x1..xp]")->required();
  fit->add_option("--output-dir", fit_output, "Directory for the result files")
      ->capture_default_str();
  fit->add_flag("--missing-at-random", fit_mar, "Accept subjects that do not cover the grid");
  FitFlags fit_flags;
  add_fit_flags(fit, fit_flags);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate one scenario dataset plus truth");
  ScenarioFlags sim_flags;
  std::string sim_output = "gcfpca_sim";
  add_scenario_flags(simulate, sim_flags);
  simulate->add_option("--output-dir", sim_output, "Directory for dataset and truth files")
      ->capture_default_str();

  // replicate
  auto* replicate = app.add_subcommand("replicate", "Run repeated fits of one scenario");
  ScenarioFlags rep_flags;
  std::string rep_output = "gcfpca_reps";
  int rep_n = 10, rep_threads = 0;
  double rep_level = 0.95;
  add_scenario_flags(replicate, rep_flags);
  replicate->add_option("--reps", rep_n, "Number of replicates")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  replicate->add_option("--threads", rep_threads, "Worker threads (0 = all hardware threads)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  replicate->add_option("--level", rep_level, "Confidence level for coverage metrics")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  replicate->add_option("--output-dir", rep_output, "Directory for the metric files")
      ->capture_default_str();

  // binarize
  auto* binarize = app.add_subcommand("binarize", "Threshold multi-day curves to binary profiles");
  std::string bin_input, bin_output = "binary.csv";
  double bin_threshold = 10.558;
  binarize->add_option("--input", bin_input, "Multi-day CSV: subject_id,day,s,value")->required();
  binarize->add_option("--output", bin_output, "Long binary CSV to write")
      ->capture_default_str();
  binarize->add_option("--threshold", bin_threshold, "Active/inactive cut for the raw values")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("validation", e.what());
    return kExitValidation;
  }

  if (fit->parsed()) {
    return run_guarded([&] { return cmd_fit(fit_input, fit_output, fit_flags, fit_mar); });
  }
  if (simulate->parsed()) {
    return run_guarded([&] { return cmd_simulate(simulate, sim_flags, sim_output); });
  }
  if (replicate->parsed()) {
    return run_guarded([&] {
      return cmd_replicate(replicate, rep_flags, rep_output, rep_n, rep_level, rep_threads);
    });
  }
  if (binarize->parsed()) {
    return run_guarded([&] { return cmd_binarize(bin_input, bin_output, bin_threshold); });
  }
  return kExitValidation;  // unreachable: a subcommand is required
}
