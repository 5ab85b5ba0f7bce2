#include "gcfpca/csv.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gcfpca/errors.hpp"
#include "gcfpca/version.hpp"

namespace gcfpca {

namespace {

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

// Commas and newlines inside free-text fields would break the row structure.
std::string sanitize_field(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return out;
}

void metric_columns(std::ofstream& out, const MetricsReport& m) {
  if (m.ise_beta.size() < 2 || m.ac_beta.size() < 2) {
    throw ValidationError("replicate metrics expect an intercept and one covariate curve");
  }
  out << format_full(m.wall_time_seconds) << ',' << format_full(m.mise_eta) << ','
      << format_full(m.ise_beta[0]) << ',' << format_full(m.ac_beta[0]) << ','
      << format_full(m.ise_beta[1]) << ',' << format_full(m.ac_beta[1]) << ','
      << format_full(m.mise_phi);
}

}  // namespace

std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string file_header(const std::string& config_json) {
  std::string header = "# gcfpca ";
  header += kVersion;
  header += "\n# config ";
  header += config_json;
  header += "\n";
  return header;
}

void write_beta_curves_csv(const std::string& path, const std::string& config_json,
                           const VectorXd& points, const std::vector<CurveBand>& pointwise,
                           const std::vector<CmaBand>& simultaneous) {
  if (pointwise.size() != simultaneous.size()) {
    throw ValidationError("beta curves: pointwise and simultaneous band counts differ");
  }
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "s";
  for (std::size_t r = 0; r < pointwise.size(); ++r) {
    out << ",beta" << r << "_estimate,beta" << r << "_se,beta" << r << "_lower,beta" << r
        << "_upper,beta" << r << "_cma_lower,beta" << r << "_cma_upper";
  }
  out << '\n';
  for (Eigen::Index k = 0; k < points.size(); ++k) {
    out << format_full(points[k]);
    for (std::size_t r = 0; r < pointwise.size(); ++r) {
      const CurveBand& pw = pointwise[r];
      const CmaBand& cma = simultaneous[r];
      out << ',' << format_full(pw.estimate[k]) << ',' << format_full(pw.se[k]) << ','
          << format_full(pw.lower[k]) << ',' << format_full(pw.upper[k]) << ','
          << format_full(cma.lower[k]) << ',' << format_full(cma.upper[k]);
    }
    out << '\n';
  }
  finish(out, path);
}

void write_eigenfunctions_csv(const std::string& path, const std::string& config_json,
                              const EigenSystem& es) {
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "s";
  for (Eigen::Index l = 0; l < es.eigenfunctions.cols(); ++l) out << ",phi" << (l + 1);
  out << '\n';
  for (Eigen::Index k = 0; k < es.grid.size(); ++k) {
    out << format_full(es.grid[k]);
    for (Eigen::Index l = 0; l < es.eigenfunctions.cols(); ++l) {
      out << ',' << format_full(es.eigenfunctions(k, l));
    }
    out << '\n';
  }
  finish(out, path);
}

void write_eigenvalues_csv(const std::string& path, const std::string& config_json,
                           const EigenSystem& es) {
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "component,eigenvalue,cumulative_pve\n";
  const double total = es.pve > 0.0 ? es.eigenvalues.sum() / es.pve : es.eigenvalues.sum();
  double running = 0.0;
  for (Eigen::Index l = 0; l < es.eigenvalues.size(); ++l) {
    running += es.eigenvalues[l];
    out << (l + 1) << ',' << format_full(es.eigenvalues[l]) << ','
        << format_full(total > 0.0 ? running / total : 0.0) << '\n';
  }
  finish(out, path);
}

void write_scores_csv(const std::string& path, const std::string& config_json,
                      const std::vector<std::string>& subject_ids, const MatrixXd& scores) {
  if (static_cast<Eigen::Index>(subject_ids.size()) != scores.rows()) {
    throw ValidationError("scores: subject id count does not match score rows");
  }
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "subject_id";
  for (Eigen::Index l = 0; l < scores.cols(); ++l) out << ",score" << (l + 1);
  out << '\n';
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    out << sanitize_field(subject_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index l = 0; l < scores.cols(); ++l) out << ',' << format_full(scores(i, l));
    out << '\n';
  }
  finish(out, path);
}

void write_fit_meta_json(const std::string& path, const std::string& config_json,
                         const PipelineResult& result, double level, int cma_draws) {
  nlohmann::json meta;
  meta["version"] = kVersion;
  try {
    meta["config"] = nlohmann::json::parse(config_json);
  } catch (const nlohmann::json::exception&) {
    meta["config"] = config_json;
  }

  const GcFpcaFit& fit = result.fit;
  meta["family"] = fit.family.name();
  meta["level"] = level;
  meta["cma_draws"] = cma_draws;

  meta["timings_seconds"] = {{"binning", result.timings.binning_s},
                             {"local", result.timings.local_s},
                             {"fpca", result.timings.fpca_s},
                             {"joint", result.timings.joint_s}};

  nlohmann::json local;
  local["n_bins"] = result.bins.bins.size();
  local["n_failed"] = result.local_fits.n_failed;
  int local_nonconverged = 0;
  for (const LocalFit& lf : result.local_fits.fits) {
    if (!lf.converged) ++local_nonconverged;
  }
  local["n_nonconverged"] = local_nonconverged;
  meta["local"] = local;

  nlohmann::json fpca;
  fpca["n_components"] = fit.eigensystem.eigenvalues.size();
  fpca["pve"] = fit.eigensystem.pve;
  fpca["tau"] = fit.eigensystem.tau;
  fpca["n_smooth_basis"] = fit.eigensystem.n_smooth_basis;
  fpca["eigenvalues"] = std::vector<double>(
      fit.eigensystem.eigenvalues.data(),
      fit.eigensystem.eigenvalues.data() + fit.eigensystem.eigenvalues.size());
  meta["fpca"] = fpca;

  nlohmann::json joint;
  joint["converged"] = fit.converged;
  joint["n_outer"] = fit.n_outer;
  joint["edf"] = fit.edf;
  joint["dispersion"] = fit.dispersion;
  joint["log_likelihood"] = fit.log_likelihood;
  joint["lambda"] =
      std::vector<double>(fit.lambda.data(), fit.lambda.data() + fit.lambda.size());
  joint["smoothing"] =
      std::vector<double>(fit.smoothing.data(), fit.smoothing.data() + fit.smoothing.size());
  joint["dropped_components"] = fit.dropped_components;
  joint["workspace_bytes"] = {{"subject_block", fit.workspace.subject_block_bytes},
                              {"reduction", fit.workspace.reduction_bytes},
                              {"fixed_block", fit.workspace.fixed_block_bytes},
                              {"scratch", fit.workspace.scratch_bytes},
                              {"total", fit.workspace.total()}};
  meta["joint"] = joint;

  meta["convergence"] = {{"joint", fit.converged},
                         {"local_failed_bins", result.local_fits.n_failed},
                         {"local_nonconverged_bins", local_nonconverged}};

  std::ofstream out = open_for_write(path);
  out << meta.dump(2) << '\n';
  finish(out, path);
}

void write_dataset_csv(const std::string& path, const std::string& config_json,
                       const LongDataset& data) {
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "subject_id,s,value";
  for (Eigen::Index c = 0; c < data.n_covariates(); ++c) out << ",x" << (c + 1);
  out << '\n';
  for (Eigen::Index i = 0; i < data.n_subjects(); ++i) {
    for (Eigen::Index k = 0; k < data.n_grid(); ++k) {
      if (!data.observed(i, k)) continue;
      out << sanitize_field(data.subject_ids[static_cast<std::size_t>(i)]) << ','
          << format_full(data.grid[k]) << ',' << format_full(data.outcomes(i, k));
      for (Eigen::Index c = 0; c < data.n_covariates(); ++c) {
        out << ',' << format_full(data.covariates(i, c));
      }
      out << '\n';
    }
  }
  finish(out, path);
}

void write_truth_curves_csv(const std::string& path, const std::string& config_json,
                            const VectorXd& grid, const SimTruth& truth) {
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "s";
  for (Eigen::Index r = 0; r < truth.beta_curves.cols(); ++r) out << ",beta" << r << "_true";
  for (Eigen::Index l = 0; l < truth.phi.cols(); ++l) out << ",phi" << (l + 1) << "_true";
  out << '\n';
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    out << format_full(grid[k]);
    for (Eigen::Index r = 0; r < truth.beta_curves.cols(); ++r) {
      out << ',' << format_full(truth.beta_curves(k, r));
    }
    for (Eigen::Index l = 0; l < truth.phi.cols(); ++l) {
      out << ',' << format_full(truth.phi(k, l));
    }
    out << '\n';
  }
  finish(out, path);
}

void write_truth_scores_csv(const std::string& path, const std::string& config_json,
                            const std::vector<std::string>& subject_ids, const SimTruth& truth) {
  write_scores_csv(path, config_json, subject_ids, truth.scores);
}

void write_truth_eta_csv(const std::string& path, const std::string& config_json,
                         const std::vector<std::string>& subject_ids, const VectorXd& grid,
                         const SimTruth& truth) {
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "subject_id,s,eta\n";
  for (Eigen::Index i = 0; i < truth.eta.rows(); ++i) {
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
      out << sanitize_field(subject_ids[static_cast<std::size_t>(i)]) << ','
          << format_full(grid[k]) << ',' << format_full(truth.eta(i, k)) << '\n';
    }
  }
  finish(out, path);
}

void write_replicate_metrics_csv(const std::string& path, const std::string& config_json,
                                 const ReplicationSummary& summary) {
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "scenario,rep,ok,time_seconds,mise_eta,ise_beta0,ac_beta0,ise_beta1,ac_beta1,"
         "mise_phi,message\n";
  const std::string id = sanitize_field(summary.scenario.id);
  for (const ReplicateRecord& rec : summary.records) {
    out << id << ',' << rec.rep << ',' << (rec.ok ? 1 : 0) << ',';
    if (rec.ok) {
      metric_columns(out, rec.metrics);
    } else {
      out << "NA,NA,NA,NA,NA,NA,NA";
    }
    out << ',' << sanitize_field(rec.message) << '\n';
  }
  if (summary.n_reps > summary.n_failed) {
    out << id << ",median," << (summary.n_reps - summary.n_failed) << ',';
    metric_columns(out, summary.median);
    out << ",\n";
  }
  finish(out, path);
}

void write_summary_table_csv(const std::string& path, const std::string& config_json,
                             const std::vector<ReplicationSummary>& summaries) {
  std::ofstream out = open_for_write(path);
  out << file_header(config_json);
  out << "scenario,I,K,time_min,mise_eta_x10,ise_beta0_x100,ac_beta0,ise_beta1_x100,"
         "ac_beta1,mise_phi_x10,n_reps,n_failed\n";
  for (const ReplicationSummary& s : summaries) {
    const MetricsReport& m = s.median;
    out << sanitize_field(s.scenario.id) << ',' << s.scenario.I << ',' << s.scenario.K << ','
        << format_full(m.wall_time_seconds / 60.0) << ',' << format_full(m.mise_eta * 10.0) << ','
        << format_full(m.ise_beta[0] * 100.0) << ',' << format_full(m.ac_beta[0]) << ','
        << format_full(m.ise_beta[1] * 100.0) << ',' << format_full(m.ac_beta[1]) << ','
        << format_full(m.mise_phi * 10.0) << ',' << s.n_reps << ',' << s.n_failed << '\n';
  }
  finish(out, path);
}

}  // namespace gcfpca
