#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcfpca/basis.hpp"
#include "gcfpca/data.hpp"
#include "gcfpca/family.hpp"
#include "gcfpca/joint_glmm.hpp"
#include "gcfpca/pipeline.hpp"

namespace gcfpca {

enum class CovariateKind { bernoulli_half, standard_normal };

// One simulation configuration: model family, grid size, eigenstructure,
// truth curves, windowing, and the master seed. Round-trips through JSON.
struct SimScenario {
  std::string id = "scenario";
  int I = 100;
  int K = 100;
  Family family = Family::bernoulli();
  ClosedFormBasisKind eigenbasis = ClosedFormBasisKind::fourier;
  CovariateKind covariate_kind = CovariateKind::bernoulli_half;
  VectorXd true_lambda = default_true_lambda();
  MatrixXd truth_coefs = default_truth_coefs();  // [2 x 14]
  double gaussian_sd = 1.0;
  double bin_fraction = 0.05;
  std::uint64_t seed = 1;

  static VectorXd default_true_lambda();  // (1, 0.5, 0.25, 0.125)
  static MatrixXd default_truth_coefs();
  // Cubic spline with 10 uniform interior knots carrying the truth curves.
  static SplineBasis truth_basis();
};

std::string scenario_to_json(const SimScenario& sc);
SimScenario scenario_from_json(const std::string& text);

struct SimTruth {
  MatrixXd eta;          // [I x K] linear predictor
  MatrixXd beta_curves;  // [K x 2]
  MatrixXd phi;          // [K x 4]
  MatrixXd scores;       // [I x 4]
};

struct GeneratedData {
  LongDataset data;
  SimTruth truth;
};

// Draws covariates, scores, and outcomes in a fixed order from a single
// stream, so the result depends only on the scenario (including its seed).
GeneratedData generate_dataset(const SimScenario& sc);

struct MetricsReport {
  double mise_eta = 0.0;
  VectorXd ise_beta;  // p+1
  VectorXd ac_beta;   // p+1
  double mise_phi = 0.0;
  VectorXd lambda_hat;
  double wall_time_seconds = 0.0;
};

// Plain-array metric kernels (shared with their verification oracles).
double metric_mise_eta(const MatrixXd& eta_hat, const MatrixXd& eta_true);
double metric_ise(const VectorXd& estimate, const VectorXd& truth);
double metric_coverage(const VectorXd& lower, const VectorXd& upper, const VectorXd& truth);
// Mean ISE over truth columns after flipping each estimated column to the
// sign that best matches.
double metric_mise_phi(const MatrixXd& phi_hat, const MatrixXd& phi_true);

MetricsReport compute_metrics(const GcFpcaFit& fit, const SimTruth& truth,
                              const std::vector<CurveBand>& bands);

// Pipeline options used for every scenario fit (fixed component count, truth
// spline dimension for the fixed effects, non-wrapping windows).
PipelineOptions scenario_fit_options(const SimScenario& sc);

struct ReplicateRecord {
  int rep = 0;
  bool ok = false;
  std::string message;
  MetricsReport metrics;
};

struct ReplicationSummary {
  SimScenario scenario;
  int n_reps = 0;
  int n_failed = 0;
  MetricsReport median;
  MetricsReport q25;
  MetricsReport q75;
  std::vector<ReplicateRecord> records;
};

// Independent replicates with seeds derived from (scenario seed, replicate
// index); failures are recorded and excluded from the aggregates.
ReplicationSummary run_replications(const SimScenario& sc, int n_reps, int n_threads = 0,
                                    double level = 0.95);

}  // namespace gcfpca
