#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gcfpca/basis.hpp"
#include "gcfpca/data.hpp"
#include "gcfpca/family.hpp"
#include "gcfpca/fpca.hpp"

namespace gcfpca {

// Self-contained description of the joint model design: spline fixed effects
// for every covariate plus per-subject random slopes on the estimated
// eigenfunctions. The fixed block is never materialized as an IK x (p+1)M
// matrix; its Kronecker structure (covariate value times basis row) is
// exploited subject by subject.
struct JointDesign {
  MatrixXd outcomes;   // [I x K]
  MatrixXb observed;   // [I x K]
  MatrixXd covx;       // [I x (p+1)], intercept column first
  std::vector<std::string> subject_ids;
  VectorXd grid;       // K
  SplineBasis fixed_basis;
  MatrixXd B;          // [K x M] fixed-effect basis at the grid
  MatrixXd Phi;        // [K x L] eigenfunctions at the grid
  EigenSystem eigensystem;  // empty when L = 0
  int n_subjects = 0, n_grid = 0, n_fixed_basis = 0, n_components = 0, n_covx = 0;

  // Structural nonzero counts of the implied sparse design.
  long long fixed_nnz() const;
  long long random_nnz() const;
};

JointDesign assemble_joint_design(const LongDataset& data, const SplineBasis& fixed_basis,
                                  const EigenSystem& es);
// No random part (L = 0).
JointDesign assemble_joint_design(const LongDataset& data, const SplineBasis& fixed_basis);

struct JointControls {
  int max_outer = 50;
  double outer_tol = 1e-4;     // relative change in (lambda, tau, dispersion)
  int max_inner = 100;         // penalized IRLS passes per outer step
  double inner_tol = 1e-9;
  int subject_block = 64;      // reduction tile; fixed so sums are scheduling-free
  bool estimate_lambda = true; // false pins lambda at the eigensystem values
  bool estimate_tau = true;    // false pins tau at fixed_tau
  VectorXd fixed_tau;          // used when estimate_tau is false
  double lambda_floor = 1e-10; // components at this boundary are flagged dropped
  int n_threads = 0;
};

// Exact allocation accounting for the solver working set. The subject store
// keeps one Cholesky factor of the L x L random block per subject; everything
// per-subject beyond that is recomputed on each pass.
struct JointWorkspaceReport {
  std::size_t subject_block_bytes = 0;  // I * L * L doubles
  std::size_t reduction_bytes = 0;      // per-tile partial normal equations
  std::size_t fixed_block_bytes = 0;    // H0, its factorization, coef_cov
  std::size_t scratch_bytes = 0;        // per-thread temporaries
  std::size_t total() const {
    return subject_block_bytes + reduction_bytes + fixed_block_bytes + scratch_bytes;
  }
};

struct GcFpcaFit {
  Family family;
  SplineBasis fixed_basis;
  MatrixXd beta_coefs;      // [(p+1) x M]
  MatrixXd coef_cov;        // [(p+1)M x (p+1)M]
  VectorXd lambda;          // L
  MatrixXd scores;          // [I x L]
  EigenSystem eigensystem;
  VectorXd smoothing;       // tau_r, length p+1
  bool converged = false;
  double log_likelihood = 0.0;  // Laplace marginal log-likelihood at the optimum

  double dispersion = 1.0;  // Gaussian residual variance
  double edf = 0.0;
  int n_outer = 0;
  std::vector<int> dropped_components;
  std::vector<double> monitor_trace;  // marginal criterion per outer iteration
  JointWorkspaceReport workspace;

  // carried so predictions can be made from the fit alone
  std::vector<std::string> subject_ids;
  MatrixXd covx;  // [I x (p+1)]
};

GcFpcaFit fit_joint(const JointDesign& design, const Family& family,
                    const JointControls& controls = {});

struct CurveBand {
  VectorXd estimate, se, lower, upper;
};

// Pointwise Wald band for covariate r's coefficient curve.
std::vector<CurveBand> fixed_effect_curves(const GcFpcaFit& fit, const VectorXd& points,
                                           double level);

struct CmaBand {
  VectorXd estimate, se, lower, upper;
  double multiplier = 0.0;   // simultaneous quantile actually applied
  bool pseudo_sqrt = false;  // covariance was singular; pseudo square root used
};

// Correlation-and-multiplicity-adjusted simultaneous band via the parametric
// max-statistic: draws from N(0, V_r), quantile of max_s |B(s)'g| / se(s).
// Never narrower than the pointwise Wald band.
CmaBand cma_bands(const GcFpcaFit& fit, int r, const VectorXd& points, double level,
                  int n_draws, std::uint64_t seed, int n_threads = 0);

// Estimated linear predictor (or mean response) for listed subjects.
MatrixXd predict_linear_predictor(const GcFpcaFit& fit, const std::vector<std::string>& subjects,
                                  const VectorXd& points, bool response_scale = false);

// ---------------------------------------------------------------------------
// hooks for verification

// Joint penalized log-likelihood at explicit coefficients, with analytic
// gradients in the fixed coefficients and the scores.
double joint_penalized_loglik(const JointDesign& design, const Family& family,
                              const MatrixXd& beta_coefs, const MatrixXd& scores,
                              const VectorXd& lambda, const VectorXd& tau,
                              MatrixXd* grad_beta = nullptr, MatrixXd* grad_scores = nullptr);

// One penalized IRLS solve (Schur elimination over subjects) from the given
// state; exposed so tests can compare against a dense solve of the same
// working normal equations.
void pirls_solve_once(const JointDesign& design, const Family& family, const VectorXd& lambda,
                      const VectorXd& tau, double dispersion, const MatrixXd& beta_in,
                      const MatrixXd& scores_in, MatrixXd* beta_out, MatrixXd* scores_out);

}  // namespace gcfpca
