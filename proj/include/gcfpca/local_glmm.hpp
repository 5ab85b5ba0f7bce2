#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gcfpca/binning.hpp"
#include "gcfpca/data.hpp"
#include "gcfpca/family.hpp"

namespace gcfpca {

// Observations pooled over one window, grouped by subject. Covariates are
// time-invariant, so each subject contributes a single design row shared by
// all of its outcomes in the window. Subjects with no observed point in the
// window are dropped here and masked downstream.
struct BinData {
  int bin_center = 0;
  int n_subjects_total = 0;        // I in the source dataset
  std::vector<int> subject_rows;   // dataset row of each included subject
  std::vector<VectorXd> outcomes;  // per included subject
  MatrixXd design;                 // [included x (p+1)], intercept first
};

BinData slice_bin(const LongDataset& data, const Bin& bin);

struct LocalControls {
  int max_iter = 200;
  double rel_obj_tol = 1e-8;
  double param_tol = 1e-6;
  // Estimate of sigma2 below this is treated as a boundary solution: pinned
  // to zero with a plain GLM refit.
  double sigma2_floor = 1e-6;
  // Skip the random intercept entirely (GLM only); used by equivalence tests.
  bool force_sigma2_zero = false;
};

struct LocalFit {
  int bin_center = 0;
  VectorXd beta_star;            // p+1 fixed effects, intercept first
  double sigma2 = 0.0;           // random-intercept variance
  VectorXd blups;                // length I (dataset order); absent subjects 0
  std::vector<uint8_t> present;  // length I; subject had data in the window
  bool converged = false;
  int n_iter = 0;
  double objective = 0.0;              // maximized marginal criterion
  double dispersion = 1.0;             // Gaussian residual variance; 1 otherwise
  std::vector<double> objective_path;  // accepted objective per iteration
};

// Laplace-approximated marginal log-likelihood of one window at (beta,
// log sigma2), optionally with its analytic gradient (d/dbeta, d/dlog sigma2)
// and the per-subject posterior modes. The Gaussian family uses the
// dispersion carried by `family` as a fixed residual variance here.
double laplace_objective(const BinData& bin, const Family& family, const VectorXd& beta,
                         double log_sigma2, VectorXd* grad = nullptr, VectorXd* blups = nullptr);

// Plain GLM on the pooled window rows (no random effect); IRLS with
// step-halving. Returns the coefficient vector, intercept first.
VectorXd fit_glm_pooled(const BinData& bin, const Family& family, int max_iter = 100,
                        double tol = 1e-10);

LocalFit fit_local_glmm(const BinData& bin, const Family& family,
                        const LocalControls& controls = {});

struct BinFitResult {
  std::vector<LocalFit> fits;        // one per window center
  std::vector<uint8_t> failed;       // window raised a fit error
  std::vector<std::string> messages; // failure messages, empty when ok
  int n_failed = 0;
};

// Fits every window; windows are independent, may run concurrently, and the
// result is identical for any scheduling. Raises only when more than 20% of
// the windows fail outright.
BinFitResult fit_all_bins(const LongDataset& data, const BinSet& bins, const Family& family,
                          const LocalControls& controls = {}, int n_threads = 0);

struct RandomEffectMatrix {
  MatrixXd values;  // [I x K], entry (i,k) = posterior mode of subject i at center k
  MatrixXb valid;   // false where the window failed or the subject was absent
};

RandomEffectMatrix assemble_random_effect_matrix(const BinFitResult& result, int n_subjects,
                                                 int n_grid);

}  // namespace gcfpca
