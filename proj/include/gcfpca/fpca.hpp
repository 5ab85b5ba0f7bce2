#pragma once

#include <Eigen/Dense>

#include "gcfpca/basis.hpp"
#include "gcfpca/data.hpp"

namespace gcfpca {

// Orthonormal eigensystem of the smoothed subject-level covariance. The
// discrete normalization uses quadrature weight 1/K, i.e.
// (1/K) sum_k phi_l(s_k) phi_m(s_k) = delta_lm.
struct EigenSystem {
  VectorXd grid;            // K evaluation points
  MatrixXd eigenfunctions;  // [K x L]
  MatrixXd spline_coefs;    // [c x L], for continuous evaluation
  VectorXd eigenvalues;     // L, non-increasing, >= 0
  double pve = 0.0;         // variance fraction achieved by the kept components
  int n_smooth_basis = 0;   // c
  SplineBasis basis;        // smoothing basis backing spline_coefs
  double tau = 0.0;         // covariance smoothing parameter actually used
};

// Component count: smallest L with cumulative variance fraction >= pve, or a
// fixed count when fixed_L > 0.
struct Truncation {
  double pve = 0.95;
  int fixed_L = 0;
};

struct FpcaControls {
  // Smoothing basis dimension c; 0 picks min(35, ceil(K/4)), clamped to [4, K].
  int n_smooth_basis = 0;
  // Fixed smoothing parameter; negative selects by generalized cross-validation.
  double fixed_tau = -1.0;
  int n_tau_grid = 45;
};

// Estimates the eigensystem of the covariance of bhat's rows: column-demean,
// empirical covariance (pairwise-complete when a mask is given), sandwich
// penalized-spline smoothing, symmetrization, weighted eigendecomposition,
// truncation of negative eigenvalues, component selection.
EigenSystem estimate_eigensystem(const MatrixXd& bhat, const VectorXd& grid,
                                 const Truncation& trunc, const FpcaControls& controls = {},
                                 const MatrixXb* mask = nullptr);

// Continuous evaluation through the spline coefficients; at grid points this
// reproduces the stored eigenfunctions.
MatrixXd evaluate_eigenfunctions(const EigenSystem& es, const VectorXd& points);

// Flips each component's sign to maximize its inner product with the matching
// reference column (estimates are identified only up to sign).
EigenSystem align_sign(const EigenSystem& estimated, const MatrixXd& reference);

}  // namespace gcfpca
