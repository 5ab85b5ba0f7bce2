#include <cmath>
#include <random>

#include <doctest.h>

#include "gcfpca/basis.hpp"
#include "gcfpca/errors.hpp"
#include "gcfpca/fpca.hpp"
#include "oracles.hpp"

using gcfpca::estimate_eigensystem;
using gcfpca::EigenSystem;
using gcfpca::evaluate_eigenfunctions;
using gcfpca::FpcaControls;
using gcfpca::MatrixXb;
using gcfpca::Truncation;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd unit_grid(int K) {
  VectorXd grid(K);
  for (int k = 0; k < K; ++k) grid[k] = static_cast<double>(k + 1) / K;
  return grid;
}

// Dense-path controls: smoothing off and a full-dimension basis make the
// smoother the identity, so the estimate is the raw eigendecomposition.
FpcaControls dense_controls(int K) {
  FpcaControls controls;
  controls.fixed_tau = 0.0;
  controls.n_smooth_basis = K;
  return controls;
}

double ise(const VectorXd& a, const VectorXd& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("rank-1 input recovers the generating curve and score variance") {
  const int I = 400, K = 50;
  const VectorXd grid = unit_grid(K);

  // Smooth unit-norm curve under the 1/K inner product.
  VectorXd phi(K);
  for (int k = 0; k < K; ++k) phi[k] = std::sqrt(2.0) * std::sin(2.0 * M_PI * grid[k]);

  std::mt19937 gen(42);
  std::normal_distribution<double> norm;
  VectorXd c(I);
  for (int i = 0; i < I; ++i) c[i] = 1.5 * norm(gen);
  c.array() -= c.mean();
  const MatrixXd bhat = c * phi.transpose();

  const EigenSystem es = estimate_eigensystem(bhat, grid, Truncation{0.95, 0});
  REQUIRE(es.eigenvalues.size() >= 1);

  VectorXd first = es.eigenfunctions.col(0);
  if (first.dot(phi) < 0.0) first = -first;
  CHECK(ise(first, phi) < 1e-2);

  const double sample_var = c.squaredNorm() / static_cast<double>(I - 1);
  CHECK(es.eigenvalues[0] == doctest::Approx(sample_var).epsilon(0.10));
}

TEST_CASE("eigenvalue arithmetic and truncation rules on a constructed spectrum") {
  // Build bhat = U D^{1/2} Q' sqrt(I-1) with U orthonormal and orthogonal to
  // the ones vector, so the demeaned covariance has exactly the eigenvalues
  // D/K under the 1/K quadrature weight.
  const int I = 40, K = 4;
  const VectorXd grid = unit_grid(K);

  MatrixXd U = MatrixXd::Zero(I, K);
  for (int i = 0; i < I; ++i)
    for (int j = 0; j < K; ++j)
      U(i, j) = std::sqrt(2.0 / (I + 1.0)) * std::sin(M_PI * (i + 1.0) * (j + 1.0) / (I + 1.0));
  // Gram-Schmidt against ones and re-orthonormalization.
  VectorXd ones = VectorXd::Ones(I) / std::sqrt(static_cast<double>(I));
  for (int j = 0; j < K; ++j) U.col(j) -= ones * ones.dot(U.col(j));
  const Eigen::HouseholderQR<MatrixXd> qr(U);
  U = qr.householderQ() * MatrixXd::Identity(I, K);
  for (int j = 0; j < K; ++j) U.col(j) -= ones * ones.dot(U.col(j));

  VectorXd d(4);
  d << 16, 8, 4, 4;
  const MatrixXd Q = MatrixXd::Identity(K, K);
  const MatrixXd bhat =
      std::sqrt(static_cast<double>(I - 1)) * U * d.cwiseSqrt().asDiagonal() * Q.transpose();

  SUBCASE("pve threshold picks the smallest sufficient count") {
    // Eigenvalues scale to (4,2,1,1); cumulative PVE hits 0.875 at L=3.
    const EigenSystem es =
        estimate_eigensystem(bhat, grid, Truncation{0.85, 0}, dense_controls(K));
    REQUIRE(es.eigenvalues.size() == 3);
    CHECK(es.eigenvalues[0] == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(es.eigenvalues[1] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(es.eigenvalues[2] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(es.pve == doctest::Approx(0.875).epsilon(1e-6));
  }

  SUBCASE("fixed_L overrides the threshold and reports achieved pve") {
    const EigenSystem es =
        estimate_eigensystem(bhat, grid, Truncation{0.95, 2}, dense_controls(K));
    REQUIRE(es.eigenvalues.size() == 2);
    CHECK(es.pve == doctest::Approx(0.75).epsilon(1e-6));
  }
}

TEST_CASE("orthonormality under the discrete quadrature weight") {
  const int I = 60, K = 30;
  const VectorXd grid = unit_grid(K);
  std::mt19937 gen(9);
  std::normal_distribution<double> norm;
  MatrixXd bhat(I, K);
  for (int i = 0; i < I; ++i) {
    const double a = norm(gen), b = 0.7 * norm(gen), c = 0.5 * norm(gen);
    for (int k = 0; k < K; ++k)
      bhat(i, k) = a + b * std::sin(2.0 * M_PI * grid[k]) + c * grid[k] + 0.05 * norm(gen);
  }

  const EigenSystem es = estimate_eigensystem(bhat, grid, Truncation{0.99, 0});
  const int L = static_cast<int>(es.eigenvalues.size());
  const MatrixXd gram =
      es.eigenfunctions.transpose() * es.eigenfunctions / static_cast<double>(K);
  CHECK((gram - MatrixXd::Identity(L, L)).cwiseAbs().maxCoeff() < 1e-8);

  for (int l = 1; l < L; ++l) CHECK(es.eigenvalues[l] <= es.eigenvalues[l - 1]);
  CHECK(es.eigenvalues.minCoeff() >= 0.0);

  // Sign convention: non-negative mean, or positive leading entry when the
  // mean vanishes.
  for (int l = 0; l < L; ++l) {
    const double integral = es.eigenfunctions.col(l).sum() / K;
    if (std::abs(integral) >= 1e-8) {
      CHECK(integral >= 0.0);
    } else {
      for (int k = 0; k < K; ++k) {
        if (std::abs(es.eigenfunctions(k, l)) > 1e-8) {
          CHECK(es.eigenfunctions(k, l) > 0.0);
          break;
        }
      }
    }
  }
}

TEST_CASE("smoothing disabled reproduces the dense eigendecomposition") {
  const int I = 25, K = 16;
  const VectorXd grid = unit_grid(K);
  std::mt19937 gen(23);
  std::normal_distribution<double> norm;
  MatrixXd bhat(I, K);
  for (int i = 0; i < I; ++i)
    for (int k = 0; k < K; ++k) bhat(i, k) = norm(gen);

  const EigenSystem es =
      estimate_eigensystem(bhat, grid, Truncation{1.0, 0}, dense_controls(K));

  // Dense reference: demean columns, covariance with 1/(I-1), eigenvectors
  // scaled by sqrt(K) for the 1/K normalization.
  MatrixXd centered = bhat;
  for (int k = 0; k < K; ++k) centered.col(k).array() -= centered.col(k).mean();
  const MatrixXd cov = centered.transpose() * centered / static_cast<double>(I - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);

  const int L = static_cast<int>(es.eigenvalues.size());
  for (int l = 0; l < L; ++l) {
    const double expected = solver.eigenvalues()[K - 1 - l] / K;
    CHECK(std::abs(es.eigenvalues[l] - expected) < 1e-8 * std::max(1.0, expected));
    VectorXd ref = std::sqrt(static_cast<double>(K)) * solver.eigenvectors().col(K - 1 - l);
    if (ref.dot(es.eigenfunctions.col(l)) < 0.0) ref = -ref;
    CHECK((es.eigenfunctions.col(l) - ref).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("reconstructed covariance is positive semidefinite") {
  const int I = 50, K = 40;
  const VectorXd grid = unit_grid(K);
  std::mt19937 gen(31);
  std::normal_distribution<double> norm;
  MatrixXd bhat(I, K);
  for (int i = 0; i < I; ++i) {
    const double a = norm(gen), b = norm(gen);
    for (int k = 0; k < K; ++k)
      bhat(i, k) = a * std::cos(2.0 * M_PI * grid[k]) + 0.3 * b + 0.2 * norm(gen);
  }
  const EigenSystem es = estimate_eigensystem(bhat, grid, Truncation{1.0, 0});
  const MatrixXd recon = es.eigenfunctions * es.eigenvalues.asDiagonal() *
                         es.eigenfunctions.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(recon);
  CHECK(solver.eigenvalues().minCoeff() >= -1e-10 * es.eigenvalues[0]);
}

TEST_CASE("continuous evaluation interpolates the stored grid values") {
  const int I = 30, K = 25;
  const VectorXd grid = unit_grid(K);
  std::mt19937 gen(77);
  std::normal_distribution<double> norm;
  MatrixXd bhat(I, K);
  for (int i = 0; i < I; ++i) {
    const double a = norm(gen);
    for (int k = 0; k < K; ++k)
      bhat(i, k) = a * std::sin(2.0 * M_PI * grid[k]) + 0.1 * norm(gen);
  }
  const EigenSystem es = estimate_eigensystem(bhat, grid, Truncation{0.95, 0});

  const MatrixXd at_grid = evaluate_eigenfunctions(es, grid);
  CHECK((at_grid - es.eigenfunctions).cwiseAbs().maxCoeff() < 1e-8);

  // Midpoints stay inside the local envelope of smooth neighbors.
  VectorXd mid(K - 1);
  for (int k = 0; k + 1 < K; ++k) mid[k] = 0.5 * (grid[k] + grid[k + 1]);
  const MatrixXd at_mid = evaluate_eigenfunctions(es, mid);
  for (int k = 0; k + 1 < K; ++k) {
    const double lo = std::min(es.eigenfunctions(k, 0), es.eigenfunctions(k + 1, 0));
    const double hi = std::max(es.eigenfunctions(k, 0), es.eigenfunctions(k + 1, 0));
    const double pad = 0.5 * (hi - lo) + 1e-6;
    CHECK(at_mid(k, 0) >= lo - pad);
    CHECK(at_mid(k, 0) <= hi + pad);
  }

  VectorXd outside(1);
  outside << 1.2;
  CHECK_THROWS_AS(evaluate_eigenfunctions(es, outside), gcfpca::ValidationError);
}

TEST_CASE("sign alignment against a reference") {
  const int I = 30, K = 12;
  const VectorXd grid = unit_grid(K);
  std::mt19937 gen(3);
  std::normal_distribution<double> norm;
  MatrixXd bhat(I, K);
  for (int i = 0; i < I; ++i) {
    const double a = norm(gen), b = 0.6 * norm(gen);
    for (int k = 0; k < K; ++k)
      bhat(i, k) = a * std::sin(2.0 * M_PI * grid[k]) + b * std::cos(2.0 * M_PI * grid[k]) +
                   0.05 * norm(gen);
  }
  const EigenSystem es = estimate_eigensystem(bhat, grid, Truncation{0.9, 0});

  const EigenSystem flipped = gcfpca::align_sign(es, -es.eigenfunctions);
  CHECK((flipped.eigenfunctions + es.eigenfunctions).cwiseAbs().maxCoeff() == 0.0);

  const EigenSystem same = gcfpca::align_sign(es, es.eigenfunctions);
  CHECK((same.eigenfunctions - es.eigenfunctions).cwiseAbs().maxCoeff() == 0.0);

  // Perturbed reference: flips follow the sign of diag(estimated' reference).
  MatrixXd ref = es.eigenfunctions;
  ref.col(0) = -ref.col(0);
  ref.array() += 0.01;
  const EigenSystem mixed = gcfpca::align_sign(es, ref);
  const int L = static_cast<int>(es.eigenvalues.size());
  for (int l = 0; l < L; ++l) {
    const double dot = es.eigenfunctions.col(l).dot(ref.col(l));
    const double expected_sign = dot < 0.0 ? -1.0 : 1.0;
    CHECK((mixed.eigenfunctions.col(l) - expected_sign * es.eigenfunctions.col(l))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("masked covariance matches the pairwise-complete loops") {
  const int I = 40, K = 10;
  const VectorXd grid = unit_grid(K);
  std::mt19937 gen(55);
  std::normal_distribution<double> norm;
  std::bernoulli_distribution drop(0.1);
  MatrixXd bhat(I, K);
  MatrixXb mask(I, K);
  for (int i = 0; i < I; ++i)
    for (int k = 0; k < K; ++k) {
      bhat(i, k) = norm(gen);
      mask(i, k) = !drop(gen);
      if (!mask(i, k)) bhat(i, k) = 0.0;
    }

  const EigenSystem es =
      estimate_eigensystem(bhat, grid, Truncation{1.0, 0}, dense_controls(K), &mask);

  // Naive pairwise-complete covariance of the column-demeaned matrix.
  VectorXd mean = VectorXd::Zero(K);
  VectorXd count = VectorXd::Zero(K);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < I; ++i)
      if (mask(i, k)) {
        mean[k] += bhat(i, k);
        count[k] += 1.0;
      }
    mean[k] /= count[k];
  }
  MatrixXd cov(K, K);
  for (int u = 0; u < K; ++u)
    for (int v = 0; v < K; ++v) {
      double sum = 0.0, n = 0.0;
      for (int i = 0; i < I; ++i)
        if (mask(i, u) && mask(i, v)) {
          sum += (bhat(i, u) - mean[u]) * (bhat(i, v) - mean[v]);
          n += 1.0;
        }
      cov(u, v) = n > 1.5 ? sum / (n - 1.0) : 0.0;
    }
  const MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(sym);

  const int L = static_cast<int>(es.eigenvalues.size());
  for (int l = 0; l < L; ++l) {
    const double expected = std::max(solver.eigenvalues()[K - 1 - l], 0.0) / K;
    CHECK(std::abs(es.eigenvalues[l] - expected) < 1e-8 * std::max(1.0, expected));
  }
}

TEST_CASE("degenerate inputs are rejected") {
  const int K = 10;
  const VectorXd grid = unit_grid(K);
  const MatrixXd zeros = MatrixXd::Zero(8, K);
  CHECK_THROWS_WITH_AS(estimate_eigensystem(zeros, grid, Truncation{}),
                       doctest::Contains("no subject-level variation"),
                       gcfpca::ValidationError);

  MatrixXd one_row = MatrixXd::Random(1, K);
  CHECK_THROWS_AS(estimate_eigensystem(one_row, grid, Truncation{}), gcfpca::ValidationError);

  MatrixXd fine = MatrixXd::Random(12, K);
  FpcaControls controls;
  controls.n_smooth_basis = K + 1;
  CHECK_THROWS_AS(estimate_eigensystem(fine, grid, Truncation{}, controls),
                  gcfpca::ValidationError);

  // Over 20% masked in one column.
  MatrixXd data = MatrixXd::Random(10, K);
  MatrixXb mask(10, K);
  mask.setConstant(true);
  for (int i = 0; i < 3; ++i) mask(i, 2) = false;
  CHECK_THROWS_AS(estimate_eigensystem(data, grid, Truncation{}, FpcaControls{}, &mask),
                  gcfpca::ValidationError);
}

TEST_CASE("dense off-grid evaluation keeps near-orthonormality") {
  // Sine components vanish at the domain ends, so the grid-weighted
  // normalization and the continuous integral agree to O(K^-2) and the only
  // residual error is spline interpolation; a rich smoothing basis keeps that
  // below the one-per-mille target.
  const int I = 80, K = 100;
  const VectorXd grid = unit_grid(K);
  std::mt19937 gen(101);
  std::normal_distribution<double> norm;
  MatrixXd bhat(I, K);
  for (int i = 0; i < I; ++i) {
    const double a = norm(gen), b = 0.7 * norm(gen);
    for (int k = 0; k < K; ++k)
      bhat(i, k) = a * std::sin(2.0 * M_PI * grid[k]) + b * std::sin(4.0 * M_PI * grid[k]) +
                   0.02 * norm(gen);
  }
  FpcaControls controls;
  controls.n_smooth_basis = 30;
  const EigenSystem es = estimate_eigensystem(bhat, grid, Truncation{0.9, 0}, controls);

  const int n = 10000;
  VectorXd dense(n);
  const double lo = grid[0], hi = grid[K - 1];
  for (int j = 0; j < n; ++j) dense[j] = lo + (hi - lo) * (j + 0.5) / n;
  const MatrixXd vals = evaluate_eigenfunctions(es, dense);
  const int L = static_cast<int>(es.eigenvalues.size());
  const MatrixXd gram = vals.transpose() * vals * ((hi - lo) / n);
  CHECK((gram - MatrixXd::Identity(L, L)).cwiseAbs().maxCoeff() < 1e-3);
}
