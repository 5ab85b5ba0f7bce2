#include "gcfpca/fpca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gcfpca/errors.hpp"

namespace gcfpca {

namespace {

// Empirical covariance of the rows of bhat after column demeaning. With a
// mask, means and cross-products are pairwise-complete over valid entries.
MatrixXd empirical_covariance(const MatrixXd& bhat, const MatrixXb* mask) {
  const int I = static_cast<int>(bhat.rows());
  const int K = static_cast<int>(bhat.cols());

  if (!mask) {
    const Eigen::RowVectorXd means = bhat.colwise().mean();
    const MatrixXd centered = bhat.rowwise() - means;
    return centered.transpose() * centered / (I - 1.0);
  }

  MatrixXd centered = MatrixXd::Zero(I, K);
  MatrixXd indicator = MatrixXd::Zero(I, K);
  for (int k = 0; k < K; ++k) {
    double sum = 0.0;
    int n = 0;
    for (int i = 0; i < I; ++i)
      if ((*mask)(i, k)) {
        sum += bhat(i, k);
        ++n;
      }
    const double mean = n > 0 ? sum / n : 0.0;
    for (int i = 0; i < I; ++i)
      if ((*mask)(i, k)) {
        centered(i, k) = bhat(i, k) - mean;
        indicator(i, k) = 1.0;
      }
  }

  const MatrixXd counts = indicator.transpose() * indicator;     // pairwise n_uv
  const MatrixXd cross = centered.transpose() * centered;        // masked sums
  MatrixXd cov = MatrixXd::Zero(K, K);
  for (int u = 0; u < K; ++u)
    for (int v = 0; v < K; ++v)
      if (counts(u, v) > 1.5) cov(u, v) = cross(u, v) / (counts(u, v) - 1.0);
  return cov;
}

}  // namespace

EigenSystem estimate_eigensystem(const MatrixXd& bhat, const VectorXd& grid,
                                 const Truncation& trunc, const FpcaControls& controls,
                                 const MatrixXb* mask) {
  const int I = static_cast<int>(bhat.rows());
  const int K = static_cast<int>(bhat.cols());
  if (I < 2) throw ValidationError("eigensystem: need at least 2 subjects");
  if (grid.size() != K) throw ValidationError("eigensystem: grid length does not match columns");
  if (mask && (mask->rows() != I || mask->cols() != K))
    throw ValidationError("eigensystem: mask shape does not match bhat");

  if (mask) {
    for (int k = 0; k < K; ++k) {
      int missing = 0;
      for (int i = 0; i < I; ++i)
        if (!(*mask)(i, k)) ++missing;
      if (5 * missing >= I)
        throw ValidationError("eigensystem: column " + std::to_string(k) +
                              " has " + std::to_string(missing) + "/" + std::to_string(I) +
                              " masked entries (limit 20%)");
    }
  }

  int c = controls.n_smooth_basis;
  if (c == 0) c = std::min(35, (K + 3) / 4);
  c = std::max(c, 4);
  if (c > K)
    throw ValidationError("eigensystem: smoothing basis dimension " + std::to_string(c) +
                          " exceeds grid size " + std::to_string(K));

  const MatrixXd cov = empirical_covariance(bhat, mask);
  if (cov.cwiseAbs().maxCoeff() < 1e-14)
    throw ValidationError("eigensystem: no subject-level variation in the input");

  // --------------------------------------------------------------------------
  // sandwich smoother: S cov S with S = B (B'B + tau P)^{-1} B'. The
  // Demmler-Reinsch form S = A diag(1/(1+tau d)) A' (A'A = I) makes the
  // cross-validation search O(c^2) per candidate.
  const SplineBasis basis = SplineBasis::uniform(grid.minCoeff(), grid.maxCoeff(), c);
  const MatrixXd B = basis.evaluate(grid);
  const MatrixXd P = difference_penalty(c, 2).matrix;

  const MatrixXd BtB = B.transpose() * B;
  const Eigen::LLT<MatrixXd> llt(BtB);
  if (llt.info() != Eigen::Success)
    throw ValidationError("eigensystem: smoothing basis is rank deficient on this grid");
  const MatrixXd R = llt.matrixU();
  const MatrixXd Rinv = R.template triangularView<Eigen::Upper>().solve(MatrixXd::Identity(c, c));

  Eigen::SelfAdjointEigenSolver<MatrixXd> dr(Rinv.transpose() * P * Rinv);
  const VectorXd d = dr.eigenvalues().cwiseMax(0.0);  // clip tiny negative noise
  const MatrixXd A = B * Rinv * dr.eigenvectors();    // K x c, orthonormal columns

  const MatrixXd C = A.transpose() * cov * A;  // c x c projection of the covariance
  const double cov_frob2 = cov.squaredNorm();

  double tau = controls.fixed_tau;
  if (tau < 0.0) {
    // Log-spaced candidates centered on the scale of the penalty spectrum.
    double d_ref = 0.0;
    int n_pos = 0;
    for (int j = 0; j < c; ++j)
      if (d[j] > 1e-12) {
        d_ref += std::log(d[j]);
        ++n_pos;
      }
    d_ref = n_pos > 0 ? std::exp(d_ref / n_pos) : 1.0;

    double best_gcv = std::numeric_limits<double>::infinity();
    for (int g = 0; g < controls.n_tau_grid; ++g) {
      const double x = -10.0 + 20.0 * g / (controls.n_tau_grid - 1.0);
      const double cand = std::pow(10.0, x) / d_ref;
      VectorXd h(c);
      for (int j = 0; j < c; ++j) h[j] = 1.0 / (1.0 + cand * d[j]);

      double fit_cross = 0.0, fit_self = 0.0;
      for (int j = 0; j < c; ++j)
        for (int l = 0; l < c; ++l) {
          const double c2 = C(j, l) * C(j, l);
          fit_cross += c2 * h[j] * h[l];
          fit_self += c2 * h[j] * h[j] * h[l] * h[l];
        }
      const double rss = cov_frob2 - 2.0 * fit_cross + fit_self;
      const double edf = h.sum();  // trace of S
      const double denom = 1.0 - std::min(edf * edf / (double(K) * K), 0.999999);
      const double gcv = (rss / (double(K) * K)) / (denom * denom);
      if (gcv < best_gcv) {
        best_gcv = gcv;
        tau = cand;
      }
    }
  }

  VectorXd h(c);
  for (int j = 0; j < c; ++j) h[j] = 1.0 / (1.0 + tau * d[j]);
  MatrixXd smoothed = A * h.asDiagonal() * C * h.asDiagonal() * A.transpose();
  smoothed = 0.5 * (smoothed + smoothed.transpose());

  // --------------------------------------------------------------------------
  // eigendecomposition with quadrature weight 1/K

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(smoothed);
  if (eig.info() != Eigen::Success) throw ConvergenceError("eigensystem: eigensolver failed");

  // Eigen returns ascending order; walk from the top.
  std::vector<int> order;
  for (int j = K - 1; j >= 0; --j)
    if (eig.eigenvalues()[j] > 0.0) order.push_back(j);
  if (order.empty()) throw ValidationError("eigensystem: smoothed covariance has no positive part");

  double total = 0.0;
  for (int j : order) total += eig.eigenvalues()[j];

  int L = 0;
  if (trunc.fixed_L > 0) {
    if (trunc.fixed_L > static_cast<int>(order.size()))
      throw ValidationError("eigensystem: fixed_L = " + std::to_string(trunc.fixed_L) +
                            " exceeds the " + std::to_string(order.size()) +
                            " positive components available");
    L = trunc.fixed_L;
  } else {
    if (!(trunc.pve > 0.0) || trunc.pve > 1.0)
      throw ValidationError("eigensystem: pve threshold must lie in (0, 1]");
    double cum = 0.0;
    for (size_t j = 0; j < order.size(); ++j) {
      cum += eig.eigenvalues()[order[j]];
      if (cum >= trunc.pve * total - 1e-12 * total) {
        L = static_cast<int>(j) + 1;
        break;
      }
    }
    if (L == 0) L = static_cast<int>(order.size());
  }

  EigenSystem es;
  es.grid = grid;
  es.basis = basis;
  es.n_smooth_basis = c;
  es.tau = tau;
  es.eigenfunctions.resize(K, L);
  es.spline_coefs.resize(c, L);
  es.eigenvalues.resize(L);

  const double sqrtK = std::sqrt(static_cast<double>(K));
  double kept = 0.0;
  for (int l = 0; l < L; ++l) {
    const int j = order[l];
    VectorXd q = eig.eigenvectors().col(j);

    // Canonical sign: non-negative integral, with a first-element tie-break.
    // Both tests are on the phi = sqrt(K) q scale.
    const double integral = q.sum() / K;
    double sign = 1.0;
    if (std::abs(integral) * sqrtK > 1e-8) {
      sign = integral >= 0.0 ? 1.0 : -1.0;
    } else {
      sign = 1.0;
      for (int k = 0; k < K; ++k)
        if (std::abs(q[k]) * sqrtK > 1e-8) {
          sign = q[k] > 0.0 ? 1.0 : -1.0;
          break;
        }
    }
    q *= sign;

    es.eigenfunctions.col(l) = sqrtK * q;
    es.eigenvalues[l] = eig.eigenvalues()[j] / K;
    kept += eig.eigenvalues()[j];
    // Eigenvectors of the smoothed covariance lie in span(B); recover the
    // spline representation by least squares on the same basis.
    es.spline_coefs.col(l) = sqrtK * llt.solve(B.transpose() * q);
  }
  es.pve = kept / total;
  return es;
}

MatrixXd evaluate_eigenfunctions(const EigenSystem& es, const VectorXd& points) {
  if (es.n_smooth_basis == 0) throw ValidationError("eigensystem: empty (not estimated)");
  return es.basis.evaluate(points) * es.spline_coefs;
}

EigenSystem align_sign(const EigenSystem& estimated, const MatrixXd& reference) {
  if (reference.rows() != estimated.eigenfunctions.rows() ||
      reference.cols() != estimated.eigenfunctions.cols())
    throw ValidationError("align_sign: reference shape does not match the eigensystem");

  EigenSystem out = estimated;
  for (int l = 0; l < estimated.eigenfunctions.cols(); ++l) {
    const double dot = estimated.eigenfunctions.col(l).dot(reference.col(l));
    if (dot < 0.0) {
      out.eigenfunctions.col(l) *= -1.0;
      out.spline_coefs.col(l) *= -1.0;
    }
  }
  return out;
}

}  // namespace gcfpca
