#pragma once

// Independent reference implementations the test suites compare the library
// against. Everything here is deliberately written the slow, obvious way:
// dense matrices, explicit loops, textbook quadrature. None of it shares code
// with src/.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "gcfpca/family.hpp"
#include "gcfpca/joint_glmm.hpp"
#include "gcfpca/local_glmm.hpp"

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Fixed reference constants (standard normal quantiles).
inline constexpr double kZ975 = 1.959963984540054;           // level 0.95, pointwise
inline constexpr double kSidakTwoPoint = 2.2364766445577895; // 0.95 simultaneous, 2 indep pts

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (physicists' weight exp(-x^2)) via the eigenvalues
// of the Jacobi matrix; weights come from the first eigenvector components.

struct GaussHermite {
  VectorXd nodes;
  VectorXd weights;
};

inline GaussHermite gauss_hermite(int n) {
  MatrixXd J = MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double off = std::sqrt(k / 2.0);
    J(k - 1, k) = off;
    J(k, k - 1) = off;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int q = 0; q < n; ++q) {
    const double v0 = es.eigenvectors()(0, q);
    gh.weights[q] = sqrt_pi * v0 * v0;
  }
  return gh;
}

// Marginal log-likelihood of a random-intercept model on one window,
// integrating each subject's random effect numerically:
//   l_i = log Integral prod_j f(z_ij | x_i'beta + u) N(u; 0, sigma2) du.
inline double glmm_marginal_loglik_gh(const gcfpca::BinData& bin, const gcfpca::Family& family,
                                      const VectorXd& beta, double sigma2, int n_points = 50) {
  const double log_sqrt_pi = 0.5 * std::log(M_PI);
  const GaussHermite gh = gauss_hermite(n_points);
  double total = 0.0;
  for (std::size_t i = 0; i < bin.outcomes.size(); ++i) {
    const double xb = bin.design.row(static_cast<Eigen::Index>(i)).dot(beta);
    if (sigma2 <= 0.0) {
      for (Eigen::Index j = 0; j < bin.outcomes[i].size(); ++j)
        total += family.log_density(bin.outcomes[i][j], xb);
      continue;
    }
    const double scale = std::sqrt(2.0 * sigma2);
    VectorXd logs(n_points);
    for (int q = 0; q < n_points; ++q) {
      const double eta = xb + scale * gh.nodes[q];
      double lp = std::log(gh.weights[q]);
      for (Eigen::Index j = 0; j < bin.outcomes[i].size(); ++j)
        lp += family.log_density(bin.outcomes[i][j], eta);
      logs[q] = lp;
    }
    const double top = logs.maxCoeff();
    total += top + std::log((logs.array() - top).exp().sum()) - log_sqrt_pi;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Plain pooled GLM on a window: textbook IRLS on the replicated design (each
// outcome of subject i reuses the subject's covariate row).

inline VectorXd glm_irls(const gcfpca::BinData& bin, const gcfpca::Family& family,
                         int max_iter = 200, double tol = 1e-12) {
  const Eigen::Index p = bin.design.cols();
  Eigen::Index n = 0;
  for (const auto& z : bin.outcomes) n += z.size();
  MatrixXd X(n, p);
  VectorXd z(n);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < bin.outcomes.size(); ++i)
    for (Eigen::Index j = 0; j < bin.outcomes[i].size(); ++j) {
      X.row(row) = bin.design.row(static_cast<Eigen::Index>(i));
      z[row] = bin.outcomes[i][j];
      ++row;
    }

  VectorXd beta = VectorXd::Zero(p);
  for (int it = 0; it < max_iter; ++it) {
    MatrixXd A = MatrixXd::Zero(p, p);
    VectorXd b = VectorXd::Zero(p);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double eta = X.row(r).dot(beta);
      const double mu = family.mean(eta);
      const double me = std::max(family.mu_eta(eta), 1e-10);
      const double w = me;  // canonical link: weight = dmu/deta
      const double ystar = eta + (z[r] - mu) / me;
      A.noalias() += w * X.row(r).transpose() * X.row(r);
      b.noalias() += (w * ystar) * X.row(r).transpose();
    }
    const VectorXd beta_new = A.ldlt().solve(b);
    const double delta = (beta_new - beta).cwiseAbs().maxCoeff();
    beta = beta_new;
    if (delta < tol) break;
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Central finite differences.

inline VectorXd central_diff(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                             double h = 1e-5) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + h;
    const double up = f(xp);
    xp[j] = x[j] - h;
    const double dn = f(xp);
    xp[j] = x[j];
    g[j] = (up - dn) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Naive metric reimplementations (explicit loops).

inline double naive_mise_eta(const MatrixXd& eta_hat, const MatrixXd& eta_true) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < eta_true.rows(); ++i)
    for (Eigen::Index k = 0; k < eta_true.cols(); ++k) {
      const double d = eta_hat(i, k) - eta_true(i, k);
      total += d * d;
    }
  return total / (static_cast<double>(eta_true.rows()) * static_cast<double>(eta_true.cols()));
}

inline double naive_ise(const VectorXd& estimate, const VectorXd& truth) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < truth.size(); ++k) {
    const double d = estimate[k] - truth[k];
    total += d * d;
  }
  return total / static_cast<double>(truth.size());
}

inline double naive_coverage(const VectorXd& lower, const VectorXd& upper, const VectorXd& truth) {
  int covered = 0;
  for (Eigen::Index k = 0; k < truth.size(); ++k)
    if (lower[k] <= truth[k] && truth[k] <= upper[k]) ++covered;
  return static_cast<double>(covered) / static_cast<double>(truth.size());
}

inline double naive_mise_phi(const MatrixXd& phi_hat, const MatrixXd& phi_true) {
  const Eigen::Index L = std::min(phi_hat.cols(), phi_true.cols());
  double total = 0.0;
  for (Eigen::Index l = 0; l < L; ++l) {
    const double as_is = naive_ise(phi_hat.col(l), phi_true.col(l));
    const double flipped = naive_ise(-phi_hat.col(l), phi_true.col(l));
    const double dot = phi_hat.col(l).dot(phi_true.col(l));
    total += dot < 0.0 ? flipped : as_is;
  }
  return total / static_cast<double>(L);
}

// ---------------------------------------------------------------------------
// Dense solve of the penalized working normal equations for the joint model,
// materializing the full (qM + IL)-column design the library never builds.
// Column order matches the library: fixed coefficient (r, m) at r*M + m,
// score (i, l) at qM + i*L + l.

inline void dense_pirls_solve(const gcfpca::JointDesign& d, const gcfpca::Family& family,
                              const VectorXd& lambda, const VectorXd& tau, double dispersion,
                              const MatrixXd& beta_in, const MatrixXd& scores_in,
                              MatrixXd* beta_out, MatrixXd* scores_out) {
  const int I = d.n_subjects, K = d.n_grid, M = d.n_fixed_basis, L = d.n_components,
            q = d.n_covx;
  const int F = q * M;
  const int dim = F + I * L;

  const MatrixXd P = gcfpca::difference_penalty(M, 2).matrix;
  MatrixXd A = MatrixXd::Zero(dim, dim);
  VectorXd b = VectorXd::Zero(dim);
  for (int r = 0; r < q; ++r) A.block(r * M, r * M, M, M) = tau[r] * P;
  for (int i = 0; i < I; ++i)
    for (int l = 0; l < L; ++l) A(F + i * L + l, F + i * L + l) = 1.0 / lambda[l];

  VectorXd xrow(dim);
  for (int i = 0; i < I; ++i) {
    const VectorXd a = beta_in.transpose() * d.covx.row(i).transpose();
    for (int k = 0; k < K; ++k) {
      if (!d.observed(i, k)) continue;
      double eta = d.B.row(k).dot(a);
      if (L > 0) eta += d.Phi.row(k).dot(scores_in.row(i));
      const double mu = family.mean(eta);
      const double me = std::max(family.mu_eta(eta), 1e-10);
      const double w = std::max(me / dispersion, 1e-12);
      const double ystar = eta + (d.outcomes(i, k) - mu) / me;

      xrow.setZero();
      for (int r = 0; r < q; ++r)
        for (int m = 0; m < M; ++m) xrow[r * M + m] = d.covx(i, r) * d.B(k, m);
      for (int l = 0; l < L; ++l) xrow[F + i * L + l] = d.Phi(k, l);

      A.noalias() += w * xrow * xrow.transpose();
      b.noalias() += (w * ystar) * xrow;
    }
  }

  const VectorXd theta = A.ldlt().solve(b);
  beta_out->resize(q, M);
  for (int r = 0; r < q; ++r) beta_out->row(r) = theta.segment(r * M, M).transpose();
  scores_out->resize(I, L);
  for (int i = 0; i < I; ++i)
    for (int l = 0; l < L; ++l) (*scores_out)(i, l) = theta[F + i * L + l];
}

// ---------------------------------------------------------------------------
// Gradient ascent with backtracking on an arbitrary smooth objective. Used to
// maximize the joint penalized log-likelihood without the Schur machinery.

inline VectorXd maximize_by_ascent(
    const std::function<double(const VectorXd&, VectorXd*)>& f_and_grad, VectorXd x,
    int max_iter = 20000, double grad_tol = 1e-8) {
  VectorXd g(x.size());
  double fx = f_and_grad(x, &g);
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    if (g.cwiseAbs().maxCoeff() < grad_tol) break;
    double trial_step = step;
    for (int half = 0; half < 60; ++half) {
      VectorXd x_new = x + trial_step * g;
      VectorXd g_new(x.size());
      const double f_new = f_and_grad(x_new, &g_new);
      if (std::isfinite(f_new) && f_new > fx) {
        x = std::move(x_new);
        fx = f_new;
        g = std::move(g_new);
        step = trial_step * 1.5;
        break;
      }
      trial_step *= 0.5;
      if (half == 59) return x;  // no ascent direction left
    }
  }
  return x;
}

}  // namespace oracles
