#include "gcfpca/local_glmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gcfpca/errors.hpp"
#include "gcfpca/parallel.hpp"

namespace gcfpca {

namespace {

constexpr double kSigma2Min = 1e-290;  // numerical floor for exp(log_sigma2)

// ---------------------------------------------------------------------------
// posterior mode of one subject's random intercept

struct SubjectMode {
  double u = 0.0;       // posterior mode of the random intercept
  double W = 0.0;       // sum_j mu_eta(eta_j)/phi at the mode
  double T = 0.0;       // sum_j dmu_eta(eta_j)/phi at the mode
  double loglik = 0.0;  // sum_j log f(z_j | eta_j) at the mode
};

// The complete-data score in u is R(u) - u/sigma2 with
// R(u) = sum_j (z_j - mu(xb + u))/phi, strictly decreasing, so the mode is a
// unique root. Newton with a bisection bracket as safeguard.
SubjectMode solve_mode(const VectorXd& z, double xb, const Family& family, double sigma2) {
  const double phi = family.kind == FamilyKind::gaussian_identity ? family.dispersion : 1.0;

  const auto score = [&](double u, double* W_out) {
    double R = 0.0, W = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double eta = xb + u;
      R += (z[j] - family.mean(eta)) / phi;
      W += family.mu_eta(eta) / phi;
    }
    if (W_out) *W_out = W;
    return R - u / sigma2;
  };

  double u = 0.0, W = 0.0;
  double g = score(u, &W);

  // Bracket the root: g is decreasing, so walk in the direction of its sign.
  // The root obeys |u*| = sigma2*|R(u*)| <= sigma2*|R(0)|, so starting the
  // walk at that scale brackets in one probe even when sigma2 is tiny.
  const double step0 =
      std::max(sigma2 * (std::abs(g) + 1.0), std::numeric_limits<double>::min());
  double lo = 0.0, hi = 0.0, glo = g, ghi = g;
  if (g > 0.0) {
    lo = 0.0;
    double step = step0;
    hi = step;
    while ((ghi = score(hi, nullptr)) > 0.0 && step < 1e8) {
      lo = hi;
      glo = ghi;
      step *= 2.0;
      hi = step;
    }
  } else if (g < 0.0) {
    hi = 0.0;
    ghi = g;
    double step = step0;
    lo = -step;
    while ((glo = score(lo, nullptr)) < 0.0 && step < 1e8) {
      hi = lo;
      ghi = glo;
      step *= 2.0;
      lo = -step;
    }
  }

  if (g != 0.0) {
    u = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
      g = score(u, &W);
      // Test before moving: once the increment underflows the bisection
      // fallback would kick u away from the root it just found.
      if (std::abs(g) < 1e-12 * (1.0 + std::abs(u) / sigma2 + W)) break;
      if (g > 0.0) {
        lo = u;
        glo = g;
      } else {
        hi = u;
        ghi = g;
      }
      const double curvature = W + 1.0 / sigma2;
      double next = u + g / curvature;
      if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);  // fall back to bisection
      const double delta = std::abs(next - u);
      u = next;
      if (delta < 1e-14 * (1.0 + std::abs(u))) break;
    }
  }

  SubjectMode mode;
  mode.u = u;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double eta = xb + u;
    mode.W += family.mu_eta(eta) / phi;
    mode.T += family.dmu_eta(eta) / phi;
    mode.loglik += family.log_density(z[j], eta);
  }
  return mode;
}

void check_not_degenerate(const BinData& bin) {
  bool any = false;
  double first = 0.0;
  bool all_equal = true;
  for (const auto& z : bin.outcomes)
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      if (!any) {
        first = z[j];
        any = true;
      } else if (z[j] != first) {
        all_equal = false;
      }
    }
  if (!any) throw ValidationError("local fit: window contains no observations");
  if (all_equal)
    throw ValidationError("local fit: all outcomes in the window are identical; nothing to fit");
}

void check_full_rank(const MatrixXd& design) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols())
    throw ValidationError("local fit: covariate design (with intercept) is rank deficient");
}

double glm_loglik(const BinData& bin, const Family& family, const VectorXd& beta) {
  double ll = 0.0;
  for (size_t i = 0; i < bin.outcomes.size(); ++i) {
    const double eta = bin.design.row(i).dot(beta);
    const VectorXd& z = bin.outcomes[i];
    for (Eigen::Index j = 0; j < z.size(); ++j) ll += family.log_density(z[j], eta);
  }
  return ll;
}

}  // namespace

// ---------------------------------------------------------------------------
// slicing

BinData slice_bin(const LongDataset& data, const Bin& bin) {
  const int I = data.n_subjects();
  const int p = data.n_covariates();

  BinData out;
  out.bin_center = bin.center;
  out.n_subjects_total = I;

  for (int i = 0; i < I; ++i) {
    int count = 0;
    for (int k : bin.members)
      if (data.observed(i, k)) ++count;
    if (count == 0) continue;

    VectorXd z(count);
    int pos = 0;
    for (int k : bin.members)
      if (data.observed(i, k)) z[pos++] = data.outcomes(i, k);

    out.subject_rows.push_back(i);
    out.outcomes.push_back(std::move(z));
  }

  const int n = static_cast<int>(out.subject_rows.size());
  out.design.resize(n, p + 1);
  for (int r = 0; r < n; ++r) {
    out.design(r, 0) = 1.0;
    for (int c = 0; c < p; ++c) out.design(r, c + 1) = data.covariates(out.subject_rows[r], c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// marginal objective

double laplace_objective(const BinData& bin, const Family& family, const VectorXd& beta,
                         double log_sigma2, VectorXd* grad, VectorXd* blups) {
  const int q = static_cast<int>(bin.design.cols());
  if (beta.size() != q) throw ValidationError("laplace objective: beta has wrong length");
  const double sigma2 = std::max(std::exp(log_sigma2), kSigma2Min);

  if (grad) grad->setZero(q + 1);
  if (blups) blups->setZero(static_cast<Eigen::Index>(bin.outcomes.size()));

  double total = 0.0;
  for (size_t i = 0; i < bin.outcomes.size(); ++i) {
    const double xb = bin.design.row(i).dot(beta);
    const SubjectMode m = solve_mode(bin.outcomes[i], xb, family, sigma2);

    const double H = m.W + 1.0 / sigma2;
    total += m.loglik - m.u * m.u / (2.0 * sigma2) - 0.5 * std::log1p(sigma2 * m.W);

    if (grad) {
      // Total derivatives through the mode: see the score identities
      // R(u) = u/sigma2 and du/dbeta = -(W/H) x.
      const double R = m.u / sigma2;
      const double beta_factor = R - m.T / (2.0 * sigma2 * H * H);
      grad->head(q) += beta_factor * bin.design.row(i).transpose();
      (*grad)[q] += m.u * m.u / (2.0 * sigma2) - m.W / (2.0 * H) -
                    m.T * m.u / (2.0 * sigma2 * H * H);
    }
    if (blups) (*blups)[static_cast<Eigen::Index>(i)] = m.u;
  }
  return total;
}

// ---------------------------------------------------------------------------
// pooled GLM (no random effect)

VectorXd fit_glm_pooled(const BinData& bin, const Family& family, int max_iter, double tol) {
  check_full_rank(bin.design);
  const int q = static_cast<int>(bin.design.cols());
  const double phi = family.kind == FamilyKind::gaussian_identity ? family.dispersion : 1.0;

  VectorXd beta = VectorXd::Zero(q);
  double ll = glm_loglik(bin, family, beta);

  for (int iter = 0; iter < max_iter; ++iter) {
    MatrixXd A = MatrixXd::Zero(q, q);
    VectorXd rhs = VectorXd::Zero(q);
    for (size_t i = 0; i < bin.outcomes.size(); ++i) {
      const VectorXd x = bin.design.row(i).transpose();
      const double eta = x.dot(beta);
      const double mu = family.mean(eta);
      const double w1 = std::max(family.mu_eta(eta), 1e-10) / phi;
      const VectorXd& z = bin.outcomes[i];
      // All observations of a subject share eta, so accumulate in bulk.
      const double n = static_cast<double>(z.size());
      const double ystar_sum = n * eta + (z.sum() - n * mu) / std::max(family.mu_eta(eta), 1e-10);
      A += (n * w1) * x * x.transpose();
      rhs += w1 * ystar_sum * x;
    }

    const VectorXd proposal = A.ldlt().solve(rhs);
    // Step-halve toward the previous iterate until the likelihood improves.
    VectorXd candidate = proposal;
    double ll_new = glm_loglik(bin, family, candidate);
    int halvings = 0;
    while ((!std::isfinite(ll_new) || ll_new < ll - 1e-12) && halvings < 40) {
      candidate = 0.5 * (candidate + beta);
      ll_new = glm_loglik(bin, family, candidate);
      ++halvings;
    }
    if (!std::isfinite(ll_new)) break;

    const double change = (candidate - beta).cwiseAbs().maxCoeff();
    beta = candidate;
    const bool done = std::abs(ll_new - ll) < tol * (1.0 + std::abs(ll)) && change < 1e-8;
    ll = ll_new;
    if (done) break;
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Gaussian: exact restricted likelihood, profiled over the variance ratio

namespace {

struct GaussianStats {
  VectorXd n, S, SS;  // per-subject count, sum, sum of squares
  double N = 0.0;
  double SS_total = 0.0;
};

// Restricted -2 log-likelihood profile in lambda = sigma2_b / sigma2_e,
// up to constants: sum_i log(1+n_i l) + logdet A(l) + (N-q) log RSS(l).
double reml_profile(const BinData& bin, const GaussianStats& st, double lambda, VectorXd* beta_out,
                    double* rss_out) {
  const int q = static_cast<int>(bin.design.cols());
  const int n_sub = static_cast<int>(bin.outcomes.size());

  MatrixXd A = MatrixXd::Zero(q, q);
  VectorXd c = VectorXd::Zero(q);
  double logdet_blocks = 0.0;
  for (int i = 0; i < n_sub; ++i) {
    const double ni = st.n[i];
    const double gi = ni / (1.0 + ni * lambda);
    const VectorXd x = bin.design.row(i).transpose();
    A += gi * x * x.transpose();
    c += gi * (st.S[i] / ni) * x;
    logdet_blocks += std::log1p(ni * lambda);
  }

  const Eigen::LDLT<MatrixXd> ldlt(A);
  const VectorXd beta = ldlt.solve(c);
  double logdet_A = 0.0;
  for (int j = 0; j < q; ++j) logdet_A += std::log(ldlt.vectorD()[j]);

  double rss = 0.0;
  for (int i = 0; i < n_sub; ++i) {
    const double mi = bin.design.row(i).dot(beta);
    const double resid_sum = st.S[i] - st.n[i] * mi;
    const double resid_ss = st.SS[i] - 2.0 * mi * st.S[i] + st.n[i] * mi * mi;
    rss += resid_ss - (lambda / (1.0 + st.n[i] * lambda)) * resid_sum * resid_sum;
  }
  if (rss < 1e-12 * (1.0 + st.SS_total))
    throw ValidationError("local fit: window residual variation is numerically zero");

  if (beta_out) *beta_out = beta;
  if (rss_out) *rss_out = rss;
  return logdet_blocks + logdet_A + (st.N - q) * std::log(rss);
}

LocalFit fit_gaussian_reml(const BinData& bin, const LocalControls& controls) {
  const int q = static_cast<int>(bin.design.cols());
  const int n_sub = static_cast<int>(bin.outcomes.size());

  GaussianStats st;
  st.n.resize(n_sub);
  st.S.resize(n_sub);
  st.SS.resize(n_sub);
  for (int i = 0; i < n_sub; ++i) {
    const VectorXd& z = bin.outcomes[i];
    st.n[i] = static_cast<double>(z.size());
    st.S[i] = z.sum();
    st.SS[i] = z.squaredNorm();
  }
  st.N = st.n.sum();
  st.SS_total = st.SS.sum();
  if (st.N <= q)
    throw ValidationError("local fit: fewer observations than fixed-effect coefficients");

  LocalFit fit;
  fit.bin_center = bin.bin_center;

  // Coarse log-scale sweep, then golden-section refinement of the bracket.
  const auto profile = [&](double t) { return reml_profile(bin, st, std::exp(t), nullptr, nullptr); };
  const double t_lo = -20.0, t_hi = 14.0;
  const int n_coarse = 35;
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int evals = 0;
  double running_best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n_coarse; ++j) {
    const double t = t_lo + (t_hi - t_lo) * j / (n_coarse - 1.0);
    const double v = profile(t);
    ++evals;
    if (v < best_val) {
      best_val = v;
      best = j;
    }
    running_best = std::max(running_best, -0.5 * v);
    fit.objective_path.push_back(running_best);
  }

  const double step = (t_hi - t_lo) / (n_coarse - 1.0);
  double a = t_lo + step * std::max(0, best - 1);
  double b = t_lo + step * std::min(n_coarse - 1, best + 1);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = profile(x1), f2 = profile(x2);
  evals += 2;
  while (b - a > 1e-8 && evals < 200) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = profile(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = profile(x2);
    }
    ++evals;
    running_best = std::max(running_best, -0.5 * std::min(f1, f2));
    fit.objective_path.push_back(running_best);
  }
  double t_hat = f1 < f2 ? x1 : x2;

  double lambda = std::exp(t_hat);
  VectorXd beta;
  double rss = 0.0;
  double crit = reml_profile(bin, st, lambda, &beta, &rss);
  double sigma2_e = rss / (st.N - q);
  double sigma2_b = lambda * sigma2_e;

  if (sigma2_b < controls.sigma2_floor) {
    lambda = 0.0;
    crit = reml_profile(bin, st, 0.0, &beta, &rss);
    sigma2_e = rss / (st.N - q);
    sigma2_b = 0.0;
  }

  fit.beta_star = beta;
  fit.sigma2 = sigma2_b;
  fit.dispersion = sigma2_e;
  fit.converged = true;
  fit.n_iter = evals;
  // Full restricted log-likelihood at the profiled optimum.
  fit.objective = -0.5 * (crit - (st.N - q) * std::log(rss) +
                          (st.N - q) * (std::log(2.0 * M_PI * sigma2_e) + 1.0));

  fit.blups = VectorXd::Zero(bin.n_subjects_total);
  fit.present.assign(bin.n_subjects_total, 0);
  for (int i = 0; i < n_sub; ++i) {
    const int row = bin.subject_rows[i];
    fit.present[row] = 1;
    if (lambda > 0.0) {
      const double resid_sum = st.S[i] - st.n[i] * bin.design.row(i).dot(beta);
      fit.blups[row] = lambda * resid_sum / (1.0 + st.n[i] * lambda);
    }
  }
  return fit;
}

// ---------------------------------------------------------------------------
// non-Gaussian: BFGS on the Laplace objective over (beta, log sigma2)

LocalFit fit_laplace_bfgs(const BinData& bin, const Family& family,
                          const LocalControls& controls) {
  const int q = static_cast<int>(bin.design.cols());
  const int n = q + 1;

  // Warm start: pooled GLM for beta, a fraction of the working-residual
  // variance for sigma2.
  const VectorXd beta0 = fit_glm_pooled(bin, family, 100, 1e-10);
  double wsum = 0.0, wsq = 0.0, wn = 0.0;
  for (size_t i = 0; i < bin.outcomes.size(); ++i) {
    const double eta = bin.design.row(i).dot(beta0);
    const double me = std::max(family.mu_eta(eta), 1e-8);
    const VectorXd& z = bin.outcomes[i];
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double r = (z[j] - family.mean(eta)) / me;
      wsum += r;
      wsq += r * r;
      wn += 1.0;
    }
  }
  const double wvar = std::max(wsq / wn - (wsum / wn) * (wsum / wn), 0.0);
  const double sigma2_init = std::min(std::max(0.1 * wvar, 1e-3), 10.0);

  VectorXd theta(n);
  theta.head(q) = beta0;
  theta[n - 1] = std::log(sigma2_init);

  const auto eval = [&](const VectorXd& th, VectorXd* g) {
    VectorXd grad_ll;
    const double ll =
        laplace_objective(bin, family, th.head(q), th[n - 1], g ? &grad_ll : nullptr, nullptr);
    if (g) *g = -grad_ll;
    return -ll;  // minimize the negative marginal log-likelihood
  };

  VectorXd grad(n);
  double f = eval(theta, &grad);

  LocalFit fit;
  fit.bin_center = bin.bin_center;
  fit.objective_path.push_back(-f);

  MatrixXd Hinv = MatrixXd::Identity(n, n);
  bool first_update = true;
  bool converged = false;
  int iter = 0;

  for (; iter < controls.max_iter; ++iter) {
    if (grad.cwiseAbs().maxCoeff() < 1e-9 * (1.0 + std::abs(f))) {
      converged = true;
      break;
    }

    VectorXd direction = -(Hinv * grad);
    if (direction.dot(grad) >= 0.0) direction = -grad;  // enforce descent

    // Armijo backtracking.
    double alpha = 1.0;
    const double slope = grad.dot(direction);
    VectorXd theta_new;
    double f_new = f;
    bool accepted = false;
    for (int h = 0; h < 50; ++h) {
      theta_new = theta + alpha * direction;
      f_new = eval(theta_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // no usable step; treat current point as final

    VectorXd grad_new(n);
    eval(theta_new, &grad_new);

    const VectorXd s = theta_new - theta;
    const VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (first_update) {
        Hinv *= sy / y.squaredNorm();
        first_update = false;
      }
      const VectorXd Hy = Hinv * y;
      const double yHy = y.dot(Hy);
      Hinv += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
              (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }

    const double obj_change = std::abs(f_new - f);
    const double param_change = s.cwiseAbs().maxCoeff();
    theta = theta_new;
    f = f_new;
    grad = grad_new;
    fit.objective_path.push_back(-f);

    // The change-based criteria declare convergence, but iteration continues
    // until the gradient test at the loop head is met: the blup-mean identity
    // needs the score driven well below the change thresholds.
    if (obj_change < controls.rel_obj_tol * (1.0 + std::abs(f)) || param_change < controls.param_tol)
      converged = true;
  }

  fit.n_iter = iter;
  fit.converged = converged;
  fit.sigma2 = std::exp(theta[n - 1]);
  fit.beta_star = theta.head(q);

  VectorXd blups_local;
  fit.objective = laplace_objective(bin, family, fit.beta_star, theta[n - 1], nullptr, &blups_local);

  fit.blups = VectorXd::Zero(bin.n_subjects_total);
  fit.present.assign(bin.n_subjects_total, 0);
  for (size_t i = 0; i < bin.subject_rows.size(); ++i) {
    fit.present[bin.subject_rows[i]] = 1;
    fit.blups[bin.subject_rows[i]] = blups_local[static_cast<Eigen::Index>(i)];
  }
  return fit;
}

LocalFit fit_glm_only(const BinData& bin, const Family& family, const LocalControls& controls) {
  LocalFit fit;
  fit.bin_center = bin.bin_center;
  fit.beta_star = fit_glm_pooled(bin, family, controls.max_iter, 1e-12);
  fit.sigma2 = 0.0;
  fit.converged = true;
  fit.n_iter = 1;
  fit.objective = glm_loglik(bin, family, fit.beta_star);
  fit.objective_path.push_back(fit.objective);
  fit.blups = VectorXd::Zero(bin.n_subjects_total);
  fit.present.assign(bin.n_subjects_total, 0);
  for (int row : bin.subject_rows) fit.present[row] = 1;
  if (family.kind == FamilyKind::gaussian_identity) {
    double rss = 0.0, N = 0.0;
    for (size_t i = 0; i < bin.outcomes.size(); ++i) {
      const double m = bin.design.row(i).dot(fit.beta_star);
      rss += (bin.outcomes[i].array() - m).square().sum();
      N += static_cast<double>(bin.outcomes[i].size());
    }
    fit.dispersion = rss / std::max(N - bin.design.cols(), 1.0);
  }
  return fit;
}

}  // namespace

LocalFit fit_local_glmm(const BinData& bin, const Family& family, const LocalControls& controls) {
  if (bin.outcomes.empty()) throw ValidationError("local fit: window contains no subjects");
  if (static_cast<int>(bin.outcomes.size()) != bin.design.rows())
    throw ValidationError("local fit: design rows do not match subject count");
  check_not_degenerate(bin);
  check_full_rank(bin.design);

  if (controls.force_sigma2_zero) return fit_glm_only(bin, family, controls);

  if (family.kind == FamilyKind::gaussian_identity) return fit_gaussian_reml(bin, controls);

  LocalFit fit = fit_laplace_bfgs(bin, family, controls);
  if (fit.sigma2 < controls.sigma2_floor) {
    // Boundary solution: the marginal criterion is maximized at sigma2 = 0,
    // where the model degenerates to the pooled GLM.
    LocalFit glm = fit_glm_only(bin, family, controls);
    glm.objective_path = fit.objective_path;
    glm.n_iter = fit.n_iter;
    return glm;
  }
  return fit;
}

BinFitResult fit_all_bins(const LongDataset& data, const BinSet& bins, const Family& family,
                          const LocalControls& controls, int n_threads) {
  if (bins.n_grid != data.n_grid())
    throw ValidationError("fit_all_bins: window plan grid size does not match the dataset");

  const int K = static_cast<int>(bins.bins.size());
  BinFitResult result;
  result.fits.resize(K);
  result.failed.assign(K, 0);
  result.messages.assign(K, std::string());

  parallel_for(K, n_threads, [&](int k) {
    try {
      const BinData slice = slice_bin(data, bins.bins[k]);
      result.fits[k] = fit_local_glmm(slice, family, controls);
    } catch (const std::exception& e) {
      result.failed[k] = 1;
      result.messages[k] = e.what();
      LocalFit& placeholder = result.fits[k];
      placeholder.bin_center = bins.bins[k].center;
      placeholder.blups = VectorXd::Zero(data.n_subjects());
      placeholder.present.assign(data.n_subjects(), 0);
      placeholder.converged = false;
    }
  });

  for (int k = 0; k < K; ++k) result.n_failed += result.failed[k];
  if (result.n_failed * 5 > K) {
    std::string first;
    for (int k = 0; k < K; ++k)
      if (result.failed[k]) {
        first = "window " + std::to_string(k) + ": " + result.messages[k];
        break;
      }
    throw ConvergenceError("local fitting failed in " + std::to_string(result.n_failed) + " of " +
                           std::to_string(K) + " windows (limit 20%); first failure: " + first);
  }
  return result;
}

RandomEffectMatrix assemble_random_effect_matrix(const BinFitResult& result, int n_subjects,
                                                 int n_grid) {
  if (static_cast<int>(result.fits.size()) != n_grid)
    throw ValidationError("assemble: expected one local fit per grid point");

  RandomEffectMatrix out;
  out.values = MatrixXd::Zero(n_subjects, n_grid);
  out.valid = MatrixXb::Constant(n_subjects, n_grid, false);

  for (int k = 0; k < n_grid; ++k) {
    if (result.failed[k]) continue;  // zero column, invalid mask
    const LocalFit& fit = result.fits[k];
    if (fit.blups.size() != n_subjects)
      throw ValidationError("assemble: local fit " + std::to_string(k) +
                            " has wrong subject count");
    for (int i = 0; i < n_subjects; ++i) {
      out.values(i, k) = fit.blups[i];
      out.valid(i, k) = fit.present[i] != 0;
    }
  }
  return out;
}

}  // namespace gcfpca
