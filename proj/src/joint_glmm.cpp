#include "gcfpca/joint_glmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "gcfpca/errors.hpp"
#include "gcfpca/parallel.hpp"
#include "gcfpca/rng.hpp"
#include "gcfpca/stats.hpp"

namespace gcfpca {

namespace {

constexpr double kWeightFloor = 1e-12;
constexpr double kMuEtaFloor = 1e-10;

// Working weight and response at one observation under the canonical link.
inline void working_point(const Family& family, double z, double eta, double dispersion,
                          double* w, double* ystar) {
  const double mu = family.mean(eta);
  const double me = std::max(family.mu_eta(eta), kMuEtaFloor);
  *w = std::max(me / dispersion, kWeightFloor);
  *ystar = eta + (z - mu) / me;
}

// Per-subject pieces of the working normal equations. Everything is expressed
// through the M- and L-dimensional compressions; the IK x (p+1)M fixed block
// never exists in memory.
struct SubjectPieces {
  MatrixXd Sw;   // M x M  basis cross-products
  VectorXd bw;   // M      basis x working response
  MatrixXd G;    // L x L  random block (+ prior precision)
  MatrixXd C;    // L x M  eigenfunction x basis cross-products
  VectorXd t;    // L      eigenfunction x working response
  int n_obs = 0;
};

void compute_subject_pieces(const JointDesign& d, const Family& family, const MatrixXd& beta,
                            const MatrixXd& scores, const VectorXd& lambda_inv, double dispersion,
                            int i, SubjectPieces* out) {
  const int M = d.n_fixed_basis, L = d.n_components, K = d.n_grid;
  out->Sw.setZero(M, M);
  out->bw.setZero(M);
  out->G.setZero(L, L);
  out->C.setZero(L, M);
  out->t.setZero(L);
  out->n_obs = 0;

  const VectorXd a = beta.transpose() * d.covx.row(i).transpose();  // M
  for (int k = 0; k < K; ++k) {
    if (!d.observed(i, k)) continue;
    double eta = d.B.row(k).dot(a);
    if (L > 0) eta += d.Phi.row(k).dot(scores.row(i));
    double w, ystar;
    working_point(family, d.outcomes(i, k), eta, dispersion, &w, &ystar);

    out->Sw.noalias() += w * d.B.row(k).transpose() * d.B.row(k);
    out->bw.noalias() += (w * ystar) * d.B.row(k).transpose();
    if (L > 0) {
      out->G.noalias() += w * d.Phi.row(k).transpose() * d.Phi.row(k);
      out->C.noalias() += w * d.Phi.row(k).transpose() * d.B.row(k);
      out->t.noalias() += (w * ystar) * d.Phi.row(k).transpose();
    }
    ++out->n_obs;
  }
  for (int l = 0; l < L; ++l) out->G(l, l) += lambda_inv[l];
}

// Fixed-effect normal equations after eliminating every subject's random
// block (Schur complement), accumulated over fixed tiles of subjects so the
// floating-point sum is independent of the thread count.
struct SweepResult {
  MatrixXd H0;                          // F x F
  VectorXd r0;                          // F
  std::vector<Eigen::LLT<MatrixXd>> cholG;  // one per subject (empty when L=0)
  std::size_t reduction_bytes = 0;
  std::size_t scratch_bytes = 0;
};

void sweep_normal_equations(const JointDesign& d, const Family& family, const MatrixXd& beta,
                            const MatrixXd& scores, const VectorXd& lambda_inv, double dispersion,
                            int tile_size, int n_threads, SweepResult* out) {
  const int I = d.n_subjects, M = d.n_fixed_basis, L = d.n_components, q = d.n_covx;
  const int F = q * M;
  const int n_tiles = (I + tile_size - 1) / tile_size;

  std::vector<MatrixXd> Hpart(n_tiles);
  std::vector<VectorXd> rpart(n_tiles);
  out->cholG.assign(L > 0 ? I : 0, Eigen::LLT<MatrixXd>());

  parallel_for(n_tiles, n_threads, [&](int tile) {
    MatrixXd H = MatrixXd::Zero(F, F);
    VectorXd r = VectorXd::Zero(F);
    SubjectPieces pieces;
    MatrixXd Minner(M, M);
    VectorXd vinner(M);

    const int lo = tile * tile_size;
    const int hi = std::min(I, lo + tile_size);
    for (int i = lo; i < hi; ++i) {
      compute_subject_pieces(d, family, beta, scores, lambda_inv, dispersion, i, &pieces);

      if (L > 0) {
        Eigen::LLT<MatrixXd> llt(pieces.G);
        const MatrixXd GinvC = llt.solve(pieces.C);
        const VectorXd Ginvt = llt.solve(pieces.t);
        Minner.noalias() = pieces.Sw - pieces.C.transpose() * GinvC;
        vinner.noalias() = pieces.bw - pieces.C.transpose() * Ginvt;
        out->cholG[i] = std::move(llt);
      } else {
        Minner = pieces.Sw;
        vinner = pieces.bw;
      }

      for (int r1 = 0; r1 < q; ++r1) {
        const double x1 = d.covx(i, r1);
        r.segment(r1 * M, M) += x1 * vinner;
        for (int r2 = 0; r2 < q; ++r2)
          H.block(r1 * M, r2 * M, M, M) += (x1 * d.covx(i, r2)) * Minner;
      }
    }
    Hpart[tile] = std::move(H);
    rpart[tile] = std::move(r);
  });

  out->H0 = MatrixXd::Zero(F, F);
  out->r0 = VectorXd::Zero(F);
  for (int t = 0; t < n_tiles; ++t) {  // fixed-order reduction
    out->H0 += Hpart[t];
    out->r0 += rpart[t];
  }
  out->reduction_bytes = static_cast<std::size_t>(n_tiles) * (F * F + F) * sizeof(double);
  out->scratch_bytes = static_cast<std::size_t>(resolve_threads(n_threads)) *
                       (F * F + F + 2 * M * M + 2 * L * M + 2 * L * L + 2 * M + 2 * L) *
                       sizeof(double);
}

// Recompute each subject's working quantities at the same expansion state and
// back-substitute the new fixed coefficients for its score update.
void sweep_scores(const JointDesign& d, const Family& family, const MatrixXd& beta_old,
                  const MatrixXd& scores_old, const VectorXd& lambda_inv, double dispersion,
                  const MatrixXd& beta_new, const std::vector<Eigen::LLT<MatrixXd>>& cholG,
                  int n_threads, MatrixXd* scores_new) {
  const int I = d.n_subjects, L = d.n_components;
  scores_new->resize(I, L);
  if (L == 0) return;

  parallel_for(I, n_threads, [&](int i) {
    SubjectPieces pieces;
    compute_subject_pieces(d, family, beta_old, scores_old, lambda_inv, dispersion, i, &pieces);
    const VectorXd a_new = beta_new.transpose() * d.covx.row(i).transpose();
    scores_new->row(i) = cholG[i].solve(pieces.t - pieces.C * a_new).transpose();
  });
}

MatrixXd penalty_blocks(int q, int M, const VectorXd& tau, const MatrixXd& P) {
  MatrixXd Ptau = MatrixXd::Zero(q * M, q * M);
  for (int r = 0; r < q; ++r) Ptau.block(r * M, r * M, M, M) = tau[r] * P;
  return Ptau;
}

}  // namespace

// ---------------------------------------------------------------------------
// design assembly

long long JointDesign::fixed_nnz() const {
  long long count = 0;
  for (int i = 0; i < n_subjects; ++i)
    for (int k = 0; k < n_grid; ++k) {
      if (!observed(i, k)) continue;
      int basis_nnz = 0;
      for (int m = 0; m < n_fixed_basis; ++m)
        if (B(k, m) != 0.0) ++basis_nnz;
      count += static_cast<long long>(n_covx) * basis_nnz;
    }
  return count;
}

long long JointDesign::random_nnz() const {
  long long n_obs = 0;
  for (int i = 0; i < n_subjects; ++i)
    for (int k = 0; k < n_grid; ++k)
      if (observed(i, k)) ++n_obs;
  return n_obs * n_components;
}

static JointDesign assemble_common(const LongDataset& data, const SplineBasis& fixed_basis) {
  JointDesign d;
  d.outcomes = data.outcomes;
  d.observed = data.observed;
  d.subject_ids = data.subject_ids;
  d.grid = data.grid;
  d.fixed_basis = fixed_basis;
  d.n_subjects = data.n_subjects();
  d.n_grid = data.n_grid();
  d.n_fixed_basis = fixed_basis.n_basis();
  d.n_covx = data.n_covariates() + 1;

  d.covx.resize(d.n_subjects, d.n_covx);
  d.covx.col(0).setOnes();
  if (data.n_covariates() > 0) d.covx.rightCols(data.n_covariates()) = data.covariates;

  d.B = fixed_basis.evaluate(data.grid);
  return d;
}

JointDesign assemble_joint_design(const LongDataset& data, const SplineBasis& fixed_basis,
                                  const EigenSystem& es) {
  if (es.grid.size() != data.grid.size() ||
      (es.grid - data.grid).cwiseAbs().maxCoeff() > 1e-10)
    throw ValidationError("joint design: eigensystem grid does not match the dataset grid");

  JointDesign d = assemble_common(data, fixed_basis);
  d.eigensystem = es;
  d.Phi = es.eigenfunctions;
  d.n_components = static_cast<int>(es.eigenfunctions.cols());
  return d;
}

JointDesign assemble_joint_design(const LongDataset& data, const SplineBasis& fixed_basis) {
  JointDesign d = assemble_common(data, fixed_basis);
  d.Phi.resize(d.n_grid, 0);
  d.n_components = 0;
  return d;
}

// ---------------------------------------------------------------------------
// penalized log-likelihood (verification hook and step-halving criterion)

double joint_penalized_loglik(const JointDesign& d, const Family& family,
                              const MatrixXd& beta_coefs, const MatrixXd& scores,
                              const VectorXd& lambda, const VectorXd& tau, MatrixXd* grad_beta,
                              MatrixXd* grad_scores) {
  const int I = d.n_subjects, K = d.n_grid, M = d.n_fixed_basis, L = d.n_components, q = d.n_covx;
  if (beta_coefs.rows() != q || beta_coefs.cols() != M)
    throw ValidationError("joint loglik: beta_coefs must be (p+1) x M");
  if (L > 0 && (scores.rows() != I || scores.cols() != L))
    throw ValidationError("joint loglik: scores must be I x L");

  const double phi = family.kind == FamilyKind::gaussian_identity ? family.dispersion : 1.0;
  const MatrixXd P = difference_penalty(M, 2).matrix;

  if (grad_beta) grad_beta->setZero(q, M);
  if (grad_scores) grad_scores->setZero(I, L);

  double ll = 0.0;
  for (int i = 0; i < I; ++i) {
    const VectorXd a = beta_coefs.transpose() * d.covx.row(i).transpose();
    for (int k = 0; k < K; ++k) {
      if (!d.observed(i, k)) continue;
      double eta = d.B.row(k).dot(a);
      if (L > 0) eta += d.Phi.row(k).dot(scores.row(i));
      const double z = d.outcomes(i, k);
      ll += family.log_density(z, eta);

      if (grad_beta || grad_scores) {
        const double score = (z - family.mean(eta)) / phi;
        if (grad_beta)
          for (int r = 0; r < q; ++r)
            grad_beta->row(r) += (score * d.covx(i, r)) * d.B.row(k);
        if (grad_scores) grad_scores->row(i) += score * d.Phi.row(k);
      }
    }
  }

  for (int r = 0; r < q; ++r) {
    const VectorXd br = beta_coefs.row(r).transpose();
    ll -= 0.5 * tau[r] * br.dot(P * br);
    if (grad_beta) grad_beta->row(r) -= tau[r] * (P * br).transpose();
  }
  if (L > 0) {
    for (int i = 0; i < I; ++i)
      for (int l = 0; l < L; ++l) {
        ll -= 0.5 * scores(i, l) * scores(i, l) / lambda[l];
        if (grad_scores) (*grad_scores)(i, l) -= scores(i, l) / lambda[l];
      }
  }
  return ll;
}

void pirls_solve_once(const JointDesign& d, const Family& family, const VectorXd& lambda,
                      const VectorXd& tau, double dispersion, const MatrixXd& beta_in,
                      const MatrixXd& scores_in, MatrixXd* beta_out, MatrixXd* scores_out) {
  const int M = d.n_fixed_basis, L = d.n_components, q = d.n_covx;
  VectorXd lambda_inv(L);
  for (int l = 0; l < L; ++l) lambda_inv[l] = 1.0 / lambda[l];

  SweepResult sweep;
  sweep_normal_equations(d, family, beta_in, scores_in, lambda_inv, dispersion, 64, 1, &sweep);

  const MatrixXd P = difference_penalty(M, 2).matrix;
  const MatrixXd Ptau = penalty_blocks(q, M, tau, P);
  const VectorXd beta_vec = (sweep.H0 + Ptau).ldlt().solve(sweep.r0);

  beta_out->resize(q, M);
  for (int r = 0; r < q; ++r) beta_out->row(r) = beta_vec.segment(r * M, M).transpose();

  sweep_scores(d, family, beta_in, scores_in, lambda_inv, dispersion, *beta_out, sweep.cholG, 1,
               scores_out);
}

// ---------------------------------------------------------------------------
// full fit

GcFpcaFit fit_joint(const JointDesign& d, const Family& family, const JointControls& controls) {
  const int I = d.n_subjects, K = d.n_grid, M = d.n_fixed_basis, L = d.n_components, q = d.n_covx;
  const int F = q * M;
  if (I < 1 || K < 1) throw ValidationError("joint fit: empty design");

  const MatrixXd P = difference_penalty(M, 2).matrix;
  const int penalty_rank = M - 2;

  // ---- state ----
  Family fam = family;  // local copy; Gaussian dispersion is updated in place
  MatrixXd beta = MatrixXd::Zero(q, M);
  MatrixXd scores = MatrixXd::Zero(I, L);
  VectorXd lambda(L);
  for (int l = 0; l < L; ++l)
    lambda[l] = std::max(L > 0 ? d.eigensystem.eigenvalues[l] : 1.0, 1e-8);
  VectorXd tau = VectorXd::Ones(q);
  if (!controls.estimate_tau) {
    if (controls.fixed_tau.size() == q)
      tau = controls.fixed_tau;
    else if (controls.fixed_tau.size() == 1)
      tau.setConstant(controls.fixed_tau[0]);
    else if (controls.fixed_tau.size() != 0)
      throw ValidationError("joint fit: fixed_tau must have length 1 or p+1");
  }

  int n_obs = 0;
  double z_var = 0.0, z_mean = 0.0;
  for (int i = 0; i < I; ++i)
    for (int k = 0; k < K; ++k)
      if (d.observed(i, k)) {
        ++n_obs;
        z_mean += d.outcomes(i, k);
      }
  if (n_obs == 0) throw ValidationError("joint fit: no observed outcomes");
  z_mean /= n_obs;
  for (int i = 0; i < I; ++i)
    for (int k = 0; k < K; ++k)
      if (d.observed(i, k)) z_var += (d.outcomes(i, k) - z_mean) * (d.outcomes(i, k) - z_mean);
  z_var /= std::max(n_obs - 1, 1);
  if (fam.kind == FamilyKind::gaussian_identity) fam.dispersion = std::max(z_var, 1e-8);

  GcFpcaFit fit;
  fit.family = family;
  fit.fixed_basis = d.fixed_basis;
  fit.eigensystem = d.eigensystem;
  fit.subject_ids = d.subject_ids;
  fit.covx = d.covx;
  fit.dropped_components.clear();

  VectorXd lambda_inv(L);
  SweepResult sweep;
  double monitor_prev = -std::numeric_limits<double>::infinity();
  double peak_before_fall = -std::numeric_limits<double>::infinity();
  int n_decreases = 0;
  bool converged = false;
  int outer = 0;

  for (outer = 0; outer < controls.max_outer; ++outer) {
    for (int l = 0; l < L; ++l) lambda_inv[l] = 1.0 / lambda[l];
    const MatrixXd Ptau = penalty_blocks(q, M, tau, P);

    // ---- penalized IRLS at fixed (lambda, tau, dispersion) ----
    double Q = joint_penalized_loglik(d, fam, beta, scores, lambda, tau, nullptr, nullptr);
    for (int inner = 0; inner < controls.max_inner; ++inner) {
      sweep_normal_equations(d, fam, beta, scores, lambda_inv, fam.dispersion,
                             controls.subject_block, controls.n_threads, &sweep);
      const VectorXd beta_vec = (sweep.H0 + Ptau).ldlt().solve(sweep.r0);
      MatrixXd beta_prop(q, M);
      for (int r = 0; r < q; ++r) beta_prop.row(r) = beta_vec.segment(r * M, M).transpose();
      MatrixXd scores_prop;
      sweep_scores(d, fam, beta, scores, lambda_inv, fam.dispersion, beta_prop, sweep.cholG,
                   controls.n_threads, &scores_prop);

      // Step-halve toward the previous iterate until the penalized
      // log-likelihood does not decrease.
      double Q_new = joint_penalized_loglik(d, fam, beta_prop, scores_prop, lambda, tau, nullptr,
                                            nullptr);
      int halvings = 0;
      while ((!std::isfinite(Q_new) || Q_new < Q - 1e-10 * (1.0 + std::abs(Q))) && halvings < 40) {
        beta_prop = 0.5 * (beta_prop + beta);
        if (L > 0) scores_prop = 0.5 * (scores_prop + scores);
        Q_new = joint_penalized_loglik(d, fam, beta_prop, scores_prop, lambda, tau, nullptr,
                                       nullptr);
        ++halvings;
      }
      if (!std::isfinite(Q_new)) break;

      double delta = (beta_prop - beta).cwiseAbs().maxCoeff();
      if (L > 0) delta = std::max(delta, (scores_prop - scores).cwiseAbs().maxCoeff());
      beta = std::move(beta_prop);
      scores = std::move(scores_prop);
      const bool done = std::abs(Q_new - Q) < controls.inner_tol * (1.0 + std::abs(Q)) ||
                        delta < 1e-8;
      Q = Q_new;
      if (done) break;
    }

    // Refresh the normal equations at the accepted state; the variance and
    // smoothing updates below all read from this sweep.
    sweep_normal_equations(d, fam, beta, scores, lambda_inv, fam.dispersion,
                           controls.subject_block, controls.n_threads, &sweep);

    // ---- divergence monitor: Laplace marginal log-likelihood ----
    double logdet_term = 0.0;
    if (L > 0) {
      double sum_log_lambda = 0.0;
      for (int l = 0; l < L; ++l) sum_log_lambda += std::log(lambda[l]);
      for (int i = 0; i < I; ++i) {
        double logdetG = 0.0;
        for (int l = 0; l < L; ++l) logdetG += 2.0 * std::log(sweep.cholG[i].matrixL()(l, l));
        logdet_term += sum_log_lambda + logdetG;
      }
    }
    const double monitor =
        joint_penalized_loglik(d, fam, beta, scores, lambda, VectorXd::Zero(q), nullptr, nullptr) -
        0.5 * logdet_term;
    fit.monitor_trace.push_back(monitor);
    if (monitor < monitor_prev - 1e-6 * std::max(1.0, std::abs(monitor_prev))) {
      if (n_decreases == 0) peak_before_fall = monitor_prev;
      if (++n_decreases >= 2) {
        // Two consecutive falls. The variance and smoothing updates each
        // maximize a surrogate, not this criterion directly, so it can
        // jitter once the fit has levelled off; a slide that stays within
        // the outer convergence scale of where it started is a plateau,
        // not divergence.
        if (peak_before_fall - monitor <
            controls.outer_tol * std::max(1.0, std::abs(peak_before_fall))) {
          converged = true;
          ++outer;
          break;
        }
        std::ostringstream trace;
        trace << "joint fit diverged: marginal criterion fell twice; trace =";
        for (double v : fit.monitor_trace) trace << " " << v;
        throw ConvergenceError(trace.str());
      }
    } else {
      n_decreases = 0;  // holding level or rising; earlier dips were transient
    }
    monitor_prev = monitor;

    // ---- variance component update (EM step on the Laplace posterior) ----
    double rel_change = 0.0;
    if (L > 0 && controls.estimate_lambda) {
      const MatrixXd eyeL = MatrixXd::Identity(L, L);
      VectorXd lambda_new = VectorXd::Zero(L);
      for (int i = 0; i < I; ++i) {
        const MatrixXd Ginv = sweep.cholG[i].solve(eyeL);
        for (int l = 0; l < L; ++l)
          lambda_new[l] += scores(i, l) * scores(i, l) + Ginv(l, l);
      }
      lambda_new /= static_cast<double>(I);
      for (int l = 0; l < L; ++l) {
        if (lambda_new[l] < controls.lambda_floor) {
          lambda_new[l] = controls.lambda_floor;
          if (std::find(fit.dropped_components.begin(), fit.dropped_components.end(), l) ==
              fit.dropped_components.end())
            fit.dropped_components.push_back(l);
        }
        rel_change = std::max(rel_change,
                              std::abs(lambda_new[l] - lambda[l]) / (std::abs(lambda[l]) + 1e-12));
      }
      lambda = lambda_new;
    }

    // ---- smoothing update: coordinate-wise restricted-likelihood search ----
    if (controls.estimate_tau && penalty_rank > 0) {
      // Only the fixed-effect block of the working restricted likelihood
      // depends on tau: 0.5 [ sum_r rank(P) log tau_r - logdet(H0 + P_tau)
      // + r0' beta(tau) ].
      const auto reml = [&](const VectorXd& tau_try) {
        const MatrixXd Pt = penalty_blocks(q, M, tau_try, P);
        const Eigen::LDLT<MatrixXd> ldlt(sweep.H0 + Pt);
        double logdet = 0.0;
        for (int j = 0; j < F; ++j) logdet += std::log(std::max(ldlt.vectorD()[j], 1e-300));
        double value = -0.5 * logdet + 0.5 * sweep.r0.dot(ldlt.solve(sweep.r0));
        for (int r = 0; r < q; ++r) value += 0.5 * penalty_rank * std::log(tau_try[r]);
        return value;
      };

      for (int r = 0; r < q; ++r) {
        VectorXd tau_try = tau;
        const auto profile = [&](double logt) {
          tau_try[r] = std::exp(logt);
          return -reml(tau_try);
        };
        // golden-section over log tau_r
        double a = -15.0, b = 25.0;
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
        double f1 = profile(x1), f2 = profile(x2);
        for (int it = 0; it < 60 && b - a > 1e-4; ++it) {
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
        }
        const double tau_new = std::exp(f1 < f2 ? x1 : x2);
        rel_change = std::max(rel_change, std::abs(tau_new - tau[r]) / (std::abs(tau[r]) + 1e-12));
        tau[r] = tau_new;
      }
    }

    // ---- Gaussian dispersion via residual sum of squares over edf ----
    if (fam.kind == FamilyKind::gaussian_identity) {
      double rss = 0.0;
      for (int i = 0; i < I; ++i) {
        const VectorXd a = beta.transpose() * d.covx.row(i).transpose();
        for (int k = 0; k < K; ++k) {
          if (!d.observed(i, k)) continue;
          double eta = d.B.row(k).dot(a);
          if (L > 0) eta += d.Phi.row(k).dot(scores.row(i));
          const double r = d.outcomes(i, k) - eta;
          rss += r * r;
        }
      }
      // Effective degrees of freedom of the penalized working model; the
      // random-effect part is computed subject by subject from the stored
      // Cholesky factors.
      const MatrixXd Ptau_now = penalty_blocks(q, M, tau, P);
      const Eigen::LDLT<MatrixXd> ldlt(sweep.H0 + Ptau_now);
      const MatrixXd Vf = ldlt.solve(MatrixXd::Identity(F, F));
      double edf = F - (Vf * Ptau_now).trace();
      if (L > 0) {
        const MatrixXd eyeL = MatrixXd::Identity(L, L);
        SubjectPieces pieces;
        for (int i = 0; i < I; ++i) {
          compute_subject_pieces(d, fam, beta, scores, lambda_inv, fam.dispersion, i, &pieces);
          MatrixXd Vbar = MatrixXd::Zero(M, M);
          for (int r1 = 0; r1 < q; ++r1)
            for (int r2 = 0; r2 < q; ++r2)
              Vbar += (d.covx(i, r1) * d.covx(i, r2)) * Vf.block(r1 * M, r2 * M, M, M);
          const MatrixXd Ginv = sweep.cholG[i].solve(eyeL);
          const MatrixXd Di = pieces.C * Vbar * pieces.C.transpose();
          const MatrixXd inner = Ginv + Ginv * Di * Ginv;
          double term = 0.0;
          for (int l = 0; l < L; ++l) term += inner(l, l) * lambda_inv[l];
          edf += L - term;
        }
      }
      const double disp_new = std::max(rss / std::max(n_obs - edf, 1.0), 1e-12);
      rel_change = std::max(rel_change,
                            std::abs(disp_new - fam.dispersion) / (fam.dispersion + 1e-12));
      fam.dispersion = disp_new;
      fit.edf = edf;
    }

    if (rel_change < controls.outer_tol) {
      converged = true;
      ++outer;
      break;
    }
  }

  // Final pass so every reported quantity reflects the final state.
  for (int l = 0; l < L; ++l) lambda_inv[l] = 1.0 / lambda[l];
  sweep_normal_equations(d, fam, beta, scores, lambda_inv, fam.dispersion, controls.subject_block,
                         controls.n_threads, &sweep);
  const MatrixXd Ptau = penalty_blocks(q, M, tau, P);
  const Eigen::LDLT<MatrixXd> ldlt(sweep.H0 + Ptau);
  MatrixXd Vf = ldlt.solve(MatrixXd::Identity(F, F));
  Vf = 0.5 * (Vf + Vf.transpose());

  // Non-Gaussian families report edf too (for diagnostics).
  if (fam.kind != FamilyKind::gaussian_identity) {
    double edf = F - (Vf * Ptau).trace();
    if (L > 0) {
      const MatrixXd eyeL = MatrixXd::Identity(L, L);
      SubjectPieces pieces;
      for (int i = 0; i < I; ++i) {
        compute_subject_pieces(d, fam, beta, scores, lambda_inv, fam.dispersion, i, &pieces);
        MatrixXd Vbar = MatrixXd::Zero(M, M);
        for (int r1 = 0; r1 < q; ++r1)
          for (int r2 = 0; r2 < q; ++r2)
            Vbar += (d.covx(i, r1) * d.covx(i, r2)) * Vf.block(r1 * M, r2 * M, M, M);
        const MatrixXd Ginv = sweep.cholG[i].solve(eyeL);
        const MatrixXd Di = pieces.C * Vbar * pieces.C.transpose();
        const MatrixXd inner = Ginv + Ginv * Di * Ginv;
        double term = 0.0;
        for (int l = 0; l < L; ++l) term += inner(l, l) * lambda_inv[l];
        edf += L - term;
      }
    }
    fit.edf = edf;
  }

  double logdet_term = 0.0;
  if (L > 0) {
    double sum_log_lambda = 0.0;
    for (int l = 0; l < L; ++l) sum_log_lambda += std::log(lambda[l]);
    for (int i = 0; i < I; ++i) {
      double logdetG = 0.0;
      for (int l = 0; l < L; ++l) logdetG += 2.0 * std::log(sweep.cholG[i].matrixL()(l, l));
      logdet_term += sum_log_lambda + logdetG;
    }
  }
  fit.log_likelihood =
      joint_penalized_loglik(d, fam, beta, scores, lambda, VectorXd::Zero(q), nullptr, nullptr) -
      0.5 * logdet_term;

  fit.beta_coefs = beta;
  fit.coef_cov = Vf;
  fit.lambda = lambda;
  fit.scores = scores;
  fit.smoothing = tau;
  fit.converged = converged;
  fit.n_outer = outer;
  fit.dispersion = fam.dispersion;
  fit.family.dispersion = fam.dispersion;

  fit.workspace.subject_block_bytes =
      static_cast<std::size_t>(I) * L * L * sizeof(double);
  fit.workspace.reduction_bytes = sweep.reduction_bytes;
  fit.workspace.fixed_block_bytes = static_cast<std::size_t>(3) * F * F * sizeof(double);
  fit.workspace.scratch_bytes = sweep.scratch_bytes;
  return fit;
}

// ---------------------------------------------------------------------------
// bands and prediction

std::vector<CurveBand> fixed_effect_curves(const GcFpcaFit& fit, const VectorXd& points,
                                           double level) {
  if (!(level > 0.0) || !(level < 1.0))
    throw ValidationError("fixed_effect_curves: level must lie in (0, 1)");
  const int q = static_cast<int>(fit.beta_coefs.rows());
  const int M = static_cast<int>(fit.beta_coefs.cols());
  const MatrixXd Bpts = fit.fixed_basis.evaluate(points);
  const double z = normal_quantile(0.5 * (1.0 + level));

  std::vector<CurveBand> out(q);
  for (int r = 0; r < q; ++r) {
    const MatrixXd Vr = fit.coef_cov.block(r * M, r * M, M, M);
    CurveBand& band = out[r];
    band.estimate = Bpts * fit.beta_coefs.row(r).transpose();
    band.se.resize(points.size());
    for (Eigen::Index j = 0; j < points.size(); ++j) {
      const VectorXd b = Bpts.row(j).transpose();
      band.se[j] = std::sqrt(std::max(b.dot(Vr * b), 0.0));
    }
    band.lower = band.estimate - z * band.se;
    band.upper = band.estimate + z * band.se;
  }
  return out;
}

CmaBand cma_bands(const GcFpcaFit& fit, int r, const VectorXd& points, double level, int n_draws,
                  std::uint64_t seed, int n_threads) {
  if (n_draws < 1000) throw ValidationError("cma_bands: need at least 1000 draws");
  const int q = static_cast<int>(fit.beta_coefs.rows());
  const int M = static_cast<int>(fit.beta_coefs.cols());
  if (r < 0 || r >= q) throw ValidationError("cma_bands: covariate index out of range");

  const MatrixXd Bpts = fit.fixed_basis.evaluate(points);
  const MatrixXd Vr = fit.coef_cov.block(r * M, r * M, M, M);

  CmaBand band;
  band.estimate = Bpts * fit.beta_coefs.row(r).transpose();
  band.se.resize(points.size());
  for (Eigen::Index j = 0; j < points.size(); ++j) {
    const VectorXd b = Bpts.row(j).transpose();
    band.se[j] = std::sqrt(std::max(b.dot(Vr * b), 0.0));
  }

  // Symmetric square root through the eigendecomposition; a singular (or
  // slightly indefinite) covariance degrades to its positive part.
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Vr);
  const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
  VectorXd sqrt_vals(M);
  for (int m = 0; m < M; ++m) {
    if (eig.eigenvalues()[m] < -1e-10 * std::max(top, 1e-300)) band.pseudo_sqrt = true;
    sqrt_vals[m] = std::sqrt(std::max(eig.eigenvalues()[m], 0.0));
  }
  if (top <= 0.0) band.pseudo_sqrt = true;
  const MatrixXd root = eig.eigenvectors() * sqrt_vals.asDiagonal();

  const double z = normal_quantile(0.5 * (1.0 + level));
  std::vector<double> stats(n_draws, 0.0);
  parallel_for(n_draws, n_threads, [&](int draw) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(draw)));
    VectorXd g(M);
    for (int m = 0; m < M; ++m) g[m] = rng.normal();
    const VectorXd sample = Bpts * (root * g);
    double stat = 0.0;
    for (Eigen::Index j = 0; j < points.size(); ++j)
      if (band.se[j] > 1e-300) stat = std::max(stat, std::abs(sample[j]) / band.se[j]);
    stats[draw] = stat;
  });

  // A simultaneous band is never narrower than the pointwise one.
  band.multiplier = std::max(quantile(stats, level), z);
  band.lower = band.estimate - band.multiplier * band.se;
  band.upper = band.estimate + band.multiplier * band.se;
  return band;
}

MatrixXd predict_linear_predictor(const GcFpcaFit& fit, const std::vector<std::string>& subjects,
                                  const VectorXd& points, bool response_scale) {
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < fit.subject_ids.size(); ++i)
    index[fit.subject_ids[i]] = static_cast<int>(i);

  const MatrixXd Bpts = fit.fixed_basis.evaluate(points);
  const int L = static_cast<int>(fit.scores.cols());
  MatrixXd Phipts;
  if (L > 0) Phipts = evaluate_eigenfunctions(fit.eigensystem, points);

  MatrixXd out(subjects.size(), points.size());
  for (size_t s = 0; s < subjects.size(); ++s) {
    const auto it = index.find(subjects[s]);
    if (it == index.end())
      throw ValidationError("predict: unknown subject '" + subjects[s] + "'");
    const int i = it->second;
    const VectorXd a = fit.beta_coefs.transpose() * fit.covx.row(i).transpose();
    VectorXd eta = Bpts * a;
    if (L > 0) eta += Phipts * fit.scores.row(i).transpose();
    if (response_scale)
      for (Eigen::Index j = 0; j < eta.size(); ++j) eta[j] = fit.family.mean(eta[j]);
    out.row(s) = eta.transpose();
  }
  return out;
}

}  // namespace gcfpca
