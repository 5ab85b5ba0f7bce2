#include "gcfpca/basis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gcfpca {

namespace {

constexpr double kDomainTol = 1e-10;

// The d+1 B-spline functions that are nonzero on span [knots[mu], knots[mu+1]),
// written into N[0..d]; N[r] is function number mu - d + r. Standard
// triangular recurrence; knots may contain repeats (clamped ends).
void basis_funs(const VectorXd& knots, int mu, double s, int d, double* N) {
  N[0] = 1.0;
  double left[8], right[8];  // degree is validated to be small
  for (int j = 1; j <= d; ++j) {
    left[j] = s - knots[mu + 1 - j];
    right[j] = knots[mu + j] - s;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = N[r] / (right[r + 1] + left[j - r]);
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
}

double binomial(int n, int k) {
  double v = 1.0;
  for (int i = 0; i < k; ++i) v = v * (n - i) / (i + 1);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

SplineBasis SplineBasis::uniform(double a, double b, int n_basis, int degree, bool cyclic) {
  if (!(b > a)) throw ValidationError("spline basis: domain must satisfy a < b");
  if (degree < 0 || degree > 7) throw ValidationError("spline basis: degree must be in [0, 7]");
  if (n_basis < degree + 1)
    throw ValidationError("spline basis: n_basis must be at least degree + 1, got " +
                          std::to_string(n_basis));

  SplineBasis basis;
  basis.a_ = a;
  basis.b_ = b;
  basis.degree_ = degree;
  basis.n_basis_ = n_basis;
  basis.cyclic_ = cyclic;

  if (cyclic) {
    // Uniform knots with period b - a, extended degree knots past each end so
    // every point of [a, b) lies in a full-support span.
    const double h = (b - a) / n_basis;
    const int n_knots = n_basis + 2 * degree + 1;
    basis.knots_.resize(n_knots);
    for (int j = 0; j < n_knots; ++j) basis.knots_[j] = a + (j - degree) * h;
  } else {
    // Clamped: boundary knots repeated degree + 1 times, uniform interior.
    const int n_interior = n_basis - degree - 1;
    const double h = (b - a) / (n_interior + 1);
    const int n_knots = n_basis + degree + 1;
    basis.knots_.resize(n_knots);
    for (int j = 0; j < n_knots; ++j) {
      if (j <= degree)
        basis.knots_[j] = a;
      else if (j >= n_knots - degree - 1)
        basis.knots_[j] = b;
      else
        basis.knots_[j] = a + (j - degree) * h;
    }
  }
  return basis;
}

SplineBasis SplineBasis::from_interior_knots(double a, double b,
                                             const std::vector<double>& interior, int degree) {
  if (!(b > a)) throw ValidationError("spline basis: domain must satisfy a < b");
  if (degree < 0 || degree > 7) throw ValidationError("spline basis: degree must be in [0, 7]");
  double prev = a;
  for (double t : interior) {
    if (!(t > prev) || !(t < b))
      throw ValidationError("spline basis: interior knots must be strictly increasing inside (a, b)");
    prev = t;
  }

  SplineBasis basis;
  basis.a_ = a;
  basis.b_ = b;
  basis.degree_ = degree;
  basis.cyclic_ = false;
  basis.n_basis_ = static_cast<int>(interior.size()) + degree + 1;

  const int n_knots = basis.n_basis_ + degree + 1;
  basis.knots_.resize(n_knots);
  for (int j = 0; j < n_knots; ++j) {
    if (j <= degree)
      basis.knots_[j] = a;
    else if (j >= n_knots - degree - 1)
      basis.knots_[j] = b;
    else
      basis.knots_[j] = interior[j - degree - 1];
  }
  return basis;
}

// ---------------------------------------------------------------------------
// evaluation

VectorXd SplineBasis::evaluate_point(double s) const {
  if (s < a_ - kDomainTol || s > b_ + kDomainTol)
    throw ValidationError("spline basis: point " + std::to_string(s) + " outside domain [" +
                          std::to_string(a_) + ", " + std::to_string(b_) + "]");
  s = std::min(std::max(s, a_), b_);

  VectorXd row = VectorXd::Zero(n_basis_);
  double N[8];

  if (cyclic_) {
    // s == b is the same circle point as s == a.
    if (s >= b_) s = a_;
    const double h = (b_ - a_) / n_basis_;
    int mu = degree_ + static_cast<int>((s - a_) / h);
    mu = std::min(std::max(mu, degree_), n_basis_ + degree_ - 1);
    // Guard against floating point landing in the neighbouring span.
    while (s < knots_[mu]) --mu;
    while (s >= knots_[mu + 1]) ++mu;
    basis_funs(knots_, mu, s, degree_, N);
    for (int r = 0; r <= degree_; ++r) {
      const int unwrapped = mu - degree_ + r;
      row[unwrapped % n_basis_] += N[r];
    }
  } else {
    // Last valid span index is n_basis_ - 1; s == b falls in it.
    const double* begin = knots_.data();
    const double* end = begin + knots_.size();
    int mu = static_cast<int>(std::upper_bound(begin, end, s) - begin) - 1;
    mu = std::min(std::max(mu, degree_), n_basis_ - 1);
    basis_funs(knots_, mu, s, degree_, N);
    for (int r = 0; r <= degree_; ++r) row[mu - degree_ + r] = N[r];
  }
  return row;
}

MatrixXd SplineBasis::evaluate(const VectorXd& points) const {
  MatrixXd out(points.size(), n_basis_);
  for (Eigen::Index i = 0; i < points.size(); ++i) out.row(i) = evaluate_point(points[i]);
  return out;
}

// ---------------------------------------------------------------------------
// difference penalty

PenaltyMatrix difference_penalty(int n_basis, int order, bool cyclic) {
  if (n_basis < 2) throw ValidationError("difference penalty: n_basis must be at least 2");
  if (order < 1 || order >= n_basis)
    throw ValidationError("difference penalty: order must be in [1, n_basis - 1]");

  // Row of the order-th difference operator: alternating-sign binomials.
  VectorXd coef(order + 1);
  for (int k = 0; k <= order; ++k) coef[k] = ((order - k) % 2 == 0 ? 1.0 : -1.0) * binomial(order, k);

  MatrixXd D;
  if (cyclic) {
    D = MatrixXd::Zero(n_basis, n_basis);
    for (int i = 0; i < n_basis; ++i)
      for (int k = 0; k <= order; ++k) D(i, (i + k) % n_basis) += coef[k];
  } else {
    D = MatrixXd::Zero(n_basis - order, n_basis);
    for (int i = 0; i < n_basis - order; ++i)
      for (int k = 0; k <= order; ++k) D(i, i + k) = coef[k];
  }

  PenaltyMatrix penalty;
  penalty.order = order;
  penalty.matrix = D.transpose() * D;
  return penalty;
}

// ---------------------------------------------------------------------------
// closed-form systems

MatrixXd evaluate_closed_form_basis(ClosedFormBasisKind kind, int n_functions,
                                    const VectorXd& points) {
  if (n_functions < 1 || n_functions > 4)
    throw ValidationError("closed-form basis: n_functions must be in [1, 4]");

  const double pi = 3.14159265358979323846;
  MatrixXd out(points.size(), n_functions);
  for (Eigen::Index i = 0; i < points.size(); ++i) {
    const double s = points[i];
    double vals[4];
    if (kind == ClosedFormBasisKind::fourier) {
      vals[0] = std::sqrt(2.0) * std::sin(2.0 * pi * s);
      vals[1] = std::sqrt(2.0) * std::cos(2.0 * pi * s);
      vals[2] = std::sqrt(2.0) * std::sin(4.0 * pi * s);
      vals[3] = std::sqrt(2.0) * std::cos(4.0 * pi * s);
    } else {
      vals[0] = 1.0;
      vals[1] = std::sqrt(3.0) * (2.0 * s - 1.0);
      vals[2] = std::sqrt(5.0) * (6.0 * s * s - 6.0 * s + 1.0);
      vals[3] = std::sqrt(7.0) * (20.0 * s * s * s - 30.0 * s * s + 12.0 * s - 1.0);
    }
    for (int l = 0; l < n_functions; ++l) out(i, l) = vals[l];
  }
  return out;
}

}  // namespace gcfpca
