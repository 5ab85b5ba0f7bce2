#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gcfpca/errors.hpp"

namespace gcfpca {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// B-spline basis on a closed interval. Non-cyclic bases are clamped (boundary
// knots repeated degree+1 times) so that n_basis = knots.size() - degree - 1
// and the evaluated rows form a partition of unity. Cyclic bases use uniform
// knots extended past the period; the M distinct functions wrap around.
class SplineBasis {
 public:
  // Empty basis; usable only as a placeholder until assigned.
  SplineBasis() = default;

  // Builds a basis with uniform interior knots spanning [a, b].
  static SplineBasis uniform(double a, double b, int n_basis, int degree = 3,
                             bool cyclic = false);
  // Non-cyclic basis from explicit interior knots (boundary clamping applied).
  static SplineBasis from_interior_knots(double a, double b, const std::vector<double>& interior,
                                         int degree = 3);

  int n_basis() const { return n_basis_; }
  int degree() const { return degree_; }
  bool cyclic() const { return cyclic_; }
  double domain_min() const { return a_; }
  double domain_max() const { return b_; }
  const VectorXd& knots() const { return knots_; }

  // All basis functions at one point; length n_basis.
  VectorXd evaluate_point(double s) const;

  // Design matrix [n_points x n_basis]. Throws on out-of-domain points.
  MatrixXd evaluate(const VectorXd& points) const;

 private:
  double a_ = 0.0, b_ = 1.0;
  int degree_ = 3;
  int n_basis_ = 0;
  bool cyclic_ = false;
  VectorXd knots_;  // full knot vector (clamped, or extended when cyclic)
};

// P = D'D for the order-th difference operator D; symmetric PSD with rank
// M - order (non-cyclic) or M - 1 (cyclic, wrapped differences).
struct PenaltyMatrix {
  int order = 2;
  MatrixXd matrix;
};

PenaltyMatrix difference_penalty(int n_basis, int order = 2, bool cyclic = false);

// Closed-form orthonormal systems on [0,1] used as simulation truth.
enum class ClosedFormBasisKind { fourier, orthogonal_polynomial };

struct ClosedFormBasis {
  ClosedFormBasisKind kind = ClosedFormBasisKind::fourier;
  int n_functions = 4;
};

// Analytic evaluation, columns in the fixed catalog order. L <= 4.
MatrixXd evaluate_closed_form_basis(ClosedFormBasisKind kind, int n_functions,
                                    const VectorXd& points);

}  // namespace gcfpca
