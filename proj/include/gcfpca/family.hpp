#pragma once

#include <cmath>
#include <string>

#include "gcfpca/errors.hpp"

namespace gcfpca {

enum class FamilyKind { gaussian_identity, bernoulli_logit, poisson_log };

// Exponential family with canonical link. `dispersion` is the Gaussian
// residual variance; it is identically 1 for Bernoulli and Poisson.
struct Family {
  FamilyKind kind = FamilyKind::gaussian_identity;
  double dispersion = 1.0;

  static Family gaussian(double sigma2 = 1.0) { return {FamilyKind::gaussian_identity, sigma2}; }
  static Family bernoulli() { return {FamilyKind::bernoulli_logit, 1.0}; }
  static Family poisson() { return {FamilyKind::poisson_log, 1.0}; }

  double mean(double eta) const {
    switch (kind) {
      case FamilyKind::gaussian_identity: return eta;
      case FamilyKind::bernoulli_logit: return 1.0 / (1.0 + std::exp(-eta));
      case FamilyKind::poisson_log: return std::exp(eta);
    }
    return eta;
  }

  double link(double mu) const {
    switch (kind) {
      case FamilyKind::gaussian_identity: return mu;
      case FamilyKind::bernoulli_logit: return std::log(mu / (1.0 - mu));
      case FamilyKind::poisson_log: return std::log(mu);
    }
    return mu;
  }

  // dmu/deta; for canonical links this is also Var(Z)/dispersion.
  double mu_eta(double eta) const {
    switch (kind) {
      case FamilyKind::gaussian_identity: return 1.0;
      case FamilyKind::bernoulli_logit: {
        const double m = mean(eta);
        return m * (1.0 - m);
      }
      case FamilyKind::poisson_log: return std::exp(eta);
    }
    return 1.0;
  }

  // Derivative of mu_eta with respect to eta (third cumulant derivative).
  double dmu_eta(double eta) const {
    switch (kind) {
      case FamilyKind::gaussian_identity: return 0.0;
      case FamilyKind::bernoulli_logit: {
        const double m = mean(eta);
        return m * (1.0 - m) * (1.0 - 2.0 * m);
      }
      case FamilyKind::poisson_log: return std::exp(eta);
    }
    return 0.0;
  }

  double log_density(double z, double eta) const {
    switch (kind) {
      case FamilyKind::gaussian_identity: {
        const double r = z - eta;
        return -0.5 * r * r / dispersion - 0.5 * std::log(2.0 * M_PI * dispersion);
      }
      case FamilyKind::bernoulli_logit:
        // z*eta - log(1+exp(eta)), stable for large |eta|.
        return z * eta - (eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)));
      case FamilyKind::poisson_log:
        return z * eta - std::exp(eta) - std::lgamma(z + 1.0);
    }
    return 0.0;
  }

  std::string name() const {
    switch (kind) {
      case FamilyKind::gaussian_identity: return "gaussian";
      case FamilyKind::bernoulli_logit: return "bernoulli";
      case FamilyKind::poisson_log: return "poisson";
    }
    return "unknown";
  }
};

inline Family parse_family(const std::string& s, double gaussian_sigma2 = 1.0) {
  if (s == "gaussian" || s == "gaussian_identity") return Family::gaussian(gaussian_sigma2);
  if (s == "bernoulli" || s == "binomial" || s == "bernoulli_logit") return Family::bernoulli();
  if (s == "poisson" || s == "poisson_log") return Family::poisson();
  throw ValidationError("unknown family: " + s);
}

}  // namespace gcfpca
