#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gcfpca/errors.hpp"
#include "gcfpca/family.hpp"

namespace gcfpca {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MatrixXb = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Long-format functional observations on a shared grid. Outcomes are stored
// densely with an observation mask; covariates are one row per subject.
struct LongDataset {
  std::vector<std::string> subject_ids;  // I entries, unique
  VectorXd grid;                         // K strictly increasing locations
  MatrixXd outcomes;                     // I x K, meaningful where observed
  MatrixXb observed;                     // I x K
  MatrixXd covariates;                   // I x p (p may be 0)
  std::optional<Family> family_hint;

  Eigen::Index n_subjects() const { return outcomes.rows(); }
  Eigen::Index n_grid() const { return outcomes.cols(); }
  Eigen::Index n_covariates() const { return covariates.cols(); }

  double missing_fraction() const {
    if (observed.size() == 0) return 0.0;
    return 1.0 - static_cast<double>(observed.count()) / static_cast<double>(observed.size());
  }

  // Shape consistency plus outcome-range checks for the discrete families.
  void validate(std::optional<Family> family = std::nullopt) const;
};

// Raw multi-day continuous measurements for one subject, prior to
// thresholding and across-day aggregation.
struct MultiDayProfile {
  std::string subject_id;
  std::vector<VectorXd> days;    // each of length K
  std::vector<bool> valid_day;   // same length as days
};

}  // namespace gcfpca
