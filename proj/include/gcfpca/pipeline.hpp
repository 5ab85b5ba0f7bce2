#pragma once

#include "gcfpca/binning.hpp"
#include "gcfpca/data.hpp"
#include "gcfpca/family.hpp"
#include "gcfpca/fpca.hpp"
#include "gcfpca/joint_glmm.hpp"
#include "gcfpca/local_glmm.hpp"

namespace gcfpca {

// Everything needed to run the four estimation stages end to end:
// window the grid, fit the local models, extract the eigensystem from the
// assembled random effects, then fit the joint model.
struct PipelineOptions {
  Family family = Family::gaussian(1.0);
  double bin_fraction = 0.05;
  bool cyclic_bins = true;
  int n_fixed_basis = 14;  // M, joint-model spline dimension per covariate
  Truncation truncation;
  FpcaControls fpca;
  LocalControls local;
  JointControls joint;
  int n_threads = 0;
};

struct StageTimings {
  double binning_s = 0.0;
  double local_s = 0.0;
  double fpca_s = 0.0;
  double joint_s = 0.0;
};

struct PipelineResult {
  GcFpcaFit fit;
  BinSet bins;
  BinFitResult local_fits;
  RandomEffectMatrix random_effects;
  StageTimings timings;
};

PipelineResult fit_gcfpca(const LongDataset& data, const PipelineOptions& options);

}  // namespace gcfpca
