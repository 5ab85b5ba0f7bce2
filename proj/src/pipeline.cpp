#include "gcfpca/pipeline.hpp"

#include <chrono>

#include "gcfpca/errors.hpp"

namespace gcfpca {

namespace {
double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}
}  // namespace

PipelineResult fit_gcfpca(const LongDataset& data, const PipelineOptions& options) {
  data.validate(options.family);

  PipelineResult result;
  auto tic = std::chrono::steady_clock::now();

  result.bins = make_bins(data.n_grid(), options.bin_fraction, options.cyclic_bins);
  result.timings.binning_s = seconds_since(tic);

  tic = std::chrono::steady_clock::now();
  LocalControls local = options.local;
  result.local_fits = fit_all_bins(data, result.bins, options.family, local, options.n_threads);
  result.random_effects =
      assemble_random_effect_matrix(result.local_fits, data.n_subjects(), data.n_grid());
  result.timings.local_s = seconds_since(tic);

  tic = std::chrono::steady_clock::now();
  const bool complete = result.random_effects.valid.all();
  const EigenSystem es =
      estimate_eigensystem(result.random_effects.values, data.grid, options.truncation,
                           options.fpca, complete ? nullptr : &result.random_effects.valid);
  result.timings.fpca_s = seconds_since(tic);

  tic = std::chrono::steady_clock::now();
  const SplineBasis fixed_basis =
      SplineBasis::uniform(data.grid.minCoeff(), data.grid.maxCoeff(), options.n_fixed_basis);
  const JointDesign design = assemble_joint_design(data, fixed_basis, es);
  JointControls joint = options.joint;
  joint.n_threads = options.n_threads;
  result.fit = fit_joint(design, options.family, joint);
  result.timings.joint_s = seconds_since(tic);

  return result;
}

}  // namespace gcfpca
