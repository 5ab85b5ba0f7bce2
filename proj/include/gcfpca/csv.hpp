#pragma once

#include <string>
#include <vector>

#include "gcfpca/data.hpp"
#include "gcfpca/joint_glmm.hpp"
#include "gcfpca/pipeline.hpp"
#include "gcfpca/simlab.hpp"

namespace gcfpca {

// Shortest decimal form that round-trips the double (17 significant digits),
// so identical fits produce byte-identical files.
std::string format_full(double v);

// Every output file starts with two comment lines: the library version and
// the fully resolved run configuration as single-line JSON.
std::string file_header(const std::string& config_json);

// s, then per covariate r: estimate, se, pointwise lower/upper, simultaneous
// lower/upper.
void write_beta_curves_csv(const std::string& path, const std::string& config_json,
                           const VectorXd& points, const std::vector<CurveBand>& pointwise,
                           const std::vector<CmaBand>& simultaneous);

void write_eigenfunctions_csv(const std::string& path, const std::string& config_json,
                              const EigenSystem& es);

// component, eigenvalue, cumulative variance fraction.
void write_eigenvalues_csv(const std::string& path, const std::string& config_json,
                           const EigenSystem& es);

void write_scores_csv(const std::string& path, const std::string& config_json,
                      const std::vector<std::string>& subject_ids, const MatrixXd& scores);

// Run record: configuration, tolerances, iteration counts, per-stage timings,
// variance decomposition, convergence flags, solver allocation accounting.
// The timings make this file run-dependent; the CSV outputs are the
// byte-stable surface.
void write_fit_meta_json(const std::string& path, const std::string& config_json,
                         const PipelineResult& result, double level, int cma_draws);

// Long format `subject_id,s,value[,x1..xp]`; masked cells are omitted, so a
// written file loads back (with the missing-at-random flag when incomplete)
// to a bit-identical dataset.
void write_dataset_csv(const std::string& path, const std::string& config_json,
                       const LongDataset& data);

// s, true coefficient curves, true eigenfunctions.
void write_truth_curves_csv(const std::string& path, const std::string& config_json,
                            const VectorXd& grid, const SimTruth& truth);
void write_truth_scores_csv(const std::string& path, const std::string& config_json,
                            const std::vector<std::string>& subject_ids, const SimTruth& truth);
// Long format `subject_id,s,eta`.
void write_truth_eta_csv(const std::string& path, const std::string& config_json,
                         const std::vector<std::string>& subject_ids, const VectorXd& grid,
                         const SimTruth& truth);

// One row per replicate plus a closing median row.
void write_replicate_metrics_csv(const std::string& path, const std::string& config_json,
                                 const ReplicationSummary& summary);

// Summary-table layout, one row per scenario of median metrics:
// scenario, I, K, time (minutes), MISE(eta) x10, ISE(beta0) x100, AC(beta0),
// ISE(beta1) x100, AC(beta1), MISE(phi) x10.
void write_summary_table_csv(const std::string& path, const std::string& config_json,
                             const std::vector<ReplicationSummary>& summaries);

}  // namespace gcfpca
