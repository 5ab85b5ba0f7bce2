#include "gcfpca/simlab.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "gcfpca/errors.hpp"
#include "gcfpca/parallel.hpp"
#include "gcfpca/rng.hpp"
#include "gcfpca/stats.hpp"

namespace gcfpca {

using nlohmann::json;

// ---------------------------------------------------------------------------
// scenario defaults

VectorXd SimScenario::default_true_lambda() {
  VectorXd lambda(4);
  lambda << 1.0, 0.5, 0.25, 0.125;
  return lambda;
}

// Frozen default truth curves: a single N(0,1) draw (recorded generator seed
// 20250814) scaled by 0.85, plus second-difference bumps on the clustered-knot
// coefficients (weight 0.5 on the intercept curve, 0.65 on the covariate
// curve) so each curve carries a sharp local feature, and an intercept shift
// of 0.3587185683935922 putting the Bernoulli scenario's marginal event rate
// at ~0.52. The shift moves the whole curve because the basis sums to one at
// every point.
MatrixXd SimScenario::default_truth_coefs() {
  MatrixXd coefs(2, 14);
  coefs << -0.8363707289275925, -0.5481620505346071, 0.581141769917596,
      -0.011880196597720827, 1.1691477054420147, -2.013395460362918, 0.17730684597914625,
      0.05205610636387581, 0.13073869706681066, 0.6812600454923682, 0.0987500905378147,
      -0.27325819187371203, 0.06596614835696502, 0.6698063641822727,  //
      0.8176000273056765, -0.7382604556088223, -1.7985132411358848, -0.6317673002218167,
      0.4017265128086475, 0.18961764978280515, 1.546208626747906, -0.26321890442399726,
      -0.4761678441271634, 1.4346747891070988, 0.3652239171922213, -0.5666187117753135,
      -0.24640617007023496, 0.314416184609249;
  return coefs;
}

// Cubic with a knot cluster around s = 0.33: the default truth curves have a
// feature there that is finer than a uniform-knot fit basis of the same
// dimension can represent, so fitted curves carry genuine smoothing bias.
SplineBasis SimScenario::truth_basis() {
  return SplineBasis::from_interior_knots(
      0.0, 1.0, {0.08, 0.16, 0.24, 0.30, 0.33, 0.36, 0.40, 0.55, 0.70, 0.85});
}

// ---------------------------------------------------------------------------
// JSON round trip

namespace {

std::string covariate_name(CovariateKind kind) {
  return kind == CovariateKind::bernoulli_half ? "bernoulli_half" : "standard_normal";
}

CovariateKind parse_covariate(const std::string& name) {
  if (name == "bernoulli_half") return CovariateKind::bernoulli_half;
  if (name == "standard_normal") return CovariateKind::standard_normal;
  throw ValidationError("scenario: unknown covariate_kind '" + name + "'");
}

std::string eigenbasis_name(ClosedFormBasisKind kind) {
  return kind == ClosedFormBasisKind::fourier ? "fourier" : "orthogonal_polynomial";
}

ClosedFormBasisKind parse_eigenbasis(const std::string& name) {
  if (name == "fourier") return ClosedFormBasisKind::fourier;
  if (name == "orthogonal_polynomial") return ClosedFormBasisKind::orthogonal_polynomial;
  throw ValidationError("scenario: unknown eigenbasis '" + name + "'");
}

}  // namespace

std::string scenario_to_json(const SimScenario& sc) {
  json j;
  j["id"] = sc.id;
  j["I"] = sc.I;
  j["K"] = sc.K;
  j["family"] = sc.family.name();
  if (sc.family.kind == FamilyKind::gaussian_identity) j["gaussian_sd"] = sc.gaussian_sd;
  j["eigenbasis"] = eigenbasis_name(sc.eigenbasis);
  j["covariate_kind"] = covariate_name(sc.covariate_kind);
  j["true_lambda"] = std::vector<double>(sc.true_lambda.data(),
                                         sc.true_lambda.data() + sc.true_lambda.size());
  std::vector<std::vector<double>> coefs(sc.truth_coefs.rows());
  for (Eigen::Index r = 0; r < sc.truth_coefs.rows(); ++r) {
    coefs[static_cast<std::size_t>(r)].resize(static_cast<std::size_t>(sc.truth_coefs.cols()));
    for (Eigen::Index m = 0; m < sc.truth_coefs.cols(); ++m) {
      coefs[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)] = sc.truth_coefs(r, m);
    }
  }
  j["truth_coefs"] = coefs;
  j["bin_fraction"] = sc.bin_fraction;
  j["seed"] = sc.seed;
  return j.dump(2);
}

SimScenario scenario_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("scenario: invalid JSON: ") + e.what());
  }

  SimScenario sc;
  try {
    if (j.contains("id")) sc.id = j["id"].get<std::string>();
    if (j.contains("I")) sc.I = j["I"].get<int>();
    if (j.contains("K")) sc.K = j["K"].get<int>();
    if (j.contains("family"))
      sc.family = parse_family(j["family"].get<std::string>(),
                               j.value("gaussian_sd", 1.0) * j.value("gaussian_sd", 1.0));
    if (j.contains("gaussian_sd")) sc.gaussian_sd = j["gaussian_sd"].get<double>();
    if (j.contains("eigenbasis")) sc.eigenbasis = parse_eigenbasis(j["eigenbasis"].get<std::string>());
    if (j.contains("covariate_kind"))
      sc.covariate_kind = parse_covariate(j["covariate_kind"].get<std::string>());
    if (j.contains("true_lambda")) {
      const auto v = j["true_lambda"].get<std::vector<double>>();
      sc.true_lambda = Eigen::Map<const VectorXd>(v.data(), v.size());
    }
    if (j.contains("truth_coefs")) {
      const auto rows = j["truth_coefs"].get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw ValidationError("scenario: truth_coefs must not be empty");
      sc.truth_coefs.resize(rows.size(), rows[0].size());
      for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
          throw ValidationError("scenario: truth_coefs rows have unequal lengths");
        for (size_t m = 0; m < rows[r].size(); ++m) sc.truth_coefs(r, m) = rows[r][m];
      }
    }
    if (j.contains("bin_fraction")) sc.bin_fraction = j["bin_fraction"].get<double>();
    if (j.contains("seed")) sc.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario: schema error: ") + e.what());
  }

  if (sc.I < 1 || sc.K < 1) throw ValidationError("scenario: I and K must be positive");
  if (sc.true_lambda.size() != 4) throw ValidationError("scenario: true_lambda must have 4 entries");
  if (sc.truth_coefs.rows() != 2)
    throw ValidationError("scenario: truth_coefs must have 2 rows (intercept and covariate)");
  return sc;
}

// ---------------------------------------------------------------------------
// data generation

GeneratedData generate_dataset(const SimScenario& sc) {
  const int I = sc.I, K = sc.K;
  const int L = 4;

  VectorXd grid(K);
  for (int k = 0; k < K; ++k) grid[k] = static_cast<double>(k + 1) / K;

  const SplineBasis tb = SimScenario::truth_basis();
  if (sc.truth_coefs.cols() != tb.n_basis())
    throw ValidationError("scenario: truth_coefs must have " + std::to_string(tb.n_basis()) +
                          " columns");
  const MatrixXd B = tb.evaluate(grid);
  const MatrixXd beta_curves = B * sc.truth_coefs.transpose();  // K x 2
  const MatrixXd phi = evaluate_closed_form_basis(sc.eigenbasis, L, grid);

  GeneratedData out;
  out.truth.beta_curves = beta_curves;
  out.truth.phi = phi;
  out.truth.scores.resize(I, L);
  out.truth.eta.resize(I, K);

  LongDataset& data = out.data;
  data.grid = grid;
  data.outcomes.resize(I, K);
  data.observed = MatrixXb::Constant(I, K, true);
  data.covariates.resize(I, 1);
  data.subject_ids.resize(I);
  data.family_hint = sc.family;

  // One stream, fixed draw order: covariates, then scores, then outcomes.
  Rng rng(derive_seed(sc.seed, 0x5157u));
  for (int i = 0; i < I; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05d", i + 1);
    data.subject_ids[i] = buf;
    data.covariates(i, 0) =
        sc.covariate_kind == CovariateKind::bernoulli_half ? (rng.bernoulli(0.5) ? 1.0 : 0.0)
                                                           : rng.normal();
  }
  for (int i = 0; i < I; ++i)
    for (int l = 0; l < L; ++l)
      out.truth.scores(i, l) = std::sqrt(sc.true_lambda[l]) * rng.normal();

  for (int i = 0; i < I; ++i) {
    const double x = data.covariates(i, 0);
    for (int k = 0; k < K; ++k) {
      double eta = beta_curves(k, 0) + x * beta_curves(k, 1);
      for (int l = 0; l < L; ++l) eta += out.truth.scores(i, l) * phi(k, l);
      out.truth.eta(i, k) = eta;

      switch (sc.family.kind) {
        case FamilyKind::gaussian_identity:
          data.outcomes(i, k) = eta + sc.gaussian_sd * rng.normal();
          break;
        case FamilyKind::bernoulli_logit:
          data.outcomes(i, k) = rng.bernoulli(sc.family.mean(eta)) ? 1.0 : 0.0;
          break;
        case FamilyKind::poisson_log:
          data.outcomes(i, k) = static_cast<double>(rng.poisson(std::exp(eta)));
          break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// metrics

double metric_mise_eta(const MatrixXd& eta_hat, const MatrixXd& eta_true) {
  if (eta_hat.rows() != eta_true.rows() || eta_hat.cols() != eta_true.cols())
    throw ValidationError("metrics: eta grids do not match");
  const double I = static_cast<double>(eta_true.rows());
  const double K = static_cast<double>(eta_true.cols());
  return (eta_hat - eta_true).squaredNorm() / (I * K);
}

double metric_ise(const VectorXd& estimate, const VectorXd& truth) {
  if (estimate.size() != truth.size()) throw ValidationError("metrics: curve grids do not match");
  return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

double metric_coverage(const VectorXd& lower, const VectorXd& upper, const VectorXd& truth) {
  if (lower.size() != truth.size() || upper.size() != truth.size())
    throw ValidationError("metrics: band grids do not match");
  int covered = 0;
  for (Eigen::Index k = 0; k < truth.size(); ++k)
    if (lower[k] <= truth[k] && truth[k] <= upper[k]) ++covered;
  return static_cast<double>(covered) / static_cast<double>(truth.size());
}

double metric_mise_phi(const MatrixXd& phi_hat, const MatrixXd& phi_true) {
  if (phi_hat.rows() != phi_true.rows())
    throw ValidationError("metrics: eigenfunction grids do not match");
  const int L = static_cast<int>(std::min(phi_hat.cols(), phi_true.cols()));
  if (L == 0) throw ValidationError("metrics: no eigenfunction columns to compare");
  double total = 0.0;
  for (int l = 0; l < L; ++l) {
    const double sign = phi_hat.col(l).dot(phi_true.col(l)) < 0.0 ? -1.0 : 1.0;
    total += metric_ise(sign * phi_hat.col(l), phi_true.col(l));
  }
  return total / L;
}

MetricsReport compute_metrics(const GcFpcaFit& fit, const SimTruth& truth,
                              const std::vector<CurveBand>& bands) {
  const int K = static_cast<int>(truth.eta.cols());
  if (fit.eigensystem.grid.size() != K)
    throw ValidationError("metrics: fit and truth are on different grids");
  if (bands.size() != static_cast<size_t>(truth.beta_curves.cols()))
    throw ValidationError("metrics: need one band per truth coefficient curve");

  MetricsReport report;
  const MatrixXd eta_hat =
      predict_linear_predictor(fit, fit.subject_ids, fit.eigensystem.grid, false);
  report.mise_eta = metric_mise_eta(eta_hat, truth.eta);

  const int q = static_cast<int>(bands.size());
  report.ise_beta.resize(q);
  report.ac_beta.resize(q);
  for (int r = 0; r < q; ++r) {
    report.ise_beta[r] = metric_ise(bands[r].estimate, truth.beta_curves.col(r));
    report.ac_beta[r] = metric_coverage(bands[r].lower, bands[r].upper, truth.beta_curves.col(r));
  }
  report.mise_phi = metric_mise_phi(fit.eigensystem.eigenfunctions, truth.phi);
  report.lambda_hat = fit.lambda;
  return report;
}

// ---------------------------------------------------------------------------
// replication harness

PipelineOptions scenario_fit_options(const SimScenario& sc) {
  PipelineOptions opt;
  opt.family = sc.family;
  opt.bin_fraction = sc.bin_fraction;
  opt.cyclic_bins = false;
  opt.n_fixed_basis = 14;
  opt.truncation.fixed_L = 4;
  return opt;
}

ReplicationSummary run_replications(const SimScenario& sc, int n_reps, int n_threads,
                                    double level) {
  if (n_reps < 1) throw ValidationError("replications: n_reps must be at least 1");

  ReplicationSummary summary;
  summary.scenario = sc;
  summary.n_reps = n_reps;
  summary.records.resize(n_reps);

  parallel_for(n_reps, n_threads, [&](int rep) {
    ReplicateRecord& record = summary.records[rep];
    record.rep = rep;
    try {
      SimScenario rep_sc = sc;
      rep_sc.seed = derive_seed(sc.seed, static_cast<std::uint64_t>(rep));
      const auto start = std::chrono::steady_clock::now();

      const GeneratedData gen = generate_dataset(rep_sc);
      PipelineOptions opt = scenario_fit_options(rep_sc);
      opt.n_threads = 1;  // replicates are the unit of parallelism here
      const PipelineResult result = fit_gcfpca(gen.data, opt);
      const auto bands = fixed_effect_curves(result.fit, gen.data.grid, level);

      record.metrics = compute_metrics(result.fit, gen.truth, bands);
      record.metrics.wall_time_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      record.ok = true;
    } catch (const std::exception& e) {
      record.ok = false;
      record.message = e.what();
    }
  });

  std::vector<const MetricsReport*> ok;
  for (const auto& r : summary.records)
    if (r.ok) ok.push_back(&r.metrics);
  summary.n_failed = n_reps - static_cast<int>(ok.size());
  if (ok.empty()) {
    std::string first = "unknown";
    for (const auto& r : summary.records)
      if (!r.ok) {
        first = r.message;
        break;
      }
    throw ConvergenceError("replications: every replicate failed; first failure: " + first);
  }

  const auto collect = [&](auto getter) {
    std::vector<double> values;
    values.reserve(ok.size());
    for (const auto* m : ok) values.push_back(getter(*m));
    return values;
  };
  const auto fill = [&](MetricsReport& target, double prob) {
    const auto pick = [&](std::vector<double> v) {
      return prob == 0.5 ? median(v) : quantile(v, prob);
    };
    target.mise_eta = pick(collect([](const MetricsReport& m) { return m.mise_eta; }));
    target.mise_phi = pick(collect([](const MetricsReport& m) { return m.mise_phi; }));
    target.wall_time_seconds =
        pick(collect([](const MetricsReport& m) { return m.wall_time_seconds; }));
    const int q = static_cast<int>(ok.front()->ise_beta.size());
    target.ise_beta.resize(q);
    target.ac_beta.resize(q);
    for (int r = 0; r < q; ++r) {
      target.ise_beta[r] =
          pick(collect([r](const MetricsReport& m) { return m.ise_beta[r]; }));
      target.ac_beta[r] = pick(collect([r](const MetricsReport& m) { return m.ac_beta[r]; }));
    }
    const int L = static_cast<int>(ok.front()->lambda_hat.size());
    target.lambda_hat.resize(L);
    for (int l = 0; l < L; ++l)
      target.lambda_hat[l] =
          pick(collect([l](const MetricsReport& m) { return m.lambda_hat[l]; }));
  };
  fill(summary.median, 0.5);
  fill(summary.q25, 0.25);
  fill(summary.q75, 0.75);
  return summary;
}

}  // namespace gcfpca
