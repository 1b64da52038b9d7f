#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "seqmi/dataset.hpp"

namespace seqmi {

// Substantive analysis model fit to each completed dataset.
enum class AnalysisFamily { Linear, Logistic, Probit };

struct AnalysisSpec {
  int response_visit = 1;  // 1-based visit index of the analysis response
  AnalysisFamily family = AnalysisFamily::Probit;
  // Covariate column indices into SubjectRecord::x (0 = intercept).
  // Empty means all columns in order.
  std::vector<int> covariates;
  // Index into the fitted coefficient vector whose estimate the caller cares
  // about (tipping-point grids, summary tables). -1 means the last
  // coefficient, which is the treatment arm under the default layout.
  int coef_of_interest = -1;
};

struct FitResult {
  Eigen::VectorXd estimate;
  Eigen::VectorXd variance;   // diagonal of the inverse observed information
  double grad_norm = 0.0;     // score norm at the reported estimate
  int iterations = 0;
};

// Maximum likelihood fit of the analysis model to a completed dataset.
// Binary responses coded {1,2} are modelled as indicators of category 1.
// Throws DataError when the response visit has non-finite values, and
// NumericalError on a singular design or separated binary fit.
FitResult fit_analysis(const Dataset& completed, const AnalysisSpec& spec);

// Combining rules across m completed-data fits. All vectors are
// per-coefficient and aligned with FitResult::estimate.
struct PooledResult {
  Eigen::VectorXd qbar;     // pooled estimate
  Eigen::VectorXd w;        // mean within-imputation variance
  Eigen::VectorXd b;        // between-imputation variance (m-1 denominator)
  Eigen::VectorXd t_total;  // W + (1 + 1/m) B
  Eigen::VectorXd df;       // reference-t degrees of freedom, capped at 1e9
  Eigen::VectorXd t_stat;   // qbar / sqrt(t_total)
  Eigen::VectorXd p;        // two-sided p against the t reference
  int m = 0;
  // m == 1: between-imputation variance is undefined; b is reported as 0 and
  // the total variance collapses to w with a normal reference.
  bool single_imputation = false;
};

PooledResult rubin_pool(const std::vector<Eigen::VectorXd>& estimates,
                        const std::vector<Eigen::VectorXd>& variances);

// Index into the fitted coefficient vector named by spec.coef_of_interest
// (-1 means the last coefficient, the treatment arm in the default layout).
int resolve_coef_index(const Dataset& data, const AnalysisSpec& spec);

// Convenience wrapper: fit the analysis model to each completed dataset and
// pool the results.
PooledResult pool_analyses(const std::vector<Dataset>& completed,
                           const AnalysisSpec& spec);

// Benchmark generator for the two longitudinal trial scenarios used by the
// simulation harness. n must be even; arms alternate control/treatment. The
// returned dataset stores the generated truth in every response cell and
// marks cells missing only through the observed flags, so complete-data
// (oracle) fits can use the same object.
//
// Layout: covariates (1, y0, g) with g the treatment arm, responses
// y1 (continuous; scenario 2 draws it from a skewed heavy-tailed law) and
// y2 (binary {1,2}, category 1 = response).
Dataset simulate_scenario(int which, int n, std::uint64_t seed);

}  // namespace seqmi
