#include "seqmi/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seqmi/errors.hpp"
#include "seqmi/rng.hpp"
#include "seqmi/special.hpp"

namespace seqmi {

namespace {

constexpr double kDfCap = 1e9;

// Log-likelihood, score factor, and negative second derivative of the
// binary log-likelihood in the linear predictor, per observation.
struct EtaDerivs {
  double loglik;
  double d1;
  double d2;  // -d^2 loglik / d eta^2, always >= 0 for logistic and probit
};

EtaDerivs logistic_derivs(double eta, double r) {
  const double pi = expit(eta);
  EtaDerivs d;
  d.loglik = r * eta - log1pexp(eta);
  d.d1 = r - pi;
  d.d2 = pi * (1.0 - pi);
  return d;
}

EtaDerivs probit_derivs(double eta, double r) {
  // Work on the success side: for r = 0 the terms are those of -eta.
  const double s = r > 0.5 ? eta : -eta;
  const double log_mills = norm_logpdf(s) - log_norm_cdf(s);
  const double lambda = std::exp(log_mills);  // phi(s)/Phi(s)
  EtaDerivs d;
  d.loglik = log_norm_cdf(s);
  d.d1 = r > 0.5 ? lambda : -lambda;
  d.d2 = lambda * (lambda + s);  // observed information term, positive
  return d;
}

Eigen::MatrixXd build_design(const Dataset& data, const std::vector<int>& cols) {
  const int n = data.n();
  Eigen::MatrixXd x(n, static_cast<int>(cols.size()));
  for (int i = 0; i < n; ++i)
    for (std::size_t k = 0; k < cols.size(); ++k)
      x(i, k) = data.subjects[i].x[cols[k]];
  return x;
}

FitResult fit_linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(x.rows());
  const int k = static_cast<int>(x.cols());
  if (n <= k) throw DataError("analysis fit: fewer observations than coefficients");
  Eigen::MatrixXd xtx = x.transpose() * x;
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success)
    throw NumericalError("analysis fit: singular design matrix");
  FitResult res;
  res.estimate = llt.solve(x.transpose() * y);
  const double rss = (y - x * res.estimate).squaredNorm();
  const double sigma2 = rss / (n - k);
  Eigen::MatrixXd cov = sigma2 * llt.solve(Eigen::MatrixXd::Identity(k, k));
  res.variance = cov.diagonal();
  res.grad_norm = (x.transpose() * (y - x * res.estimate)).norm();
  res.iterations = 1;
  return res;
}

FitResult fit_binary(const Eigen::MatrixXd& x, const Eigen::VectorXd& r,
                     AnalysisFamily family) {
  const int n = static_cast<int>(x.rows());
  const int k = static_cast<int>(x.cols());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);

  auto evaluate = [&](const Eigen::VectorXd& b, Eigen::VectorXd& grad,
                      Eigen::MatrixXd& info) {
    double ll = 0.0;
    grad.setZero(k);
    info.setZero(k, k);
    Eigen::VectorXd eta = x * b;
    for (int i = 0; i < n; ++i) {
      EtaDerivs d = family == AnalysisFamily::Logistic
                        ? logistic_derivs(eta[i], r[i])
                        : probit_derivs(eta[i], r[i]);
      ll += d.loglik;
      grad.noalias() += d.d1 * x.row(i).transpose();
      info.noalias() += d.d2 * x.row(i).transpose() * x.row(i);
    }
    return ll;
  };

  Eigen::VectorXd grad(k);
  Eigen::MatrixXd info(k, k);
  double ll = evaluate(beta, grad, info);
  const double tol = 1e-10 * std::max(1, n);
  int iter = 0;
  for (; iter < 100; ++iter) {
    if (grad.norm() < tol) break;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success)
      throw NumericalError("analysis fit: singular design matrix");
    Eigen::VectorXd step = llt.solve(grad);
    // Halve the step until the log-likelihood improves.
    double scale = 1.0;
    Eigen::VectorXd cand;
    double ll_cand;
    Eigen::VectorXd grad_cand(k);
    Eigen::MatrixXd info_cand(k, k);
    for (int h = 0;; ++h) {
      cand = beta + scale * step;
      ll_cand = evaluate(cand, grad_cand, info_cand);
      if (ll_cand >= ll - 1e-12) break;
      if (h >= 40)
        throw NumericalError("analysis fit: Newton step failed to improve");
      scale *= 0.5;
    }
    beta = cand;
    ll = ll_cand;
    grad = grad_cand;
    info = info_cand;
    if (beta.norm() > 1e3)
      throw NumericalError(
          "analysis fit: diverging estimates; response is separated");
  }
  if (grad.norm() >= tol)
    throw NumericalError(
        "analysis fit: no convergence; response may be separated");

  // A direction that classifies every observation correctly scales the
  // likelihood upward without bound, so a converged iterate whose margins are
  // all nonnegative marks a nonexistent maximum likelihood estimate.
  {
    Eigen::VectorXd eta = x * beta;
    double min_margin = std::numeric_limits<double>::infinity();
    double max_margin = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double margin = (2.0 * r[i] - 1.0) * eta[i];
      min_margin = std::min(min_margin, margin);
      max_margin = std::max(max_margin, margin);
    }
    if (min_margin >= 0.0 && max_margin > 0.0)
      throw NumericalError(
          "analysis fit: response is separated; the maximum likelihood "
          "estimate does not exist");
  }

  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success)
    throw NumericalError("analysis fit: singular information at the optimum");
  FitResult res;
  res.estimate = beta;
  res.variance = llt.solve(Eigen::MatrixXd::Identity(k, k)).diagonal();
  res.grad_norm = grad.norm();
  res.iterations = iter;
  return res;
}

}  // namespace

FitResult fit_analysis(const Dataset& completed, const AnalysisSpec& spec) {
  const int n = completed.n();
  if (n == 0) throw DataError("analysis fit: empty dataset");
  if (spec.response_visit < 1 || spec.response_visit > completed.p)
    throw ConfigError("analysis fit: response visit out of range");
  std::vector<int> cols = spec.covariates;
  if (cols.empty()) {
    cols.resize(completed.q);
    for (int c = 0; c < completed.q; ++c) cols[c] = c;
  }
  for (int c : cols)
    if (c < 0 || c >= completed.q)
      throw ConfigError("analysis fit: covariate index out of range");

  const int j = spec.response_visit - 1;
  const VisitTypeSpec& vt = completed.visit_types[j];
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double v = completed.subjects[i].y[j];
    if (!std::isfinite(v))
      throw DataError("analysis fit: response visit has missing values");
    y[i] = v;
  }

  Eigen::MatrixXd x = build_design(completed, cols);
  if (spec.family == AnalysisFamily::Linear) {
    if (vt.type != VisitType::Continuous)
      throw ConfigError("analysis fit: linear family needs a continuous response");
    return fit_linear(x, y);
  }
  if (vt.type != VisitType::Binary)
    throw ConfigError("analysis fit: binary family needs a binary response");
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r[i] = y[i] == 1.0 ? 1.0 : 0.0;
  return fit_binary(x, r, spec.family);
}

PooledResult rubin_pool(const std::vector<Eigen::VectorXd>& estimates,
                        const std::vector<Eigen::VectorXd>& variances) {
  const int m = static_cast<int>(estimates.size());
  if (m < 1) throw ConfigError("pooling needs at least one imputation");
  if (variances.size() != estimates.size())
    throw ConfigError("pooling: estimate and variance counts differ");
  const int k = static_cast<int>(estimates[0].size());
  for (int a = 0; a < m; ++a)
    if (estimates[a].size() != k || variances[a].size() != k)
      throw ConfigError("pooling: coefficient counts differ across imputations");

  PooledResult res;
  res.m = m;
  res.single_imputation = m == 1;
  res.qbar.setZero(k);
  res.w.setZero(k);
  res.b.setZero(k);
  for (int a = 0; a < m; ++a) {
    res.qbar += estimates[a];
    res.w += variances[a];
  }
  res.qbar /= m;
  res.w /= m;
  if (m > 1) {
    for (int a = 0; a < m; ++a)
      res.b += (estimates[a] - res.qbar).cwiseAbs2();
    res.b /= m - 1;
  }

  res.t_total.resize(k);
  res.df.resize(k);
  res.t_stat.resize(k);
  res.p.resize(k);
  for (int c = 0; c < k; ++c) {
    const double excess = (1.0 + 1.0 / m) * res.b[c];
    res.t_total[c] = res.w[c] + excess;
    double df = kDfCap;
    if (m > 1 && excess > 0.0) {
      const double ratio = 1.0 + res.w[c] / excess;
      df = std::min(kDfCap, (m - 1) * ratio * ratio);
    }
    res.df[c] = df;
    res.t_stat[c] = res.qbar[c] / std::sqrt(res.t_total[c]);
    res.p[c] = two_sided_t_pvalue(res.t_stat[c], df);
  }
  return res;
}

int resolve_coef_index(const Dataset& data, const AnalysisSpec& spec) {
  const int ncol = spec.covariates.empty() ? data.q
                                           : static_cast<int>(spec.covariates.size());
  const int idx = spec.coef_of_interest < 0 ? ncol - 1 : spec.coef_of_interest;
  if (idx < 0 || idx >= ncol)
    throw ConfigError("coefficient of interest out of range");
  return idx;
}

PooledResult pool_analyses(const std::vector<Dataset>& completed,
                           const AnalysisSpec& spec) {
  std::vector<Eigen::VectorXd> q, u;
  q.reserve(completed.size());
  u.reserve(completed.size());
  for (const Dataset& d : completed) {
    FitResult fit = fit_analysis(d, spec);
    q.push_back(fit.estimate);
    u.push_back(fit.variance);
  }
  return rubin_pool(q, u);
}

Dataset simulate_scenario(int which, int n, std::uint64_t seed) {
  if (which != 1 && which != 2)
    throw ConfigError("simulate_scenario: scenario must be 1 or 2");
  if (n < 2 || n % 2 != 0)
    throw ConfigError("simulate_scenario: subject count must be even and positive");

  Dataset d;
  d.p = 2;
  d.q = 3;
  d.visit_types = {VisitTypeSpec{VisitType::Continuous, 0},
                   VisitTypeSpec{VisitType::Binary, 2}};
  d.id_name = "id";
  d.covariate_names = {"y0", "g"};
  d.response_names = {"y1", "y2"};

  RngStream rng(seed);
  const double shift = 2.0 * std::sqrt(2.0 / M_PI);
  d.subjects.resize(n);
  for (int i = 0; i < n; ++i) {
    SubjectRecord& s = d.subjects[i];
    s.id = "s" + std::to_string(i + 1);
    s.orig_index = i;
    const double g = i % 2 == 0 ? 0.0 : 1.0;
    const double y0 = rng.normal();
    s.x.resize(3);
    s.x << 1.0, y0, g;
    s.arm = static_cast<int>(g);

    double y1;
    if (which == 1) {
      y1 = 0.5 + 0.5 * y0 + g + rng.normal();
    } else {
      const double mu = 0.5 - shift + 0.5 * y0 + g;
      const double lat_d = rng.gamma(5.0, 5.0);  // nu = 10
      const double lat_w = std::fabs(rng.normal()) / std::sqrt(lat_d);
      y1 = mu + 2.0 * lat_w + rng.normal() / std::sqrt(lat_d);
    }
    // Latent scale 0.6 so the residual variance of the marginal probit index
    // is 0.8^2 + 0.6^2 = 1: the complete-data fit of y2 on (1, y0, g) then
    // targets exactly (-0.1, 0.65, 0.8).
    const double y2 =
        rng.uniform() < norm_cdf((-0.5 + 0.25 * y0 + 0.8 * y1) / 0.6) ? 1.0
                                                                      : 2.0;
    s.y.resize(2);
    s.y << y1, y2;

    int pat;
    if (rng.uniform() < expit(0.3 * y0 - 3.0))
      pat = 0;
    else if (rng.uniform() < expit(0.3 * y0 + y1 - 2.0))
      pat = 1;
    else
      pat = 2;
    s.observed.assign(2, 0);
    for (int j = 0; j < pat; ++j) s.observed[j] = 1;
    // Intermittent gaps: responses before the dropout visit go missing with
    // 20% probability each.
    for (int j = 0; j + 1 < pat; ++j)
      if (rng.uniform() < 0.2) s.observed[j] = 0;
    s.s = pat;
  }
  return d;
}

}  // namespace seqmi
