#include "seqmi/special.hpp"

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>
#include <gsl/gsl_sf_psi.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "seqmi/errors.hpp"

namespace seqmi {

namespace {
// GSL must not abort the process; errors are checked at call sites.
const int kGslHandlerOff = [] {
  gsl_set_error_handler_off();
  return 0;
}();
}  // namespace

double expit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log1pexp(double x) {
  if (x > 33.0) return x;
  if (x > -37.0) return std::log1p(std::exp(x));
  return std::exp(x);
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double norm_logpdf(double x) { return -0.5 * x * x - 0.9189385332046727417803297; }

double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericalError("norm_quantile: p outside (0,1)");
  return gsl_cdf_ugaussian_Pinv(p);
}

double log_norm_cdf(double x) {
  if (x >= -25.0) return std::log(norm_cdf(x));
  // Phi(-a) = phi(a)/a (1 - 1/a^2 + 3/a^4 - ...), relative error ~15/a^6
  const double a2 = x * x;
  return norm_logpdf(x) - std::log(-x) + std::log1p(-1.0 / a2 + 3.0 / (a2 * a2));
}

double t_cdf(double x, double nu) {
  if (!(nu > 0.0)) throw NumericalError("t_cdf: nu must be positive");
  return gsl_cdf_tdist_P(x, nu);
}

double t_cdf_upper(double x, double nu) {
  if (!(nu > 0.0)) throw NumericalError("t_cdf_upper: nu must be positive");
  return gsl_cdf_tdist_Q(x, nu);
}

double t_quantile_upper(double q, double nu) {
  if (!(nu > 0.0)) throw NumericalError("t_quantile_upper: nu must be positive");
  if (!(q > 0.0 && q < 1.0)) throw NumericalError("t_quantile_upper: q outside (0,1)");
  return gsl_cdf_tdist_Qinv(q, nu);
}

double t_logpdf(double x, double nu) {
  if (!(nu > 0.0)) throw NumericalError("t_logpdf: nu must be positive");
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * M_PI) - 0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

double digamma(double x) { return gsl_sf_psi(x); }

double trigamma(double x) { return gsl_sf_psi_1(x); }

double two_sided_t_pvalue(double t, double df) {
  if (!(df > 0.0)) throw NumericalError("two_sided_t_pvalue: df must be positive");
  return 2.0 * gsl_cdf_tdist_Q(std::fabs(t), df);
}

namespace {
double call_f(double x, void* params) {
  const auto* f = static_cast<const std::function<double(double)>*>(params);
  return (*f)(x);
}
}  // namespace

double integrate(const std::function<double(double)>& f, double a, double b,
                 double epsabs, double epsrel) {
  constexpr std::size_t kLimit = 512;
  std::unique_ptr<gsl_integration_workspace, void (*)(gsl_integration_workspace*)> ws(
      gsl_integration_workspace_alloc(kLimit), gsl_integration_workspace_free);
  if (!ws) throw NumericalError("integrate: workspace allocation failed");
  gsl_function gf;
  gf.function = &call_f;
  gf.params = const_cast<std::function<double(double)>*>(&f);
  double result = 0.0, abserr = 0.0;
  const int status =
      gsl_integration_qags(&gf, a, b, epsabs, epsrel, kLimit, ws.get(), &result, &abserr);
  if (status != GSL_SUCCESS && status != GSL_EROUND)
    throw NumericalError("integrate: quadrature failed with GSL status " + std::to_string(status));
  return result;
}

}  // namespace seqmi
