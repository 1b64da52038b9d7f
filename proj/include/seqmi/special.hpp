#pragma once

#include <functional>
#include <vector>

namespace seqmi {

// Numerically careful scalar helpers and thin GSL wrappers.

double expit(double x);
double log1pexp(double x);
// log(sum(exp(v))) guarded against overflow; v must be nonempty.
double log_sum_exp(const std::vector<double>& v);

double norm_cdf(double x);      // erfc-based, accurate in both tails
double norm_logpdf(double x);
double norm_quantile(double p);
// log(Phi(x)), asymptotic series below x = -25 where Phi underflows relative scale
double log_norm_cdf(double x);

double t_cdf(double x, double nu);
double t_cdf_upper(double x, double nu);       // P(T > x)
double t_quantile_upper(double q, double nu);  // x with P(T > x) = q
double t_logpdf(double x, double nu);

double digamma(double x);
double trigamma(double x);

// 2 * P(T_df > |t|)
double two_sided_t_pvalue(double t, double df);

// Adaptive quadrature of f over [a, b] (QAGS).
double integrate(const std::function<double(double)>& f, double a, double b,
                 double epsabs = 1e-10, double epsrel = 1e-8);

}  // namespace seqmi
