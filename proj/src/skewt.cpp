#include "seqmi/skewt.hpp"

#include <cmath>

#include "seqmi/errors.hpp"
#include "seqmi/special.hpp"

namespace seqmi {

namespace {
constexpr double kPi2 = M_PI * M_PI;
}

double SkewTHyper::rate() const { return p0 / kl_d(nu0); }

ShapeScale to_shape_scale(double psi, double gamma) {
  if (!(gamma > 0.0)) throw NumericalError("to_shape_scale: gamma must be positive");
  return {1.0 / gamma + psi * psi, psi * std::sqrt(gamma)};
}

LoadPrecision from_shape_scale(double omega2, double lambda) {
  if (!(omega2 > 0.0)) throw NumericalError("from_shape_scale: omega2 must be positive");
  const double gamma = (1.0 + lambda * lambda) / omega2;
  return {lambda / std::sqrt(gamma), gamma};
}

double skewt_logpdf(double y, double mu, double omega2, double lambda, double nu) {
  if (!(omega2 > 0.0)) throw NumericalError("skewt_logpdf: omega2 must be positive");
  const double omega = std::sqrt(omega2);
  const double u = (y - mu) / omega;
  if (std::isinf(nu))
    return M_LN2 - std::log(omega) + norm_logpdf(u) + log_norm_cdf(lambda * u);
  if (!(nu > 0.0)) throw NumericalError("skewt_logpdf: nu must be positive");
  const double arg = lambda * u * std::sqrt((nu + 1.0) / (nu + u * u));
  return M_LN2 - std::log(omega) + t_logpdf(u, nu) + std::log(t_cdf(arg, nu + 1.0));
}

double skewt_pdf(double y, double mu, double omega2, double lambda, double nu) {
  return std::exp(skewt_logpdf(y, mu, omega2, lambda, nu));
}

double kl_d(double nu) {
  if (!(nu > 2.0)) throw NumericalError("kl_d: the KL to the normal is undefined for nu <= 2");
  const double a = 0.5 * (nu + 1.0), b = 0.5 * nu;
  const double bn = digamma(a) - digamma(b);
  const double kl = 0.5 * (1.0 + std::log(2.0 / (nu - 2.0))) + std::lgamma(a) - std::lgamma(b) -
                    0.5 * (nu + 1.0) * bn;
  // cancellation can push a mathematically tiny positive value below zero
  return std::sqrt(std::max(kl, 0.0) * 2.0);
}

double kl_d_deriv(double nu) {
  const double d = kl_d(nu);
  const double a = 0.5 * (nu + 1.0), b = 0.5 * nu;
  const double klp = -0.5 / (nu - 2.0) - 0.25 * (nu + 1.0) * (trigamma(a) - trigamma(b));
  return klp / d;
}

double pc_prior_logunnorm(double nu, double rate) {
  if (!(rate > 0.0)) throw NumericalError("pc_prior_logunnorm: rate must be positive");
  return std::log(rate) - rate * kl_d(nu) + std::log(-kl_d_deriv(nu));
}

double pc_prior(double nu, double rate, double nu_l, double nu_m) {
  if (!(nu > 2.0)) throw NumericalError("pc_prior: the prior's support starts above 2");
  if (!(nu_m > nu_l && nu_l >= 2.0)) throw NumericalError("pc_prior: invalid (nu_l, nu_m]");
  if (nu <= nu_l || nu > nu_m) return 0.0;
  // substituting s = d(nu) integrates the density exactly:
  // int rate e^{-rate d} |d'| dnu = e^{-rate d(nu_m)} - e^{-rate d(nu_l)}
  double norm = std::exp(-rate * kl_d(nu_m));
  if (nu_l > 2.0) norm -= std::exp(-rate * kl_d(nu_l));
  return std::exp(pc_prior_logunnorm(nu, rate)) / norm;
}

namespace {

// Sum over the slice of the nu-dependent factors of the marginal skew-t
// likelihood: log t_nu(u_i) + log T_{nu+1}(lambda u_i sqrt((nu+1)/(nu+u_i^2))).
double nu_profile_loglik(double nu, const Eigen::VectorXd& ustar, double lambda) {
  const double lgc = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                     0.5 * std::log(nu * M_PI);
  double s = ustar.size() * lgc;
  for (int i = 0; i < ustar.size(); ++i) {
    const double u = ustar[i];
    s += -0.5 * (nu + 1.0) * std::log1p(u * u / nu);
    s += std::log(t_cdf(lambda * u * std::sqrt((nu + 1.0) / (nu + u * u)), nu + 1.0));
  }
  return s;
}

}  // namespace

double nu_posterior_logdensity(double nu, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                               const Eigen::VectorXd& beta, double psi, double gamma,
                               const SkewTHyper& hyper) {
  if (nu <= hyper.nu_l || nu > hyper.nu_m)
    return -std::numeric_limits<double>::infinity();
  const auto ss = to_shape_scale(psi, gamma);
  const double omega = std::sqrt(ss.omega2);
  Eigen::VectorXd ustar = (y - Z * beta) / omega;
  return std::log(pc_prior(nu, hyper.rate(), hyper.nu_l, hyper.nu_m)) +
         nu_profile_loglik(nu, ustar, ss.lambda);
}

SkewTState init_skewt_state(int n, int l, const SkewTOptions& opt) {
  SkewTState st;
  st.par.beta = Eigen::VectorXd::Zero(l);
  st.par.nu = opt.skew_normal ? std::numeric_limits<double>::infinity() : 10.0;
  st.lat.d.assign(n, 1.0);
  st.lat.w.assign(n, 1.0);
  return st;
}

void gibbs_cycle(SkewTState& st, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                 const SkewTHyper& hyper, const SkewTOptions& opt, RngStream& rng) {
  const int n = static_cast<int>(y.size());
  const int l = static_cast<int>(Z.cols());
  if (Z.rows() != n || st.par.beta.size() != l || static_cast<int>(st.lat.d.size()) != n ||
      static_cast<int>(st.lat.w.size()) != n)
    throw std::logic_error("gibbs_cycle: state and slice dimensions disagree");
  auto& par = st.par;
  auto& lat = st.lat;
  const bool with_w = opt.update_psi;
  const bool ridged = opt.beta_ridge > 0.0;

  // P1: gamma's prior-hierarchy latent
  lat.rho = rng.gamma(0.5 * (hyper.n0 + 1.0), hyper.n0 * par.gamma + 1.0 / (hyper.a0 * hyper.a0));
  // P2: psi's prior-hierarchy latent
  if (with_w)
    lat.d_psi = rng.gamma(0.75, 0.25 + 2.0 * par.gamma * par.psi * par.psi / kPi2);

  // P3: (psi, beta, gamma) as one gamma-normal block on rows (w_i, z_i, y_i)
  const int L = l + 1 + (with_w ? 1 : 0);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(L, L);
  Eigen::VectorXd zt(L);
  for (int i = 0; i < n; ++i) {
    int k = 0;
    if (with_w) zt[k++] = lat.w[i];
    zt.segment(k, l) = Z.row(i);
    zt[L - 1] = y[i];
    D.noalias() += lat.d[i] * zt * zt.transpose();
  }
  if (with_w) D(0, 0) += 4.0 * lat.d_psi / kPi2;
  if (ridged)
    for (int k = with_w ? 1 : 0; k + 1 < L; ++k) D(k, k) += opt.beta_ridge;
  D(L - 1, L - 1) += 2.0 * hyper.n0 * lat.rho;
  const double m = n + hyper.n0 + (with_w ? 1.0 : 0.0) + (ridged ? double(l) : 0.0);
  const auto [coef, gam] = draw_normal_gamma(D, m, rng);
  par.gamma = gam;
  if (with_w) {
    par.psi = coef[0];
    par.beta = coef.segment(1, l);
  } else {
    par.beta = coef;
  }

  // P4: nu against the latent-marginalized posterior
  if (!opt.skew_normal && opt.update_nu) {
    const auto ss = to_shape_scale(par.psi, par.gamma);
    const double omega = std::sqrt(ss.omega2);
    Eigen::VectorXd ustar = (y - Z * par.beta) / omega;
    const auto loglik = [&](double nv) { return nu_profile_loglik(nv, ustar, ss.lambda); };
    const auto logprior = [&](double nv) { return pc_prior_logunnorm(nv, hyper.rate()); };
    const auto [nnu, accepted] =
        rw_mh_lognu(par.nu, loglik, logprior, hyper.nu_l, hyper.nu_m, st.nu_tuning, rng);
    par.nu = nnu;
    record_acceptance(st.nu_tuning, accepted);
  }

  // P5: per-observation (d, w); w comes from its exact positive-t marginal,
  // then d from its gamma conditional given w (an exact joint draw)
  const double Vw = par.gamma * par.psi * par.psi + 1.0;
  for (int i = 0; i < n; ++i) {
    const double resid = y[i] - Z.row(i).dot(par.beta);
    const double mw = par.gamma * par.psi * resid / Vw;
    if (opt.skew_normal) {
      lat.w[i] = draw_positive_normal(mw, 1.0 / Vw, rng);
    } else {
      const double ba = par.nu + 1.0;
      const double bd = par.nu + par.gamma * resid * resid / Vw;
      const double s = std::sqrt(bd / (ba * Vw));
      const double q0 = t_cdf_upper(-mw / s, ba);
      const double q =
          std::max((1.0 - rng.uniform()) * q0, std::numeric_limits<double>::min());
      const double w = mw + s * t_quantile_upper(q, ba);
      lat.w[i] = w > 0.0 ? w : std::numeric_limits<double>::min();
      const double dev = lat.w[i] - mw;
      lat.d[i] = rng.gamma(0.5 * (ba + 1.0), 0.5 * (bd + dev * dev * Vw));
    }
  }

  // PX1: rescale (d's, gamma) under the Haar prior on the expansion scale
  if (opt.enable_px && !opt.skew_normal) {
    const double c = 0.5 * (n * (par.nu + 1.0) - (hyper.n0 + 1.0) - (ridged ? double(l) : 0.0));
    if (c > 0.0) {
      double b = 0.0;
      for (int i = 0; i < n; ++i) b += lat.d[i] * (par.nu + lat.w[i] * lat.w[i]);
      b *= 0.5;
      double a = par.gamma * (hyper.n0 * lat.rho + 2.0 * lat.d_psi * par.psi * par.psi / kPi2);
      if (ridged) a += 0.5 * par.gamma * opt.beta_ridge * par.beta.squaredNorm();
      const double g = draw_g_exp_inv(c, b, a, rng);
      for (int i = 0; i < n; ++i) lat.d[i] *= g;
      par.gamma /= g;
    }
  }
  // PX2: rescale (w's, psi) likewise
  if (opt.enable_px && with_w && n >= 2) {
    const double c = 0.5 * (n - 1.0);
    double b = 0.0;
    for (int i = 0; i < n; ++i) b += lat.d[i] * lat.w[i] * lat.w[i];
    b *= 0.5;
    const double a = 2.0 * lat.d_psi * par.gamma * par.psi * par.psi / kPi2;
    const double h = std::sqrt(draw_g_exp_inv(c, b, a, rng));
    for (int i = 0; i < n; ++i) lat.w[i] *= h;
    par.psi /= h;
  }
}

}  // namespace seqmi
