#include "seqmi/samplers.hpp"

#include <cmath>

#include "seqmi/errors.hpp"
#include "seqmi/special.hpp"

namespace seqmi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728;

double loglik_sum(const Family& fam, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z) {
  double s = 0.0;
  for (int i = 0; i < Z.rows(); ++i) s += log_density(fam, y[i], Z.row(i).transpose());
  return s;
}

// log N(x; mu, P^{-1}) given the Cholesky factor of the precision P = L L'.
double mvn_logpdf_prec(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                       const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const Eigen::VectorXd r = x - mu;
  const Eigen::MatrixXd L = llt.matrixL();
  double logdet_half = 0.0;
  for (int i = 0; i < L.rows(); ++i) logdet_half += std::log(L(i, i));
  return -0.5 * x.size() * kLog2Pi + logdet_half - 0.5 * (L.transpose() * r).squaredNorm();
}

}  // namespace

void adapt_tuning(MhTuning& t, double acceptance_rate) {
  if (acceptance_rate > t.hi)
    t.c *= 1.1;
  else if (acceptance_rate < t.lo)
    t.c *= 0.9;
}

void record_acceptance(MhTuning& t, bool accepted) {
  if (t.frozen) return;
  ++t.count;
  if (accepted) ++t.accepted;
  if (t.count >= t.window) {
    adapt_tuning(t, static_cast<double>(t.accepted) / t.count);
    t.count = 0;
    t.accepted = 0;
  }
}

std::pair<Eigen::VectorXd, double> draw_normal_gamma(const Eigen::MatrixXd& D, double m,
                                                     RngStream& rng) {
  const int l = static_cast<int>(D.rows()) - 1;
  if (l < 0 || D.rows() != D.cols())
    throw NumericalError("draw_normal_gamma: D must be square with dimension >= 1");
  if (!(m > l)) throw NumericalError("draw_normal_gamma: requires m > l");
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success)
    throw NumericalError("draw_normal_gamma: D is not positive definite");

  Eigen::VectorXd t(l + 1);
  for (int i = 0; i < l; ++i) t[i] = rng.normal();
  t[l] = std::sqrt(rng.chisq(m - l));
  // u = (L')^{-1} t; then gamma = u_last^2, beta = -u_head / u_last.
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::VectorXd u = L.transpose().triangularView<Eigen::Upper>().solve(t);
  const double gamma = u[l] * u[l];
  Eigen::VectorXd beta = l > 0 ? Eigen::VectorXd(-u.head(l) / u[l]) : Eigen::VectorXd(0);
  return {std::move(beta), gamma};
}

MhBetaResult mh_update_beta(Family& fam, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                            const BetaPrior& prior, RngStream& rng) {
  const int dim = static_cast<int>(fam.beta.size());
  if (prior.v.size() != dim || prior.R.rows() != dim || prior.R.cols() != dim)
    throw std::logic_error("mh_update_beta: prior dimensions do not match beta");

  auto log_prior = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd r = b - prior.v;
    return -0.5 * r.dot(prior.R * r);
  };
  auto sums = [&](const Family& f, Eigen::VectorXd& U, Eigen::MatrixXd& info) {
    U.setZero(dim);
    info.setZero(dim, dim);
    for (int i = 0; i < Z.rows(); ++i) {
      const Eigen::VectorXd zi = Z.row(i).transpose();
      U += score_beta(f, y[i], zi);
      info += fisher_beta(f, y[i], zi);
    }
  };

  std::vector<std::pair<int, int>> blocks;  // (offset, length)
  if (dim <= 30) {
    blocks.emplace_back(0, dim);
  } else {
    for (int off = 0; off < dim; off += 15) blocks.emplace_back(off, std::min(15, dim - off));
  }

  MhBetaResult res;
  const Eigen::VectorXd Rv = prior.R * prior.v;
  for (auto [off, len] : blocks) {
    ++res.blocks;
    Eigen::VectorXd U(dim);
    Eigen::MatrixXd info(dim, dim);
    sums(fam, U, info);
    const Eigen::MatrixXd P_cur = info.block(off, off, len, len) + prior.R.block(off, off, len, len);
    Eigen::LLT<Eigen::MatrixXd> llt_cur(P_cur);
    if (llt_cur.info() != Eigen::Success)
      throw NumericalError("mh_update_beta: information plus prior precision block is singular");
    const Eigen::VectorXd mu_cur =
        fam.beta.segment(off, len) + llt_cur.solve(U.segment(off, len) + Rv.segment(off, len));

    Eigen::VectorXd xi(len);
    for (int i = 0; i < len; ++i) xi[i] = rng.normal();
    const Eigen::MatrixXd Lc = llt_cur.matrixL();
    const Eigen::VectorXd cand_b =
        mu_cur + Lc.transpose().triangularView<Eigen::Upper>().solve(xi);

    Family cand = fam;
    cand.beta.segment(off, len) = cand_b;

    Eigen::VectorXd U2(dim);
    Eigen::MatrixXd info2(dim, dim);
    sums(cand, U2, info2);
    const Eigen::MatrixXd P_cand =
        info2.block(off, off, len, len) + prior.R.block(off, off, len, len);
    Eigen::LLT<Eigen::MatrixXd> llt_cand(P_cand);
    if (llt_cand.info() != Eigen::Success)
      throw NumericalError("mh_update_beta: information plus prior precision block is singular");
    const Eigen::VectorXd mu_cand =
        cand_b + llt_cand.solve(U2.segment(off, len) + Rv.segment(off, len));

    const double log_fwd = mvn_logpdf_prec(cand_b, mu_cur, llt_cur);
    const double log_rev = mvn_logpdf_prec(fam.beta.segment(off, len), mu_cand, llt_cand);
    const double log_ratio = loglik_sum(cand, y, Z) + log_prior(cand.beta) -
                             (loglik_sum(fam, y, Z) + log_prior(fam.beta)) + log_rev - log_fwd;
    if (std::log(rng.uniform()) < log_ratio) {
      fam.beta = cand.beta;
      ++res.accepted;
    }
  }
  return res;
}

std::pair<double, bool> rw_mh_lognu(double nu, const std::function<double(double)>& log_lik,
                                    const std::function<double(double)>& log_prior, double nu_l,
                                    double nu_m, const MhTuning& t, RngStream& rng) {
  const double phi = std::log(nu - nu_l);
  const double cand = nu_l + std::exp(phi + t.c * rng.normal());
  if (cand > nu_m) return {nu, false};
  const double log_ratio = log_lik(cand) + log_prior(cand) - log_lik(nu) - log_prior(nu) +
                           std::log(cand - nu_l) - std::log(nu - nu_l);
  if (std::log(rng.uniform()) < log_ratio) return {cand, true};
  return {nu, false};
}

double draw_g_exp_inv(double c, double b, double a, RngStream& rng) {
  if (!(c > 0.0) || !(b > 0.0) || a < 0.0)
    throw NumericalError("draw_g_exp_inv: requires c>0, b>0, a>=0");
  const double e = std::sqrt(1.0 + 4.0 * a * b / (c * c));
  const double r = b * (e - 1.0) / (e + 1.0);
  const double d = 2.0 * b / (e + 1.0);
  for (;;) {
    const double g = rng.gamma(c, d);
    const double diff = std::sqrt(r * g) - std::sqrt(a / g);
    if (std::log(rng.uniform()) < -diff * diff) return g;
  }
}

double draw_positive_normal(double mu, double sigma2, RngStream& rng) {
  if (!(sigma2 > 0.0)) throw NumericalError("draw_positive_normal: sigma2 must be positive");
  const double sigma = std::sqrt(sigma2);
  const double alpha = -mu / sigma;
  if (alpha < 4.0) {
    // Inverse CDF through the upper tail: q ~ U(0, 1-Phi(alpha)).
    const double q_cap = 0.5 * std::erfc(alpha * M_SQRT1_2);
    const double q = q_cap * (1.0 - rng.uniform());
    return mu - sigma * norm_quantile(q);
  }
  // Exponential-tilting rejection for far-left means (Robert 1995).
  const double lambda = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
  for (;;) {
    const double x = alpha - std::log(rng.uniform()) / lambda;
    const double diff = x - lambda;
    if (std::log(rng.uniform()) < -0.5 * diff * diff) return mu + sigma * x;
  }
}

}  // namespace seqmi
