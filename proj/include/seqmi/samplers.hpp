#pragma once

#include <Eigen/Dense>
#include <functional>

#include "seqmi/families.hpp"
#include "seqmi/rng.hpp"

namespace seqmi {

// MH and variate primitives shared by the imputation engines.

struct MhTuning {
  double c = 1.0;         // step scale
  int window = 50;        // acceptance history length between adaptations
  double lo = 0.30;       // target acceptance band
  double hi = 0.70;
  bool frozen = false;    // set at end of burn-in; kernel is time-homogeneous after
  int count = 0;
  int accepted = 0;
};

// Multiplies c by 1.1 / 0.9 when the windowed acceptance rate leaves the band.
void adapt_tuning(MhTuning& t, double acceptance_rate);

// Records one accept/reject; adapts and resets the window when it fills
// (no-op once frozen).
void record_acceptance(MhTuning& t, bool accepted);

// Joint draw (beta, gamma) with density proportional to
//   gamma^(m/2-1) exp(-gamma/2 * bt' D bt),  bt = (-beta', 1)',
// via Cholesky of the (l+1)x(l+1) SPD matrix D. Requires m > l.
std::pair<Eigen::VectorXd, double> draw_normal_gamma(const Eigen::MatrixXd& D, double m,
                                                     RngStream& rng);

struct BetaPrior {
  Eigen::VectorXd v;   // prior mean
  Eigen::MatrixXd R;   // prior precision
};

struct MhBetaResult {
  int blocks = 0;
  int accepted = 0;
  bool all_accepted() const { return accepted == blocks; }
};

// One IRLS-style MH update of fam.beta against the likelihood of (y, Z) rows
// plus the normal prior. Proposal: beta* ~ N[beta + S(U + Rv), S] with
// S = (I(beta) + R)^{-1}; the acceptance ratio recomputes the proposal at the
// candidate. Coefficient vectors longer than 30 are updated in contiguous
// blocks of at most 15.
MhBetaResult mh_update_beta(Family& fam, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                            const BetaPrior& prior, RngStream& rng);

// Random-walk MH on log(nu - nu_l); candidates above nu_m are rejected
// outright. log_lik and log_prior are densities over nu itself (the Jacobian
// of the log transform is applied here).
std::pair<double, bool> rw_mh_lognu(double nu, const std::function<double(double)>& log_lik,
                                    const std::function<double(double)>& log_prior, double nu_l,
                                    double nu_m, const MhTuning& t, RngStream& rng);

// Exact draw from f(g) propto g^(c-1) exp(-b g) exp(-a/g), c>0, b>0, a>=0,
// by gamma-envelope rejection; acceptance is 1 when a=0.
double draw_g_exp_inv(double c, double b, double a, RngStream& rng);

// Exact N(mu, sigma2) draw conditioned on being positive.
double draw_positive_normal(double mu, double sigma2, RngStream& rng);

}  // namespace seqmi
