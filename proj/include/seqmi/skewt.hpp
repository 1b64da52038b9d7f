#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "seqmi/rng.hpp"
#include "seqmi/samplers.hpp"

namespace seqmi {

// Skew-normal / skew-t regression engine: the density, the PC prior on the
// degrees of freedom, and the per-visit Gibbs cycle with parameter expansion.

struct SkewTParams {
  Eigen::VectorXd beta;
  double psi = 0.0;    // skew loading
  double gamma = 1.0;  // base precision, > 0
  double nu = std::numeric_limits<double>::infinity();
};

struct SkewTLatents {
  std::vector<double> d;  // per-observation mixing weights, > 0
  std::vector<double> w;  // per-observation skew latents, > 0
  double d_psi = 1.0;     // prior-hierarchy latent for psi
  double rho = 1.0;       // prior-hierarchy latent for gamma
};

struct SkewTHyper {
  double n0 = 2.0;   // half-t prior df on sigma
  double a0 = 1e5;   // half-t prior scale
  double p0 = 0.7;   // prior mass placed below nu0
  double nu0 = 10.0;
  double nu_l = 2.0;
  double nu_m = 1000.0;
  double rate() const;  // PC prior rate: p0 / kl_d(nu0)
};

struct SkewTOptions {
  bool skew_normal = false;  // d == 1 and nu == inf; their updates are skipped
  bool update_psi = true;    // false: psi pinned, its column and latents left out
  bool update_nu = true;     // false: nu pinned at its current value
  bool enable_px = true;     // parameter-expansion rescaling moves
  double beta_ridge = 0.0;   // precision of an optional N(0, (gamma r)^-1) beta prior
};

// (psi, gamma) <-> (omega2, lambda) with omega2 = 1/gamma + psi^2 and
// lambda = psi sqrt(gamma); the maps are mutually inverse.
struct ShapeScale {
  double omega2;
  double lambda;
};
ShapeScale to_shape_scale(double psi, double gamma);
struct LoadPrecision {
  double psi;
  double gamma;
};
LoadPrecision from_shape_scale(double omega2, double lambda);

// 2/omega t_nu(u) T_{nu+1}[lambda u sqrt((nu+1)/(nu+u^2))] with u = (y-mu)/omega;
// nu = inf gives the skew-normal limit 2/omega phi(u) Phi(lambda u).
double skewt_logpdf(double y, double mu, double omega2, double lambda, double nu);
double skewt_pdf(double y, double mu, double omega2, double lambda, double nu);

// d(nu) = sqrt(2 KL(t_nu || normal)) from the closed form, and its derivative.
// Both throw NumericalError for nu <= 2 where the KL is undefined.
double kl_d(double nu);
double kl_d_deriv(double nu);

// PC prior on nu: density proportional to rate * exp(-rate d(nu)) |d'(nu)|,
// normalized over (nu_l, nu_m] (exactly, via the substitution s = d(nu)).
double pc_prior_logunnorm(double nu, double rate);
double pc_prior(double nu, double rate, double nu_l = 2.0, double nu_m = 1000.0);

// Marginalized (latent-free) log posterior of nu for one visit slice.
double nu_posterior_logdensity(double nu, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                               const Eigen::VectorXd& beta, double psi, double gamma,
                               const SkewTHyper& hyper);

struct SkewTState {
  SkewTParams par;
  SkewTLatents lat;
  MhTuning nu_tuning;
};

// Sized, conservative starting state: beta = 0, gamma = 1, psi = 0, nu = 10
// (inf in skew-normal mode), unit latents.
SkewTState init_skewt_state(int n, int l, const SkewTOptions& opt);

// One full parameter sweep over a complete n-row slice (y, Z): the hierarchy
// latents, the gamma-normal (psi, beta, gamma) block, nu, the per-observation
// (d, w) pairs, then the two expansion rescalings.
void gibbs_cycle(SkewTState& st, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                 const SkewTHyper& hyper, const SkewTOptions& opt, RngStream& rng);

}  // namespace seqmi
