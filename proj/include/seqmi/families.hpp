#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "seqmi/rng.hpp"

namespace seqmi {

// Regression families for the sequential visit models. Each family exposes the
// log-density, score/Fisher information in the coefficient vector, the
// gradient/curvature in intermittent missing continuous predictors, and
// response simulation.

enum class FamilyKind { Normal, Logistic, PropOdds, MultiLogit, Poisson, NegBinomial, SkewNormal, SkewT };

// Coefficient layout per kind, with l = len(z):
//   Normal/Logistic/Poisson/NegBinomial/SkewNormal/SkewT: beta has length l.
//   PropOdds(K): beta = (d_2..d_{K-1}, coefs), length (K-2)+l; cutpoints are
//     c_1 = 0, c_k = sum_{t=2..k} exp(d_t), strictly increasing by construction.
//   MultiLogit(K): beta = (beta_1', .., beta_{K-1}')' stacked by class, length (K-1)*l;
//     class K is the reference and carries no coefficients.
struct Family {
  FamilyKind kind = FamilyKind::Normal;
  int levels = 0;       // K for Logistic (2), PropOdds, MultiLogit
  Eigen::VectorXd beta;
  double gamma = 1.0;   // precision (Normal, SkewNormal, SkewT)
  double kappa = 1.0;   // overdispersion (NegBinomial)
  double psi = 0.0;     // skew weight (SkewNormal, SkewT)
  double nu = std::numeric_limits<double>::infinity();  // d.o.f. (SkewT)

  bool is_skew() const { return kind == FamilyKind::SkewNormal || kind == FamilyKind::SkewT; }
};

// Per-observation latents for the skew families' conditional-normal form
// (mean z*beta + psi*w, precision d*gamma). d is fixed at 1 for SkewNormal.
struct SkewLatent {
  double d = 1.0;
  double w = 0.0;
};

// Effective coefficients of a subject's intermittent missing continuous cells.
// beta_ic(r, k) is the derivative of the class-k linear predictor with respect
// to missing cell r; single-predictor families use column 0. For the visit's
// own response cell (continuous families) the builder stores -1 so that
// gradients take the residual form.
struct LinearPredictorContext {
  Eigen::VectorXd z;
  std::vector<int> selector;  // positions within z, or -1 for the own-response cell
  Eigen::MatrixXd beta_ic;
};

int beta_length(FamilyKind kind, int levels, int zlen);

double log_density(const Family& fam, double y, const Eigen::VectorXd& z,
                   const SkewLatent& lat = {});
Eigen::VectorXd score_beta(const Family& fam, double y, const Eigen::VectorXd& z,
                           const SkewLatent& lat = {});
Eigen::MatrixXd fisher_beta(const Family& fam, double y, const Eigen::VectorXd& z,
                            const SkewLatent& lat = {});

Eigen::VectorXd grad_yc(const Family& fam, double y, const LinearPredictorContext& ctx,
                        const SkewLatent& lat = {});
Eigen::MatrixXd hess_yc(const Family& fam, double y, const LinearPredictorContext& ctx,
                        const SkewLatent& lat = {});

// Draws y ~ f(y | z, parameters), with an optional additive shift of the linear
// predictor (used by delta-adjusted imputation). Skew families draw their
// latents internally.
double sample_response(const Family& fam, const Eigen::VectorXd& z, RngStream& rng,
                       double eta_offset = 0.0);

// Category probabilities for the discrete families (Logistic: {pi, 1-pi};
// PropOdds/MultiLogit: pi_1..pi_K), used by enumeration and by tests.
std::vector<double> category_probs(const Family& fam, const Eigen::VectorXd& z,
                                   double eta_offset = 0.0);

}  // namespace seqmi
