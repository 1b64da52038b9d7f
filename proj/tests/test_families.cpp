#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "seqmi/errors.hpp"
#include "seqmi/families.hpp"
#include "seqmi/rng.hpp"
#include "seqmi/special.hpp"
#include "support/oracles.hpp"

using namespace seqmi;

namespace {

Family make_family(FamilyKind kind, int levels, int zlen, RngStream& rng, double scale = 0.5) {
  Family f;
  f.kind = kind;
  f.levels = levels;
  f.beta.resize(beta_length(kind, levels, zlen));
  for (int i = 0; i < f.beta.size(); ++i) f.beta[i] = scale * rng.normal();
  f.gamma = 0.5 + rng.uniform() * 2.0;
  f.kappa = 0.1 + rng.uniform() * 1.9;
  f.psi = rng.normal();
  f.nu = 4.0 + rng.uniform() * 20.0;
  return f;
}

Eigen::VectorXd random_z(int zlen, RngStream& rng) {
  Eigen::VectorXd z(zlen);
  z[0] = 1.0;
  for (int i = 1; i < zlen; ++i) z[i] = rng.normal();
  return z;
}

const std::vector<std::pair<FamilyKind, int>> kAllFamilies = {
    {FamilyKind::Normal, 0},      {FamilyKind::Logistic, 2}, {FamilyKind::PropOdds, 4},
    {FamilyKind::MultiLogit, 3},  {FamilyKind::Poisson, 0},  {FamilyKind::NegBinomial, 0},
    {FamilyKind::SkewNormal, 0},  {FamilyKind::SkewT, 0}};

}  // namespace

TEST_CASE("closed-form spot values") {
  Family lg;
  lg.kind = FamilyKind::Logistic;
  lg.levels = 2;
  lg.beta = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd z(2);
  z << 1.0, 0.3;
  CHECK(log_density(lg, 1.0, z) == doctest::Approx(std::log(0.5)).epsilon(1e-14));

  Family po;
  po.kind = FamilyKind::Poisson;
  po.beta = Eigen::VectorXd::Zero(2);
  CHECK(log_density(po, 0.0, z) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("negative binomial approaches poisson as overdispersion vanishes") {
  Eigen::VectorXd z(1);
  z << 1.0;
  Family nb;
  nb.kind = FamilyKind::NegBinomial;
  nb.beta = Eigen::VectorXd::Constant(1, std::log(2.0));
  nb.kappa = 1e-8;
  Family po;
  po.kind = FamilyKind::Poisson;
  po.beta = nb.beta;
  CHECK(std::fabs(log_density(nb, 3.0, z) - log_density(po, 3.0, z)) < 1e-6);
}

TEST_CASE("score spot values") {
  Eigen::VectorXd z(2);
  z << 1.0, -0.4;
  Family lg;
  lg.kind = FamilyKind::Logistic;
  lg.levels = 2;
  lg.beta = Eigen::VectorXd::Zero(2);
  const Eigen::VectorXd s = score_beta(lg, 1.0, z);
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(-0.2).epsilon(1e-14));

  Family po;
  po.kind = FamilyKind::Poisson;
  po.beta.resize(2);
  po.beta << std::log(2.0), 0.0;
  Eigen::VectorXd z1(2);
  z1 << 1.0, 0.7;
  CHECK(score_beta(po, 2.0, z1).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("score matches finite differences of the log density at random points") {
  RngStream rng(101);
  for (const auto& [kind, K] : kAllFamilies) {
    const int zlen = 3;
    for (int rep = 0; rep < 100; ++rep) {
      Family f = make_family(kind, K, zlen, rng);
      const Eigen::VectorXd z = random_z(zlen, rng);
      SkewLatent lat;
      if (f.is_skew()) {
        lat.d = 0.5 + rng.uniform();
        lat.w = std::fabs(rng.normal());
      }
      double y;
      if (f.is_skew()) {
        y = f.beta.dot(z) + f.psi * lat.w + rng.normal() / std::sqrt(lat.d * f.gamma);
      } else {
        y = sample_response(f, z, rng);
      }
      const Eigen::VectorXd s = score_beta(f, y, z, lat);
      const Eigen::VectorXd fd = oracle::fd_gradient(
          [&](const Eigen::VectorXd& b) {
            Family g = f;
            g.beta = b;
            return log_density(g, y, z, lat);
          },
          f.beta);
      for (int k = 0; k < s.size(); ++k)
        CHECK(std::fabs(s[k] - fd[k]) < 1e-6 * (1.0 + std::fabs(s[k])));
    }
  }
}

TEST_CASE("fisher information equals the score second moment") {
  RngStream rng(202);
  const int zlen = 2;
  for (const auto& [kind, K] : kAllFamilies) {
    Family f = make_family(kind, K, zlen, rng, 0.4);
    const Eigen::VectorXd z = random_z(zlen, rng);
    SkewLatent lat;
    if (f.is_skew()) {
      lat.d = 1.3;
      lat.w = 0.8;
    }
    const int n = 50000;
    const int dim = static_cast<int>(f.beta.size());
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd acc2 = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < n; ++i) {
      double y;
      if (f.is_skew())
        y = f.beta.dot(z) + f.psi * lat.w + rng.normal() / std::sqrt(lat.d * f.gamma);
      else
        y = sample_response(f, z, rng);
      const Eigen::VectorXd s = score_beta(f, y, z, lat);
      const Eigen::MatrixXd op = s * s.transpose();
      acc += op;
      acc2 += op.cwiseProduct(op);
    }
    const Eigen::MatrixXd mean = acc / n;
    const bool categorical = kind == FamilyKind::Logistic || kind == FamilyKind::PropOdds ||
                             kind == FamilyKind::MultiLogit;
    const Eigen::MatrixXd info = fisher_beta(f, categorical ? 1.0 : 0.0, z, lat);
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b) {
        const double var = acc2(a, b) / n - mean(a, b) * mean(a, b);
        const double se = std::sqrt(std::max(var, 1e-30) / n);
        CHECK(std::fabs(mean(a, b) - info(a, b)) < 5.0 * se + 1e-12);
      }
  }
}

TEST_CASE("gradients in missing continuous predictors match finite differences") {
  RngStream rng(303);
  // z = (1, u, v, u*w0): one missing cell u enters both a main effect and an
  // interaction with a fixed covariate value w0; beta_ic carries the chain rule.
  const double w0 = 1.7;
  for (const auto& [kind, K] : kAllFamilies) {
    for (int rep = 0; rep < 30; ++rep) {
      Family f = make_family(kind, K, 4, rng, 0.3);
      SkewLatent lat;
      if (f.is_skew()) {
        lat.d = 0.5 + rng.uniform();
        lat.w = std::fabs(rng.normal());
      }
      const double v = rng.normal();
      const bool continuous_kind =
          kind == FamilyKind::Normal || kind == FamilyKind::SkewNormal || kind == FamilyKind::SkewT;

      // Missing-cell vector: yc[0] = u; for continuous kinds yc[1] is the
      // visit's own response with the -1 convention.
      const int nmiss = continuous_kind ? 2 : 1;
      auto build = [&](const Eigen::VectorXd& yc, double& y_out, Eigen::VectorXd& z_out) {
        z_out.resize(4);
        z_out << 1.0, yc[0], v, yc[0] * w0;
        y_out = continuous_kind ? yc[1] : 0.0;
      };
      auto effective_beta = [&](int class_k) {
        const int l = 4;
        Eigen::VectorXd coefs;
        if (kind == FamilyKind::PropOdds)
          coefs = f.beta.tail(l);
        else if (kind == FamilyKind::MultiLogit)
          coefs = f.beta.segment(class_k * l, l);
        else
          coefs = f.beta;
        Eigen::VectorXd b(nmiss);
        b[0] = coefs[1] + coefs[3] * w0;
        if (continuous_kind) b[1] = -1.0;
        return b;
      };

      Eigen::VectorXd yc(nmiss);
      yc[0] = rng.normal();
      double y;
      Eigen::VectorXd z;
      if (continuous_kind) {
        Eigen::VectorXd zt(4);
        zt << 1.0, yc[0], v, yc[0] * w0;
        yc[1] = f.beta.dot(zt) + (f.is_skew() ? f.psi * lat.w : 0.0) + rng.normal();
      }
      build(yc, y, z);
      if (!continuous_kind) y = sample_response(f, z, rng);

      LinearPredictorContext ctx;
      ctx.z = z;
      ctx.selector = continuous_kind ? std::vector<int>{1, -1} : std::vector<int>{1};
      const int ncls = kind == FamilyKind::MultiLogit ? K - 1 : 1;
      ctx.beta_ic.resize(nmiss, ncls);
      for (int c = 0; c < ncls; ++c) ctx.beta_ic.col(c) = effective_beta(c);

      auto F = [&](const Eigen::VectorXd& yy) {
        double yv;
        Eigen::VectorXd zz;
        build(yy, yv, zz);
        if (!continuous_kind) yv = y;
        return log_density(f, yv, zz, lat);
      };
      const Eigen::VectorXd g = grad_yc(f, y, ctx, lat);
      Eigen::VectorXd point = yc;
      if (continuous_kind) point[1] = y;
      const Eigen::VectorXd fd = oracle::fd_gradient(F, point);
      for (int k = 0; k < g.size(); ++k)
        CHECK(std::fabs(g[k] - fd[k]) < 2e-6 * (1.0 + std::fabs(g[k])));

      // Curvature is minus the Jacobian of the gradient (all families here
      // have y-free observed information in eta) and must stay PSD.
      const Eigen::MatrixXd H = hess_yc(f, y, ctx, lat);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      CHECK(es.eigenvalues().minCoeff() > -1e-10);

      auto G = [&](const Eigen::VectorXd& yy) {
        double yv;
        Eigen::VectorXd zz;
        build(yy, yv, zz);
        if (!continuous_kind) yv = y;
        LinearPredictorContext c2 = ctx;
        c2.z = zz;
        return Eigen::VectorXd(grad_yc(f, yv, c2, lat));
      };
      const Eigen::MatrixXd Jg = -oracle::fd_jacobian(G, point);
      for (int a = 0; a < H.rows(); ++a)
        for (int b = 0; b < H.cols(); ++b)
          CHECK(std::fabs(H(a, b) - Jg(a, b)) < 1e-5 * (1.0 + std::fabs(H(a, b))));
    }
  }
}

TEST_CASE("sampling saturates the logistic at extreme linear predictors") {
  Family f;
  f.kind = FamilyKind::Logistic;
  f.levels = 2;
  f.beta = Eigen::VectorXd::Constant(1, 30.0);
  Eigen::VectorXd z(1);
  z << 1.0;
  RngStream rng(404);
  for (int i = 0; i < 10000; ++i) CHECK(sample_response(f, z, rng) == 1.0);
}

TEST_CASE("normal sampling moments") {
  Family f;
  f.kind = FamilyKind::Normal;
  f.beta.resize(2);
  f.beta << 0.2, 1.0;
  f.gamma = 4.0;
  Eigen::VectorXd z(2);
  z << 1.0, 0.5;
  RngStream rng(505);
  std::vector<double> xs(100000);
  for (double& x : xs) x = sample_response(f, z, rng);
  const double mu = f.beta.dot(z);
  CHECK(std::fabs(oracle::mean(xs) - mu) < 3.0 * 0.5 / std::sqrt(100000.0));
  CHECK(std::fabs(oracle::variance(xs) - 0.25) < 3.0 * 0.25 * std::sqrt(2.0 / 100000.0));
}

TEST_CASE("skew-t sampling matches its closed-form density") {
  Family f;
  f.kind = FamilyKind::SkewT;
  f.beta.resize(2);
  f.beta << 0.0, 1.0;
  f.gamma = 1.0;
  f.psi = 2.0;
  f.nu = 10.0;
  Eigen::VectorXd z(2);
  z << 1.0, 0.0;
  RngStream rng(606);
  std::vector<double> xs(100000);
  for (double& x : xs) x = sample_response(f, z, rng);

  const double omega = std::sqrt(1.0 / f.gamma + f.psi * f.psi);
  const double lambda = f.psi * std::sqrt(f.gamma);
  auto pdf = [&](double y) {
    const double u = y / omega;
    const double t = lambda * u * std::sqrt((f.nu + 1.0) / (f.nu + u * u));
    return 2.0 / omega * std::exp(t_logpdf(u, f.nu)) * t_cdf(t, f.nu + 1.0);
  };
  CHECK(oracle::ks_vs_pdf(xs, pdf, -80.0, 120.0) < 0.01);
}

TEST_CASE("count family sampling moments") {
  RngStream rng(707);
  Eigen::VectorXd z(1);
  z << 1.0;
  Family nb;
  nb.kind = FamilyKind::NegBinomial;
  nb.beta = Eigen::VectorXd::Constant(1, std::log(3.0));
  nb.kappa = 0.7;
  std::vector<double> xs(100000);
  for (double& x : xs) x = sample_response(nb, z, rng);
  const double mu = 3.0, v = mu * (1.0 + nb.kappa * mu);
  CHECK(std::fabs(oracle::mean(xs) - mu) < 4.0 * std::sqrt(v / 100000.0));
  CHECK(std::fabs(oracle::variance(xs) - v) < 0.05 * v);
}

TEST_CASE("categorical probabilities are coherent and match sampling") {
  RngStream rng(808);
  Eigen::VectorXd z(2);
  z << 1.0, 0.8;
  for (const auto& [kind, K] : {std::pair{FamilyKind::PropOdds, 4},
                                std::pair{FamilyKind::MultiLogit, 3},
                                std::pair{FamilyKind::Logistic, 2}}) {
    Family f = make_family(kind, K, 2, rng, 0.8);
    const std::vector<double> pi = category_probs(f, z);
    double total = 0.0;
    for (double p : pi) {
      CHECK(p > 0.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    const int n = 100000;
    std::vector<int> counts(K, 0);
    for (int i = 0; i < n; ++i) ++counts[static_cast<int>(sample_response(f, z, rng)) - 1];
    for (int k = 0; k < K; ++k) {
      const double se = std::sqrt(pi[k] * (1.0 - pi[k]) / n);
      CHECK(std::fabs(static_cast<double>(counts[k]) / n - pi[k]) < 4.0 * se);
    }
  }
}

TEST_CASE("support violations are reported as domain errors") {
  Eigen::VectorXd z(1);
  z << 1.0;
  Family lg;
  lg.kind = FamilyKind::Logistic;
  lg.levels = 2;
  lg.beta = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(log_density(lg, 3.0, z), DataError);

  Family od;
  od.kind = FamilyKind::PropOdds;
  od.levels = 3;
  od.beta = Eigen::VectorXd::Zero(beta_length(FamilyKind::PropOdds, 3, 1));
  CHECK_THROWS_AS(log_density(od, 4.0, z), DataError);
  CHECK_THROWS_AS(log_density(od, 1.5, z), DataError);

  Family po;
  po.kind = FamilyKind::Poisson;
  po.beta = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(log_density(po, -1.0, z), DataError);

  Family mismatched;
  mismatched.kind = FamilyKind::Normal;
  mismatched.beta = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(log_density(mismatched, 0.0, z), std::logic_error);
}
