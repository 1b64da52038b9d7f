#include "seqmi/families.hpp"

#include <cmath>
#include <stdexcept>

#include "seqmi/errors.hpp"
#include "seqmi/special.hpp"

namespace seqmi {

namespace {

constexpr double kLogSqrt2Pi = 0.9189385332046727417803297;

void check_dims(const Family& fam, int zlen) {
  if (fam.beta.size() != beta_length(fam.kind, fam.levels, zlen))
    throw std::logic_error("family: beta length does not match predictor length");
}

void check_support(const Family& fam, double y) {
  auto bad = [&](const char* what) {
    throw DataError(std::string("family: response ") + std::to_string(y) + " " + what);
  };
  switch (fam.kind) {
    case FamilyKind::Normal:
    case FamilyKind::SkewNormal:
    case FamilyKind::SkewT:
      if (!std::isfinite(y)) bad("is not finite");
      break;
    case FamilyKind::Logistic:
      if (y != 1.0 && y != 2.0) bad("outside {1,2}");
      break;
    case FamilyKind::PropOdds:
    case FamilyKind::MultiLogit:
      if (y != std::floor(y) || y < 1.0 || y > fam.levels) bad("outside {1..K}");
      break;
    case FamilyKind::Poisson:
    case FamilyKind::NegBinomial:
      if (y != std::floor(y) || y < 0.0) bad("is not a nonnegative integer");
      break;
  }
}

// Cumulative logits for PropOdds: gam[k] = P(y <= k), k = 0..K (gam[0]=0, gam[K]=1).
std::vector<double> cumulative_probs(const Family& fam, double eta) {
  const int K = fam.levels;
  std::vector<double> gam(K + 1);
  gam[0] = 0.0;
  gam[K] = 1.0;
  double c = 0.0;
  for (int k = 1; k < K; ++k) {
    if (k >= 2) c += std::exp(fam.beta[k - 2]);
    gam[k] = expit(c + eta);
  }
  return gam;
}

Eigen::VectorXd multilogit_probs(const Family& fam, const Eigen::VectorXd& z, double off) {
  const int K = fam.levels;
  const int l = static_cast<int>(z.size());
  std::vector<double> eta(K);
  for (int k = 0; k + 1 < K; ++k) eta[k] = fam.beta.segment(k * l, l).dot(z) + off;
  eta[K - 1] = 0.0;
  const double lse = log_sum_exp(eta);
  Eigen::VectorXd pi(K);
  for (int k = 0; k < K; ++k) pi[k] = std::exp(eta[k] - lse);
  return pi;
}

// log Gamma(y + r) - log Gamma(r), kept exact for huge r (small overdispersion).
double log_rising(double r, double y) {
  if (y <= 64.0) {
    double s = 0.0;
    for (double t = 0.0; t < y; t += 1.0) s += std::log(r + t);
    return s;
  }
  return std::lgamma(y + r) - std::lgamma(r);
}

}  // namespace

int beta_length(FamilyKind kind, int levels, int zlen) {
  switch (kind) {
    case FamilyKind::PropOdds:
      return levels - 2 + zlen;
    case FamilyKind::MultiLogit:
      return (levels - 1) * zlen;
    default:
      return zlen;
  }
}

double log_density(const Family& fam, double y, const Eigen::VectorXd& z, const SkewLatent& lat) {
  check_dims(fam, static_cast<int>(z.size()));
  check_support(fam, y);
  switch (fam.kind) {
    case FamilyKind::Normal: {
      const double r = y - fam.beta.dot(z);
      return 0.5 * std::log(fam.gamma) - kLogSqrt2Pi - 0.5 * fam.gamma * r * r;
    }
    case FamilyKind::Logistic: {
      const double eta = fam.beta.dot(z);
      return y == 1.0 ? -log1pexp(-eta) : -log1pexp(eta);
    }
    case FamilyKind::PropOdds: {
      const int l = static_cast<int>(z.size());
      const auto gam = cumulative_probs(fam, fam.beta.tail(l).dot(z));
      const int k = static_cast<int>(y);
      return std::log(gam[k] - gam[k - 1]);
    }
    case FamilyKind::MultiLogit: {
      const Eigen::VectorXd pi = multilogit_probs(fam, z, 0.0);
      return std::log(pi[static_cast<int>(y) - 1]);
    }
    case FamilyKind::Poisson: {
      const double eta = fam.beta.dot(z);
      return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    }
    case FamilyKind::NegBinomial: {
      const double eta = fam.beta.dot(z);
      const double r = 1.0 / fam.kappa;
      const double lkm = log1pexp(std::log(fam.kappa) + eta);  // log(1 + kappa*mu), stable
      return log_rising(r, y) - std::lgamma(y + 1.0) - r * lkm + y * (eta - std::log(r) - lkm);
    }
    case FamilyKind::SkewNormal:
    case FamilyKind::SkewT: {
      const double prec = lat.d * fam.gamma;
      const double r = y - fam.beta.dot(z) - fam.psi * lat.w;
      return 0.5 * std::log(prec) - kLogSqrt2Pi - 0.5 * prec * r * r;
    }
  }
  throw std::logic_error("family: unknown kind");
}

Eigen::VectorXd score_beta(const Family& fam, double y, const Eigen::VectorXd& z,
                           const SkewLatent& lat) {
  check_dims(fam, static_cast<int>(z.size()));
  check_support(fam, y);
  const int l = static_cast<int>(z.size());
  switch (fam.kind) {
    case FamilyKind::Normal:
      return fam.gamma * (y - fam.beta.dot(z)) * z;
    case FamilyKind::Logistic:
      return ((y == 1.0 ? 1.0 : 0.0) - expit(fam.beta.dot(z))) * z;
    case FamilyKind::PropOdds: {
      const int K = fam.levels;
      const auto gam = cumulative_probs(fam, fam.beta.tail(l).dot(z));
      const int k = static_cast<int>(y);
      // dgam_k / dsigma = gam_k(1-gam_k) * (d*_2.., z')', d*_t = exp(d_t) I(t<=k).
      auto dgam = [&](int kk) {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(K - 2 + l);
        if (kk <= 0 || kk >= K) return u;
        for (int t = 2; t <= kk; ++t) u[t - 2] = std::exp(fam.beta[t - 2]);
        u.tail(l) = z;
        return Eigen::VectorXd(gam[kk] * (1.0 - gam[kk]) * u);
      };
      const double pik = gam[k] - gam[k - 1];
      return ((dgam(k) - dgam(k - 1)) / pik).eval();
    }
    case FamilyKind::MultiLogit: {
      const int K = fam.levels;
      const Eigen::VectorXd pi = multilogit_probs(fam, z, 0.0);
      Eigen::VectorXd s((K - 1) * l);
      for (int k = 0; k + 1 < K; ++k)
        s.segment(k * l, l) = (((static_cast<int>(y) == k + 1) ? 1.0 : 0.0) - pi[k]) * z;
      return s;
    }
    case FamilyKind::Poisson:
      return (y - std::exp(fam.beta.dot(z))) * z;
    case FamilyKind::NegBinomial: {
      const double mu = std::exp(fam.beta.dot(z));
      return ((y - mu) / (1.0 + fam.kappa * mu)) * z;
    }
    case FamilyKind::SkewNormal:
    case FamilyKind::SkewT:
      return lat.d * fam.gamma * (y - fam.beta.dot(z) - fam.psi * lat.w) * z;
  }
  throw std::logic_error("family: unknown kind");
}

Eigen::MatrixXd fisher_beta(const Family& fam, double y, const Eigen::VectorXd& z,
                            const SkewLatent& lat) {
  check_dims(fam, static_cast<int>(z.size()));
  check_support(fam, y);
  const int l = static_cast<int>(z.size());
  const Eigen::MatrixXd zzt = z * z.transpose();
  switch (fam.kind) {
    case FamilyKind::Normal:
      return fam.gamma * zzt;
    case FamilyKind::Logistic: {
      const double pi = expit(fam.beta.dot(z));
      return pi * (1.0 - pi) * zzt;
    }
    case FamilyKind::PropOdds: {
      const int K = fam.levels;
      const auto gam = cumulative_probs(fam, fam.beta.tail(l).dot(z));
      auto dgam = [&](int kk) {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(K - 2 + l);
        if (kk <= 0 || kk >= K) return u;
        for (int t = 2; t <= kk; ++t) u[t - 2] = std::exp(fam.beta[t - 2]);
        u.tail(l) = z;
        return Eigen::VectorXd(gam[kk] * (1.0 - gam[kk]) * u);
      };
      Eigen::MatrixXd info = Eigen::MatrixXd::Zero(K - 2 + l, K - 2 + l);
      for (int k = 1; k <= K; ++k) {
        const double pik = gam[k] - gam[k - 1];
        const Eigen::VectorXd dpi = dgam(k) - dgam(k - 1);
        info.noalias() += dpi * dpi.transpose() / pik;
      }
      return info;
    }
    case FamilyKind::MultiLogit: {
      const int K = fam.levels;
      const Eigen::VectorXd pi = multilogit_probs(fam, z, 0.0);
      Eigen::MatrixXd info((K - 1) * l, (K - 1) * l);
      for (int a = 0; a + 1 < K; ++a)
        for (int b = 0; b + 1 < K; ++b)
          info.block(a * l, b * l, l, l) =
              ((a == b ? pi[a] : 0.0) - pi[a] * pi[b]) * zzt;
      return info;
    }
    case FamilyKind::Poisson:
      return std::exp(fam.beta.dot(z)) * zzt;
    case FamilyKind::NegBinomial: {
      const double mu = std::exp(fam.beta.dot(z));
      return (mu / (1.0 + fam.kappa * mu)) * zzt;
    }
    case FamilyKind::SkewNormal:
    case FamilyKind::SkewT:
      return lat.d * fam.gamma * zzt;
  }
  throw std::logic_error("family: unknown kind");
}

Eigen::VectorXd grad_yc(const Family& fam, double y, const LinearPredictorContext& ctx,
                        const SkewLatent& lat) {
  check_dims(fam, static_cast<int>(ctx.z.size()));
  check_support(fam, y);
  const int l = static_cast<int>(ctx.z.size());
  switch (fam.kind) {
    case FamilyKind::Normal:
      return fam.gamma * (y - fam.beta.dot(ctx.z)) * ctx.beta_ic.col(0);
    case FamilyKind::SkewNormal:
    case FamilyKind::SkewT:
      return lat.d * fam.gamma * (y - fam.beta.dot(ctx.z) - fam.psi * lat.w) * ctx.beta_ic.col(0);
    case FamilyKind::Logistic: {
      const double pi = expit(fam.beta.dot(ctx.z));
      return ((y == 1.0 ? 1.0 : 0.0) - pi) * ctx.beta_ic.col(0);
    }
    case FamilyKind::PropOdds: {
      const auto gam = cumulative_probs(fam, fam.beta.tail(l).dot(ctx.z));
      const int k = static_cast<int>(y);
      return (1.0 - gam[k] - gam[k - 1]) * ctx.beta_ic.col(0);
    }
    case FamilyKind::MultiLogit: {
      const int K = fam.levels;
      const Eigen::VectorXd pi = multilogit_probs(fam, ctx.z, 0.0);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(ctx.beta_ic.rows());
      for (int k = 0; k + 1 < K; ++k)
        g += (((static_cast<int>(y) == k + 1) ? 1.0 : 0.0) - pi[k]) * ctx.beta_ic.col(k);
      return g;
    }
    case FamilyKind::Poisson:
      return (y - std::exp(fam.beta.dot(ctx.z))) * ctx.beta_ic.col(0);
    case FamilyKind::NegBinomial: {
      const double mu = std::exp(fam.beta.dot(ctx.z));
      return ((y - mu) / (1.0 + fam.kappa * mu)) * ctx.beta_ic.col(0);
    }
  }
  throw std::logic_error("family: unknown kind");
}

Eigen::MatrixXd hess_yc(const Family& fam, double y, const LinearPredictorContext& ctx,
                        const SkewLatent& lat) {
  check_dims(fam, static_cast<int>(ctx.z.size()));
  check_support(fam, y);
  const int l = static_cast<int>(ctx.z.size());
  const Eigen::VectorXd b = ctx.beta_ic.col(0);
  switch (fam.kind) {
    case FamilyKind::Normal:
      return fam.gamma * b * b.transpose();
    case FamilyKind::SkewNormal:
    case FamilyKind::SkewT:
      return lat.d * fam.gamma * b * b.transpose();
    case FamilyKind::Logistic: {
      const double pi = expit(fam.beta.dot(ctx.z));
      return pi * (1.0 - pi) * b * b.transpose();
    }
    case FamilyKind::PropOdds: {
      const auto gam = cumulative_probs(fam, fam.beta.tail(l).dot(ctx.z));
      const int k = static_cast<int>(y);
      const double c =
          gam[k] * (1.0 - gam[k]) + gam[k - 1] * (1.0 - gam[k - 1]);
      return c * b * b.transpose();
    }
    case FamilyKind::MultiLogit: {
      const int K = fam.levels;
      const Eigen::VectorXd pi = multilogit_probs(fam, ctx.z, 0.0);
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(ctx.beta_ic.rows(), ctx.beta_ic.rows());
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(ctx.beta_ic.rows());
      for (int k = 0; k + 1 < K; ++k) {
        h.noalias() += pi[k] * ctx.beta_ic.col(k) * ctx.beta_ic.col(k).transpose();
        mean += pi[k] * ctx.beta_ic.col(k);
      }
      h.noalias() -= mean * mean.transpose();
      return h;
    }
    case FamilyKind::Poisson:
      return std::exp(fam.beta.dot(ctx.z)) * b * b.transpose();
    case FamilyKind::NegBinomial: {
      const double mu = std::exp(fam.beta.dot(ctx.z));
      const double c = (1.0 + fam.kappa * y) * mu / ((1.0 + fam.kappa * mu) * (1.0 + fam.kappa * mu));
      return c * b * b.transpose();
    }
  }
  throw std::logic_error("family: unknown kind");
}

double sample_response(const Family& fam, const Eigen::VectorXd& z, RngStream& rng,
                       double eta_offset) {
  check_dims(fam, static_cast<int>(z.size()));
  const int l = static_cast<int>(z.size());
  switch (fam.kind) {
    case FamilyKind::Normal:
      return fam.beta.dot(z) + eta_offset + rng.normal() / std::sqrt(fam.gamma);
    case FamilyKind::Logistic: {
      const double pi = expit(fam.beta.dot(z) + eta_offset);
      return rng.uniform() < pi ? 1.0 : 2.0;
    }
    case FamilyKind::PropOdds: {
      const auto gam = cumulative_probs(fam, fam.beta.tail(l).dot(z) + eta_offset);
      const double u = rng.uniform();
      for (int k = 1; k < fam.levels; ++k)
        if (u <= gam[k]) return k;
      return fam.levels;
    }
    case FamilyKind::MultiLogit: {
      const Eigen::VectorXd pi = multilogit_probs(fam, z, eta_offset);
      const double u = rng.uniform();
      double acc = 0.0;
      for (int k = 0; k < fam.levels; ++k) {
        acc += pi[k];
        if (u <= acc) return k + 1;
      }
      return fam.levels;
    }
    case FamilyKind::Poisson:
      return static_cast<double>(rng.poisson(std::exp(fam.beta.dot(z) + eta_offset)));
    case FamilyKind::NegBinomial: {
      const double mu = std::exp(fam.beta.dot(z) + eta_offset);
      const double r = 1.0 / fam.kappa;
      const double lambda = rng.gamma(r, r / mu);
      return static_cast<double>(rng.poisson(lambda));
    }
    case FamilyKind::SkewNormal:
    case FamilyKind::SkewT: {
      // Draw order (d, w, noise) is fixed; replays depend on it.
      const double d =
          fam.kind == FamilyKind::SkewT ? rng.gamma(0.5 * fam.nu, 0.5 * fam.nu) : 1.0;
      const double w = std::fabs(rng.normal()) / std::sqrt(d);
      return fam.beta.dot(z) + eta_offset + fam.psi * w +
             rng.normal() / std::sqrt(d * fam.gamma);
    }
  }
  throw std::logic_error("family: unknown kind");
}

std::vector<double> category_probs(const Family& fam, const Eigen::VectorXd& z,
                                   double eta_offset) {
  check_dims(fam, static_cast<int>(z.size()));
  const int l = static_cast<int>(z.size());
  switch (fam.kind) {
    case FamilyKind::Logistic: {
      const double pi = expit(fam.beta.dot(z) + eta_offset);
      return {pi, 1.0 - pi};
    }
    case FamilyKind::PropOdds: {
      const auto gam = cumulative_probs(fam, fam.beta.tail(l).dot(z) + eta_offset);
      std::vector<double> pi(fam.levels);
      for (int k = 1; k <= fam.levels; ++k) pi[k - 1] = gam[k] - gam[k - 1];
      return pi;
    }
    case FamilyKind::MultiLogit: {
      const Eigen::VectorXd pi = multilogit_probs(fam, z, eta_offset);
      return std::vector<double>(pi.data(), pi.data() + pi.size());
    }
    default:
      throw std::logic_error("category_probs: family is not categorical");
  }
}

}  // namespace seqmi
