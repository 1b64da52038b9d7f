#include "seqmi/fcs_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "seqmi/errors.hpp"

namespace seqmi {
namespace {

constexpr std::uint64_t kFcsSweepStream = 0xf51;
constexpr std::uint64_t kFcsParamStream = 0xf52;
constexpr std::uint64_t kFcsDropoutStream = 0xf5d;

std::string visit_tag(int j1) { return "visit " + std::to_string(j1) + ": "; }

void reject_skew(const ModelSpec& spec, const std::string& engine) {
  for (std::size_t j = 0; j < spec.visits.size(); ++j)
    if (spec.visits[j].kind == FamilyKind::SkewNormal ||
        spec.visits[j].kind == FamilyKind::SkewT)
      throw ConfigError(visit_tag(static_cast<int>(j) + 1) + engine +
                        " draws parameters by maximum likelihood; model the "
                        "visit as Normal here or use the sampler engine");
}

// Penalized log-likelihood, score, and information of beta for fixed
// dispersion parameters.
struct BetaObjective {
  const Family& fam;
  const Eigen::VectorXd& y;
  const Eigen::MatrixXd& Z;
  double ridge;

  double loglik(const Family& at) const {
    double ll = 0.0;
    for (int i = 0; i < y.size(); ++i)
      ll += log_density(at, y[i], Z.row(i).transpose());
    return ll - 0.5 * ridge * at.beta.squaredNorm();
  }
};

// Newton ascent of the penalized likelihood in beta. Throws NumericalError on
// a singular information matrix, diverging coefficients, or no convergence.
// Returns the information matrix (including the ridge) at the optimum.
Eigen::MatrixXd fit_beta_mle(Family& fam, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& Z, double ridge) {
  const int n = static_cast<int>(y.size());
  const int bl = static_cast<int>(fam.beta.size());
  const double tol = 1e-8 * std::max(1.0, static_cast<double>(n));
  const BetaObjective obj{fam, y, Z, ridge};
  const Eigen::MatrixXd ridge_mat =
      ridge * Eigen::MatrixXd::Identity(bl, bl);

  double ll = obj.loglik(fam);
  Eigen::MatrixXd info(bl, bl);
  for (int iter = 0; iter < 80; ++iter) {
    Eigen::VectorXd score = -ridge * fam.beta;
    info = ridge_mat;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd zi = Z.row(i).transpose();
      score += score_beta(fam, y[i], zi);
      info += fisher_beta(fam, y[i], zi);
    }
    if (score.lpNorm<Eigen::Infinity>() < tol) return info;

    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success)
      throw NumericalError("singular information matrix");
    Eigen::VectorXd step = llt.solve(score);
    Family cand = fam;
    double cand_ll = -std::numeric_limits<double>::infinity();
    for (int half = 0; half < 40; ++half) {
      cand.beta = fam.beta + step;
      cand_ll = obj.loglik(cand);
      if (std::isfinite(cand_ll) && cand_ll >= ll - 1e-12) break;
      step *= 0.5;
    }
    if (!std::isfinite(cand_ll)) throw NumericalError("no convergence");
    fam.beta = cand.beta;
    ll = cand_ll;
    if (fam.beta.norm() > 1e3)
      throw NumericalError("diverging coefficients");
  }
  throw NumericalError("no convergence");
}

// Profile log-likelihood of log(kappa) at the current beta.
double nb_profile(const Family& fam, const Eigen::VectorXd& y,
                  const Eigen::MatrixXd& Z, double log_kappa) {
  Family at = fam;
  at.kappa = std::exp(log_kappa);
  double ll = 0.0;
  for (int i = 0; i < y.size(); ++i)
    ll += log_density(at, y[i], Z.row(i).transpose());
  return ll;
}

// Alternates beta Newton fits with 1-D Newton steps on log(kappa); returns
// the curvature of the log(kappa) profile at the optimum. log(kappa) is kept
// in [-30, 30]: past that the model is numerically Poisson (or pure
// overdispersion) and the boundary is the honest optimum.
double fit_nb_kappa(Family& fam, const Eigen::VectorXd& y,
                    const Eigen::MatrixXd& Z, double ridge,
                    Eigen::MatrixXd& info) {
  const double h = 1e-3;
  double lk = std::log(fam.kappa);
  double curv = 0.0;
  for (int round = 0; round < 40; ++round) {
    info = fit_beta_mle(fam, y, Z, ridge);
    const double f0 = nb_profile(fam, y, Z, lk);
    const double fp = nb_profile(fam, y, Z, lk + h);
    const double fm = nb_profile(fam, y, Z, lk - h);
    const double grad = (fp - fm) / (2.0 * h);
    curv = -(fp - 2.0 * f0 + fm) / (h * h);
    double step = curv > 0.0 ? grad / curv : (grad > 0.0 ? 0.5 : -0.5);
    step = std::clamp(step, -2.0, 2.0);
    if (!std::isfinite(step)) throw NumericalError("overdispersion fit failed");
    lk = std::clamp(lk + step, -30.0, 30.0);
    fam.kappa = std::exp(lk);
    if (std::abs(step) < 1e-9) break;
  }
  return std::max(curv, 1e-8);
}

void check_binary_separation(const Family& fam, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& Z, int j1) {
  if (fam.kind != FamilyKind::Logistic) return;
  double min_margin = std::numeric_limits<double>::infinity();
  double max_margin = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < y.size(); ++i) {
    const double eta = fam.beta.dot(Z.row(i).transpose());
    const double margin = y[i] == 1.0 ? eta : -eta;
    min_margin = std::min(min_margin, margin);
    max_margin = std::max(max_margin, margin);
  }
  if (min_margin >= 0.0 && max_margin > 0.0)
    throw NumericalError(visit_tag(j1) +
                         "the conditional model is separated; the maximum "
                         "likelihood estimate does not exist");
}

// Draws the visit's parameters: exact conjugate for Normal, otherwise
// N(MLE, I^-1) with one extra-ridge retry on fit failure.
Family draw_visit_params(const VisitModel& vm, const Family& start,
                         const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                         RngStream& rng, int j1) {
  Family fam = start;
  if (vm.kind == FamilyKind::Normal) {
    auto [beta, gamma] = draw_normal_visit(vm, y, Z, rng);
    fam.beta = std::move(beta);
    fam.gamma = gamma;
    return fam;
  }

  Eigen::MatrixXd info;
  double kappa_curv = 0.0;
  auto fit = [&](double ridge) {
    if (vm.kind == FamilyKind::NegBinomial)
      kappa_curv = fit_nb_kappa(fam, y, Z, ridge, info);
    else
      info = fit_beta_mle(fam, y, Z, ridge);
  };
  try {
    fit(vm.ridge);
  } catch (const NumericalError& first) {
    fam = make_family(vm);
    fam.kappa = start.kappa;
    try {
      fit(vm.ridge + 1e-4);
    } catch (const NumericalError& second) {
      throw NumericalError(visit_tag(j1) + "conditional model fit failed (" +
                           second.what() + ")");
    }
  }
  check_binary_separation(fam, y, Z, j1);

  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success)
    throw NumericalError(visit_tag(j1) + "singular information at the MLE");
  Eigen::VectorXd noise(fam.beta.size());
  for (int i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
  fam.beta += llt.matrixU().solve(noise);
  if (vm.kind == FamilyKind::NegBinomial)
    fam.kappa = std::exp(std::clamp(
        std::log(fam.kappa) + rng.normal() / std::sqrt(kappa_curv), -30.0,
        30.0));
  return fam;
}

// Response rows for one chained conditional: subjects with the visit observed.
int collect_observed_rows(const Dataset& data, const VisitModel& vm, int j,
                          Eigen::VectorXd& y, Eigen::MatrixXd& Z) {
  const int l = static_cast<int>(vm.terms.size());
  int rows = 0;
  for (const SubjectRecord& sub : data.subjects) rows += sub.observed[j] ? 1 : 0;
  y.resize(rows);
  Z.resize(rows, l);
  int r = 0;
  for (const SubjectRecord& sub : data.subjects) {
    if (!sub.observed[j]) continue;
    y[r] = sub.y[j];
    Z.row(r) = design_row(vm, sub.x, sub.y).transpose();
    ++r;
  }
  return rows;
}

}  // namespace

FcsChain init_fcs_chain(const Dataset& data, const ModelSpec& fcs_spec,
                        RngStream& rng) {
  validate_fcs_spec(fcs_spec, data);
  reject_skew(fcs_spec, "the chained conditional");

  FcsChain chain;
  chain.source = data;
  chain.work = data;
  chain.spec = fcs_spec;
  chain.order.resize(data.p);
  for (int j = 0; j < data.p; ++j) chain.order[j] = j + 1;

  std::vector<std::vector<double>> pool(data.p);
  for (const SubjectRecord& sub : data.subjects)
    for (int j = 0; j < data.p; ++j)
      if (sub.observed[j]) pool[j].push_back(sub.y[j]);

  for (SubjectRecord& sub : chain.work.subjects) {
    for (int j = 0; j < data.p; ++j) {
      if (sub.observed[j]) continue;
      if (pool[j].empty())
        throw DataError("visit " + std::to_string(j + 1) +
                        " has no observed values");
      if (data.visit_types[j].discrete()) {
        const auto pick = static_cast<std::size_t>(rng.uniform() * pool[j].size());
        sub.y[j] = pool[j][std::min(pick, pool[j].size() - 1)];
      } else {
        double mean = 0.0;
        for (double v : pool[j]) mean += v;
        sub.y[j] = mean / static_cast<double>(pool[j].size());
      }
    }
  }
  return chain;
}

void fcs_sweep(FcsChain& chain, RngStream& rng) {
  const int p = chain.work.p;
  for (int j1 : chain.order) {
    if (j1 < 1 || j1 > p) throw ConfigError("sweep order visits out of range");
    const int j = j1 - 1;
    const VisitModel& vm = chain.spec.visits[j];

    Eigen::VectorXd y;
    Eigen::MatrixXd Z;
    collect_observed_rows(chain.work, vm, j, y, Z);

    Family start = make_family(vm);
    Family fam = draw_visit_params(vm, start, y, Z, rng, j1);

    for (SubjectRecord& sub : chain.work.subjects) {
      if (sub.observed[j]) continue;
      const Eigen::VectorXd z = design_row(vm, sub.x, sub.y);
      sub.y[j] = sample_response(fam, z, rng);
    }
  }
}

Dataset fcs_monotone_snapshot(const FcsChain& chain) {
  Dataset out = chain.source;
  for (int i = 0; i < out.n(); ++i) {
    SubjectRecord& sub = out.subjects[i];
    const SubjectRecord& filled = chain.work.subjects[i];
    for (int j = 0; j < out.p; ++j)
      if (!sub.observed[j] && j + 1 <= sub.s) sub.y[j] = filled.y[j];
  }
  return out;
}

std::vector<Family> draw_sequential_given_monotone(const Dataset& monotone,
                                                   const ModelSpec& seq_spec,
                                                   RngStream& rng) {
  validate_model_spec(seq_spec, monotone);
  reject_skew(seq_spec, "this pipeline's sequential stage");

  std::vector<Family> fams;
  for (int j = 0; j < monotone.p; ++j) {
    const VisitModel& vm = seq_spec.visits[j];
    const int l = static_cast<int>(vm.terms.size());
    int rows = 0;
    for (const SubjectRecord& sub : monotone.subjects)
      rows += sub.s >= j + 1 ? 1 : 0;
    Eigen::VectorXd y(rows);
    Eigen::MatrixXd Z(rows, l);
    int r = 0;
    for (const SubjectRecord& sub : monotone.subjects) {
      if (sub.s < j + 1) continue;
      y[r] = sub.y[j];
      Z.row(r) = design_row(vm, sub.x, sub.y).transpose();
      ++r;
    }
    fams.push_back(draw_visit_params(vm, make_family(vm), y, Z, rng, j + 1));
  }
  return fams;
}

std::vector<Dataset> fcs_mnar_pipeline(const Dataset& data,
                                       const ModelSpec& fcs_spec,
                                       const ModelSpec& seq_spec,
                                       const Mechanism& mech,
                                       const FcsConfig& cfg) {
  if (cfg.m < 1) throw ConfigError("fcs: need m >= 1");
  if (cfg.sweeps < 0) throw ConfigError("fcs: negative sweep count");
  validate_fcs_spec(fcs_spec, data);
  validate_model_spec(seq_spec, data);

  RngStream root(cfg.seed);
  RngStream drop_base =
      root.substream({kFcsDropoutStream, mechanism_stream_key(mech)});

  std::vector<Dataset> out;
  out.reserve(cfg.m);
  for (int k = 0; k < cfg.m; ++k) {
    RngStream sweep_rng =
        root.substream({kFcsSweepStream, static_cast<std::uint64_t>(k)});
    FcsChain chain = init_fcs_chain(data, fcs_spec, sweep_rng);
    for (int t = 0; t < cfg.sweeps; ++t) fcs_sweep(chain, sweep_rng);

    Dataset completed = fcs_monotone_snapshot(chain);
    RngStream param_rng =
        root.substream({kFcsParamStream, static_cast<std::uint64_t>(k)});
    const std::vector<Family> fams =
        draw_sequential_given_monotone(completed, seq_spec, param_rng);

    for (SubjectRecord& sub : completed.subjects) {
      if (sub.s < completed.p) {
        RngStream sub_rng =
            drop_base.substream({static_cast<std::uint64_t>(k),
                                 static_cast<std::uint64_t>(sub.orig_index)});
        impute_dropout(sub, seq_spec, fams, mech, sub_rng);
      }
      for (int j = 0; j < completed.p; ++j) {
        if (!std::isfinite(sub.y[j]))
          throw NumericalError("imputation produced a non-finite value at visit " +
                               std::to_string(j + 1));
        sub.observed[j] = 1;
      }
      sub.s = completed.p;
    }
    out.push_back(std::move(completed));
  }
  return out;
}

MiRun run_fcs_pipeline(const Dataset& data, const ModelSpec& fcs_spec,
                       const ModelSpec& seq_spec, const Mechanism& mech,
                       const FcsConfig& cfg, const AnalysisSpec& analysis) {
  MiRun run;
  run.completed = fcs_mnar_pipeline(data, fcs_spec, seq_spec, mech, cfg);
  run.pooled = pool_analyses(run.completed, analysis);
  return run;
}

}  // namespace seqmi
