#include "seqmi/mda_engine.hpp"

#include <gsl/gsl_cdf.h>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "seqmi/errors.hpp"
#include "seqmi/families.hpp"
#include "seqmi/special.hpp"

namespace seqmi {
namespace {

constexpr double kCountTailMass = 1e-8;
constexpr int kCountCap = 500;
constexpr double kMaxCombos = 1e6;

SkewLatent subject_latent(const VisitState& vs, int i) {
  if (!vs.fam.is_skew()) return {};
  return {vs.skew.lat.d[i], vs.skew.lat.w[i]};
}

// Smallest k whose upper tail mass falls below kCountTailMass, capped.
int count_support_max(const Family& fam, double eta) {
  const double mu = std::exp(std::min(eta, 30.0));
  auto tail = [&](int k) {
    if (fam.kind == FamilyKind::Poisson)
      return gsl_cdf_poisson_Q(static_cast<unsigned int>(k), mu);
    const double r = 1.0 / fam.kappa;
    return gsl_cdf_negative_binomial_Q(static_cast<unsigned int>(k),
                                       1.0 / (1.0 + fam.kappa * mu), r);
  };
  if (tail(kCountCap) >= kCountTailMass) return kCountCap;
  int lo = 0, hi = kCountCap;
  while (lo < hi) {
    const int mid = (lo + hi) / 2;
    if (tail(mid) < kCountTailMass)
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

double visit_logdensity_at(const ChainState& st, int i, int j,
                           const Eigen::VectorXd& ycand) {
  const VisitState& vs = st.visits[j];
  const Eigen::VectorXd z = design_row(vs.model, st.data.subjects[i].x, ycand);
  return log_density(vs.fam, ycand[j], z, subject_latent(vs, i));
}

struct BlockLocal {
  Eigen::VectorXd grad;
  Eigen::MatrixXd prec;
  double logf = 0.0;
};

// Gradient, curvature, and log density of the visits a continuous block feeds.
BlockLocal assemble_block(const ChainState& st, int i, const std::vector<int>& cells,
                          int jmax, const Eigen::VectorXd& ycand) {
  const SubjectRecord& sub = st.data.subjects[i];
  BlockLocal out;
  out.grad = Eigen::VectorXd::Zero(static_cast<int>(cells.size()));
  out.prec = Eigen::MatrixXd::Zero(static_cast<int>(cells.size()),
                                   static_cast<int>(cells.size()));
  for (int j = *std::min_element(cells.begin(), cells.end()); j <= jmax; ++j) {
    const VisitState& vs = st.visits[j];
    const LinearPredictorContext ctx =
        build_predictor_context(vs.model, vs.fam, sub.x, ycand, cells, j);
    const SkewLatent lat = subject_latent(vs, i);
    out.logf += log_density(vs.fam, ycand[j], ctx.z, lat);
    out.grad += grad_yc(vs.fam, ycand[j], ctx, lat);
    out.prec += hess_yc(vs.fam, ycand[j], ctx, lat);
  }
  return out;
}

enum class BlockMove { NoProposal, Rejected, Accepted };

// Newton-proposal MH: y* ~ N[y + V^-1 g, V^-1], asymmetric correction from
// the curvature recomputed at the candidate.
BlockMove newton_block_move(ChainState& st, int i, const std::vector<int>& cells,
                            int jmax, RngStream& rng) {
  SubjectRecord& sub = st.data.subjects[i];
  const int b = static_cast<int>(cells.size());
  const BlockLocal cur = assemble_block(st, i, cells, jmax, sub.y);
  Eigen::LLT<Eigen::MatrixXd> llt_cur(cur.prec);
  if (llt_cur.info() != Eigen::Success) return BlockMove::NoProposal;

  const Eigen::VectorXd shift = llt_cur.solve(cur.grad);
  Eigen::VectorXd xi(b);
  for (int r = 0; r < b; ++r) xi[r] = rng.normal();
  const Eigen::VectorXd step =
      llt_cur.matrixU().solve(xi);  // covariance V^-1 = (L L')^-1

  Eigen::VectorXd ycand = sub.y;
  for (int r = 0; r < b; ++r) ycand[cells[r]] += shift[r] + step[r];
  const BlockLocal prop = assemble_block(st, i, cells, jmax, ycand);
  Eigen::LLT<Eigen::MatrixXd> llt_prop(prop.prec);
  if (llt_prop.info() != Eigen::Success) return BlockMove::Rejected;

  auto half_logdet = [](const Eigen::LLT<Eigen::MatrixXd>& llt, int n) {
    double s = 0.0;
    const auto& L = llt.matrixLLT();
    for (int r = 0; r < n; ++r) s += std::log(L(r, r));
    return s;
  };
  Eigen::VectorXd fwd(b), rev(b);
  for (int r = 0; r < b; ++r) {
    fwd[r] = ycand[cells[r]] - sub.y[cells[r]] - shift[r];
    rev[r] = sub.y[cells[r]] - ycand[cells[r]];
  }
  rev -= llt_prop.solve(prop.grad);
  const double log_q_fwd = half_logdet(llt_cur, b) - 0.5 * fwd.dot(cur.prec * fwd);
  const double log_q_rev = half_logdet(llt_prop, b) - 0.5 * rev.dot(prop.prec * rev);
  const double log_a = prop.logf - cur.logf + log_q_rev - log_q_fwd;
  if (std::log(rng.uniform()) < log_a) {
    sub.y = ycand;
    return BlockMove::Accepted;
  }
  return BlockMove::Rejected;
}

// Last-resort symmetric walk, one cell at a time.
bool random_walk_cells(ChainState& st, int i, const std::vector<int>& cells,
                       int jmax, RngStream& rng) {
  SubjectRecord& sub = st.data.subjects[i];
  bool all_accepted = true;
  for (int cell : cells) {
    const std::vector<int> solo = {cell};
    const BlockLocal cur = assemble_block(st, i, solo, jmax, sub.y);
    const double scale =
        1.0 / std::sqrt(std::max(cur.prec(0, 0), 1e-8));
    Eigen::VectorXd ycand = sub.y;
    ycand[cell] += scale * rng.normal();
    const BlockLocal prop = assemble_block(st, i, solo, jmax, ycand);
    if (std::log(rng.uniform()) < prop.logf - cur.logf)
      sub.y = ycand;
    else
      all_accepted = false;
  }
  return all_accepted;
}

Eigen::VectorXd prior_mean_or_zero(const VisitModel& vm, int len) {
  return vm.prior_mean.size() ? vm.prior_mean : Eigen::VectorXd::Zero(len);
}

void update_normal_visit(VisitState& vs, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& Z, RngStream& rng) {
  auto [beta, gamma] = draw_normal_visit(vs.model, y, Z, rng);
  vs.fam.beta = std::move(beta);
  vs.fam.gamma = gamma;
}

void update_kappa(VisitState& vs, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                  RngStream& rng) {
  Family& fam = vs.fam;
  const double lk = std::log(fam.kappa);
  const double lk_cand = lk + vs.kappa_tuning.c * rng.normal();
  Family cand = fam;
  cand.kappa = std::exp(lk_cand);
  double delta = (lk * lk - lk_cand * lk_cand) / (2.0 * 100.0);  // log kappa ~ N(0, 10^2)
  for (int i = 0; i < y.size(); ++i) {
    const Eigen::VectorXd zi = Z.row(i).transpose();
    delta += log_density(cand, y[i], zi) - log_density(fam, y[i], zi);
  }
  const bool accepted = std::log(rng.uniform()) < delta;
  if (accepted) fam.kappa = cand.kappa;
  record_acceptance(vs.kappa_tuning, accepted);
}

void sync_from_skew(VisitState& vs) {
  vs.fam.beta = vs.skew.par.beta;
  vs.fam.psi = vs.skew.par.psi;
  vs.fam.gamma = vs.skew.par.gamma;
  vs.fam.nu = vs.skew.par.nu;
}

void freeze_tuning(ChainState& st) {
  for (VisitState& vs : st.visits) {
    vs.skew.nu_tuning.frozen = true;
    vs.kappa_tuning.frozen = true;
  }
}

std::vector<Family> current_families(const ChainState& st) {
  std::vector<Family> fams;
  fams.reserve(st.visits.size());
  for (const VisitState& vs : st.visits) fams.push_back(vs.fam);
  return fams;
}

}  // namespace

std::pair<Eigen::VectorXd, double> draw_normal_visit(const VisitModel& vm,
                                                     const Eigen::VectorXd& y,
                                                     const Eigen::MatrixXd& Z,
                                                     RngStream& rng) {
  const int l = static_cast<int>(Z.cols());
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(l + 1, l + 1);
  D.topLeftCorner(l, l) = Z.transpose() * Z;
  D.topRightCorner(l, 1) = Z.transpose() * y;
  D.bottomLeftCorner(1, l) = D.topRightCorner(l, 1).transpose();
  D(l, l) = y.squaredNorm();
  double m = static_cast<double>(y.size()) + 2.0 * vm.gamma_shape;
  D(l, l) += 2.0 * vm.gamma_rate;
  if (vm.ridge > 0.0) {
    const Eigen::VectorXd v = prior_mean_or_zero(vm, l);
    D.topLeftCorner(l, l) += vm.ridge * Eigen::MatrixXd::Identity(l, l);
    D.topRightCorner(l, 1) += vm.ridge * v;
    D.bottomLeftCorner(1, l) += vm.ridge * v.transpose();
    D(l, l) += vm.ridge * v.squaredNorm();
    m += l;
  }
  return draw_normal_gamma(D, m, rng);
}

ChainState init_chain(const Dataset& data, const ModelSpec& spec, RngStream& rng) {
  ChainState st;
  st.data = sort_monotone(data).first;
  st.part = classify_missingness(st.data);
  st.spec = spec;

  // visit-wise pools of observed values
  const int p = st.data.p;
  std::vector<std::vector<double>> pool(p);
  for (const SubjectRecord& sub : st.data.subjects)
    for (int j = 0; j < p; ++j)
      if (sub.observed[j]) pool[j].push_back(sub.y[j]);

  for (int i = 0; i < st.data.n(); ++i) {
    SubjectRecord& sub = st.data.subjects[i];
    for (int j1 : st.part.B_c[i]) {
      const int j = j1 - 1;
      if (pool[j].empty())
        throw DataError("visit " + std::to_string(j1) + " has no observed values");
      double mean = 0.0;
      for (double v : pool[j]) mean += v;
      sub.y[j] = mean / static_cast<double>(pool[j].size());
    }
    for (int j1 : st.part.B_d[i]) {
      const int j = j1 - 1;
      if (pool[j].empty())
        throw DataError("visit " + std::to_string(j1) + " has no observed values");
      const auto pick = static_cast<std::size_t>(rng.uniform() * pool[j].size());
      sub.y[j] = pool[j][std::min(pick, pool[j].size() - 1)];
    }
  }

  for (int j = 0; j < p; ++j) {
    VisitState vs;
    vs.model = spec.visits[j];
    vs.fam = make_family(vs.model);
    if (vs.fam.is_skew()) {
      vs.skew_opt.skew_normal = vs.model.kind == FamilyKind::SkewNormal;
      vs.skew_opt.update_nu = vs.model.kind == FamilyKind::SkewT;
      vs.skew_opt.beta_ridge = vs.model.ridge;
      vs.skew = init_skewt_state(st.part.n_j[j],
                                 static_cast<int>(vs.model.terms.size()), vs.skew_opt);
      sync_from_skew(vs);
    }
    st.visits.push_back(std::move(vs));
  }
  return st;
}

void step_A1(ChainState& st, RngStream& rng) {
  for (int j = 0; j < st.data.p; ++j) {
    VisitState& vs = st.visits[j];
    const int nj = st.part.n_j[j];
    if (nj == 0) continue;
    const int l = static_cast<int>(vs.model.terms.size());
    Eigen::VectorXd y(nj);
    Eigen::MatrixXd Z(nj, l);
    for (int i = 0; i < nj; ++i) {
      const SubjectRecord& sub = st.data.subjects[i];
      y[i] = sub.y[j];
      Z.row(i) = design_row(vs.model, sub.x, sub.y).transpose();
    }
    switch (vs.model.kind) {
      case FamilyKind::Normal:
        update_normal_visit(vs, y, Z, rng);
        break;
      case FamilyKind::SkewNormal:
      case FamilyKind::SkewT:
        gibbs_cycle(vs.skew, y, Z, vs.model.skew, vs.skew_opt, rng);
        sync_from_skew(vs);
        break;
      default: {
        const int bl = static_cast<int>(vs.fam.beta.size());
        BetaPrior prior{prior_mean_or_zero(vs.model, bl),
                        vs.model.ridge * Eigen::MatrixXd::Identity(bl, bl)};
        mh_update_beta(vs.fam, y, Z, prior, rng);
        if (vs.model.kind == FamilyKind::NegBinomial) update_kappa(vs, y, Z, rng);
      }
    }
  }
}

std::pair<std::vector<std::vector<double>>, std::vector<double>>
discrete_cell_weights(const ChainState& st, int subject) {
  const SubjectRecord& sub = st.data.subjects[subject];
  const std::vector<int>& cells1 = st.part.B_d[subject];
  if (cells1.empty()) return {{}, {}};

  std::vector<std::vector<double>> support;
  double total = 1.0;
  for (int j1 : cells1) {
    const int j = j1 - 1;
    const VisitState& vs = st.visits[j];
    std::vector<double> vals;
    switch (st.data.visit_types[j].type) {
      case VisitType::Binary:
        vals = {1.0, 2.0};
        break;
      case VisitType::Ordinal:
      case VisitType::Nominal:
        for (int k = 1; k <= st.data.visit_types[j].levels; ++k)
          vals.push_back(static_cast<double>(k));
        break;
      case VisitType::Count: {
        const Eigen::VectorXd z = design_row(vs.model, sub.x, sub.y);
        const int kmax = count_support_max(vs.fam, vs.fam.beta.dot(z));
        for (int k = 0; k <= kmax; ++k) vals.push_back(static_cast<double>(k));
        break;
      }
      case VisitType::Continuous:
        throw std::logic_error("continuous cell in a discrete block");
    }
    total *= static_cast<double>(vals.size());
    if (total > kMaxCombos)
      throw ConfigError("discrete enumeration exceeds 1e6 combinations; split the "
                        "intermittent block");
    support.push_back(std::move(vals));
  }

  const int b = static_cast<int>(cells1.size());
  const int j0 = cells1.front() - 1;
  const int jmax = sub.s - 1;
  std::vector<std::vector<double>> combos;
  std::vector<double> logw;
  std::vector<std::size_t> idx(b, 0);
  Eigen::VectorXd ycand = sub.y;
  for (;;) {
    std::vector<double> combo(b);
    for (int r = 0; r < b; ++r) {
      combo[r] = support[r][idx[r]];
      ycand[cells1[r] - 1] = combo[r];
    }
    double lw = 0.0;
    for (int j = j0; j <= jmax; ++j) lw += visit_logdensity_at(st, subject, j, ycand);
    combos.push_back(std::move(combo));
    logw.push_back(lw);
    int r = b - 1;
    while (r >= 0 && ++idx[r] == support[r].size()) idx[r--] = 0;
    if (r < 0) break;
  }

  const double mx = *std::max_element(logw.begin(), logw.end());
  double norm = 0.0;
  for (double lw : logw) norm += std::exp(lw - mx);
  std::vector<double> probs(logw.size());
  for (std::size_t c = 0; c < logw.size(); ++c)
    probs[c] = std::exp(logw[c] - mx) / norm;
  return {std::move(combos), std::move(probs)};
}

void impute_discrete_intermittent(ChainState& st, int subject, RngStream& rng) {
  const std::vector<int>& cells1 = st.part.B_d[subject];
  if (cells1.empty()) return;
  const auto [combos, probs] = discrete_cell_weights(st, subject);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t pick = probs.size() - 1;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    acc += probs[c];
    if (u <= acc) {
      pick = c;
      break;
    }
  }
  SubjectRecord& sub = st.data.subjects[subject];
  for (std::size_t r = 0; r < cells1.size(); ++r) sub.y[cells1[r] - 1] = combos[pick][r];
}

bool impute_continuous_intermittent(ChainState& st, int subject, RngStream& rng) {
  const std::vector<int>& cells1 = st.part.B_c[subject];
  if (cells1.empty()) return true;
  std::vector<int> cells(cells1.size());
  for (std::size_t r = 0; r < cells1.size(); ++r) cells[r] = cells1[r] - 1;
  const int jmax = st.data.subjects[subject].s - 1;

  const BlockMove joint = newton_block_move(st, subject, cells, jmax, rng);
  if (joint != BlockMove::NoProposal) return joint == BlockMove::Accepted;

  // curvature not positive definite: split cells coupled through shared terms
  bool all_accepted = true;
  for (const std::vector<int>& group : coupled_cell_groups(st.spec, cells)) {
    std::vector<int> sub_cells;
    for (int pos : group) sub_cells.push_back(cells[pos]);
    const BlockMove mv = newton_block_move(st, subject, sub_cells, jmax, rng);
    if (mv == BlockMove::NoProposal)
      all_accepted &= random_walk_cells(st, subject, sub_cells, jmax, rng);
    else
      all_accepted &= mv == BlockMove::Accepted;
  }
  return all_accepted;
}

void mda_iteration(ChainState& st, RngStream& rng) {
  step_A1(st, rng);
  for (int i = 0; i < st.data.n(); ++i) impute_discrete_intermittent(st, i, rng);
  for (int i = 0; i < st.data.n(); ++i) impute_continuous_intermittent(st, i, rng);
}

std::vector<MdaDraw> run_mda(const Dataset& data, const ModelSpec& spec,
                             const McmcConfig& cfg) {
  if (cfg.burn_in < 0 || cfg.thin < 1 || cfg.m < 1)
    throw ConfigError("mcmc: need burn_in >= 0, thin >= 1, m >= 1");
  validate_model_spec(spec, data);
  RngStream rng(cfg.seed);
  ChainState st = init_chain(data, spec, rng);

#ifndef NDEBUG
  std::vector<Eigen::VectorXd> frozen_obs;
  for (const SubjectRecord& sub : st.data.subjects) frozen_obs.push_back(sub.y);
#endif

  std::vector<MdaDraw> draws;
  draws.reserve(cfg.m);
  const long total = static_cast<long>(cfg.burn_in) +
                     static_cast<long>(cfg.thin) * static_cast<long>(cfg.m);
  for (long iter = 1; iter <= total; ++iter) {
    if (iter == cfg.burn_in + 1) freeze_tuning(st);
    mda_iteration(st, rng);
#ifndef NDEBUG
    for (int i = 0; i < st.data.n(); ++i)
      for (int j = 0; j < st.data.p; ++j)
        if (st.data.subjects[i].observed[j])
          assert(st.data.subjects[i].y[j] == frozen_obs[i][j]);
#endif
    if (iter > cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0)
      draws.push_back({current_families(st), st.data});
  }
  return draws;
}

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  const int c = static_cast<int>(chains.size());
  if (c < 2) throw ConfigError("gelman_rubin: needs at least two chains");
  const std::size_t t = chains.front().size();
  for (const auto& ch : chains)
    if (ch.size() != t || t < 2)
      throw ConfigError("gelman_rubin: chains must share a length of at least 2");
  double w = 0.0, mean_all = 0.0;
  std::vector<double> means(c);
  for (int k = 0; k < c; ++k) {
    double m = 0.0;
    for (double v : chains[k]) m += v;
    m /= static_cast<double>(t);
    means[k] = m;
    mean_all += m / c;
    double s = 0.0;
    for (double v : chains[k]) s += (v - m) * (v - m);
    w += s / static_cast<double>(t - 1) / c;
  }
  double b_over_t = 0.0;
  for (int k = 0; k < c; ++k)
    b_over_t += (means[k] - mean_all) * (means[k] - mean_all) / (c - 1);
  if (w <= 0.0) return 1.0;
  const double v_hat =
      (static_cast<double>(t - 1) / static_cast<double>(t)) * w + b_over_t;
  return std::sqrt(v_hat / w);
}

ConvergenceReport mda_convergence_check(const Dataset& data, const ModelSpec& spec,
                                        const McmcConfig& cfg) {
  if (cfg.chains < 2)
    throw ConfigError("convergence check needs at least two chains");
  std::vector<std::vector<MdaDraw>> runs;
  for (int k = 0; k < cfg.chains; ++k) {
    McmcConfig one = cfg;
    one.seed = cfg.seed + 1 + static_cast<std::uint64_t>(k);
    runs.push_back(run_mda(data, spec, one));
  }

  ConvergenceReport rep;
  const int p = static_cast<int>(spec.visits.size());
  for (int j = 0; j < p; ++j) {
    const Family& fam0 = runs.front().front().families[j];
    auto trace = [&](const std::string& name, auto getter) {
      std::vector<std::vector<double>> chains(cfg.chains);
      for (int k = 0; k < cfg.chains; ++k)
        for (const MdaDraw& d : runs[k]) chains[k].push_back(getter(d.families[j]));
      rep.names.push_back("visit" + std::to_string(j + 1) + "." + name);
      rep.psrf.push_back(gelman_rubin(chains));
    };
    for (int t = 0; t < fam0.beta.size(); ++t)
      trace("beta" + std::to_string(t), [t](const Family& f) { return f.beta[t]; });
    const FamilyKind kind = spec.visits[j].kind;
    if (kind == FamilyKind::Normal || kind == FamilyKind::SkewNormal ||
        kind == FamilyKind::SkewT)
      trace("log_gamma", [](const Family& f) { return std::log(f.gamma); });
    if (kind == FamilyKind::SkewNormal || kind == FamilyKind::SkewT)
      trace("psi", [](const Family& f) { return f.psi; });
    if (kind == FamilyKind::SkewT)
      trace("log_nu", [](const Family& f) { return std::log(f.nu - 2.0); });
    if (kind == FamilyKind::NegBinomial)
      trace("log_kappa", [](const Family& f) { return std::log(f.kappa); });
  }
  rep.max_psrf = rep.psrf.empty()
                     ? 1.0
                     : *std::max_element(rep.psrf.begin(), rep.psrf.end());
  return rep;
}

}  // namespace seqmi
