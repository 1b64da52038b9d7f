#include "seqmi/controlled.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

#include "seqmi/errors.hpp"
#include "seqmi/families.hpp"
#include "seqmi/rng.hpp"

namespace seqmi {

namespace {

// Tag level separating post-dropout draw streams from any other use of the
// run seed.
constexpr std::uint64_t kDropoutStreamTag = 0xb2;

void require_finite_shifts(const double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(v[i])) throw ConfigError("delta shifts must be finite");
}

int treatment_arm(const SubjectRecord& subj) {
  const double g = subj.x[subj.x.size() - 1];
  if (g != 0.0 && g != 1.0)
    throw ConfigError(
        "mechanism needs a 0/1 treatment indicator as the last covariate");
  return static_cast<int>(g);
}

}  // namespace

Mechanism Mechanism::copy_reference() {
  Mechanism m;
  m.kind = MechanismKind::CopyReference;
  return m;
}

Mechanism Mechanism::delta(double control_shift, double treatment_shift) {
  Mechanism m;
  m.kind = MechanismKind::Delta;
  m.delta_arm[0] = control_shift;
  m.delta_arm[1] = treatment_shift;
  require_finite_shifts(m.delta_arm, 2);
  return m;
}

Mechanism Mechanism::delta_table(int visits, std::vector<double> values) {
  if (visits < 1) throw ConfigError("delta table needs at least one visit");
  if (values.size() != static_cast<std::size_t>(2 * visits * visits))
    throw ConfigError("delta table size must be 2 * visits * visits");
  require_finite_shifts(values.data(), values.size());
  Mechanism m;
  m.kind = MechanismKind::Delta;
  m.table = std::move(values);
  m.table_visits = visits;
  return m;
}

double Mechanism::shift(int arm, int visit, int pattern) const {
  if (kind != MechanismKind::Delta) return 0.0;
  if (arm < 0 || arm > 1) throw ConfigError("mechanism arm must be 0 or 1");
  if (table.empty()) return delta_arm[arm];
  if (visit < 1 || visit > table_visits || pattern < 0 ||
      pattern >= table_visits)
    throw ConfigError("delta table lookup out of range");
  return table[(arm * table_visits + (visit - 1)) * table_visits + pattern];
}

bool Mechanism::mar_equivalent() const {
  if (kind == MechanismKind::MAR) return true;
  if (kind != MechanismKind::Delta) return false;
  if (table.empty()) return delta_arm[0] == 0.0 && delta_arm[1] == 0.0;
  return std::all_of(table.begin(), table.end(),
                     [](double v) { return v == 0.0; });
}

std::uint64_t mechanism_stream_key(const Mechanism& mech) {
  if (mech.mar_equivalent()) return mix64(1);
  if (mech.kind == MechanismKind::CopyReference) return mix64(2);
  std::uint64_t k = mix64(3);
  if (mech.table.empty()) {
    k = mix64(k ^ std::bit_cast<std::uint64_t>(mech.delta_arm[0]));
    k = mix64(k ^ std::bit_cast<std::uint64_t>(mech.delta_arm[1]));
  } else {
    k = mix64(k ^ static_cast<std::uint64_t>(mech.table_visits));
    for (double v : mech.table) k = mix64(k ^ std::bit_cast<std::uint64_t>(v));
  }
  return k;
}

void impute_dropout(SubjectRecord& subj, const ModelSpec& spec,
                    const std::vector<Family>& families,
                    const Mechanism& mech, RngStream& rng) {
  const int p = static_cast<int>(subj.y.size());
  if (static_cast<int>(spec.visits.size()) != p ||
      static_cast<int>(families.size()) != p)
    throw ConfigError("model layout does not match the subject's visit count");
  if (mech.kind == MechanismKind::Delta && !mech.table.empty() &&
      mech.table_visits != p)
    throw ConfigError("delta table visit count does not match the data");

  int arm = 0;
  if (mech.kind != MechanismKind::MAR) arm = treatment_arm(subj);
  Eigen::VectorXd x_use = subj.x;
  if (mech.kind == MechanismKind::CopyReference) x_use[x_use.size() - 1] = 0.0;

  for (int j = subj.s + 1; j <= p; ++j) {
    Eigen::VectorXd z = design_row(spec.visits[j - 1], x_use, subj.y);
    const double offset = mech.shift(arm, j, subj.s);
    subj.y[j - 1] = sample_response(families[j - 1], z, rng, offset);
  }
}

std::vector<Dataset> generate_imputations(const std::vector<MdaDraw>& draws,
                                          const ModelSpec& spec,
                                          const Mechanism& mech,
                                          const RngStream& rng) {
  if (draws.empty()) throw ConfigError("no posterior draws to impute from");
  std::vector<Dataset> out;
  out.reserve(draws.size());
  for (std::size_t k = 0; k < draws.size(); ++k) {
    Dataset d = draws[k].data;
    for (SubjectRecord& subj : d.subjects) {
      if (subj.s < d.p) {
        RngStream r = rng.substream(
            {k, static_cast<std::uint64_t>(subj.orig_index)});
        impute_dropout(subj, spec, draws[k].families, mech, r);
      }
      for (int j = 0; j < d.p; ++j)
        if (!std::isfinite(subj.y[j]))
          throw NumericalError("imputation produced a non-finite value");
      std::fill(subj.observed.begin(), subj.observed.end(), 1);
      subj.s = d.p;
    }
    std::sort(d.subjects.begin(), d.subjects.end(),
              [](const SubjectRecord& a, const SubjectRecord& b) {
                return a.orig_index < b.orig_index;
              });
    out.push_back(std::move(d));
  }
  return out;
}

MiRun run_mi_pipeline(const Dataset& data, const ModelSpec& spec,
                      const McmcConfig& cfg, const Mechanism& mech,
                      const AnalysisSpec& analysis) {
  std::vector<MdaDraw> draws = run_mda(data, spec, cfg);
  RngStream b2 = RngStream(cfg.seed).substream(
      {kDropoutStreamTag, mechanism_stream_key(mech)});
  MiRun run;
  run.completed = generate_imputations(draws, spec, mech, b2);
  run.pooled = pool_analyses(run.completed, analysis);
  return run;
}

TippingGrid tipping_point_grid(const Dataset& data, const ModelSpec& spec,
                               const McmcConfig& cfg,
                               const std::vector<double>& delta0,
                               const std::vector<double>& delta1,
                               const AnalysisSpec& analysis) {
  if (delta0.empty() || delta1.empty())
    throw ConfigError("tipping grid needs at least one value per axis");
  for (double v : delta0) require_finite_shifts(&v, 1);
  for (double v : delta1) require_finite_shifts(&v, 1);

  std::vector<MdaDraw> draws = run_mda(data, spec, cfg);
  const int coef = resolve_coef_index(data, analysis);
  RngStream root(cfg.seed);

  TippingGrid grid;
  grid.delta0 = delta0;
  grid.delta1 = delta1;
  grid.cells.reserve(delta0.size() * delta1.size());
  for (double d0 : delta0)
    for (double d1 : delta1) {
      Mechanism mech = Mechanism::delta(d0, d1);
      RngStream b2 =
          root.substream({kDropoutStreamTag, mechanism_stream_key(mech)});
      std::vector<Dataset> completed =
          generate_imputations(draws, spec, mech, b2);
      PooledResult pr = pool_analyses(completed, analysis);
      TippingCell cell;
      cell.delta0 = d0;
      cell.delta1 = d1;
      cell.estimate = pr.qbar[coef];
      cell.total_variance = pr.t_total[coef];
      cell.t_stat = pr.t_stat[coef];
      cell.df = pr.df[coef];
      cell.p = pr.p[coef];
      grid.cells.push_back(cell);
    }
  return grid;
}

std::string tipping_csv(const TippingGrid& grid) {
  std::string out = "delta0,delta1,estimate,total_variance,t,df,p\n";
  char buf[256];
  for (const TippingCell& c : grid.cells) {
    std::snprintf(buf, sizeof buf,
                  "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", c.delta0,
                  c.delta1, c.estimate, c.total_variance, c.t_stat, c.df, c.p);
    out += buf;
  }
  return out;
}

int significance_band(double p) {
  if (p < 1e-4) return 4;
  if (p < 1e-3) return 3;
  if (p < 0.01) return 2;
  if (p < 0.05) return 1;
  return 0;
}

}  // namespace seqmi
