#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "seqmi/analysis.hpp"
#include "seqmi/controlled.hpp"
#include "seqmi/errors.hpp"
#include "seqmi/families.hpp"
#include "seqmi/mda_engine.hpp"
#include "seqmi/model_spec.hpp"
#include "seqmi/rng.hpp"
#include "seqmi/special.hpp"
#include "support/oracles.hpp"

using namespace seqmi;

namespace {

Term xterm(int index) { return Term{{TermFactor{false, index}}}; }

// Trial with visits (Normal, Binary, Normal), covariates (1, x1, g),
// dropout in both arms, and a few intermittent gaps.
Dataset mixed_trial(int n, std::uint64_t seed) {
  Dataset d;
  d.p = 3;
  d.q = 3;
  d.visit_types = {VisitTypeSpec{VisitType::Continuous, 0},
                   VisitTypeSpec{VisitType::Binary, 2},
                   VisitTypeSpec{VisitType::Continuous, 0}};
  d.covariate_names = {"x1", "g"};
  d.response_names = {"y1", "y2", "y3"};
  RngStream rng(seed);
  for (int i = 0; i < n; ++i) {
    SubjectRecord s;
    s.id = "t" + std::to_string(i + 1);
    s.orig_index = i;
    const double g = i % 2;
    s.x.resize(3);
    s.x << 1.0, rng.normal(), g;
    s.arm = static_cast<int>(g);
    const double y1 = 0.3 + 0.5 * s.x[1] + 0.9 * g + rng.normal();
    const double y2 = rng.uniform() < expit(-0.2 + 0.6 * y1) ? 1.0 : 2.0;
    const double y3 =
        -0.2 + 0.4 * y1 + 0.3 * (y2 == 1.0) + 0.7 * g + rng.normal();
    s.y.resize(3);
    s.y << y1, y2, y3;
    const int rem = i % 4;
    const int pat = rem == 1 ? 1 : (rem == 2 ? 2 : 3);
    s.observed.assign(3, 0);
    for (int j = 0; j < pat; ++j) s.observed[j] = 1;
    if (pat == 3 && i % 8 == 0) s.observed[0] = 0;  // intermittent gap
    s.s = pat;
    d.subjects.push_back(std::move(s));
  }
  return d;
}

// Single-visit template for direct impute_dropout micro checks.
struct Micro {
  ModelSpec spec;
  std::vector<Family> fams;
  SubjectRecord subj;
};

Micro micro_case(FamilyKind kind, const Eigen::VectorXd& beta, int arm) {
  Micro m;
  VisitModel vm;
  vm.kind = kind;
  if (kind == FamilyKind::Logistic) vm.levels = 2;
  vm.terms = {xterm(0), xterm(1), xterm(2)};
  m.spec.visits = {vm};
  Family fam = make_family(vm);
  fam.beta = beta;
  if (kind == FamilyKind::Normal) fam.gamma = 4.0;
  m.fams = {fam};
  m.subj.id = "m";
  m.subj.orig_index = 0;
  m.subj.x.resize(3);
  m.subj.x << 1.0, 0.5, static_cast<double>(arm);
  m.subj.arm = arm;
  m.subj.y.resize(1);
  m.subj.y << std::numeric_limits<double>::quiet_NaN();
  m.subj.observed = {0};
  m.subj.s = 0;
  return m;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("mechanism shifts follow the collapsed and table forms") {
  Mechanism mar = Mechanism::mar();
  Mechanism cr = Mechanism::copy_reference();
  CHECK(mar.shift(0, 1, 0) == 0.0);
  CHECK(cr.shift(1, 2, 0) == 0.0);
  CHECK(mar.mar_equivalent());
  CHECK_FALSE(cr.mar_equivalent());

  Mechanism col = Mechanism::delta(-0.5, 1.25);
  for (int j = 1; j <= 4; ++j)
    for (int s = 0; s < 4; ++s) {
      CHECK(col.shift(0, j, s) == -0.5);
      CHECK(col.shift(1, j, s) == 1.25);
    }
  CHECK_FALSE(col.mar_equivalent());
  CHECK(Mechanism::delta(0.0, 0.0).mar_equivalent());

  std::vector<double> table(2 * 3 * 3, 0.0);
  auto at = [&](int g, int j, int s) -> double& {
    return table[(g * 3 + (j - 1)) * 3 + s];
  };
  at(0, 2, 1) = 0.7;
  at(1, 3, 0) = -1.1;
  Mechanism full = Mechanism::delta_table(3, table);
  CHECK(full.shift(0, 2, 1) == 0.7);
  CHECK(full.shift(1, 3, 0) == -1.1);
  CHECK(full.shift(0, 1, 0) == 0.0);
  CHECK_FALSE(full.mar_equivalent());
  CHECK(Mechanism::delta_table(3, std::vector<double>(18, 0.0)).mar_equivalent());

  CHECK_THROWS_AS(full.shift(2, 1, 0), ConfigError);
  CHECK_THROWS_AS(full.shift(0, 4, 0), ConfigError);
  CHECK_THROWS_AS(full.shift(0, 1, 3), ConfigError);
  CHECK_THROWS_AS(Mechanism::delta_table(3, std::vector<double>(17, 0.0)),
                  ConfigError);
  CHECK_THROWS_AS(Mechanism::delta(0.0, std::nan("")), ConfigError);
  std::vector<double> bad(18, 0.0);
  bad[4] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(Mechanism::delta_table(3, bad), ConfigError);
}

TEST_CASE("stream keys collapse mechanisms with provably identical draws") {
  const std::uint64_t mar_key = mechanism_stream_key(Mechanism::mar());
  CHECK(mechanism_stream_key(Mechanism::delta(0.0, 0.0)) == mar_key);
  CHECK(mechanism_stream_key(
            Mechanism::delta_table(2, std::vector<double>(8, 0.0))) == mar_key);
  CHECK(mechanism_stream_key(Mechanism::copy_reference()) != mar_key);
  const std::uint64_t a = mechanism_stream_key(Mechanism::delta(0.3, 0.0));
  const std::uint64_t b = mechanism_stream_key(Mechanism::delta(0.0, 0.3));
  const std::uint64_t c = mechanism_stream_key(Mechanism::delta(0.3, 0.3));
  CHECK(a != mar_key);
  CHECK(a != b);
  CHECK(a != c);
  CHECK(b != c);
}

TEST_CASE("copy reference leaves the control arm at MAR and moves the treated arm") {
  Dataset data = mixed_trial(48, 501);
  ModelSpec spec = default_model_spec(data);
  McmcConfig cfg;
  cfg.burn_in = 150;
  cfg.thin = 2;
  cfg.m = 12;
  cfg.seed = 502;
  std::vector<MdaDraw> draws = run_mda(data, spec, cfg);
  RngStream base = RngStream(503).substream(7);

  std::vector<Dataset> mar = generate_imputations(draws, spec, Mechanism::mar(), base);
  std::vector<Dataset> cr =
      generate_imputations(draws, spec, Mechanism::copy_reference(), base);
  REQUIRE(mar.size() == 12);
  REQUIRE(cr.size() == 12);

  bool treated_differ = false;
  for (std::size_t k = 0; k < mar.size(); ++k) {
    for (int i = 0; i < data.n(); ++i) {
      const SubjectRecord& in = data.subjects[i];
      const SubjectRecord& a = mar[k].subjects[i];
      const SubjectRecord& b = cr[k].subjects[i];
      REQUIRE(a.id == in.id);
      REQUIRE(b.id == in.id);
      // Observed cells pass through untouched; pre-dropout cells agree
      // across mechanisms (they come from the shared sampler draw).
      for (int j = 0; j < data.p; ++j) {
        if (in.observed[j]) {
          CHECK(a.y[j] == in.y[j]);
          CHECK(b.y[j] == in.y[j]);
        }
        if (j < in.s) CHECK(a.y[j] == b.y[j]);
        if (a.y[j] != b.y[j]) treated_differ = true;
        if (data.visit_types[j].type == VisitType::Binary) {
          CHECK((a.y[j] == 1.0 || a.y[j] == 2.0));
          CHECK((b.y[j] == 1.0 || b.y[j] == 2.0));
        }
      }
      if (in.arm == 0)
        CHECK((a.y.array() == b.y.array()).all());
    }
  }
  CHECK(treated_differ);
}

TEST_CASE("zero delta reproduces MAR bit for bit") {
  Dataset data = mixed_trial(36, 504);
  ModelSpec spec = default_model_spec(data);
  McmcConfig cfg;
  cfg.burn_in = 100;
  cfg.thin = 2;
  cfg.m = 8;
  cfg.seed = 505;
  std::vector<MdaDraw> draws = run_mda(data, spec, cfg);
  RngStream base = RngStream(506).substream(3);

  std::vector<Dataset> mar = generate_imputations(draws, spec, Mechanism::mar(), base);
  std::vector<Dataset> zc =
      generate_imputations(draws, spec, Mechanism::delta(0.0, 0.0), base);
  std::vector<Dataset> zt = generate_imputations(
      draws, spec, Mechanism::delta_table(3, std::vector<double>(18, 0.0)),
      base);
  for (std::size_t k = 0; k < mar.size(); ++k)
    for (int i = 0; i < data.n(); ++i) {
      CHECK((mar[k].subjects[i].y.array() == zc[k].subjects[i].y.array()).all());
      CHECK((mar[k].subjects[i].y.array() == zt[k].subjects[i].y.array()).all());
    }
}

TEST_CASE("delta shifts the linear predictor on each family's natural scale") {
  RngStream base(507);

  SUBCASE("normal visit: mean shift is exactly delta") {
    Eigen::VectorXd beta(3);
    beta << 0.1, -0.6, 0.4;
    for (int r = 0; r < 100; ++r) {
      Micro a = micro_case(FamilyKind::Normal, beta, 1);
      Micro b = micro_case(FamilyKind::Normal, beta, 1);
      RngStream r1 = base.substream({1, static_cast<std::uint64_t>(r)});
      RngStream r2 = base.substream({1, static_cast<std::uint64_t>(r)});
      impute_dropout(a.subj, a.spec, a.fams, Mechanism::mar(), r1);
      impute_dropout(b.subj, b.spec, b.fams, Mechanism::delta(0.0, 0.7), r2);
      CHECK(b.subj.y[0] - a.subj.y[0] == doctest::Approx(0.7).epsilon(1e-9));
    }
    // Control-arm subject: treatment-arm delta leaves draws untouched.
    Micro c0 = micro_case(FamilyKind::Normal, beta, 0);
    Micro c1 = micro_case(FamilyKind::Normal, beta, 0);
    RngStream r1 = base.substream({2, 0});
    RngStream r2 = base.substream({2, 0});
    impute_dropout(c0.subj, c0.spec, c0.fams, Mechanism::mar(), r1);
    impute_dropout(c1.subj, c1.spec, c1.fams, Mechanism::delta(0.0, 0.7), r2);
    CHECK(c0.subj.y[0] == c1.subj.y[0]);
  }

  SUBCASE("logistic visit: log-odds shift of -1") {
    Eigen::VectorXd beta(3);
    beta << 0.3, -0.4, 0.25;
    const int reps = 100000;
    int succ_mar = 0, succ_del = 0;
    for (int r = 0; r < reps; ++r) {
      Micro a = micro_case(FamilyKind::Logistic, beta, 1);
      Micro b = micro_case(FamilyKind::Logistic, beta, 1);
      RngStream r1 = base.substream({3, static_cast<std::uint64_t>(r)});
      RngStream r2 = base.substream({3, static_cast<std::uint64_t>(r)});
      impute_dropout(a.subj, a.spec, a.fams, Mechanism::mar(), r1);
      impute_dropout(b.subj, b.spec, b.fams, Mechanism::delta(0.0, -1.0), r2);
      succ_mar += a.subj.y[0] == 1.0;
      succ_del += b.subj.y[0] == 1.0;
    }
    const double pm = succ_mar / double(reps);
    const double pd = succ_del / double(reps);
    const double diff = std::log(pd / (1 - pd)) - std::log(pm / (1 - pm));
    const double se = std::sqrt((1.0 / (pm * (1 - pm)) + 1.0 / (pd * (1 - pd))) / reps);
    CHECK(std::fabs(diff - (-1.0)) < 3.0 * se);
  }

  SUBCASE("count visit: log-mean shift of 0.7") {
    Eigen::VectorXd beta(3);
    beta << 0.2, -0.1, 0.15;
    const int reps = 200000;
    double sum_mar = 0, sum_del = 0;
    for (int r = 0; r < reps; ++r) {
      Micro a = micro_case(FamilyKind::Poisson, beta, 1);
      Micro b = micro_case(FamilyKind::Poisson, beta, 1);
      RngStream r1 = base.substream({4, static_cast<std::uint64_t>(r)});
      RngStream r2 = base.substream({4, static_cast<std::uint64_t>(r)});
      impute_dropout(a.subj, a.spec, a.fams, Mechanism::mar(), r1);
      impute_dropout(b.subj, b.spec, b.fams, Mechanism::delta(0.0, 0.7), r2);
      sum_mar += a.subj.y[0];
      sum_del += b.subj.y[0];
    }
    const double lm = std::exp(0.2 - 0.05 + 0.15);
    const double diff = std::log(sum_del / sum_mar);
    const double se =
        std::sqrt(1.0 / (reps * lm) + 1.0 / (reps * lm * std::exp(0.7)));
    CHECK(std::fabs(diff - 0.7) < 3.0 * se);
  }
}

TEST_CASE("reference and delta mechanisms require a binary treatment covariate") {
  Eigen::VectorXd beta(3);
  beta << 0.1, 0.2, 0.3;
  Micro m = micro_case(FamilyKind::Normal, beta, 1);
  m.subj.x[2] = 0.5;
  RngStream rng(508);
  CHECK_THROWS_AS(
      impute_dropout(m.subj, m.spec, m.fams, Mechanism::copy_reference(), rng),
      ConfigError);
  CHECK_THROWS_AS(
      impute_dropout(m.subj, m.spec, m.fams, Mechanism::delta(0.0, 1.0), rng),
      ConfigError);
  // MAR never reads the arm.
  impute_dropout(m.subj, m.spec, m.fams, Mechanism::mar(), rng);
  CHECK(std::isfinite(m.subj.y[0]));
}

TEST_CASE("generate_imputations completes every cell in the original order") {
  // Complete subjects plus one intermittent-only subject: imputations differ
  // only at the gap cell.
  Dataset data = mixed_trial(20, 509);
  for (SubjectRecord& s : data.subjects) {
    s.observed.assign(3, 1);
    s.s = 3;
  }
  data.subjects[5].observed[0] = 0;  // intermittent gap, still s = 3

  ModelSpec spec = default_model_spec(data);
  // Proper prior: 20 subjects leave the logistic visit close to separation.
  for (VisitModel& vm : spec.visits) vm.ridge = 0.5;
  McmcConfig cfg;
  cfg.burn_in = 80;
  cfg.thin = 2;
  cfg.m = 6;
  cfg.seed = 510;
  std::vector<MdaDraw> draws = run_mda(data, spec, cfg);
  std::vector<Dataset> out =
      generate_imputations(draws, spec, Mechanism::mar(), RngStream(511));
  REQUIRE(out.size() == 6);

  std::vector<double> gap_draws;
  for (const Dataset& d : out) {
    REQUIRE(d.n() == 20);
    for (int i = 0; i < 20; ++i) {
      const SubjectRecord& s = d.subjects[i];
      CHECK(s.id == data.subjects[i].id);
      CHECK(s.s == 3);
      for (int j = 0; j < 3; ++j) {
        CHECK(s.observed[j] == 1);
        CHECK(std::isfinite(s.y[j]));
        if (data.subjects[i].observed[j])
          CHECK(s.y[j] == data.subjects[i].y[j]);
      }
    }
    gap_draws.push_back(d.subjects[5].y[0]);
  }
  CHECK(oracle::variance(gap_draws) > 0.0);

  SUBCASE("single imputation smoke") {
    cfg.m = 1;
    std::vector<MdaDraw> one = run_mda(data, spec, cfg);
    std::vector<Dataset> completed =
        generate_imputations(one, spec, Mechanism::mar(), RngStream(512));
    REQUIRE(completed.size() == 1);
  }

  SUBCASE("empty draw list is a configuration error") {
    CHECK_THROWS_AS(generate_imputations({}, spec, Mechanism::mar(), RngStream(1)),
                    ConfigError);
  }
}

TEST_CASE("ordinal and count dropouts land in their supports") {
  Dataset d;
  d.p = 2;
  d.q = 3;
  d.visit_types = {VisitTypeSpec{VisitType::Ordinal, 3},
                   VisitTypeSpec{VisitType::Count, 0}};
  d.covariate_names = {"x1", "g"};
  d.response_names = {"y1", "y2"};
  RngStream gen(517);
  for (int i = 0; i < 40; ++i) {
    SubjectRecord s;
    s.id = "o" + std::to_string(i + 1);
    s.orig_index = i;
    const double g = i % 2;
    s.x.resize(3);
    s.x << 1.0, gen.normal(), g;
    s.arm = static_cast<int>(g);
    const double lat = 0.4 * s.x[1] + 0.3 * g + gen.normal();
    const double y1 = lat < -0.5 ? 1.0 : (lat < 0.7 ? 2.0 : 3.0);
    const double y2 =
        static_cast<double>(gen.poisson(std::exp(0.1 + 0.3 * s.x[1])));
    s.y.resize(2);
    s.y << y1, y2;
    const int pat = i % 5 == 0 ? 0 : (i % 5 == 1 ? 1 : 2);
    s.observed.assign(2, 0);
    for (int j = 0; j < pat; ++j) s.observed[j] = 1;
    s.s = pat;
    d.subjects.push_back(std::move(s));
  }

  ModelSpec spec = default_model_spec(d);
  McmcConfig cfg;
  cfg.burn_in = 80;
  cfg.thin = 2;
  cfg.m = 6;
  cfg.seed = 518;
  std::vector<MdaDraw> draws = run_mda(d, spec, cfg);
  for (const Mechanism& mech :
       {Mechanism::mar(), Mechanism::delta(0.5, -0.5)}) {
    std::vector<Dataset> out =
        generate_imputations(draws, spec, mech, RngStream(519));
    for (const Dataset& c : out)
      for (const SubjectRecord& s : c.subjects) {
        CHECK((s.y[0] == 1.0 || s.y[0] == 2.0 || s.y[0] == 3.0));
        CHECK(s.y[1] >= 0.0);
        CHECK(s.y[1] == std::floor(s.y[1]));
      }
  }
}

TEST_CASE("tipping grid echoes axes, matches MAR at the origin, serializes round-trip") {
  Dataset data = simulate_scenario(1, 120, 513);
  ModelSpec spec = default_model_spec(data);
  McmcConfig cfg;
  cfg.burn_in = 200;
  cfg.thin = 2;
  cfg.m = 10;
  cfg.seed = 514;
  AnalysisSpec analysis;
  analysis.response_visit = 2;

  const std::vector<double> d0{-0.4, 0.0, 0.6};
  const std::vector<double> d1{-0.8, 0.0, 0.3};
  TippingGrid grid = tipping_point_grid(data, spec, cfg, d0, d1, analysis);
  REQUIRE(grid.cells.size() == 9);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const TippingCell& c = grid.cells[a * 3 + b];
      CHECK(c.delta0 == d0[a]);
      CHECK(c.delta1 == d1[b]);
      CHECK(std::isfinite(c.p));
      CHECK(c.total_variance > 0.0);
    }

  MiRun mar = run_mi_pipeline(data, spec, cfg, Mechanism::mar(), analysis);
  CHECK(mar.completed.size() == 10);
  CHECK(mar.pooled.m == 10);
  const int coef = resolve_coef_index(data, analysis);
  const TippingCell& origin = grid.cells[1 * 3 + 1];
  CHECK(origin.estimate == mar.pooled.qbar[coef]);
  CHECK(origin.total_variance == mar.pooled.t_total[coef]);
  CHECK(origin.t_stat == mar.pooled.t_stat[coef]);
  CHECK(origin.df == mar.pooled.df[coef]);
  CHECK(origin.p == mar.pooled.p[coef]);

  const std::string csv = tipping_csv(grid);
  std::vector<std::string> lines = split_lines(csv);
  REQUIRE(lines.size() == 10);
  CHECK(lines[0] == "delta0,delta1,estimate,total_variance,t,df,p");
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const TippingCell& c = grid.cells[r - 1];
    double f[7];
    const char* s = lines[r].c_str();
    char* end = nullptr;
    for (int v = 0; v < 7; ++v) {
      f[v] = std::strtod(s, &end);
      REQUIRE(end != s);
      s = *end == ',' ? end + 1 : end;
    }
    CHECK(f[0] == c.delta0);
    CHECK(f[1] == c.delta1);
    CHECK(f[2] == c.estimate);
    CHECK(f[3] == c.total_variance);
    CHECK(f[4] == c.t_stat);
    CHECK(f[5] == c.df);
    CHECK(f[6] == c.p);
  }

  CHECK_THROWS_AS(tipping_point_grid(data, spec, cfg, {}, d1, analysis),
                  ConfigError);
  CHECK_THROWS_AS(tipping_point_grid(data, spec, cfg, d0, {}, analysis),
                  ConfigError);
}

TEST_CASE("tipping p-values trend monotonically along each axis") {
  Dataset data = simulate_scenario(1, 300, 9018);
  ModelSpec spec = default_model_spec(data);
  McmcConfig cfg;
  cfg.burn_in = 400;
  cfg.thin = 4;
  cfg.m = 32;
  cfg.seed = 516;
  AnalysisSpec analysis;
  analysis.response_visit = 2;

  // Both sweeps push imputed responses toward the null: lowering treated-arm
  // outcomes or raising control-arm ones shrinks the contrast. The trends are
  // read where the p surface is responsive. Deep in the decisive region
  // (p ~ 1e-5) the estimate saturates and the ordering of tiny p-values is
  // noise, so the control-arm trend is evaluated on the delta1 = -2 row
  // rather than at delta1 = 0.
  const std::vector<double> d0{0.0, 0.5, 1.0, 1.5, 2.0};
  const std::vector<double> d1{-2.0, -1.5, -1.0, -0.5, 0.0};
  TippingGrid grid = tipping_point_grid(data, spec, cfg, d0, d1, analysis);
  REQUIRE(grid.cells.size() == d0.size() * d1.size());

  // Treated-arm axis, no control shift: p rises as delta1 falls.
  std::vector<double> ps;
  for (std::size_t j = 0; j < d1.size(); ++j) ps.push_back(grid.cells[j].p);
  CAPTURE(ps[0]);
  CAPTURE(ps[1]);
  CAPTURE(ps[2]);
  CAPTURE(ps[3]);
  CAPTURE(ps[4]);
  CHECK(oracle::spearman_rho(d1, ps) < -0.7);
  CHECK(ps.front() > 4.0 * ps.back());

  // Control-arm axis along the responsive row: p rises with delta0.
  ps.clear();
  for (std::size_t i = 0; i < d0.size(); ++i)
    ps.push_back(grid.cells[i * d1.size()].p);
  CAPTURE(ps[0]);
  CAPTURE(ps[1]);
  CAPTURE(ps[2]);
  CAPTURE(ps[3]);
  CAPTURE(ps[4]);
  CHECK(oracle::spearman_rho(d0, ps) > 0.7);
  CHECK(ps.back() > 4.0 * ps.front());
}

TEST_CASE("significance bands follow the legend thresholds") {
  CHECK(significance_band(0.2) == 0);
  CHECK(significance_band(0.05) == 0);
  CHECK(significance_band(0.03) == 1);
  CHECK(significance_band(0.01) == 1);
  CHECK(significance_band(0.005) == 2);
  CHECK(significance_band(0.001) == 2);
  CHECK(significance_band(0.0005) == 3);
  CHECK(significance_band(0.0001) == 3);
  CHECK(significance_band(0.00005) == 4);
}
