#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqmi/dataset.hpp"
#include "seqmi/model_spec.hpp"
#include "seqmi/rng.hpp"
#include "seqmi/samplers.hpp"
#include "seqmi/skewt.hpp"

namespace seqmi {

// Monotone data augmentation. Each iteration draws the per-visit regression
// parameters from their factorized posterior over subjects observed at the
// visit, then refreshes the intermittent cells: discrete blocks by exact
// enumeration, continuous blocks by a Newton-proposal MH move.

struct McmcConfig {
  int burn_in = 5000;
  int thin = 50;
  int m = 1;  // emitted draws
  std::uint64_t seed = 0;
  int chains = 1;  // extra chains for convergence checks
};

struct VisitState {
  VisitModel model;
  Family fam;
  SkewTState skew;        // skew kinds only
  SkewTOptions skew_opt;  // fixed per run
  MhTuning kappa_tuning;  // NegBinomial overdispersion walk
};

struct ChainState {
  Dataset data;  // monotone order; intermittent cells hold current values
  MissingnessPartition part;
  ModelSpec spec;
  std::vector<VisitState> visits;
};

// Sorts, classifies, fills intermittent cells (continuous: visit-wise observed
// mean; discrete: draw from the visit-wise empirical distribution), and sizes
// the per-visit parameter states.
ChainState init_chain(const Dataset& data, const ModelSpec& spec, RngStream& rng);

// Exact conjugate (beta, gamma) draw for a Normal visit given response rows y
// and design Z, honoring the visit's ridge, prior mean, and gamma prior.
std::pair<Eigen::VectorXd, double> draw_normal_visit(const VisitModel& vm,
                                                     const Eigen::VectorXd& y,
                                                     const Eigen::MatrixXd& Z,
                                                     RngStream& rng);

// One sweep of per-visit parameter draws over subjects i < n_j.
void step_A1(ChainState& st, RngStream& rng);

// Enumerated support and normalized probabilities of a subject's discrete
// block, each combination in cell order. Throws ConfigError past 1e6
// combinations (split the block instead).
std::pair<std::vector<std::vector<double>>, std::vector<double>>
discrete_cell_weights(const ChainState& st, int subject);

void impute_discrete_intermittent(ChainState& st, int subject, RngStream& rng);

// Returns true when every proposal in the block update was accepted (an empty
// block counts as accepted).
bool impute_continuous_intermittent(ChainState& st, int subject, RngStream& rng);

// A.1 followed by one discrete and one continuous sweep over all subjects.
void mda_iteration(ChainState& st, RngStream& rng);

struct MdaDraw {
  std::vector<Family> families;  // one per visit
  Dataset data;                  // monotone order, intermittent cells completed
};

// Burn-in, then m states taken every thin-th iteration; deterministic in
// cfg.seed. Adaptive walk scales freeze when burn-in ends.
std::vector<MdaDraw> run_mda(const Dataset& data, const ModelSpec& spec,
                             const McmcConfig& cfg);

// Potential scale reduction factor across chains of equal length.
double gelman_rubin(const std::vector<std::vector<double>>& chains);

struct ConvergenceReport {
  std::vector<std::string> names;
  std::vector<double> psrf;
  double max_psrf = 1.0;
};

// Runs cfg.chains independent replicates (seeds derived from cfg.seed) and
// reports the PSRF of every emitted parameter coordinate.
ConvergenceReport mda_convergence_check(const Dataset& data, const ModelSpec& spec,
                                        const McmcConfig& cfg);

}  // namespace seqmi
