#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqmi/analysis.hpp"
#include "seqmi/dataset.hpp"
#include "seqmi/mda_engine.hpp"
#include "seqmi/model_spec.hpp"

namespace seqmi {

// Post-dropout imputation mechanisms. MAR draws from the fitted sequential
// models unchanged. CopyReference redraws with the treatment covariate forced
// to zero, so treatment-by-covariate interaction columns vanish with it.
// Delta shifts the linear predictor of each post-dropout draw by a
// prespecified amount: a log-odds shift for logistic visits, a log-mean
// shift for count visits, a mean shift for continuous visits, and a latent
// shift for ordinal/nominal visits.
enum class MechanismKind { MAR, CopyReference, Delta };

struct Mechanism {
  MechanismKind kind = MechanismKind::MAR;

  // Collapsed Delta form: one shift per arm, applied at every post-dropout
  // visit regardless of pattern. Used when `table` is empty.
  double delta_arm[2] = {0.0, 0.0};

  // Full Delta form: shift indexed by (arm g, visit j, dropout pattern s),
  // flattened as [(g * visits + (j - 1)) * visits + s]. `table_visits` is the
  // visit count the table was sized for.
  std::vector<double> table;
  int table_visits = 0;

  static Mechanism mar() { return {}; }
  static Mechanism copy_reference();
  static Mechanism delta(double control_shift, double treatment_shift);
  // values laid out as documented above, size 2 * visits * visits.
  static Mechanism delta_table(int visits, std::vector<double> values);

  // Shift applied when imputing visit j (1-based) for a pattern-s subject in
  // the given arm. Zero for MAR and CopyReference.
  double shift(int arm, int visit, int pattern) const;
  // True when the mechanism's draws provably coincide with MAR draws:
  // MAR itself and Delta with every shift zero.
  bool mar_equivalent() const;
};

// Substream key for the post-dropout draw stream. Mechanisms that provably
// produce identical draws share a key (MAR and an all-zero Delta), so
// pipelines run under a shared seed agree bit for bit; distinct delta cells
// get distinct keys.
std::uint64_t mechanism_stream_key(const Mechanism& mech);

// Imputes y_{s+1..p} for one subject in place, sequentially, each imputed
// value entering the design rows of later visits. Skew visits draw fresh
// latents inside sample_response. CopyReference and Delta require the last
// covariate to be a 0/1 treatment indicator.
void impute_dropout(SubjectRecord& subj, const ModelSpec& spec,
                    const std::vector<Family>& families,
                    const Mechanism& mech, RngStream& rng);

// Applies impute_dropout to every incomplete subject of every posterior
// draw. Returns m fully completed datasets in the original subject order
// with all cells flagged observed. Each (draw k, subject) pair draws from
// the substream rng.substream({k, orig_index}), so draws for a subject whose
// predictor is mechanism-invariant (control arm under CopyReference, zero
// Delta) are bit-identical across mechanisms under a shared base stream.
std::vector<Dataset> generate_imputations(const std::vector<MdaDraw>& draws,
                                          const ModelSpec& spec,
                                          const Mechanism& mech,
                                          const RngStream& rng);

// Sampler + imputation + pooled analysis in one call. The post-dropout
// stream is derived from cfg.seed and mechanism_stream_key, so reruns are
// bit-identical and mechanism-equivalent configurations coincide.
struct MiRun {
  std::vector<Dataset> completed;
  PooledResult pooled;
};
MiRun run_mi_pipeline(const Dataset& data, const ModelSpec& spec,
                      const McmcConfig& cfg, const Mechanism& mech,
                      const AnalysisSpec& analysis);

// Delta-adjusted sensitivity sweep over both arms. One sampler run is shared
// by all grid cells; only the post-dropout draws differ.
struct TippingCell {
  double delta0 = 0.0;
  double delta1 = 0.0;
  double estimate = 0.0;
  double total_variance = 0.0;
  double t_stat = 0.0;
  double df = 0.0;
  double p = 1.0;
};

struct TippingGrid {
  std::vector<double> delta0;  // control-arm axis
  std::vector<double> delta1;  // treatment-arm axis
  std::vector<TippingCell> cells;  // row-major: delta0 outer, delta1 inner
};

TippingGrid tipping_point_grid(const Dataset& data, const ModelSpec& spec,
                               const McmcConfig& cfg,
                               const std::vector<double>& delta0,
                               const std::vector<double>& delta1,
                               const AnalysisSpec& analysis);

// Plot-ready serialization: header delta0,delta1,estimate,total_variance,
// t,df,p and one row per cell, with round-trip-exact numbers.
std::string tipping_csv(const TippingGrid& grid);

// Significance classification: 0 for p >= 0.05, then 1..4 for p below
// 0.05, 0.01, 0.001, 0.0001.
int significance_band(double p);

}  // namespace seqmi
