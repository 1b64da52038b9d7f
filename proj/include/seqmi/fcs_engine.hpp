#pragma once

#include <cstdint>
#include <vector>

#include "seqmi/analysis.hpp"
#include "seqmi/controlled.hpp"
#include "seqmi/dataset.hpp"
#include "seqmi/mda_engine.hpp"
#include "seqmi/model_spec.hpp"
#include "seqmi/rng.hpp"

namespace seqmi {

// Chained-equations alternative to the monotone sampler. Each sweep visits the
// responses in order, draws the conditional model's parameters from the rows
// where that response is observed (exact conjugate draw for Normal, otherwise
// asymptotic normal around the penalized MLE), and redraws every missing cell
// at the visit from the drawn model. The working copy keeps fills for all
// missing cells so every conditional has complete predictor rows; only the
// fills of intermittent cells are ever committed downstream. Predictor visits
// enter design terms by raw value; recode multi-class nominal predictors
// upstream if indicator coding is needed.

struct FcsConfig {
  int sweeps = 200;  // chained iterations before the monotone snapshot
  int m = 1;         // completed datasets
  std::uint64_t seed = 0;
};

struct FcsChain {
  Dataset work;            // every missing cell holds a current fill
  Dataset source;          // input data, original order
  ModelSpec spec;          // chained conditionals (validated, no skew kinds)
  std::vector<int> order;  // 1-based visit sequence per sweep, default 1..p
};

// Validates the spec against the data and fills every missing cell
// (continuous: visit-wise observed mean; discrete: draw from the visit-wise
// empirical distribution). Skew conditionals are rejected; the sequential
// sampler engine owns those models.
FcsChain init_fcs_chain(const Dataset& data, const ModelSpec& fcs_spec,
                        RngStream& rng);

// One chained iteration over chain.order. Fit failures retry once with an
// extra 1e-4 ridge, then throw naming the visit; a separated binary
// conditional throws naming the visit even when the penalized fit converges.
void fcs_sweep(FcsChain& chain, RngStream& rng);

// The input data with current intermittent fills applied; post-dropout cells
// stay missing for the mechanism stage.
Dataset fcs_monotone_snapshot(const FcsChain& chain);

// One draw of the sequential visit models given monotone completed data:
// exact normal-gamma for Normal visits, asymptotic normal around the
// penalized MLE otherwise (skew visits rejected). Rows for visit j are the
// subjects with s >= j.
std::vector<Family> draw_sequential_given_monotone(const Dataset& monotone,
                                                   const ModelSpec& seq_spec,
                                                   RngStream& rng);

// Full pipeline: per imputation, fresh initial fills and cfg.sweeps chained
// iterations (independent restarts), a sequential parameter draw given the
// resulting monotone data, then mechanism-controlled dropout imputation.
// Streams are derived from cfg.seed, the imputation index, and
// mechanism_stream_key, so reruns are bit-identical and mechanism-equivalent
// configurations coincide.
std::vector<Dataset> fcs_mnar_pipeline(const Dataset& data,
                                       const ModelSpec& fcs_spec,
                                       const ModelSpec& seq_spec,
                                       const Mechanism& mech,
                                       const FcsConfig& cfg);

// fcs_mnar_pipeline followed by per-dataset analysis fits and Rubin pooling.
MiRun run_fcs_pipeline(const Dataset& data, const ModelSpec& fcs_spec,
                       const ModelSpec& seq_spec, const Mechanism& mech,
                       const FcsConfig& cfg, const AnalysisSpec& analysis);

}  // namespace seqmi
