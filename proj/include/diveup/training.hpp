#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "diveup/fusion.hpp"
#include "diveup/relational.hpp"
#include "diveup/synthworld.hpp"
#include "diveup/upsampler.hpp"

namespace diveup::train {

struct TrainConfig {
    double lambda = 0.5;
    double lr = 2e-4;
    double weight_decay = 1e-5;
    int batch = 2;
    int iters = 2000;
    uint64_t seed = 1;
    int crop = 32;           // crop side, multiple of coarse_stride
    int fine_stride = 2;     // target features at this stride
    int coarse_stride = 8;   // inputs at this stride; scale = coarse/fine
    void validate() const;
    int scale() const { return coarse_stride / fine_stride; }
};

struct TrainPair {
    Tensor image;      // crop resized to the target grid, encoder input
    Tensor f_lr;       // source features at the coarse stride
    Tensor f_hr;       // source features at the fine stride (target)
    Tensor b_ens;      // (th,tw,2) guidance target; empty when not built
    int source_id = 0;
};

// Everything the pair builder needs about the guidance side.
struct GuidanceSetup {
    std::vector<synth::SyntheticVFM> vfms;
    std::vector<rel::Projection> projections;
    rel::RelationalConfig rel_cfg;
    fusion::FusionConfig fusion_cfg;
    fusion::FusionMode mode = fusion::FusionMode::sa_select;
};

TrainPair make_pair(const synth::SceneSample& sample, const synth::SyntheticVFM& source,
                    int source_id, const GuidanceSetup& guidance, const TrainConfig& cfg,
                    Rng& rng, bool build_guidance);

// Mean squared error over all positions and channels.
double loss_rec(const Tensor& pred, const Tensor& target);

// (1/|Omega|) sum_p |bhat(p)-b_ens(p)|_1, both components summed per position.
double loss_guide(const Tensor& b_hat, const Tensor& b_ens);

// Tape builders; losses.rec/guide report the two terms of the total.
struct LossValues {
    ad::Value total;
    double rec = 0.0;
    double guide = 0.0;
};
LossValues loss_total_t(const ups::UpsamplerConfig& ucfg, const ups::ParamValues& p,
                        const TrainPair& pair, double lambda, ad::Tape& tape,
                        const rel::RelationalConfig& rel_cfg);

// Forward-only total loss for a pair at given parameters.
double loss_total(const ups::UpsamplerConfig& ucfg, const ups::UpsamplerParams& params,
                  const TrainPair& pair, double lambda, const rel::RelationalConfig& rel_cfg);

// AdamW: bias-corrected moments with decoupled decay,
// p <- p - lr*(mhat/(sqrt(vhat)+1e-8) + wd*p).
struct AdamState {
    std::vector<Tensor> m, v;
    long long step = 0;
};
void adamw_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, AdamState& state,
                double lr, double weight_decay);

struct TraceRow {
    int iteration = 0;
    int source_id = 0;
    double loss_rec = 0.0;
    double loss_guide = 0.0;
    double loss_total = 0.0;
};

struct TrainResult {
    ups::UpsamplerParams params;
    std::vector<TraceRow> trace;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::vector<TraceRow> trace)
        : std::runtime_error(what), trace(std::move(trace)) {}
    std::vector<TraceRow> trace;
};

// Seeded loop: scenes sampled uniformly, source VFMs round-robin, batch
// gradients averaged, one AdamW step per iteration. Guidance targets are
// precomputed per pair and never backpropagated into the guidance VFMs.
TrainResult train(const std::vector<synth::SceneSample>& scenes,
                  const std::vector<synth::SyntheticVFM>& sources, const GuidanceSetup& guidance,
                  const ups::UpsamplerConfig& ucfg, uint64_t upsampler_seed,
                  const TrainConfig& cfg);

}  // namespace diveup::train
