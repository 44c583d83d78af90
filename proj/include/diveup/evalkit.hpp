#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diveup/training.hpp"

namespace diveup::eval {

struct ProbeConfig {
    int iters = 500;
    double lr = 0.05;
    double weight_decay = 0.0;
    uint64_t seed = 5;
    int depth_bins = 256;
    double depth_min = 0.1;
    double depth_max = 5.0;
    void validate() const;
};

// 1x1 linear classifier over frozen features.
struct SegProbe {
    Tensor weight;  // (N_cls, C)
};

SegProbe probe_seg(const std::vector<Tensor>& features,
                   const std::vector<std::vector<int>>& labels, int n_classes,
                   const ProbeConfig& cfg);
std::vector<int> predict_seg(const SegProbe& probe, const Tensor& features);

// Bin classifier over self-concatenated features; expected depth is the
// convex combination of the fixed bin centers under (ReLU(S)+0.1)/sum.
struct DepthProbe {
    Tensor weight;                    // (bins, 2C)
    std::vector<double> bin_centers;  // fixed before training
};

DepthProbe probe_depth(const std::vector<Tensor>& features, const std::vector<Tensor>& depths,
                       const ProbeConfig& cfg);
Tensor predict_depth(const DepthProbe& probe, const Tensor& features);

// Per-pixel bin probabilities for given logits (test hook for the simplex).
Tensor depth_probabilities(const Tensor& logits);

struct MetricReport {
    std::vector<double> per_class_iou;  // -1 marks classes absent from both
    double miou = 0.0;
    double pixel_acc = 0.0;
    double delta1 = 0.0;
};

// Per-class intersection/union by direct counting; classes absent from both
// prediction and ground truth are excluded from the mean.
std::pair<std::vector<double>, double> miou(const std::vector<int>& pred,
                                            const std::vector<int>& gt, int n_classes);
double pixel_accuracy(const std::vector<int>& pred, const std::vector<int>& gt);

// Fraction of pixels with max(D/D_gt, D_gt/D) < 1.25; both inputs positive.
double delta1(const std::vector<double>& pred, const std::vector<double>& gt);

// ---------------------------------------------------------------------------
// experiment driver
// ---------------------------------------------------------------------------

enum class UpsampleMethod { trained, bilinear };

struct ExperimentConfig {
    synth::SceneConfig scene;
    int scene_count = 16;
    int scene_eval_count = 6;
    std::vector<synth::SyntheticVFM> vfms;
    std::vector<int> source_ids = {0};
    std::vector<int> guidance_ids = {1, 2};
    rel::RelationalConfig relational;
    fusion::FusionConfig fusion_cfg;
    fusion::FusionMode fusion_mode = fusion::FusionMode::sa_select;
    ups::UpsamplerConfig upsampler;
    uint64_t upsampler_seed = 11;
    train::TrainConfig train_cfg;
    ProbeConfig probe;
    UpsampleMethod method = UpsampleMethod::trained;
    bool run_depth_probe = false;
    uint64_t scene_seed = 9;
};

struct ExperimentResult {
    MetricReport metrics;
    std::vector<train::TraceRow> trace;
    bool diverged = false;
    std::string error;
};

// Builds the guidance setup (projections per-source, dims clamped to the
// source channel count) from an experiment config.
train::GuidanceSetup make_guidance(const ExperimentConfig& cfg);

// gen scenes -> (train upsampler | bilinear) -> probe -> metrics.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Probing half of run_experiment with externally supplied parameters
// (e.g. a loaded checkpoint). Never trains.
ExperimentResult probe_with_params(const ExperimentConfig& cfg,
                                   const ups::UpsamplerParams& params);

struct AblationRow {
    std::string config_name;
    uint64_t seed = 0;
    double miou = 0.0;
    double delta1 = 0.0;
    bool diverged = false;
};

// suites: guidance-panel, fusion-strategy, window-sweep, bilinear-baseline.
std::vector<AblationRow> run_ablation(const std::string& suite, const ExperimentConfig& base,
                                      const std::vector<uint64_t>& seeds);

// Mean and population std of the per-seed mIoU for one config name.
std::pair<double, double> summarize(const std::vector<AblationRow>& rows,
                                    const std::string& config_name);

}  // namespace diveup::eval
