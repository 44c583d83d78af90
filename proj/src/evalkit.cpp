#include "diveup/evalkit.hpp"

#include <algorithm>
#include <cmath>

namespace diveup::eval {

void ProbeConfig::validate() const {
    if (iters < 0) throw std::invalid_argument("probe: iteration count must be non-negative");
    if (lr <= 0.0) throw std::invalid_argument("probe: learning rate must be positive");
    if (depth_bins < 1) throw std::invalid_argument("probe: need at least one depth bin");
    if (depth_min <= 0.0 || depth_max <= depth_min) {
        throw std::invalid_argument("probe: bad depth range");
    }
}

namespace {

Tensor init_probe_weight(int rows, int cols, uint64_t seed) {
    Rng rng(seed, 0x9B0BE5ULL);
    Tensor w = Tensor::zeros({rows, cols});
    const double lim = std::sqrt(1.0 / cols);
    for (double& v : w.data) v = rng.uniform(-lim, lim);
    return w;
}

}  // namespace

SegProbe probe_seg(const std::vector<Tensor>& features,
                   const std::vector<std::vector<int>>& labels, int n_classes,
                   const ProbeConfig& cfg) {
    cfg.validate();
    if (features.empty() || features.size() != labels.size()) {
        throw std::invalid_argument("probe_seg: features and labels must pair up");
    }
    const int c = features[0].shape[2];
    // warn-and-continue for classes never seen in the training labels
    std::vector<char> seen(n_classes, 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        const Tensor& f = features[i];
        if (static_cast<long long>(labels[i].size()) !=
            static_cast<long long>(f.shape[0]) * f.shape[1]) {
            throw std::invalid_argument("probe_seg: label grid mismatch");
        }
        for (int lbl : labels[i]) {
            if (lbl < 0 || lbl >= n_classes) throw std::invalid_argument("probe_seg: label out of range");
            seen[lbl] = 1;
        }
    }
    for (int cls = 0; cls < n_classes; ++cls) {
        if (!seen[cls]) {
            std::fprintf(stderr, "probe_seg: warning: class %d absent from training labels\n", cls);
        }
    }

    SegProbe probe;
    probe.weight = init_probe_weight(n_classes, c, cfg.seed);
    train::AdamState state;
    for (int iter = 0; iter < cfg.iters; ++iter) {
        ad::Tape tape;
        ad::Value w = tape.leaf(probe.weight, true);
        ad::Value loss{};
        for (size_t i = 0; i < features.size(); ++i) {
            ad::Value logits = ad::pixelwise_linear(tape.constant(features[i]), w);
            ad::Value ce = ad::cross_entropy_mean(logits, labels[i]);
            loss = i == 0 ? ce : ad::add(loss, ce);
        }
        loss = ad::affine(loss, 1.0 / static_cast<double>(features.size()), 0.0);
        tape.backward(loss);
        std::vector<Tensor*> params = {&probe.weight};
        train::adamw_step(params, {tape.grad(w)}, state, cfg.lr, cfg.weight_decay);
    }
    return probe;
}

std::vector<int> predict_seg(const SegProbe& probe, const Tensor& features) {
    const int h = features.shape[0], w = features.shape[1], c = features.shape[2];
    const int k = probe.weight.shape[0];
    if (probe.weight.shape[1] != c) throw std::invalid_argument("predict_seg: channel mismatch");
    std::vector<int> out(static_cast<size_t>(h) * w, 0);
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        const double* fp = &features.data[p * c];
        double best = -1e300;
        int best_k = 0;
        for (int kq = 0; kq < k; ++kq) {
            const double* wr = &probe.weight.data[static_cast<long long>(kq) * c];
            double acc = 0.0;
            for (int ci = 0; ci < c; ++ci) acc += wr[ci] * fp[ci];
            if (acc > best) {
                best = acc;
                best_k = kq;
            }
        }
        out[p] = best_k;
    }
    return out;
}

namespace {

// (ReLU(S)+0.1)/sum over bins, then D = sum P_k bin_k, on the tape.
ad::Value expected_depth_t(ad::Value logits, const std::vector<double>& bins) {
    ad::Value p = ad::normalize_last(ad::affine(ad::relu(logits), 1.0, 0.1));
    return ad::weighted_sum_last(p, bins);
}

// Self-concatenation of the feature channels (Alg. 3 input).
Tensor concat_self(const Tensor& f) {
    const int h = f.shape[0], w = f.shape[1], c = f.shape[2];
    Tensor out = Tensor::zeros({h, w, 2 * c});
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        for (int ci = 0; ci < c; ++ci) {
            out.data[p * 2 * c + ci] = f.data[p * c + ci];
            out.data[p * 2 * c + c + ci] = f.data[p * c + ci];
        }
    }
    return out;
}

// SigLoss: sqrt(mean(g^2) - 0.85*mean(g)^2) with g = log D - log D_gt.
// GradientLoss: L1 on first differences of g.
ad::Value depth_loss_t(ad::Value depth, const Tensor& log_gt, ad::Tape& tape) {
    ad::Value g = ad::sub(ad::vlog(depth), tape.constant(log_gt));
    ad::Value sig = ad::vsqrt(ad::sub(ad::mean(ad::mul(g, g)),
                                      ad::affine(ad::mul(ad::mean(g), ad::mean(g)), 0.85, 0.0)));
    ad::Value grad_l = ad::add(ad::mean(ad::vabs(ad::diff_x(g))),
                               ad::mean(ad::vabs(ad::diff_y(g))));
    return ad::add(sig, grad_l);
}

}  // namespace

DepthProbe probe_depth(const std::vector<Tensor>& features, const std::vector<Tensor>& depths,
                       const ProbeConfig& cfg) {
    cfg.validate();
    if (features.empty() || features.size() != depths.size()) {
        throw std::invalid_argument("probe_depth: features and depths must pair up");
    }
    for (const Tensor& d : depths) {
        for (double v : d.data) {
            if (v <= 0.0) throw std::invalid_argument("probe_depth: non-positive ground-truth depth");
        }
    }
    const int c = features[0].shape[2];
    DepthProbe probe;
    probe.bin_centers.resize(cfg.depth_bins);
    for (int k = 0; k < cfg.depth_bins; ++k) {
        probe.bin_centers[k] =
            cfg.depth_min + (cfg.depth_max - cfg.depth_min) *
                                (k + 0.5) / static_cast<double>(cfg.depth_bins);
    }
    probe.weight = init_probe_weight(cfg.depth_bins, 2 * c, cfg.seed + 1);

    std::vector<Tensor> inputs, log_gts;
    inputs.reserve(features.size());
    log_gts.reserve(features.size());
    for (size_t i = 0; i < features.size(); ++i) {
        inputs.push_back(concat_self(features[i]));
        Tensor lg = Tensor::zeros(depths[i].shape);
        for (size_t j = 0; j < lg.data.size(); ++j) lg.data[j] = std::log(depths[i].data[j]);
        log_gts.push_back(std::move(lg));
    }

    train::AdamState state;
    for (int iter = 0; iter < cfg.iters; ++iter) {
        ad::Tape tape;
        ad::Value w = tape.leaf(probe.weight, true);
        ad::Value loss{};
        for (size_t i = 0; i < inputs.size(); ++i) {
            ad::Value logits = ad::pixelwise_linear(tape.constant(inputs[i]), w);
            ad::Value depth = expected_depth_t(logits, probe.bin_centers);
            ad::Value dl = depth_loss_t(depth, log_gts[i], tape);
            loss = i == 0 ? dl : ad::add(loss, dl);
        }
        loss = ad::affine(loss, 1.0 / static_cast<double>(inputs.size()), 0.0);
        tape.backward(loss);
        std::vector<Tensor*> params = {&probe.weight};
        train::adamw_step(params, {tape.grad(w)}, state, cfg.lr, cfg.weight_decay);
    }
    return probe;
}

Tensor depth_probabilities(const Tensor& logits) {
    const int k = logits.shape.back();
    const long long outer = logits.numel() / k;
    Tensor out = Tensor::zeros(logits.shape);
    for (long long o = 0; o < outer; ++o) {
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            const double r = std::max(logits.data[o * k + j], 0.0) + 0.1;
            out.data[o * k + j] = r;
            denom += r;
        }
        for (int j = 0; j < k; ++j) out.data[o * k + j] /= denom;
    }
    return out;
}

Tensor predict_depth(const DepthProbe& probe, const Tensor& features) {
    Tensor input = concat_self(features);
    const int h = input.shape[0], w = input.shape[1], c2 = input.shape[2];
    const int bins = probe.weight.shape[0];
    if (probe.weight.shape[1] != c2) throw std::invalid_argument("predict_depth: channel mismatch");
    Tensor logits = Tensor::zeros({h, w, bins});
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        const double* fp = &input.data[p * c2];
        for (int k = 0; k < bins; ++k) {
            const double* wr = &probe.weight.data[static_cast<long long>(k) * c2];
            double acc = 0.0;
            for (int ci = 0; ci < c2; ++ci) acc += wr[ci] * fp[ci];
            logits.data[p * bins + k] = acc;
        }
    }
    Tensor probs = depth_probabilities(logits);
    Tensor out = Tensor::zeros({h, w});
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        double acc = 0.0;
        for (int k = 0; k < bins; ++k) acc += probs.data[p * bins + k] * probe.bin_centers[k];
        out.data[p] = acc;
    }
    return out;
}

std::pair<std::vector<double>, double> miou(const std::vector<int>& pred,
                                            const std::vector<int>& gt, int n_classes) {
    if (pred.size() != gt.size()) throw std::invalid_argument("miou: size mismatch");
    std::vector<double> iou(n_classes, -1.0);
    double total = 0.0;
    int active = 0;
    for (int cls = 0; cls < n_classes; ++cls) {
        long long tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            const bool in_pred = pred[i] == cls;
            const bool in_gt = gt[i] == cls;
            if (in_pred && in_gt) {
                tp++;
            } else if (in_pred) {
                fp++;
            } else if (in_gt) {
                fn++;
            }
        }
        if (tp + fp + fn == 0) continue;  // absent from both
        iou[cls] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        total += iou[cls];
        active++;
    }
    return {iou, active > 0 ? total / active : 0.0};
}

double pixel_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw std::invalid_argument("pixel_accuracy: size mismatch");
    }
    long long hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == gt[i]) hits++;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double delta1(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size() || pred.empty()) throw std::invalid_argument("delta1: size mismatch");
    long long hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] <= 0.0 || gt[i] <= 0.0) {
            throw std::invalid_argument("delta1: non-positive depth");
        }
        if (std::max(pred[i] / gt[i], gt[i] / pred[i]) < 1.25) hits++;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// experiment driver
// ---------------------------------------------------------------------------

train::GuidanceSetup make_guidance(const ExperimentConfig& cfg) {
    train::GuidanceSetup setup;
    setup.rel_cfg = cfg.relational;
    setup.fusion_cfg = cfg.fusion_cfg;
    setup.mode = cfg.fusion_mode;
    for (size_t i = 0; i < cfg.guidance_ids.size(); ++i) {
        const int id = cfg.guidance_ids[i];
        if (id < 0 || id >= static_cast<int>(cfg.vfms.size())) {
            throw std::invalid_argument("guidance id out of range");
        }
        const synth::SyntheticVFM& vfm = cfg.vfms[id];
        setup.vfms.push_back(vfm);
        // orthonormal columns need d <= C
        const int d = std::min(cfg.relational.dim, vfm.channels);
        setup.projections.push_back(rel::Projection::channel_select(
            cfg.relational.projection_seed + static_cast<uint64_t>(id), vfm.channels, d));
    }
    return setup;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    ExperimentResult result;
    if (cfg.source_ids.empty()) throw std::invalid_argument("experiment: no source VFMs");
    std::vector<synth::SyntheticVFM> sources;
    for (int id : cfg.source_ids) {
        if (id < 0 || id >= static_cast<int>(cfg.vfms.size())) {
            throw std::invalid_argument("source id out of range");
        }
        sources.push_back(cfg.vfms[id]);
    }
    train::GuidanceSetup guidance = make_guidance(cfg);

    ups::UpsamplerParams params = ups::UpsamplerParams::init(cfg.upsampler, cfg.upsampler_seed);
    if (cfg.method == UpsampleMethod::trained) {
        Rng scene_rng(cfg.scene_seed, 0x5CE2E5ULL);
        std::vector<synth::SceneSample> train_scenes;
        for (int i = 0; i < cfg.scene_count; ++i) {
            train_scenes.push_back(synth::gen_scene(scene_rng, cfg.scene));
        }
        try {
            train::TrainResult tr = train::train(train_scenes, sources, guidance, cfg.upsampler,
                                                 cfg.upsampler_seed, cfg.train_cfg);
            params = std::move(tr.params);
            result.trace = std::move(tr.trace);
        } catch (const train::DivergenceError& e) {
            result.diverged = true;
            result.error = e.what();
            result.trace = e.trace;
            return result;
        }
    }
    ExperimentResult scored = probe_with_params(cfg, params);
    scored.trace = std::move(result.trace);
    return scored;
}

ExperimentResult probe_with_params(const ExperimentConfig& cfg,
                                   const ups::UpsamplerParams& params) {
    ExperimentResult result;
    if (cfg.source_ids.empty()) throw std::invalid_argument("experiment: no source VFMs");
    const int first_source = cfg.source_ids[0];
    if (first_source < 0 || first_source >= static_cast<int>(cfg.vfms.size())) {
        throw std::invalid_argument("source id out of range");
    }
    // regenerate the same scene stream as run_experiment
    Rng scene_rng(cfg.scene_seed, 0x5CE2E5ULL);
    std::vector<synth::SceneSample> train_scenes, eval_scenes;
    for (int i = 0; i < cfg.scene_count; ++i) {
        train_scenes.push_back(synth::gen_scene(scene_rng, cfg.scene));
    }
    for (int i = 0; i < cfg.scene_eval_count; ++i) {
        eval_scenes.push_back(synth::gen_scene(scene_rng, cfg.scene));
    }

    // probing uses the first source VFM on full scenes
    const synth::SyntheticVFM& probe_vfm = cfg.vfms[first_source];
    const int fine = cfg.train_cfg.fine_stride;
    const int coarse = cfg.train_cfg.coarse_stride;
    auto upsampled = [&](const synth::SceneSample& scene) {
        Tensor f_lr = synth::extract(probe_vfm, scene.image, coarse);
        const int th = scene.image.shape[0] / fine, tw = scene.image.shape[1] / fine;
        if (cfg.method == UpsampleMethod::bilinear) {
            return resize_bilinear(f_lr, th, tw);
        }
        Tensor image = resize_bilinear(scene.image, th, tw);
        return ups::upsample(cfg.upsampler, params, image, f_lr);
    };

    std::vector<Tensor> train_feats, eval_feats;
    std::vector<std::vector<int>> train_labels, eval_labels;
    std::vector<Tensor> train_depths, eval_depths;
    for (const synth::SceneSample& s : train_scenes) {
        train_feats.push_back(upsampled(s));
        train_labels.push_back(
            synth::downsample_labels(s.labels, s.image.shape[0], s.image.shape[1], fine));
        train_depths.push_back(synth::downsample_depth(s.depth, fine));
    }
    for (const synth::SceneSample& s : eval_scenes) {
        eval_feats.push_back(upsampled(s));
        eval_labels.push_back(
            synth::downsample_labels(s.labels, s.image.shape[0], s.image.shape[1], fine));
        eval_depths.push_back(synth::downsample_depth(s.depth, fine));
    }

    SegProbe seg = probe_seg(train_feats, train_labels, cfg.scene.n_classes, cfg.probe);
    std::vector<int> all_pred, all_gt;
    for (size_t i = 0; i < eval_feats.size(); ++i) {
        std::vector<int> pred = predict_seg(seg, eval_feats[i]);
        all_pred.insert(all_pred.end(), pred.begin(), pred.end());
        all_gt.insert(all_gt.end(), eval_labels[i].begin(), eval_labels[i].end());
    }
    auto [per_class, mean_iou] = miou(all_pred, all_gt, cfg.scene.n_classes);
    result.metrics.per_class_iou = per_class;
    result.metrics.miou = mean_iou;
    result.metrics.pixel_acc = pixel_accuracy(all_pred, all_gt);

    if (cfg.run_depth_probe) {
        DepthProbe dp = probe_depth(train_feats, train_depths, cfg.probe);
        std::vector<double> pred_d, gt_d;
        for (size_t i = 0; i < eval_feats.size(); ++i) {
            Tensor pd = predict_depth(dp, eval_feats[i]);
            pred_d.insert(pred_d.end(), pd.data.begin(), pd.data.end());
            gt_d.insert(gt_d.end(), eval_depths[i].data.begin(), eval_depths[i].data.end());
        }
        result.metrics.delta1 = delta1(pred_d, gt_d);
    }
    return result;
}

std::vector<AblationRow> run_ablation(const std::string& suite, const ExperimentConfig& base,
                                      const std::vector<uint64_t>& seeds) {
    struct Variant {
        std::string name;
        ExperimentConfig cfg;
    };
    std::vector<Variant> variants;
    if (suite == "guidance-panel") {
        ExperimentConfig none = base;
        none.train_cfg.lambda = 0.0;
        variants.push_back({"no-guidance", none});
        for (size_t i = 0; i < base.guidance_ids.size(); ++i) {
            ExperimentConfig single = base;
            single.guidance_ids = {base.guidance_ids[i]};
            variants.push_back({"guidance-" + std::to_string(base.guidance_ids[i]), single});
        }
        variants.push_back({"both-guidance", base});
    } else if (suite == "fusion-strategy") {
        ExperimentConfig mean_cfg = base;
        mean_cfg.fusion_mode = fusion::FusionMode::mean;
        variants.push_back({"mean-fusion", mean_cfg});
        ExperimentConfig sa = base;
        sa.fusion_mode = fusion::FusionMode::sa_select;
        variants.push_back({"sa-selection", sa});
    } else if (suite == "window-sweep") {
        for (int w : {3, 5, 7, 9}) {
            ExperimentConfig c = base;
            c.relational.window = w;
            variants.push_back({"window-" + std::to_string(w), c});
        }
    } else if (suite == "bilinear-baseline") {
        ExperimentConfig bil = base;
        bil.method = UpsampleMethod::bilinear;
        variants.push_back({"bilinear", bil});
        ExperimentConfig tr = base;
        tr.method = UpsampleMethod::trained;
        variants.push_back({"trained", tr});
    } else {
        throw std::invalid_argument("run_ablation: unknown suite '" + suite + "'");
    }

    std::vector<AblationRow> rows;
    for (const Variant& v : variants) {
        for (uint64_t seed : seeds) {
            ExperimentConfig cfg = v.cfg;
            cfg.train_cfg.seed = seed;
            cfg.scene_seed = seed + 1000;
            cfg.probe.seed = seed + 2000;
            ExperimentResult res = run_experiment(cfg);
            AblationRow row;
            row.config_name = v.name;
            row.seed = seed;
            row.diverged = res.diverged;
            if (!res.diverged) {
                row.miou = res.metrics.miou;
                row.delta1 = res.metrics.delta1;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

std::pair<double, double> summarize(const std::vector<AblationRow>& rows,
                                    const std::string& config_name) {
    std::vector<double> vals;
    for (const AblationRow& r : rows) {
        if (r.config_name == config_name && !r.diverged) vals.push_back(r.miou);
    }
    if (vals.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size());
    return {mean, std::sqrt(var)};
}

}  // namespace diveup::eval
