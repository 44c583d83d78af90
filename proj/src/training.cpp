#include "diveup/training.hpp"

#include <algorithm>
#include <cmath>

namespace diveup::train {

void TrainConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("train: lambda must be non-negative");
    if (lr <= 0.0) throw std::invalid_argument("train: learning rate must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("train: weight decay must be non-negative");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (iters < 0) throw std::invalid_argument("train: iteration count must be non-negative");
    if (fine_stride < 1 || coarse_stride < fine_stride || coarse_stride % fine_stride != 0) {
        throw std::invalid_argument("train: coarse stride must be a multiple of fine stride");
    }
    if (crop < coarse_stride || crop % coarse_stride != 0) {
        throw std::invalid_argument("train: crop must be a positive multiple of the coarse stride");
    }
}

namespace {

Tensor crop_image(const Tensor& image, int y0, int x0, int side) {
    Tensor out = Tensor::zeros({side, side, 3});
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
            }
        }
    }
    return out;
}

}  // namespace

TrainPair make_pair(const synth::SceneSample& sample, const synth::SyntheticVFM& source,
                    int source_id, const GuidanceSetup& guidance, const TrainConfig& cfg,
                    Rng& rng, bool build_guidance) {
    cfg.validate();
    const int h = sample.image.shape[0], w = sample.image.shape[1];
    if (cfg.crop > h || cfg.crop > w) {
        throw std::invalid_argument("make_pair: crop larger than the scene");
    }
    // crop offsets aligned to the coarse grid so both strides divide the crop
    const int max_oy = (h - cfg.crop) / cfg.coarse_stride;
    const int max_ox = (w - cfg.crop) / cfg.coarse_stride;
    const int y0 = rng.uniform_int(0, max_oy) * cfg.coarse_stride;
    const int x0 = rng.uniform_int(0, max_ox) * cfg.coarse_stride;
    Tensor crop = crop_image(sample.image, y0, x0, cfg.crop);

    TrainPair pair;
    pair.source_id = source_id;
    pair.f_lr = synth::extract(source, crop, cfg.coarse_stride);
    pair.f_hr = synth::extract(source, crop, cfg.fine_stride);
    const int th = pair.f_hr.shape[0], tw = pair.f_hr.shape[1];
    pair.image = resize_bilinear(crop, th, tw);

    if (build_guidance) {
        std::vector<Tensor> feats;
        feats.reserve(guidance.vfms.size());
        for (const synth::SyntheticVFM& vfm : guidance.vfms) {
            feats.push_back(synth::extract(vfm, crop));
        }
        if (guidance.mode == fusion::FusionMode::sa_select) {
            pair.b_ens = fusion::build_consensus(feats, guidance.projections, guidance.rel_cfg,
                                                 guidance.fusion_cfg, th, tw)
                             .b_ens;
        } else {
            pair.b_ens = fusion::build_mean_fused(feats, guidance.projections, guidance.rel_cfg,
                                                  th, tw);
        }
    }
    return pair;
}

double loss_rec(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("loss_rec: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.numel());
}

double loss_guide(const Tensor& b_hat, const Tensor& b_ens) {
    if (!b_hat.same_shape(b_ens)) throw std::invalid_argument("loss_guide: shape mismatch");
    if (b_hat.rank() != 3 || b_hat.shape[2] != 2) {
        throw std::invalid_argument("loss_guide: expected (H,W,2) fields");
    }
    const long long npos = static_cast<long long>(b_hat.shape[0]) * b_hat.shape[1];
    double acc = 0.0;
    for (long long p = 0; p < npos; ++p) {
        acc += std::fabs(b_hat.data[p * 2] - b_ens.data[p * 2]) +
               std::fabs(b_hat.data[p * 2 + 1] - b_ens.data[p * 2 + 1]);
    }
    return acc / static_cast<double>(npos);
}

LossValues loss_total_t(const ups::UpsamplerConfig& ucfg, const ups::ParamValues& p,
                        const TrainPair& pair, double lambda, ad::Tape& tape,
                        const rel::RelationalConfig& rel_cfg) {
    ad::Value f_hat = ups::upsample_t(ucfg, p, tape.constant(pair.image), tape.constant(pair.f_lr));
    ad::Value rec = ad::mean(ad::mul(ad::sub(f_hat, tape.constant(pair.f_hr)),
                                     ad::sub(f_hat, tape.constant(pair.f_hr))));
    LossValues out;
    out.rec = tape.val(rec).data[0];
    if (lambda == 0.0) {
        out.total = rec;
        return out;
    }
    if (pair.b_ens.numel() == 0) {
        throw std::invalid_argument("loss_total: pair has no guidance target");
    }
    // predicted COM field through the upsampled features, identity projection
    rel::ComValues com = rel::com_from_features(f_hat, rel_cfg);
    const int th = pair.f_hr.shape[0], tw = pair.f_hr.shape[1];
    Tensor tx = Tensor::zeros({th, tw});
    Tensor ty = Tensor::zeros({th, tw});
    for (long long q = 0; q < static_cast<long long>(th) * tw; ++q) {
        tx.data[q] = pair.b_ens.data[q * 2];
        ty.data[q] = pair.b_ens.data[q * 2 + 1];
    }
    ad::Value l1 = ad::add(ad::sum(ad::vabs(ad::sub(com.bx, tape.constant(std::move(tx))))),
                           ad::sum(ad::vabs(ad::sub(com.by, tape.constant(std::move(ty))))));
    ad::Value guide = ad::affine(l1, 1.0 / (static_cast<double>(th) * tw), 0.0);
    out.guide = tape.val(guide).data[0];
    out.total = ad::add(rec, ad::affine(guide, lambda, 0.0));
    return out;
}

double loss_total(const ups::UpsamplerConfig& ucfg, const ups::UpsamplerParams& params,
                  const TrainPair& pair, double lambda, const rel::RelationalConfig& rel_cfg) {
    ad::Tape tape;
    ups::ParamValues p = ups::param_leaves(tape, params, false);
    LossValues lv = loss_total_t(ucfg, p, pair, lambda, tape, rel_cfg);
    return tape.val(lv.total).data[0];
}

void adamw_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, AdamState& state,
                double lr, double weight_decay) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    if (grads.size() != params.size()) throw std::invalid_argument("adamw: grad count mismatch");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.push_back(Tensor::zeros(p->shape));
            state.v.push_back(Tensor::zeros(p->shape));
        }
    }
    for (const Tensor& g : grads) {
        if (!all_finite(g)) throw std::runtime_error("adamw: non-finite gradient");
    }
    state.step++;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            const double g = grads[i].data[j];
            state.m[i].data[j] = kBeta1 * state.m[i].data[j] + (1.0 - kBeta1) * g;
            state.v[i].data[j] = kBeta2 * state.v[i].data[j] + (1.0 - kBeta2) * g * g;
            const double mhat = state.m[i].data[j] / bc1;
            const double vhat = state.v[i].data[j] / bc2;
            p.data[j] -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay * p.data[j]);
        }
    }
}

TrainResult train(const std::vector<synth::SceneSample>& scenes,
                  const std::vector<synth::SyntheticVFM>& sources, const GuidanceSetup& guidance,
                  const ups::UpsamplerConfig& ucfg, uint64_t upsampler_seed,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (scenes.empty()) throw std::invalid_argument("train: no scenes");
    if (sources.empty()) throw std::invalid_argument("train: no source VFMs");
    if (cfg.lambda > 0.0 && guidance.vfms.empty()) {
        throw std::invalid_argument("train: guidance panel is empty");
    }
    if (ucfg.scale != cfg.scale()) {
        throw std::invalid_argument("train: upsampler scale must equal coarse/fine stride ratio");
    }

    TrainResult result;
    result.params = ups::UpsamplerParams::init(ucfg, upsampler_seed);
    AdamState state;
    Rng rng(cfg.seed, 0x7124A1ULL);
    const bool use_guidance = cfg.lambda > 0.0;

    for (int iter = 0; iter < cfg.iters; ++iter) {
        std::vector<Tensor> batch_grads;
        TraceRow row;
        row.iteration = iter;
        for (int b = 0; b < cfg.batch; ++b) {
            const int source_id = (iter * cfg.batch + b) % static_cast<int>(sources.size());
            const int scene_id = rng.uniform_int(0, static_cast<int>(scenes.size()) - 1);
            TrainPair pair = make_pair(scenes[scene_id], sources[source_id], source_id, guidance,
                                       cfg, rng, use_guidance);
            ad::Tape tape;
            ups::ParamValues p = ups::param_leaves(tape, result.params, true);
            LossValues lv = loss_total_t(ucfg, p, pair, cfg.lambda, tape, guidance.rel_cfg);
            const double total = tape.val(lv.total).data[0];
            if (!std::isfinite(total)) {
                throw DivergenceError("train: non-finite loss at iteration " +
                                          std::to_string(iter),
                                      std::move(result.trace));
            }
            tape.backward(lv.total);
            const std::vector<ad::Value> leaves = {p.k1, p.b1, p.k2, p.b2, p.k3, p.b3};
            if (batch_grads.empty()) {
                for (const ad::Value& v : leaves) batch_grads.push_back(tape.grad(v));
            } else {
                for (size_t i = 0; i < leaves.size(); ++i) {
                    const Tensor& g = tape.grad(leaves[i]);
                    for (size_t j = 0; j < g.data.size(); ++j) {
                        batch_grads[i].data[j] += g.data[j];
                    }
                }
            }
            row.source_id = source_id;
            row.loss_rec += lv.rec;
            row.loss_guide += lv.guide;
            row.loss_total += total;
        }
        const double inv_batch = 1.0 / cfg.batch;
        for (Tensor& g : batch_grads) {
            for (double& v : g.data) v *= inv_batch;
        }
        row.loss_rec *= inv_batch;
        row.loss_guide *= inv_batch;
        row.loss_total *= inv_batch;
        adamw_step(result.params.tensors(), batch_grads, state, cfg.lr, cfg.weight_decay);
        if (!result.params.finite()) {
            throw DivergenceError("train: non-finite parameters after step " +
                                      std::to_string(iter),
                                  std::move(result.trace));
        }
        result.trace.push_back(row);
    }
    return result;
}

}  // namespace diveup::train
