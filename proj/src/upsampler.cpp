#include "diveup/upsampler.hpp"

#include <cmath>

#include "diveup/rng.hpp"

namespace diveup::ups {

void UpsamplerConfig::validate() const {
    if (dim < 4 || dim % 4 != 0) {
        throw std::invalid_argument("upsampler: dim must be a positive multiple of 4");
    }
    if (window < 1 || window % 2 == 0) {
        throw std::invalid_argument("upsampler: attention window must be odd and positive");
    }
    if (enc1 < 1 || enc2 < 1) throw std::invalid_argument("upsampler: encoder widths must be positive");
    if (rope_base <= 0.0) throw std::invalid_argument("upsampler: rope base must be positive");
    if (scale < 1) throw std::invalid_argument("upsampler: scale must be >= 1");
}

UpsamplerParams UpsamplerParams::init(const UpsamplerConfig& cfg, uint64_t seed) {
    cfg.validate();
    auto uniform_kernel = [](Rng rng, int kh, int kw, int cin, int cout) {
        Tensor k = Tensor::zeros({kh, kw, cin, cout});
        const double lim = std::sqrt(1.0 / (static_cast<double>(kh) * kw * cin));
        for (double& v : k.data) v = rng.uniform(-lim, lim);
        return k;
    };
    UpsamplerParams p;
    p.k1 = uniform_kernel(Rng(seed, 21), 5, 5, 3, cfg.enc1);
    p.b1 = Tensor::zeros({cfg.enc1});
    p.k2 = uniform_kernel(Rng(seed, 22), 3, 3, cfg.enc1, cfg.enc2);
    p.b2 = Tensor::zeros({cfg.enc2});
    p.k3 = uniform_kernel(Rng(seed, 23), 3, 3, cfg.enc2, cfg.dim);
    p.b3 = Tensor::zeros({cfg.dim});
    return p;
}

long long UpsamplerParams::param_count() const {
    long long n = 0;
    for (const Tensor* t : tensors()) n += t->numel();
    return n;
}

bool UpsamplerParams::finite() const {
    for (const Tensor* t : tensors()) {
        if (!all_finite(*t)) return false;
    }
    return true;
}

std::vector<Tensor*> UpsamplerParams::tensors() {
    return {&k1, &b1, &k2, &b2, &k3, &b3};
}

std::vector<const Tensor*> UpsamplerParams::tensors() const {
    return {&k1, &b1, &k2, &b2, &k3, &b3};
}

ParamValues param_leaves(ad::Tape& tape, const UpsamplerParams& params, bool requires_grad) {
    return ParamValues{
        tape.leaf(params.k1, requires_grad), tape.leaf(params.b1, requires_grad),
        tape.leaf(params.k2, requires_grad), tape.leaf(params.b2, requires_grad),
        tape.leaf(params.k3, requires_grad), tape.leaf(params.b3, requires_grad),
    };
}

ad::Value encode_guidance(ad::Value image, const ParamValues& p) {
    const Tensor& img = image.tape->val(image);
    if (img.rank() != 3 || img.shape[2] != 3) {
        throw std::invalid_argument("encode_guidance: expected (H,W,3) image");
    }
    ad::Value g1 = ad::vtanh(ad::conv2d_same(image, p.k1, p.b1));
    ad::Value g2 = ad::vtanh(ad::conv2d_same(g1, p.k2, p.b2));
    ad::Value g = ad::conv2d_same(g2, p.k3, p.b3);
    if (!all_finite(image.tape->val(g))) {
        throw std::runtime_error("encode_guidance: non-finite activations");
    }
    return g;
}

ad::Value pool_keys(ad::Value g_rope, int s) { return ad::avgpool2d(g_rope, s); }

ad::Value upsample_t(const UpsamplerConfig& cfg, const ParamValues& p, ad::Value image,
                     ad::Value f_lr) {
    cfg.validate();
    const Tensor& img = image.tape->val(image);
    const Tensor& lr = image.tape->val(f_lr);
    if (lr.rank() != 3) throw std::invalid_argument("upsample: expected (h,w,C) features");
    if (img.shape[0] != lr.shape[0] * cfg.scale || img.shape[1] != lr.shape[1] * cfg.scale) {
        throw std::invalid_argument("upsample: image extents must be scale x feature extents");
    }
    ad::Value g = encode_guidance(image, p);
    ad::Value g_rope = ad::rope2d(g, cfg.rope_base);
    ad::Value keys = pool_keys(g_rope, cfg.scale);
    return ad::neighborhood_attention(g_rope, keys, f_lr, cfg.window, cfg.scale);
}

Tensor upsample(const UpsamplerConfig& cfg, const UpsamplerParams& params, const Tensor& image,
                const Tensor& f_lr) {
    ad::Tape tape;
    ParamValues p = param_leaves(tape, params, false);
    ad::Value out = upsample_t(cfg, p, tape.constant(image), tape.constant(f_lr));
    return tape.val(out);
}

Tensor encode_guidance(const UpsamplerConfig& cfg, const UpsamplerParams& params,
                       const Tensor& image) {
    cfg.validate();
    ad::Tape tape;
    ParamValues p = param_leaves(tape, params, false);
    ad::Value g = encode_guidance(tape.constant(image), p);
    return tape.val(g);
}

std::vector<double> rope_apply(const std::vector<double>& v, double px, double py, double base) {
    if (v.size() % 4 != 0) throw std::invalid_argument("rope_apply: dim must be divisible by 4");
    std::vector<double> out = v;
    ad::rope_rotate_inplace(out.data(), static_cast<int>(out.size()), px, py, base, false);
    return out;
}

}  // namespace diveup::ups
