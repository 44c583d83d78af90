#pragma once

#include <cstdint>
#include <vector>

#include "diveup/tape.hpp"
#include "diveup/tensor.hpp"

namespace diveup::ups {

struct UpsamplerConfig {
    int dim = 32;            // guidance dim d, divisible by 4
    int window = 3;          // attention window (low-res cells), odd
    int enc1 = 16;           // encoder widths; kernel sizes are 5,3,3
    int enc2 = 16;
    double rope_base = 100.0;
    int scale = 4;           // upsampling ratio s
    void validate() const;
};

// Encoder kernels and biases, declaration order = checkpoint order. Values
// carry no learned projection (attention reads raw low-res features).
struct UpsamplerParams {
    Tensor k1, b1, k2, b2, k3, b3;

    static UpsamplerParams init(const UpsamplerConfig& cfg, uint64_t seed);

    long long param_count() const;
    bool finite() const;
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
};

// Parameter leaves on a tape, in declaration order.
struct ParamValues {
    ad::Value k1, b1, k2, b2, k3, b3;
};
ParamValues param_leaves(ad::Tape& tape, const UpsamplerParams& params, bool requires_grad);

// G = ImageEncoder(I): three stride-1 convolutions (5x5, 3x3, 3x3) with tanh
// between layers; resolution preserved.
ad::Value encode_guidance(ad::Value image, const ParamValues& p);

// K_lr = AvgPool2D(G_RoPE), non-overlapping s x s mean.
ad::Value pool_keys(ad::Value g_rope, int s);

// Full forward: encode -> rope -> pool -> cross-scale neighborhood attention.
// image is (h*s, w*s, 3) in [0,1]; f_lr is (h,w,C); output is (h*s, w*s, C).
ad::Value upsample_t(const UpsamplerConfig& cfg, const ParamValues& p, ad::Value image,
                     ad::Value f_lr);

// Forward-only evaluation (same computation on a throwaway tape). The
// signature admits no guidance-VFM inputs: inference reads only the image
// and the raw low-res features.
Tensor upsample(const UpsamplerConfig& cfg, const UpsamplerParams& params, const Tensor& image,
                const Tensor& f_lr);

Tensor encode_guidance(const UpsamplerConfig& cfg, const UpsamplerParams& params,
                       const Tensor& image);

// Rotary rotation of a single vector at a normalized position; test hook for
// the relative-position property.
std::vector<double> rope_apply(const std::vector<double>& v, double px, double py, double base);

}  // namespace diveup::ups
