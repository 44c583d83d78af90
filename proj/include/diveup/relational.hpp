#pragma once

#include <cstdint>

#include "diveup/tape.hpp"
#include "diveup/tensor.hpp"

namespace diveup::rel {

struct RelationalConfig {
    int window = 7;               // w, odd
    double tau = 0.0;             // temperature; <= 0 resolves to sqrt(dim)
    uint64_t projection_seed = 77;
    int dim = 16;                 // projection dim d
    double eps = 1e-6;            // spikiness stabilizer

    int radius() const { return window / 2; }
    double resolved_tau() const;
    void validate() const;
};

// Frozen per-source projection with orthonormal columns (C x d).
struct Projection {
    Tensor matrix;

    static Projection identity(int channels);
    // Gaussian matrix orthonormalized by modified Gram-Schmidt; needs d <= C.
    static Projection random_orthonormal(uint64_t seed, int channels, int d);
    // d distinct channels with random signs; keeps channel sparsity visible
    // through the projection, which the spikiness detector relies on.
    static Projection channel_select(uint64_t seed, int channels, int d);

    int in_dim() const { return matrix.shape[0]; }
    int out_dim() const { return matrix.shape[1]; }
};

struct RelationalField {
    Tensor entropy;    // (H,W), nats, in [0, ln w^2]
    Tensor spikiness;  // (H,W), in [0,1)
    Tensor com;        // (H,W,2), components (dx,dy) in [-1,1]
};

// z(p) = phi^T F(p) per position.
Tensor project(const Tensor& features, const Projection& phi);

// Softmax over the w x w clamp-to-edge window of <z(p),z(q)>/tau -> (H,W,w,w).
// Window entries are enumerated row-major: (dy,dx) with dy slowest.
Tensor local_affinity(const Tensor& z, const RelationalConfig& cfg);

// H(p) = -sum S log S with 0*log 0 := 0.
Tensor entropy(const Tensor& affinity);

// K(p) = |z(p)|_inf / (|z(p)|_2 + eps).
Tensor spikiness(const Tensor& z, double eps);

// mu(p) = sum S(p,q) Delta(q); b = clip(mu/r, -1, 1); offsets are (dx,dy)
// with x rightward and y downward, in feature cells.
Tensor com_field(const Tensor& affinity, const RelationalConfig& cfg);

// Bundle of the three maps; phi == nullptr means identity projection.
RelationalField relational_field(const Tensor& features, const Projection* phi,
                                 const RelationalConfig& cfg);

// Differentiable route over a tape (identity projection), used inside the
// guidance loss; forward values match the plain route.
struct ComValues {
    ad::Value bx, by;  // each (H,W)
};
ComValues com_from_features(ad::Value z, const RelationalConfig& cfg);

struct FieldValues {
    ad::Value entropy, spikiness;
    ComValues com;
};
FieldValues relational_field_ad(ad::Value z, const RelationalConfig& cfg);

}  // namespace diveup::rel
