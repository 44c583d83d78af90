#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace diveup {

// Dense row-major tensor of 64-bit reals (last axis fastest).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from(std::vector<int> shape, std::vector<double> values);

    int rank() const { return static_cast<int>(shape.size()); }

    long long numel() const {
        long long n = 1;
        for (int e : shape) n *= e;
        return n;
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    long long ravel(const std::vector<int>& coords) const;
    std::vector<int> unravel(long long index) const;

    template <class... Ix>
    double& at(Ix... ix) {
        return data[offset_of(ix...)];
    }
    template <class... Ix>
    double at(Ix... ix) const {
        return data[offset_of(ix...)];
    }

private:
    template <class... Ix>
    long long offset_of(Ix... ix) const {
        const int coords[] = {static_cast<int>(ix)...};
        const int n = sizeof...(Ix);
        long long off = 0;
        for (int a = 0; a < n; ++a) off = off * shape[a] + coords[a];
        return off;
    }
};

std::string shape_str(const Tensor& t);
bool all_finite(const Tensor& t);

// Pointwise operations. Binary ops require exactly equal shapes (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);  // zero denominator is an error
Tensor vmax(const Tensor& a, const Tensor& b);
Tensor vexp(const Tensor& a);
Tensor vlog(const Tensor& a);  // non-positive input is an error
Tensor relu(const Tensor& a);
Tensor vabs(const Tensor& a);
Tensor clip(const Tensor& a, double lo, double hi);
Tensor scale(const Tensor& a, double s);

// Reductions over a set of axes; reduced extents are removed from the shape.
// An empty (zero-extent) reduction axis is an error.
Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes);
Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes);
Tensor reduce_max(const Tensor& a, const std::vector<int>& axes);
Tensor reduce_l2norm(const Tensor& a, const std::vector<int>& axes);
Tensor reduce_linfnorm(const Tensor& a, const std::vector<int>& axes);

// Exp-normalization over one axis with max-subtraction. Entries where
// mask == 0 are excluded and come out exactly 0; a fully masked slice is
// an error. Each valid slice sums to 1.
Tensor softmax(const Tensor& a, int axis, const Tensor* mask = nullptr);

// Bilinear resize of an (H,W) or (H,W,C) grid, half-pixel centers, edge clamp.
Tensor resize_bilinear(const Tensor& a, int out_h, int out_w);

}  // namespace diveup
