#include "diveup/tensor.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

namespace diveup {

namespace {

long long checked_numel(const std::vector<int>& shape) {
    long long n = 1;
    for (int e : shape) {
        if (e < 0) throw std::invalid_argument("tensor extent must be non-negative");
        n *= e;
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
    }
}

template <class F>
Tensor pointwise2(const Tensor& a, const Tensor& b, const char* op, F f) {
    require_same_shape(a, b, op);
    Tensor out;
    out.shape = a.shape;
    out.data.resize(a.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

template <class F>
Tensor pointwise1(const Tensor& a, F f) {
    Tensor out;
    out.shape = a.shape;
    out.data.resize(a.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    long long n = checked_numel(shape);
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    long long n = checked_numel(shape);
    if (n != static_cast<long long>(values.size())) {
        throw std::invalid_argument("tensor data length does not match shape");
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

long long Tensor::ravel(const std::vector<int>& coords) const {
    if (static_cast<int>(coords.size()) != rank()) {
        throw std::invalid_argument("ravel: coordinate rank mismatch");
    }
    long long off = 0;
    for (int a = 0; a < rank(); ++a) {
        if (coords[a] < 0 || coords[a] >= shape[a]) {
            throw std::invalid_argument("ravel: coordinate out of range");
        }
        off = off * shape[a] + coords[a];
    }
    return off;
}

std::vector<int> Tensor::unravel(long long index) const {
    std::vector<int> coords(rank());
    for (int a = rank() - 1; a >= 0; --a) {
        coords[a] = static_cast<int>(index % shape[a]);
        index /= shape[a];
    }
    return coords;
}

std::string shape_str(const Tensor& t) {
    std::string s = "(";
    for (int a = 0; a < t.rank(); ++a) {
        s += std::to_string(t.shape[a]);
        if (a + 1 < t.rank()) s += ",";
    }
    return s + ")";
}

bool all_finite(const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return pointwise2(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return pointwise2(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return pointwise2(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    return pointwise2(a, b, "divide", [](double x, double y) {
        if (y == 0.0) throw std::domain_error("divide: zero denominator");
        return x / y;
    });
}

Tensor vmax(const Tensor& a, const Tensor& b) {
    return pointwise2(a, b, "max", [](double x, double y) { return std::max(x, y); });
}

Tensor vexp(const Tensor& a) {
    return pointwise1(a, [](double x) { return std::exp(x); });
}

Tensor vlog(const Tensor& a) {
    return pointwise1(a, [](double x) {
        if (x <= 0.0) throw std::domain_error("log: non-positive input");
        return std::log(x);
    });
}

Tensor relu(const Tensor& a) {
    return pointwise1(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor vabs(const Tensor& a) {
    return pointwise1(a, [](double x) { return std::fabs(x); });
}

Tensor clip(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clip: lo > hi");
    return pointwise1(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
}

Tensor scale(const Tensor& a, double s) {
    return pointwise1(a, [s](double x) { return x * s; });
}

namespace {

// Shared reduction driver: walks the full index space once, mapping every
// element to its output slot.
struct ReducePlan {
    std::vector<int> out_shape;
    std::vector<char> reduced;  // per input axis
    long long out_numel = 1;
    long long group = 1;  // elements folded into each output slot
};

ReducePlan plan_reduce(const Tensor& a, const std::vector<int>& axes) {
    ReducePlan p;
    p.reduced.assign(a.rank(), 0);
    for (int ax : axes) {
        if (ax < 0 || ax >= a.rank()) throw std::invalid_argument("reduce: axis out of range");
        if (a.shape[ax] == 0) throw std::invalid_argument("reduce: empty reduction axis");
        p.reduced[ax] = 1;
    }
    for (int i = 0; i < a.rank(); ++i) {
        if (p.reduced[i]) {
            p.group *= a.shape[i];
        } else {
            p.out_shape.push_back(a.shape[i]);
            p.out_numel *= a.shape[i];
        }
    }
    return p;
}

template <class Fold>
Tensor fold_reduce(const Tensor& a, const std::vector<int>& axes, double init, Fold fold) {
    ReducePlan p = plan_reduce(a, axes);
    Tensor out = Tensor::full(p.out_shape, init);
    if (a.numel() == 0) return out;
    std::vector<int> coords(a.rank(), 0);
    for (long long i = 0; i < a.numel(); ++i) {
        long long oi = 0;
        long long rem = i;
        for (int ax = a.rank() - 1; ax >= 0; --ax) {
            coords[ax] = static_cast<int>(rem % a.shape[ax]);
            rem /= a.shape[ax];
        }
        for (int ax = 0; ax < a.rank(); ++ax) {
            if (!p.reduced[ax]) oi = oi * a.shape[ax] + coords[ax];
        }
        fold(out.data[static_cast<size_t>(oi)], a.data[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes) {
    return fold_reduce(a, axes, 0.0, [](double& acc, double x) { acc += x; });
}

Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes) {
    ReducePlan p = plan_reduce(a, axes);
    Tensor s = reduce_sum(a, axes);
    for (double& v : s.data) v /= static_cast<double>(p.group);
    return s;
}

Tensor reduce_max(const Tensor& a, const std::vector<int>& axes) {
    return fold_reduce(a, axes, -std::numeric_limits<double>::infinity(),
                       [](double& acc, double x) { acc = std::max(acc, x); });
}

Tensor reduce_l2norm(const Tensor& a, const std::vector<int>& axes) {
    Tensor s = fold_reduce(a, axes, 0.0, [](double& acc, double x) { acc += x * x; });
    for (double& v : s.data) v = std::sqrt(v);
    return s;
}

Tensor reduce_linfnorm(const Tensor& a, const std::vector<int>& axes) {
    return fold_reduce(a, axes, 0.0,
                       [](double& acc, double x) { acc = std::max(acc, std::fabs(x)); });
}

Tensor softmax(const Tensor& a, int axis, const Tensor* mask) {
    if (axis < 0 || axis >= a.rank()) throw std::invalid_argument("softmax: axis out of range");
    if (mask != nullptr) require_same_shape(a, *mask, "softmax mask");
    const int extent = a.shape[axis];
    if (extent == 0) throw std::invalid_argument("softmax: empty axis");

    long long inner = 1;
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.shape[i];
    long long outer = a.numel() / (inner * extent);

    Tensor out = Tensor::zeros(a.shape);
    for (long long o = 0; o < outer; ++o) {
        for (long long in = 0; in < inner; ++in) {
            const long long base = o * extent * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < extent; ++k) {
                const long long idx = base + static_cast<long long>(k) * inner;
                if (mask != nullptr && mask->data[idx] == 0.0) continue;
                mx = std::max(mx, a.data[idx]);
            }
            if (mx == -std::numeric_limits<double>::infinity()) {
                throw std::invalid_argument("softmax: all entries masked in a slice");
            }
            double denom = 0.0;
            for (int k = 0; k < extent; ++k) {
                const long long idx = base + static_cast<long long>(k) * inner;
                if (mask != nullptr && mask->data[idx] == 0.0) continue;
                const double e = std::exp(a.data[idx] - mx);
                out.data[idx] = e;
                denom += e;
            }
            for (int k = 0; k < extent; ++k) {
                const long long idx = base + static_cast<long long>(k) * inner;
                if (mask != nullptr && mask->data[idx] == 0.0) {
                    out.data[idx] = 0.0;
                } else {
                    out.data[idx] /= denom;
                }
            }
        }
    }
    return out;
}

Tensor resize_bilinear(const Tensor& a, int out_h, int out_w) {
    if (a.rank() != 2 && a.rank() != 3) {
        throw std::invalid_argument("resize_bilinear: expected (H,W) or (H,W,C)");
    }
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: bad output size");
    const int h = a.shape[0], w = a.shape[1];
    const int c = a.rank() == 3 ? a.shape[2] : 1;
    if (h == 0 || w == 0) throw std::invalid_argument("resize_bilinear: empty input");

    std::vector<int> out_shape = a.rank() == 3 ? std::vector<int>{out_h, out_w, c}
                                               : std::vector<int>{out_h, out_w};
    Tensor out = Tensor::zeros(out_shape);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double v00 = a.data[(static_cast<long long>(y0) * w + x0) * c + ch];
                const double v01 = a.data[(static_cast<long long>(y0) * w + x1) * c + ch];
                const double v10 = a.data[(static_cast<long long>(y1) * w + x0) * c + ch];
                const double v11 = a.data[(static_cast<long long>(y1) * w + x1) * c + ch];
                const double top = v00 * (1.0 - wx) + v01 * wx;
                const double bot = v10 * (1.0 - wx) + v11 * wx;
                out.data[(static_cast<long long>(y) * out_w + x) * c + ch] =
                    top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace diveup
