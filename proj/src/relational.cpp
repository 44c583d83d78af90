#include "diveup/relational.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diveup/rng.hpp"

namespace diveup::rel {

double RelationalConfig::resolved_tau() const {
    return tau > 0.0 ? tau : std::sqrt(static_cast<double>(dim));
}

void RelationalConfig::validate() const {
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("relational: window must be odd and positive");
    if (dim < 1) throw std::invalid_argument("relational: dim must be positive");
    if (eps <= 0.0) throw std::invalid_argument("relational: eps must be positive");
}

Projection Projection::identity(int channels) {
    Projection p;
    p.matrix = Tensor::zeros({channels, channels});
    for (int i = 0; i < channels; ++i) p.matrix.at(i, i) = 1.0;
    return p;
}

Projection Projection::random_orthonormal(uint64_t seed, int channels, int d) {
    if (d > channels) {
        throw std::invalid_argument("projection: orthonormal columns need d <= channels");
    }
    Rng rng(seed, 0xF00DULL);
    Tensor m = Tensor::zeros({channels, d});
    for (double& v : m.data) v = rng.normal();
    // modified Gram-Schmidt, two passes
    for (int pass = 0; pass < 2; ++pass) {
        for (int j = 0; j < d; ++j) {
            for (int prev = 0; prev < j; ++prev) {
                double dot = 0.0;
                for (int i = 0; i < channels; ++i) dot += m.at(i, j) * m.at(i, prev);
                for (int i = 0; i < channels; ++i) m.at(i, j) -= dot * m.at(i, prev);
            }
            double norm = 0.0;
            for (int i = 0; i < channels; ++i) norm += m.at(i, j) * m.at(i, j);
            norm = std::sqrt(norm);
            if (norm < 1e-10) throw std::runtime_error("projection: degenerate column");
            for (int i = 0; i < channels; ++i) m.at(i, j) /= norm;
        }
    }
    Projection p;
    p.matrix = std::move(m);
    return p;
}

Projection Projection::channel_select(uint64_t seed, int channels, int d) {
    if (d > channels) {
        throw std::invalid_argument("projection: orthonormal columns need d <= channels");
    }
    Rng rng(seed, 0xC0DEULL);
    std::vector<int> order(channels);
    std::iota(order.begin(), order.end(), 0);
    for (int i = channels - 1; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_int(0, i)]);
    }
    Projection p;
    p.matrix = Tensor::zeros({channels, d});
    for (int j = 0; j < d; ++j) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        p.matrix.at(order[j], j) = sign;
    }
    return p;
}

Tensor project(const Tensor& features, const Projection& phi) {
    if (features.rank() != 3) throw std::invalid_argument("project: expected (H,W,C)");
    const int h = features.shape[0], w = features.shape[1], c = features.shape[2];
    if (phi.in_dim() != c) {
        throw std::invalid_argument("project: feature channels do not match projection input dim");
    }
    const int d = phi.out_dim();
    Tensor out = Tensor::zeros({h, w, d});
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        const double* fp = &features.data[p * c];
        double* op = &out.data[p * d];
        for (int ci = 0; ci < c; ++ci) {
            const double fv = fp[ci];
            if (fv == 0.0) continue;
            const double* mrow = &phi.matrix.data[static_cast<long long>(ci) * d];
            for (int j = 0; j < d; ++j) op[j] += fv * mrow[j];
        }
    }
    return out;
}

namespace {

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

Tensor local_affinity(const Tensor& z, const RelationalConfig& cfg) {
    cfg.validate();
    if (z.rank() != 3) throw std::invalid_argument("local_affinity: expected (H,W,d)");
    const int h = z.shape[0], w = z.shape[1], d = z.shape[2];
    const int win = cfg.window;
    const int r = cfg.radius();
    const double inv_tau = 1.0 / cfg.resolved_tau();
    Tensor out = Tensor::zeros({h, w, win, win});
    const int ww = win * win;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double* zp = &z.data[(static_cast<long long>(y) * w + x) * d];
            double* sp = &out.data[(static_cast<long long>(y) * w + x) * ww];
            double mx = -1e300;
            for (int oy = -r; oy <= r; ++oy) {
                const int qy = clampi(y + oy, 0, h - 1);
                for (int ox = -r; ox <= r; ++ox) {
                    const int qx = clampi(x + ox, 0, w - 1);
                    const double* zq = &z.data[(static_cast<long long>(qy) * w + qx) * d];
                    double dot = 0.0;
                    for (int c = 0; c < d; ++c) dot += zp[c] * zq[c];
                    const double logit = dot * inv_tau;
                    sp[(oy + r) * win + (ox + r)] = logit;
                    mx = std::max(mx, logit);
                }
            }
            double denom = 0.0;
            for (int j = 0; j < ww; ++j) {
                sp[j] = std::exp(sp[j] - mx);
                denom += sp[j];
            }
            for (int j = 0; j < ww; ++j) sp[j] /= denom;
        }
    }
    return out;
}

Tensor entropy(const Tensor& affinity) {
    if (affinity.rank() != 4) throw std::invalid_argument("entropy: expected (H,W,w,w)");
    const int h = affinity.shape[0], w = affinity.shape[1];
    const int ww = affinity.shape[2] * affinity.shape[3];
    Tensor out = Tensor::zeros({h, w});
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        const double* sp = &affinity.data[p * ww];
        double acc = 0.0;
        for (int j = 0; j < ww; ++j) {
            if (sp[j] > 0.0) acc -= sp[j] * std::log(sp[j]);
        }
        out.data[p] = acc;
    }
    return out;
}

Tensor spikiness(const Tensor& z, double eps) {
    if (z.rank() != 3) throw std::invalid_argument("spikiness: expected (H,W,d)");
    if (eps <= 0.0) throw std::invalid_argument("spikiness: eps must be positive");
    const int h = z.shape[0], w = z.shape[1], d = z.shape[2];
    Tensor out = Tensor::zeros({h, w});
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        const double* zp = &z.data[p * d];
        double linf = 0.0, sq = 0.0;
        for (int c = 0; c < d; ++c) {
            linf = std::max(linf, std::fabs(zp[c]));
            sq += zp[c] * zp[c];
        }
        out.data[p] = linf / (std::sqrt(sq) + eps);
    }
    return out;
}

Tensor com_field(const Tensor& affinity, const RelationalConfig& cfg) {
    if (affinity.rank() != 4) throw std::invalid_argument("com_field: expected (H,W,w,w)");
    if (affinity.shape[2] != cfg.window || affinity.shape[3] != cfg.window) {
        throw std::invalid_argument("com_field: affinity window does not match config");
    }
    const int h = affinity.shape[0], w = affinity.shape[1];
    const int win = cfg.window;
    const int r = cfg.radius();
    Tensor out = Tensor::zeros({h, w, 2});
    if (r == 0) return out;  // single-cell window, zero offset by definition
    const double inv_r = 1.0 / r;
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        const double* sp = &affinity.data[p * win * win];
        double mx = 0.0, my = 0.0;
        for (int oy = -r; oy <= r; ++oy) {
            for (int ox = -r; ox <= r; ++ox) {
                const double s = sp[(oy + r) * win + (ox + r)];
                mx += s * ox;
                my += s * oy;
            }
        }
        out.data[p * 2 + 0] = std::min(std::max(mx * inv_r, -1.0), 1.0);
        out.data[p * 2 + 1] = std::min(std::max(my * inv_r, -1.0), 1.0);
    }
    return out;
}

RelationalField relational_field(const Tensor& features, const Projection* phi,
                                 const RelationalConfig& cfg) {
    const Tensor* z = &features;
    Tensor projected;
    if (phi != nullptr) {
        projected = project(features, *phi);
        z = &projected;
    }
    RelationalField field;
    Tensor aff = local_affinity(*z, cfg);
    field.entropy = entropy(aff);
    field.spikiness = spikiness(*z, cfg.eps);
    field.com = com_field(aff, cfg);
    return field;
}

// ---------------------------------------------------------------------------
// differentiable route
// ---------------------------------------------------------------------------

namespace {

// Stacked window logits (H,W,w^2) in the same (dy slow, dx fast) order as
// local_affinity, so the two routes agree bit-for-bit.
ad::Value window_logits(ad::Value z, const RelationalConfig& cfg) {
    const int r = cfg.radius();
    const double inv_tau = 1.0 / cfg.resolved_tau();
    std::vector<ad::Value> logits;
    logits.reserve(static_cast<size_t>(cfg.window) * cfg.window);
    for (int oy = -r; oy <= r; ++oy) {
        for (int ox = -r; ox <= r; ++ox) {
            ad::Value shifted = ad::shift_clamp2d(z, oy, ox);
            logits.push_back(ad::affine(ad::dot_last(z, shifted), inv_tau, 0.0));
        }
    }
    return ad::stack_last(logits);
}

}  // namespace

ComValues com_from_features(ad::Value z, const RelationalConfig& cfg) {
    cfg.validate();
    const Tensor& zv = z.tape->val(z);
    if (zv.rank() != 3) throw std::invalid_argument("com_from_features: expected (H,W,d)");
    const int r = cfg.radius();
    if (r == 0) {
        Tensor zero = Tensor::zeros({zv.shape[0], zv.shape[1]});
        ad::Value zx = z.tape->constant(zero);
        ad::Value zy = z.tape->constant(std::move(zero));
        return {zx, zy};
    }
    ad::Value s = ad::softmax_last(window_logits(z, cfg));
    std::vector<double> dxs, dys;
    for (int oy = -r; oy <= r; ++oy) {
        for (int ox = -r; ox <= r; ++ox) {
            dxs.push_back(static_cast<double>(ox));
            dys.push_back(static_cast<double>(oy));
        }
    }
    const double inv_r = 1.0 / r;
    ad::Value bx = ad::clip(ad::affine(ad::weighted_sum_last(s, dxs), inv_r, 0.0), -1.0, 1.0);
    ad::Value by = ad::clip(ad::affine(ad::weighted_sum_last(s, dys), inv_r, 0.0), -1.0, 1.0);
    return {bx, by};
}

FieldValues relational_field_ad(ad::Value z, const RelationalConfig& cfg) {
    cfg.validate();
    ad::Value s = ad::softmax_last(window_logits(z, cfg));
    ad::Value ent = ad::neg(ad::sum_last(ad::mul(s, ad::vlog(s))));
    ad::Value l2 = ad::vsqrt(ad::sum_last(ad::mul(z, z)));
    ad::Value spk = ad::divide(ad::max_last(ad::vabs(z)), ad::affine(l2, 1.0, cfg.eps));
    const int r = cfg.radius();
    ComValues com;
    if (r == 0) {
        const Tensor& zv = z.tape->val(z);
        Tensor zero = Tensor::zeros({zv.shape[0], zv.shape[1]});
        com.bx = z.tape->constant(zero);
        com.by = z.tape->constant(std::move(zero));
    } else {
        std::vector<double> dxs, dys;
        for (int oy = -r; oy <= r; ++oy) {
            for (int ox = -r; ox <= r; ++ox) {
                dxs.push_back(static_cast<double>(ox));
                dys.push_back(static_cast<double>(oy));
            }
        }
        const double inv_r = 1.0 / r;
        com.bx = ad::clip(ad::affine(ad::weighted_sum_last(s, dxs), inv_r, 0.0), -1.0, 1.0);
        com.by = ad::clip(ad::affine(ad::weighted_sum_last(s, dys), inv_r, 0.0), -1.0, 1.0);
    }
    return {ent, spk, com};
}

}  // namespace diveup::rel
