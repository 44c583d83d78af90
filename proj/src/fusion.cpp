#include "diveup/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace diveup::fusion {

Tensor zscore(const Tensor& m, double std_floor) {
    const long long n = m.numel();
    if (n == 0) throw std::invalid_argument("zscore: empty map");
    if (std_floor <= 0.0) throw std::invalid_argument("zscore: std floor must be positive");
    double mean = 0.0;
    for (double v : m.data) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;  // population variance
    for (double v : m.data) {
        const double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double denom = std::max(std::sqrt(var), std_floor);
    Tensor out = Tensor::zeros(m.shape);
    for (long long i = 0; i < n; ++i) out.data[i] = (m.data[i] - mean) / denom;
    return out;
}

Tensor confidence(const Tensor& zscored_entropy, const Tensor& spikiness,
                  const FusionConfig& cfg) {
    if (!zscored_entropy.same_shape(spikiness)) {
        throw std::invalid_argument("confidence: map shape mismatch");
    }
    Tensor out = Tensor::zeros(zscored_entropy.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double hinge = std::max(0.0, spikiness.data[i] - cfg.gamma);
        out.data[i] = -zscored_entropy.data[i] - cfg.beta * hinge;
    }
    return out;
}

Tensor select(const Tensor& scores) {
    if (scores.rank() != 3) throw std::invalid_argument("select: expected (H,W,N)");
    const int n = scores.shape[2];
    if (n < 1) throw std::invalid_argument("select: need at least one source");
    Tensor alpha = Tensor::zeros(scores.shape);
    const long long npix = scores.numel() / n;
    for (long long p = 0; p < npix; ++p) {
        const double* sp = &scores.data[p * n];
        int best = 0;
        for (int i = 1; i < n; ++i) {
            if (sp[i] > sp[best]) best = i;  // ties keep the lowest index
        }
        alpha.data[p * n + best] = 1.0;
    }
    return alpha;
}

Tensor consensus(const Tensor& fields, const Tensor& alpha) {
    if (fields.rank() != 4 || fields.shape[3] != 2) {
        throw std::invalid_argument("consensus: expected fields (H,W,N,2)");
    }
    if (alpha.rank() != 3 || alpha.shape[0] != fields.shape[0] ||
        alpha.shape[1] != fields.shape[1] || alpha.shape[2] != fields.shape[2]) {
        throw std::invalid_argument("consensus: alpha shape mismatch");
    }
    const int n = fields.shape[2];
    const long long npix = static_cast<long long>(fields.shape[0]) * fields.shape[1];
    Tensor out = Tensor::zeros({fields.shape[0], fields.shape[1], 2});
    for (long long p = 0; p < npix; ++p) {
        int sel = -1;
        for (int i = 0; i < n; ++i) {
            if (alpha.data[p * n + i] == 1.0) {
                sel = i;
                break;
            }
        }
        if (sel < 0) throw std::invalid_argument("consensus: alpha row is not one-hot");
        out.data[p * 2 + 0] = fields.data[(p * n + sel) * 2 + 0];
        out.data[p * 2 + 1] = fields.data[(p * n + sel) * 2 + 1];
    }
    return out;
}

namespace {

// Projected features of one source, resampled to the target grid.
Tensor projected_at_target(const Tensor& features, const rel::Projection& phi, int target_h,
                           int target_w) {
    Tensor z = rel::project(features, phi);
    if (z.shape[0] == target_h && z.shape[1] == target_w) return z;
    return resize_bilinear(z, target_h, target_w);
}

}  // namespace

ConsensusField build_consensus(const std::vector<Tensor>& per_source_features,
                               const std::vector<rel::Projection>& projections,
                               const rel::RelationalConfig& rel_cfg, const FusionConfig& cfg,
                               int target_h, int target_w) {
    const int n = static_cast<int>(per_source_features.size());
    if (n < 1) throw std::invalid_argument("build_consensus: need at least one source");
    if (projections.size() != per_source_features.size()) {
        throw std::invalid_argument("build_consensus: one projection per source required");
    }
    Tensor fields = Tensor::zeros({target_h, target_w, n, 2});
    Tensor scores = Tensor::zeros({target_h, target_w, n});
    for (int i = 0; i < n; ++i) {
        Tensor z = projected_at_target(per_source_features[i], projections[i], target_h, target_w);
        rel::RelationalField rf = rel::relational_field(z, nullptr, rel_cfg);
        Tensor hn = zscore(rf.entropy, cfg.std_floor);
        Tensor g = confidence(hn, rf.spikiness, cfg);
        const long long npix = static_cast<long long>(target_h) * target_w;
        for (long long p = 0; p < npix; ++p) {
            scores.data[p * n + i] = g.data[p];
            fields.data[(p * n + i) * 2 + 0] = rf.com.data[p * 2 + 0];
            fields.data[(p * n + i) * 2 + 1] = rf.com.data[p * 2 + 1];
        }
    }
    ConsensusField out;
    out.alpha = select(scores);
    out.b_ens = consensus(fields, out.alpha);
    out.confidence = std::move(scores);
    return out;
}

Tensor fuse_baseline_mean(const std::vector<Tensor>& fields) {
    const int n = static_cast<int>(fields.size());
    if (n < 1) throw std::invalid_argument("fuse_baseline_mean: need at least one source");
    for (const Tensor& f : fields) {
        if (!f.same_shape(fields[0])) {
            throw std::invalid_argument("fuse_baseline_mean: field shape mismatch");
        }
    }
    Tensor out = Tensor::zeros(fields[0].shape);
    for (const Tensor& f : fields) {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += f.data[i];
    }
    const double inv = 1.0 / n;
    for (double& v : out.data) v = std::min(std::max(v * inv, -1.0), 1.0);
    return out;
}

Tensor build_mean_fused(const std::vector<Tensor>& per_source_features,
                        const std::vector<rel::Projection>& projections,
                        const rel::RelationalConfig& rel_cfg, int target_h, int target_w) {
    if (per_source_features.empty()) {
        throw std::invalid_argument("build_mean_fused: need at least one source");
    }
    std::vector<Tensor> fields;
    fields.reserve(per_source_features.size());
    for (size_t i = 0; i < per_source_features.size(); ++i) {
        Tensor z = projected_at_target(per_source_features[i], projections[i], target_h, target_w);
        rel::RelationalField rf = rel::relational_field(z, nullptr, rel_cfg);
        fields.push_back(std::move(rf.com));
    }
    return fuse_baseline_mean(fields);
}

}  // namespace diveup::fusion
