#pragma once

#include <vector>

#include "diveup/relational.hpp"
#include "diveup/tensor.hpp"

namespace diveup::fusion {

struct FusionConfig {
    double beta = 20.0;      // hinge penalty strength
    double gamma = 0.6;      // spikiness tolerance
    double std_floor = 1e-8;  // degenerate Z-score guard
};

enum class FusionMode { sa_select, mean };

struct ConsensusField {
    Tensor b_ens;       // (H,W,2), components in [-1,1]
    Tensor alpha;       // (H,W,N) exactly one-hot per position
    Tensor confidence;  // (H,W,N)
};

// (x - spatial mean) / max(population std, floor); constant maps -> zeros.
Tensor zscore(const Tensor& m, double std_floor);

// g(p) = -H~(p) - beta * max(0, K(p) - gamma).
Tensor confidence(const Tensor& zscored_entropy, const Tensor& spikiness,
                  const FusionConfig& cfg);

// Winner-take-all over the source axis of (H,W,N); ties -> lowest index.
Tensor select(const Tensor& scores);

// b_ens(p) = field of the selected source at p, copied exactly.
Tensor consensus(const Tensor& fields /* (H,W,N,2) */, const Tensor& alpha /* (H,W,N) */);

// Full guidance-target pipeline: project each source, bilinearly resample the
// projected features to the target resolution, then
// relational_field -> zscore -> confidence -> select -> consensus.
ConsensusField build_consensus(const std::vector<Tensor>& per_source_features,
                               const std::vector<rel::Projection>& projections,
                               const rel::RelationalConfig& rel_cfg, const FusionConfig& cfg,
                               int target_h, int target_w);

// Unweighted per-pixel mean of the source fields, re-clipped to [-1,1].
Tensor fuse_baseline_mean(const std::vector<Tensor>& fields /* each (H,W,2) */);

// Mean-fusion analogue of build_consensus (ablation baseline).
Tensor build_mean_fused(const std::vector<Tensor>& per_source_features,
                        const std::vector<rel::Projection>& projections,
                        const rel::RelationalConfig& rel_cfg, int target_h, int target_w);

}  // namespace diveup::fusion
