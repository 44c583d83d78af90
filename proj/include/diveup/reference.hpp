#pragma once

#include <utility>
#include <vector>

#include "diveup/tensor.hpp"

// Naive golden references. Everything here is written as direct loops over
// the defining formulas and stays independent of the optimized paths in the
// main library; tests and the selftest compare the two routes.
namespace diveup::ref {

// exp/sum-exp without max subtraction, over the last axis.
Tensor softmax_last_naive(const Tensor& a);

// Per-pixel matrix product z(p) = phi^T F(p); phi is (C,d).
Tensor project_naive(const Tensor& features, const Tensor& phi);

// Local self-affinity over a w x w clamp-to-edge window -> (H,W,w,w).
Tensor affinity_naive(const Tensor& z, int window, double tau);

// Shannon entropy of each affinity row, 0*log 0 := 0 -> (H,W).
Tensor entropy_naive(const Tensor& affinity);

// Linf / (L2 + eps) per position -> (H,W).
Tensor spikiness_naive(const Tensor& z, double eps);

// Expected window offset, normalized by the radius and clipped -> (H,W,2).
Tensor com_naive(const Tensor& affinity, int window);

// (x - mean) / max(population std, floor).
Tensor zscore_naive(const Tensor& m, double std_floor);

Tensor confidence_naive(const Tensor& zscored_entropy, const Tensor& spikiness, double beta,
                        double gamma);

// One-hot winner-take-all over the source axis of (H,W,N); ties -> lowest index.
Tensor select_naive(const Tensor& scores);

// Per-pixel gather of the selected source field; fields (H,W,N,2), alpha (H,W,N).
Tensor consensus_naive(const Tensor& fields, const Tensor& alpha);

// Unweighted per-pixel mean of (H,W,N,2), re-clipped to [-1,1].
Tensor mean_fuse_naive(const Tensor& fields);

// Per-query loop over the attended window, exp/sum-exp softmax.
Tensor attention_naive(const Tensor& q, const Tensor& k, const Tensor& v, int window, int s);

Tensor avgpool_naive(const Tensor& a, int s);

double loss_rec_naive(const Tensor& pred, const Tensor& target);
double loss_guide_naive(const Tensor& pred_field, const Tensor& target_field);

// Confusion-matrix mIoU; classes absent from both prediction and ground
// truth are excluded from the mean.
std::pair<std::vector<double>, double> miou_naive(const std::vector<int>& pred,
                                                  const std::vector<int>& gt, int n_classes);

double delta1_naive(const std::vector<double>& pred, const std::vector<double>& gt);

}  // namespace diveup::ref
