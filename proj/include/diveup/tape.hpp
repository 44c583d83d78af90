#pragma once

#include <functional>
#include <vector>

#include "diveup/tensor.hpp"

namespace diveup::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Value {
    Tape* tape = nullptr;
    int id = -1;
};

// Append-only reverse-mode tape. The recording is built per evaluation and
// discarded afterwards; creation order is the topological order, so one
// reverse sweep accumulates exact partials into every leaf that asked for
// them.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value leaf(Tensor v, bool requires_grad = false);
    Value constant(Tensor v) { return leaf(std::move(v), false); }

    const Tensor& val(Value v) const { return nodes_[v.id].value; }
    bool needs_grad(Value v) const { return nodes_[v.id].needs; }

    // Valid after backward(); zeros if the node never received a contribution.
    const Tensor& grad(Value v);

    // Seeds d(loss)/d(loss) = 1 and sweeps the recording in reverse.
    // loss must be scalar (numel == 1).
    void backward(Value loss);

    size_t num_nodes() const { return nodes_.size(); }

    // --- internal, used by the op implementations ---
    Value push(Tensor value, bool needs, std::function<void(Tape&)> back);
    Tensor& grad_buf(int id);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_set = false;
        bool needs = false;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
};

// Pointwise (binary ops require equal shapes; no broadcasting).
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value divide(Value a, Value b);
Value vmax(Value a, Value b);
Value neg(Value a);
Value vexp(Value a);
Value vlog(Value a);
Value vtanh(Value a);
Value vsqrt(Value a);
Value vabs(Value a);
Value relu(Value a);
Value clip(Value a, double lo, double hi);
Value affine(Value a, double scale, double shift);  // scale*x + shift

// Reductions.
Value sum(Value a);   // full reduce -> scalar
Value mean(Value a);  // full reduce -> scalar
Value sum_last(Value a);
Value max_last(Value a);  // ties route the gradient to the first maximizer

// Last-axis structure.
Value softmax_last(Value a);                 // max-subtraction, max treated as constant
Value normalize_last(Value a);               // x / sum_last(x); zero slice sum is an error
Value weighted_sum_last(Value a, const std::vector<double>& w);
Value stack_last(const std::vector<Value>& parts);  // K x (..) -> (..,K)
Value dot_last(Value a, Value b);                   // sum over last axis of a*b

// Spatial ops on (H,W) / (H,W,C) grids.
Value shift_clamp2d(Value a, int dy, int dx);       // clamp-to-edge translation
Value conv2d_same(Value input, Value kernel, Value bias);  // kernel (kh,kw,Cin,Cout), stride 1, zero pad
Value avgpool2d(Value a, int s);                    // non-overlapping s x s mean
Value rope2d(Value a, double base);                 // (H,W,d), d % 4 == 0
Value diff_x(Value a);                              // a[.,x+1]-a[.,x]
Value diff_y(Value a);

// Cross-scale neighborhood attention: queries (H,W,d) anchored at low-res
// cells by floor division, keys/values (h,w,*), out-of-bounds keys masked,
// logits scaled by 1/sqrt(d).
Value neighborhood_attention(Value q, Value k, Value v, int window, int s);

// Rotary rotation of one d-vector at normalized position (px,py); first half
// of the channels rotates with x, second half with y, geometric frequency
// schedule from base. inverse applies the adjoint rotation.
void rope_rotate_inplace(double* vec, int d, double px, double py, double base, bool inverse);

// Per-pixel linear map: features (H,W,C) x weight (K,C) -> (H,W,K).
Value pixelwise_linear(Value features, Value weight);

// Mean softmax cross-entropy of (H,W,K) logits against one label per pixel.
Value cross_entropy_mean(Value logits, const std::vector<int>& labels);

// Gradient verification: reverse accumulation vs central finite differences.
struct GradCheckReport {
    std::vector<double> max_rel_err;  // one entry per parameter tensor
    double worst = 0.0;
    bool passed(double tol = 1e-4) const { return worst < tol; }
};

// f builds a scalar loss from leaves created on the given tape (one per
// parameter tensor, in order). Throws if the loss is non-finite at the
// probe point.
GradCheckReport grad_check(
    const std::function<Value(Tape&, const std::vector<Value>&)>& f,
    const std::vector<Tensor>& params, double h = 1e-5);

}  // namespace diveup::ad
