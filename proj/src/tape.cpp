#include "diveup/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace diveup::ad {

namespace {

void require_same_tape(Value a, Value b, const char* op) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw std::invalid_argument(std::string(op) + ": operands from different tapes");
    }
}

}  // namespace

Value Tape::leaf(Tensor v, bool requires_grad) {
    return push(std::move(v), requires_grad, nullptr);
}

Value Tape::push(Tensor value, bool needs, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, needs, std::move(back)});
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.grad_set) {
        n.grad = Tensor::zeros(n.value.shape);
        n.grad_set = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Value v) {
    return grad_buf(v.id);
}

void Tape::backward(Value loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
    const Node& ln = nodes_[loss.id];
    if (ln.value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!std::isfinite(ln.value.data[0])) {
        throw std::runtime_error("backward: non-finite loss");
    }
    grad_buf(loss.id).data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad_set && n.back) n.back(*this);
    }
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

namespace {

// Unary pointwise: y_i = f(x_i), dx_i += g_i * df(x_i, y_i).
template <class F, class DF>
Value unary_op(Value a, F f, DF df) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    Tensor out;
    out.shape = x.shape;
    out.data.resize(x.data.size());
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = f(x.data[i]);
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id;
    const int io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& xv = tt.val(Value{&tt, ia});
        const Tensor& yv = tt.val(Value{&tt, io});
        Tensor& ga = tt.grad_buf(ia);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i] * df(xv.data[i], yv.data[i]);
        }
    };
    return t.push(std::move(out), true, back);
}

// Binary pointwise with partials dfa(x,y,out) and dfb(x,y,out).
template <class F, class DFA, class DFB>
Value binary_op(Value a, Value b, const char* name, F f, DFA dfa, DFB dfb) {
    require_same_tape(a, b, name);
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    const Tensor& y = t.val(b);
    if (!x.same_shape(y)) {
        throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(x) +
                                    " vs " + shape_str(y));
    }
    Tensor out;
    out.shape = x.shape;
    out.data.resize(x.data.size());
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = f(x.data[i], y.data[i]);
    const bool na = t.needs_grad(a), nb = t.needs_grad(b);
    if (!na && !nb) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, ib = b.id;
    const int io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& xv = tt.val(Value{&tt, ia});
        const Tensor& yv = tt.val(Value{&tt, ib});
        const Tensor& ov = tt.val(Value{&tt, io});
        if (na) {
            Tensor& ga = tt.grad_buf(ia);
            for (size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] += g.data[i] * dfa(xv.data[i], yv.data[i], ov.data[i]);
            }
        }
        if (nb) {
            Tensor& gb = tt.grad_buf(ib);
            for (size_t i = 0; i < g.data.size(); ++i) {
                gb.data[i] += g.data[i] * dfb(xv.data[i], yv.data[i], ov.data[i]);
            }
        }
    };
    return t.push(std::move(out), true, back);
}

}  // namespace

Value add(Value a, Value b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Value sub(Value a, Value b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Value mul(Value a, Value b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Value divide(Value a, Value b) {
    return binary_op(
        a, b, "divide",
        [](double x, double y) {
            if (y == 0.0) throw std::domain_error("divide: zero denominator");
            return x / y;
        },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

Value vmax(Value a, Value b) {
    // ties route the gradient to the first operand
    return binary_op(
        a, b, "max", [](double x, double y) { return std::max(x, y); },
        [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return y > x ? 1.0 : 0.0; });
}

Value neg(Value a) {
    return unary_op(
        a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Value vexp(Value a) {
    return unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value vlog(Value a) {
    return unary_op(
        a,
        [](double x) {
            if (x <= 0.0) throw std::domain_error("log: non-positive input");
            return std::log(x);
        },
        [](double x, double) { return 1.0 / x; });
}

Value vtanh(Value a) {
    return unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Value vsqrt(Value a) {
    return unary_op(
        a,
        [](double x) {
            if (x < 0.0) throw std::domain_error("sqrt: negative input");
            return std::sqrt(x);
        },
        [](double, double y) {
            if (y == 0.0) throw std::domain_error("sqrt: derivative at zero");
            return 0.5 / y;
        });
}

Value vabs(Value a) {
    return unary_op(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Value relu(Value a) {
    return unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value clip(Value a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clip: lo > hi");
    return unary_op(
        a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Value affine(Value a, double s, double shift) {
    return unary_op(
        a, [s, shift](double x) { return s * x + shift; },
        [s](double, double) { return s; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Value sum(Value a) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    double acc = 0.0;
    for (double v : x.data) acc += v;
    Tensor out = Tensor::from({1}, {acc});
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id;
    const int io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const double g = tt.grad_buf(io).data[0];
        Tensor& ga = tt.grad_buf(ia);
        for (double& v : ga.data) v += g;
    };
    return t.push(std::move(out), true, back);
}

Value mean(Value a) {
    Tape& t = *a.tape;
    const long long n = t.val(a).numel();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    return affine(sum(a), 1.0 / static_cast<double>(n), 0.0);
}

namespace {

// Split (..., K) into the leading extent product and K.
std::pair<long long, int> split_last(const Tensor& x, const char* op) {
    if (x.rank() < 1) throw std::invalid_argument(std::string(op) + ": rank must be >= 1");
    const int k = x.shape.back();
    if (k == 0) throw std::invalid_argument(std::string(op) + ": empty last axis");
    return {x.numel() / k, k};
}

std::vector<int> drop_last(const std::vector<int>& shape) {
    std::vector<int> s(shape.begin(), shape.end() - 1);
    if (s.empty()) s = {1};
    return s;
}

}  // namespace

Value sum_last(Value a) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    auto [outer, k] = split_last(x, "sum_last");
    Tensor out = Tensor::zeros(drop_last(x.shape));
    for (long long o = 0; o < outer; ++o) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += x.data[o * k + j];
        out.data[o] = acc;
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    const long long outer_c = outer;
    const int k_c = k;
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        Tensor& ga = tt.grad_buf(ia);
        for (long long o = 0; o < outer_c; ++o) {
            for (int j = 0; j < k_c; ++j) ga.data[o * k_c + j] += g.data[o];
        }
    };
    return t.push(std::move(out), true, back);
}

Value max_last(Value a) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    auto [outer, k] = split_last(x, "max_last");
    Tensor out = Tensor::zeros(drop_last(x.shape));
    std::vector<int> arg(static_cast<size_t>(outer), 0);
    for (long long o = 0; o < outer; ++o) {
        double best = x.data[o * k];
        int bi = 0;
        for (int j = 1; j < k; ++j) {
            if (x.data[o * k + j] > best) {
                best = x.data[o * k + j];
                bi = j;
            }
        }
        out.data[o] = best;
        arg[o] = bi;
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    const int k_c = k;
    auto back = [=, arg = std::move(arg)](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        Tensor& ga = tt.grad_buf(ia);
        for (size_t o = 0; o < arg.size(); ++o) ga.data[o * k_c + arg[o]] += g.data[o];
    };
    return t.push(std::move(out), true, back);
}

// ---------------------------------------------------------------------------
// last-axis structure
// ---------------------------------------------------------------------------

Value softmax_last(Value a) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    auto [outer, k] = split_last(x, "softmax_last");
    Tensor out = Tensor::zeros(x.shape);
    for (long long o = 0; o < outer; ++o) {
        const double* xs = &x.data[o * k];
        double* ys = &out.data[o * k];
        double mx = xs[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, xs[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            ys[j] = std::exp(xs[j] - mx);
            denom += ys[j];
        }
        for (int j = 0; j < k; ++j) ys[j] /= denom;
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    const long long outer_c = outer;
    const int k_c = k;
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& y = tt.val(Value{&tt, io});
        Tensor& ga = tt.grad_buf(ia);
        for (long long o = 0; o < outer_c; ++o) {
            const double* ys = &y.data[o * k_c];
            const double* gs = &g.data[o * k_c];
            double dot = 0.0;
            for (int j = 0; j < k_c; ++j) dot += gs[j] * ys[j];
            for (int j = 0; j < k_c; ++j) ga.data[o * k_c + j] += ys[j] * (gs[j] - dot);
        }
    };
    return t.push(std::move(out), true, back);
}

Value normalize_last(Value a) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    auto [outer, k] = split_last(x, "normalize_last");
    Tensor out = Tensor::zeros(x.shape);
    std::vector<double> sums(static_cast<size_t>(outer), 0.0);
    for (long long o = 0; o < outer; ++o) {
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += x.data[o * k + j];
        if (s == 0.0) throw std::domain_error("normalize_last: zero slice sum");
        sums[o] = s;
        for (int j = 0; j < k; ++j) out.data[o * k + j] = x.data[o * k + j] / s;
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    const int k_c = k;
    auto back = [=, sums = std::move(sums)](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& y = tt.val(Value{&tt, io});
        Tensor& ga = tt.grad_buf(ia);
        for (size_t o = 0; o < sums.size(); ++o) {
            const double* ys = &y.data[o * k_c];
            const double* gs = &g.data[o * k_c];
            double dot = 0.0;
            for (int j = 0; j < k_c; ++j) dot += gs[j] * ys[j];
            for (int j = 0; j < k_c; ++j) ga.data[o * k_c + j] += (gs[j] - dot) / sums[o];
        }
    };
    return t.push(std::move(out), true, back);
}

Value weighted_sum_last(Value a, const std::vector<double>& w) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    auto [outer, k] = split_last(x, "weighted_sum_last");
    if (static_cast<int>(w.size()) != k) {
        throw std::invalid_argument("weighted_sum_last: weight count mismatch");
    }
    Tensor out = Tensor::zeros(drop_last(x.shape));
    for (long long o = 0; o < outer; ++o) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += x.data[o * k + j] * w[j];
        out.data[o] = acc;
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    const long long outer_c = outer;
    const int k_c = k;
    auto back = [=, w = w](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        Tensor& ga = tt.grad_buf(ia);
        for (long long o = 0; o < outer_c; ++o) {
            for (int j = 0; j < k_c; ++j) ga.data[o * k_c + j] += g.data[o] * w[j];
        }
    };
    return t.push(std::move(out), true, back);
}

Value stack_last(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_last: no parts");
    Tape& t = *parts[0].tape;
    const Tensor& first = t.val(parts[0]);
    const int k = static_cast<int>(parts.size());
    bool needs = false;
    for (const Value& p : parts) {
        require_same_tape(parts[0], p, "stack_last");
        if (!t.val(p).same_shape(first)) {
            throw std::invalid_argument("stack_last: part shape mismatch");
        }
        needs = needs || t.needs_grad(p);
    }
    std::vector<int> out_shape = first.shape;
    out_shape.push_back(k);
    Tensor out = Tensor::zeros(out_shape);
    const long long outer = first.numel();
    for (int j = 0; j < k; ++j) {
        const Tensor& pv = t.val(parts[j]);
        for (long long o = 0; o < outer; ++o) out.data[o * k + j] = pv.data[o];
    }
    if (!needs) return t.push(std::move(out), false, nullptr);
    std::vector<int> ids(parts.size());
    std::vector<char> need_flags(parts.size());
    for (size_t j = 0; j < parts.size(); ++j) {
        ids[j] = parts[j].id;
        need_flags[j] = t.needs_grad(parts[j]) ? 1 : 0;
    }
    const int io = static_cast<int>(t.num_nodes());
    const long long outer_c = outer;
    auto back = [=, ids = std::move(ids), need_flags = std::move(need_flags)](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        for (size_t j = 0; j < ids.size(); ++j) {
            if (!need_flags[j]) continue;
            Tensor& gp = tt.grad_buf(ids[j]);
            for (long long o = 0; o < outer_c; ++o) {
                gp.data[o] += g.data[o * ids.size() + j];
            }
        }
    };
    return t.push(std::move(out), true, back);
}

Value dot_last(Value a, Value b) {
    require_same_tape(a, b, "dot_last");
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    const Tensor& y = t.val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("dot_last: shape mismatch");
    auto [outer, k] = split_last(x, "dot_last");
    Tensor out = Tensor::zeros(drop_last(x.shape));
    for (long long o = 0; o < outer; ++o) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += x.data[o * k + j] * y.data[o * k + j];
        out.data[o] = acc;
    }
    const bool na = t.needs_grad(a), nb = t.needs_grad(b);
    if (!na && !nb) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, ib = b.id, io = static_cast<int>(t.num_nodes());
    const long long outer_c = outer;
    const int k_c = k;
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& xv = tt.val(Value{&tt, ia});
        const Tensor& yv = tt.val(Value{&tt, ib});
        if (na) {
            Tensor& ga = tt.grad_buf(ia);
            for (long long o = 0; o < outer_c; ++o) {
                for (int j = 0; j < k_c; ++j) {
                    ga.data[o * k_c + j] += g.data[o] * yv.data[o * k_c + j];
                }
            }
        }
        if (nb) {
            Tensor& gb = tt.grad_buf(ib);
            for (long long o = 0; o < outer_c; ++o) {
                for (int j = 0; j < k_c; ++j) {
                    gb.data[o * k_c + j] += g.data[o] * xv.data[o * k_c + j];
                }
            }
        }
    };
    return t.push(std::move(out), true, back);
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

namespace {

struct Grid {
    int h, w, c;  // c == 1 for rank-2 grids
};

Grid grid_of(const Tensor& x, const char* op) {
    if (x.rank() == 2) return {x.shape[0], x.shape[1], 1};
    if (x.rank() == 3) return {x.shape[0], x.shape[1], x.shape[2]};
    throw std::invalid_argument(std::string(op) + ": expected (H,W) or (H,W,C)");
}

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

Value shift_clamp2d(Value a, int dy, int dx) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    const Grid g2 = grid_of(x, "shift_clamp2d");
    Tensor out = Tensor::zeros(x.shape);
    for (int y = 0; y < g2.h; ++y) {
        const int sy = clampi(y + dy, 0, g2.h - 1);
        for (int xx = 0; xx < g2.w; ++xx) {
            const int sx = clampi(xx + dx, 0, g2.w - 1);
            const long long src = (static_cast<long long>(sy) * g2.w + sx) * g2.c;
            const long long dst = (static_cast<long long>(y) * g2.w + xx) * g2.c;
            for (int c = 0; c < g2.c; ++c) out.data[dst + c] = x.data[src + c];
        }
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        Tensor& ga = tt.grad_buf(ia);
        for (int y = 0; y < g2.h; ++y) {
            const int sy = clampi(y + dy, 0, g2.h - 1);
            for (int xx = 0; xx < g2.w; ++xx) {
                const int sx = clampi(xx + dx, 0, g2.w - 1);
                const long long src = (static_cast<long long>(sy) * g2.w + sx) * g2.c;
                const long long dst = (static_cast<long long>(y) * g2.w + xx) * g2.c;
                for (int c = 0; c < g2.c; ++c) ga.data[src + c] += g.data[dst + c];
            }
        }
    };
    return t.push(std::move(out), true, back);
}

Value conv2d_same(Value input, Value kernel, Value bias) {
    require_same_tape(input, kernel, "conv2d_same");
    require_same_tape(input, bias, "conv2d_same");
    Tape& t = *input.tape;
    const Tensor& x = t.val(input);
    const Tensor& k = t.val(kernel);
    const Tensor& b = t.val(bias);
    if (x.rank() != 3 || k.rank() != 4 || b.rank() != 1) {
        throw std::invalid_argument("conv2d_same: expected input (H,W,Cin), kernel (kh,kw,Cin,Cout), bias (Cout)");
    }
    const int h = x.shape[0], w = x.shape[1], cin = x.shape[2];
    const int kh = k.shape[0], kw = k.shape[1];
    if (k.shape[2] != cin) throw std::invalid_argument("conv2d_same: channel mismatch");
    const int cout = k.shape[3];
    if (b.shape[0] != cout) throw std::invalid_argument("conv2d_same: bias size mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d_same: kernel extents must be odd");
    const int ph = kh / 2, pw = kw / 2;

    Tensor out = Tensor::zeros({h, w, cout});
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            double* op = &out.data[(static_cast<long long>(y) * w + xx) * cout];
            for (int co = 0; co < cout; ++co) op[co] = b.data[co];
            for (int ty = 0; ty < kh; ++ty) {
                const int sy = y + ty - ph;
                if (sy < 0 || sy >= h) continue;
                for (int tx = 0; tx < kw; ++tx) {
                    const int sx = xx + tx - pw;
                    if (sx < 0 || sx >= w) continue;
                    const double* ip = &x.data[(static_cast<long long>(sy) * w + sx) * cin];
                    const double* kp = &k.data[((static_cast<long long>(ty) * kw + tx) * cin) * cout];
                    for (int ci = 0; ci < cin; ++ci) {
                        const double iv = ip[ci];
                        const double* kc = kp + static_cast<long long>(ci) * cout;
                        for (int co = 0; co < cout; ++co) op[co] += iv * kc[co];
                    }
                }
            }
        }
    }
    const bool ni = t.needs_grad(input), nk = t.needs_grad(kernel), nb = t.needs_grad(bias);
    if (!ni && !nk && !nb) return t.push(std::move(out), false, nullptr);
    const int ii = input.id, ik = kernel.id, ib2 = bias.id, io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& xv = tt.val(Value{&tt, ii});
        const Tensor& kv = tt.val(Value{&tt, ik});
        Tensor* gi = ni ? &tt.grad_buf(ii) : nullptr;
        Tensor* gk = nk ? &tt.grad_buf(ik) : nullptr;
        Tensor* gb = nb ? &tt.grad_buf(ib2) : nullptr;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const double* gp = &g.data[(static_cast<long long>(y) * w + xx) * cout];
                if (gb != nullptr) {
                    for (int co = 0; co < cout; ++co) gb->data[co] += gp[co];
                }
                for (int ty = 0; ty < kh; ++ty) {
                    const int sy = y + ty - ph;
                    if (sy < 0 || sy >= h) continue;
                    for (int tx = 0; tx < kw; ++tx) {
                        const int sx = xx + tx - pw;
                        if (sx < 0 || sx >= w) continue;
                        const long long ioff = (static_cast<long long>(sy) * w + sx) * cin;
                        const long long koff = (static_cast<long long>(ty) * kw + tx) * cin * cout;
                        for (int ci = 0; ci < cin; ++ci) {
                            double acc = 0.0;
                            const double* kc = &kv.data[koff + static_cast<long long>(ci) * cout];
                            for (int co = 0; co < cout; ++co) acc += kc[co] * gp[co];
                            if (gi != nullptr) gi->data[ioff + ci] += acc;
                            if (gk != nullptr) {
                                const double iv = xv.data[ioff + ci];
                                double* kg = &gk->data[koff + static_cast<long long>(ci) * cout];
                                for (int co = 0; co < cout; ++co) kg[co] += iv * gp[co];
                            }
                        }
                    }
                }
            }
        }
    };
    return t.push(std::move(out), true, back);
}

Value avgpool2d(Value a, int s) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    const Grid g2 = grid_of(x, "avgpool2d");
    if (s < 1) throw std::invalid_argument("avgpool2d: pool size must be >= 1");
    if (g2.h % s != 0 || g2.w % s != 0) {
        throw std::invalid_argument("avgpool2d: extents not divisible by pool size");
    }
    const int oh = g2.h / s, ow = g2.w / s;
    std::vector<int> out_shape =
        x.rank() == 3 ? std::vector<int>{oh, ow, g2.c} : std::vector<int>{oh, ow};
    Tensor out = Tensor::zeros(out_shape);
    const double inv = 1.0 / (static_cast<double>(s) * s);
    for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
            for (int c = 0; c < g2.c; ++c) {
                double acc = 0.0;
                for (int py = 0; py < s; ++py) {
                    for (int px = 0; px < s; ++px) {
                        acc += x.data[((static_cast<long long>(y) * s + py) * g2.w + xx * s + px) *
                                          g2.c +
                                      c];
                    }
                }
                out.data[(static_cast<long long>(y) * ow + xx) * g2.c + c] = acc * inv;
            }
        }
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        Tensor& ga = tt.grad_buf(ia);
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                for (int c = 0; c < g2.c; ++c) {
                    const double gv = g.data[(static_cast<long long>(y) * ow + xx) * g2.c + c] * inv;
                    for (int py = 0; py < s; ++py) {
                        for (int px = 0; px < s; ++px) {
                            ga.data[((static_cast<long long>(y) * s + py) * g2.w + xx * s + px) *
                                        g2.c +
                                    c] += gv;
                        }
                    }
                }
            }
        }
    };
    return t.push(std::move(out), true, back);
}

void rope_rotate_inplace(double* vec, int d, double px, double py, double base, bool inverse) {
    const int half = d / 2;
    const int nfreq = half / 2;
    for (int axis = 0; axis < 2; ++axis) {
        const double pos = axis == 0 ? px : py;
        double* seg = vec + axis * half;
        for (int i = 0; i < nfreq; ++i) {
            const double freq =
                2.0 * M_PI * std::pow(base, -static_cast<double>(i) / static_cast<double>(nfreq));
            double theta = pos * freq;
            if (inverse) theta = -theta;
            const double cs = std::cos(theta), sn = std::sin(theta);
            const double u = seg[2 * i], v = seg[2 * i + 1];
            seg[2 * i] = cs * u - sn * v;
            seg[2 * i + 1] = sn * u + cs * v;
        }
    }
}

Value rope2d(Value a, double base) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    if (x.rank() != 3) throw std::invalid_argument("rope2d: expected (H,W,d)");
    const int h = x.shape[0], w = x.shape[1], d = x.shape[2];
    if (d % 4 != 0) throw std::invalid_argument("rope2d: feature dim must be divisible by 4");
    if (base <= 0.0) throw std::invalid_argument("rope2d: base must be positive");
    Tensor out = x;
    for (int y = 0; y < h; ++y) {
        const double py = (y + 0.5) / h;
        for (int xx = 0; xx < w; ++xx) {
            const double px = (xx + 0.5) / w;
            rope_rotate_inplace(&out.data[(static_cast<long long>(y) * w + xx) * d], d, px, py,
                                base, false);
        }
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        Tensor& ga = tt.grad_buf(ia);
        std::vector<double> buf(static_cast<size_t>(d));
        for (int y = 0; y < h; ++y) {
            const double py = (y + 0.5) / h;
            for (int xx = 0; xx < w; ++xx) {
                const double px = (xx + 0.5) / w;
                const long long off = (static_cast<long long>(y) * w + xx) * d;
                std::copy(g.data.begin() + off, g.data.begin() + off + d, buf.begin());
                // rotation is orthogonal: the adjoint is the inverse rotation
                rope_rotate_inplace(buf.data(), d, px, py, base, true);
                for (int c = 0; c < d; ++c) ga.data[off + c] += buf[c];
            }
        }
    };
    return t.push(std::move(out), true, back);
}

namespace {

Value diff_axis(Value a, int axis) {
    Tape& t = *a.tape;
    const Tensor& x = t.val(a);
    const Grid g2 = grid_of(x, "diff");
    const int oh = axis == 0 ? g2.h - 1 : g2.h;
    const int ow = axis == 1 ? g2.w - 1 : g2.w;
    if (oh < 1 || ow < 1) throw std::invalid_argument("diff: extent too small");
    std::vector<int> out_shape =
        x.rank() == 3 ? std::vector<int>{oh, ow, g2.c} : std::vector<int>{oh, ow};
    Tensor out = Tensor::zeros(out_shape);
    const int sy = axis == 0 ? 1 : 0, sx = axis == 1 ? 1 : 0;
    for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
            for (int c = 0; c < g2.c; ++c) {
                out.data[(static_cast<long long>(y) * ow + xx) * g2.c + c] =
                    x.data[(static_cast<long long>(y + sy) * g2.w + xx + sx) * g2.c + c] -
                    x.data[(static_cast<long long>(y) * g2.w + xx) * g2.c + c];
            }
        }
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false, nullptr);
    const int ia = a.id, io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        Tensor& ga = tt.grad_buf(ia);
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                for (int c = 0; c < g2.c; ++c) {
                    const double gv = g.data[(static_cast<long long>(y) * ow + xx) * g2.c + c];
                    ga.data[(static_cast<long long>(y + sy) * g2.w + xx + sx) * g2.c + c] += gv;
                    ga.data[(static_cast<long long>(y) * g2.w + xx) * g2.c + c] -= gv;
                }
            }
        }
    };
    return t.push(std::move(out), true, back);
}

}  // namespace

Value diff_x(Value a) { return diff_axis(a, 1); }
Value diff_y(Value a) { return diff_axis(a, 0); }

Value neighborhood_attention(Value q, Value k, Value v, int window, int s) {
    require_same_tape(q, k, "neighborhood_attention");
    require_same_tape(q, v, "neighborhood_attention");
    Tape& t = *q.tape;
    const Tensor& qv = t.val(q);
    const Tensor& kv = t.val(k);
    const Tensor& vv = t.val(v);
    if (qv.rank() != 3 || kv.rank() != 3 || vv.rank() != 3) {
        throw std::invalid_argument("neighborhood_attention: expected rank-3 inputs");
    }
    const int H = qv.shape[0], W = qv.shape[1], d = qv.shape[2];
    const int h = kv.shape[0], w = kv.shape[1];
    const int c = vv.shape[2];
    if (kv.shape[2] != d) throw std::invalid_argument("neighborhood_attention: key dim mismatch");
    if (vv.shape[0] != h || vv.shape[1] != w) {
        throw std::invalid_argument("neighborhood_attention: value grid mismatch");
    }
    if (window < 1 || window % 2 == 0) {
        throw std::invalid_argument("neighborhood_attention: window must be odd and positive");
    }
    if (s < 1 || H != h * s || W != w * s) {
        throw std::invalid_argument("neighborhood_attention: query grid must be s x key grid");
    }
    const int rw = window / 2;
    const int ww = window * window;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor out = Tensor::zeros({H, W, c});
    // per-query attention weights, cached for the backward pass
    std::vector<double> weights(static_cast<size_t>(H) * W * ww, 0.0);
    std::vector<double> logits(static_cast<size_t>(ww));
    for (int y = 0; y < H; ++y) {
        const int ay = y / s;
        for (int x = 0; x < W; ++x) {
            const int ax = x / s;
            const double* qp = &qv.data[(static_cast<long long>(y) * W + x) * d];
            double mx = -std::numeric_limits<double>::infinity();
            for (int oy = -rw; oy <= rw; ++oy) {
                for (int ox = -rw; ox <= rw; ++ox) {
                    const int j = (oy + rw) * window + (ox + rw);
                    const int ky = ay + oy, kx = ax + ox;
                    if (ky < 0 || ky >= h || kx < 0 || kx >= w) {
                        logits[j] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    const double* kp = &kv.data[(static_cast<long long>(ky) * w + kx) * d];
                    double dot = 0.0;
                    for (int cd = 0; cd < d; ++cd) dot += qp[cd] * kp[cd];
                    logits[j] = dot * scale;
                    mx = std::max(mx, logits[j]);
                }
            }
            double denom = 0.0;
            double* wp = &weights[(static_cast<size_t>(y) * W + x) * ww];
            for (int j = 0; j < ww; ++j) {
                if (logits[j] == -std::numeric_limits<double>::infinity()) {
                    wp[j] = 0.0;
                } else {
                    wp[j] = std::exp(logits[j] - mx);
                    denom += wp[j];
                }
            }
            double* op = &out.data[(static_cast<long long>(y) * W + x) * c];
            for (int j = 0; j < ww; ++j) {
                wp[j] /= denom;
                if (wp[j] == 0.0) continue;
                const int ky = ay + j / window - rw;
                const int kx = ax + j % window - rw;
                const double* vp = &vv.data[(static_cast<long long>(ky) * w + kx) * c];
                for (int cc = 0; cc < c; ++cc) op[cc] += wp[j] * vp[cc];
            }
        }
    }
    const bool nq = t.needs_grad(q), nk = t.needs_grad(k), nv = t.needs_grad(v);
    if (!nq && !nk && !nv) return t.push(std::move(out), false, nullptr);
    const int iq = q.id, ikk = k.id, iv = v.id, io = static_cast<int>(t.num_nodes());
    auto back = [=, weights = std::move(weights)](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& qvv = tt.val(Value{&tt, iq});
        const Tensor& kvv = tt.val(Value{&tt, ikk});
        const Tensor& vvv = tt.val(Value{&tt, iv});
        Tensor* gq = nq ? &tt.grad_buf(iq) : nullptr;
        Tensor* gk = nk ? &tt.grad_buf(ikk) : nullptr;
        Tensor* gv = nv ? &tt.grad_buf(iv) : nullptr;
        std::vector<double> dw(static_cast<size_t>(ww));
        for (int y = 0; y < H; ++y) {
            const int ay = y / s;
            for (int x = 0; x < W; ++x) {
                const int ax = x / s;
                const double* gp = &g.data[(static_cast<long long>(y) * W + x) * c];
                const double* wp = &weights[(static_cast<size_t>(y) * W + x) * ww];
                double wdot = 0.0;
                for (int j = 0; j < ww; ++j) {
                    if (wp[j] == 0.0) {
                        dw[j] = 0.0;
                        continue;
                    }
                    const int ky = ay + j / window - rw;
                    const int kx = ax + j % window - rw;
                    const double* vp = &vvv.data[(static_cast<long long>(ky) * w + kx) * c];
                    double acc = 0.0;
                    for (int cc = 0; cc < c; ++cc) acc += gp[cc] * vp[cc];
                    dw[j] = acc;
                    wdot += wp[j] * acc;
                    if (gv != nullptr) {
                        double* gvp = &gv->data[(static_cast<long long>(ky) * w + kx) * c];
                        for (int cc = 0; cc < c; ++cc) gvp[cc] += wp[j] * gp[cc];
                    }
                }
                if (gq == nullptr && gk == nullptr) continue;
                const double* qp = &qvv.data[(static_cast<long long>(y) * W + x) * d];
                double* gqp = gq != nullptr ? &gq->data[(static_cast<long long>(y) * W + x) * d]
                                            : nullptr;
                for (int j = 0; j < ww; ++j) {
                    if (wp[j] == 0.0) continue;
                    const double dl = wp[j] * (dw[j] - wdot) * scale;
                    if (dl == 0.0) continue;
                    const int ky = ay + j / window - rw;
                    const int kx = ax + j % window - rw;
                    const double* kp = &kvv.data[(static_cast<long long>(ky) * w + kx) * d];
                    if (gqp != nullptr) {
                        for (int cd = 0; cd < d; ++cd) gqp[cd] += dl * kp[cd];
                    }
                    if (gk != nullptr) {
                        double* gkp = &gk->data[(static_cast<long long>(ky) * w + kx) * d];
                        for (int cd = 0; cd < d; ++cd) gkp[cd] += dl * qp[cd];
                    }
                }
            }
        }
    };
    return t.push(std::move(out), true, back);
}

Value pixelwise_linear(Value features, Value weight) {
    require_same_tape(features, weight, "pixelwise_linear");
    Tape& t = *features.tape;
    const Tensor& f = t.val(features);
    const Tensor& wm = t.val(weight);
    if (f.rank() != 3 || wm.rank() != 2) {
        throw std::invalid_argument("pixelwise_linear: expected features (H,W,C), weight (K,C)");
    }
    const int h = f.shape[0], w = f.shape[1], c = f.shape[2];
    const int kk = wm.shape[0];
    if (wm.shape[1] != c) throw std::invalid_argument("pixelwise_linear: channel mismatch");
    Tensor out = Tensor::zeros({h, w, kk});
    const long long npix = static_cast<long long>(h) * w;
    for (long long p = 0; p < npix; ++p) {
        const double* fp = &f.data[p * c];
        double* op = &out.data[p * kk];
        for (int kq = 0; kq < kk; ++kq) {
            const double* wr = &wm.data[static_cast<long long>(kq) * c];
            double acc = 0.0;
            for (int ci = 0; ci < c; ++ci) acc += wr[ci] * fp[ci];
            op[kq] = acc;
        }
    }
    const bool nf = t.needs_grad(features), nw = t.needs_grad(weight);
    if (!nf && !nw) return t.push(std::move(out), false, nullptr);
    const int fi = features.id, wi = weight.id, io = static_cast<int>(t.num_nodes());
    auto back = [=](Tape& tt) {
        const Tensor& g = tt.grad_buf(io);
        const Tensor& fv = tt.val(Value{&tt, fi});
        const Tensor& wv = tt.val(Value{&tt, wi});
        Tensor* gf = nf ? &tt.grad_buf(fi) : nullptr;
        Tensor* gw = nw ? &tt.grad_buf(wi) : nullptr;
        for (long long p = 0; p < npix; ++p) {
            const double* gp = &g.data[p * kk];
            const double* fp = &fv.data[p * c];
            for (int kq = 0; kq < kk; ++kq) {
                const double gv = gp[kq];
                if (gv == 0.0) continue;
                const double* wr = &wv.data[static_cast<long long>(kq) * c];
                if (gf != nullptr) {
                    double* gfp = &gf->data[p * c];
                    for (int ci = 0; ci < c; ++ci) gfp[ci] += gv * wr[ci];
                }
                if (gw != nullptr) {
                    double* gwp = &gw->data[static_cast<long long>(kq) * c];
                    for (int ci = 0; ci < c; ++ci) gwp[ci] += gv * fp[ci];
                }
            }
        }
    };
    return t.push(std::move(out), true, back);
}

Value cross_entropy_mean(Value logits, const std::vector<int>& labels) {
    Tape& t = *logits.tape;
    const Tensor& lg = t.val(logits);
    if (lg.rank() != 3) throw std::invalid_argument("cross_entropy_mean: expected (H,W,K)");
    const int h = lg.shape[0], w = lg.shape[1], k = lg.shape[2];
    const long long npix = static_cast<long long>(h) * w;
    if (static_cast<long long>(labels.size()) != npix) {
        throw std::invalid_argument("cross_entropy_mean: label count mismatch");
    }
    std::vector<double> probs(lg.data.size());
    double loss = 0.0;
    for (long long p = 0; p < npix; ++p) {
        const int lbl = labels[p];
        if (lbl < 0 || lbl >= k) throw std::invalid_argument("cross_entropy_mean: label out of range");
        const double* lp = &lg.data[p * k];
        double mx = lp[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, lp[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            probs[p * k + j] = std::exp(lp[j] - mx);
            denom += probs[p * k + j];
        }
        for (int j = 0; j < k; ++j) probs[p * k + j] /= denom;
        loss += std::log(denom) + mx - lp[lbl];
    }
    loss /= static_cast<double>(npix);
    Tensor out = Tensor::from({1}, {loss});
    if (!t.needs_grad(logits)) return t.push(std::move(out), false, nullptr);
    const int il = logits.id, io = static_cast<int>(t.num_nodes());
    auto back = [=, probs = std::move(probs), labels = labels](Tape& tt) {
        const double g = tt.grad_buf(io).data[0] / static_cast<double>(npix);
        Tensor& gl = tt.grad_buf(il);
        for (long long p = 0; p < npix; ++p) {
            for (int j = 0; j < k; ++j) {
                const double onehot = j == labels[p] ? 1.0 : 0.0;
                gl.data[p * k + j] += g * (probs[p * k + j] - onehot);
            }
        }
    };
    return t.push(std::move(out), true, back);
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(
    const std::function<Value(Tape&, const std::vector<Value>&)>& f,
    const std::vector<Tensor>& params, double h) {
    auto eval = [&](const std::vector<Tensor>& p) {
        Tape tape;
        std::vector<Value> leaves;
        leaves.reserve(p.size());
        for (const Tensor& pt : p) leaves.push_back(tape.leaf(pt, false));
        Value loss = f(tape, leaves);
        if (tape.val(loss).numel() != 1) {
            throw std::invalid_argument("grad_check: loss must be scalar");
        }
        return tape.val(loss).data[0];
    };

    // analytic gradients at the probe point
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(params.size());
    for (const Tensor& pt : params) leaves.push_back(tape.leaf(pt, true));
    Value loss = f(tape, leaves);
    if (tape.val(loss).numel() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
    if (!std::isfinite(tape.val(loss).data[0])) {
        throw std::runtime_error("grad_check: non-finite loss at probe point");
    }
    tape.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Value& lv : leaves) analytic.push_back(tape.grad(lv));

    GradCheckReport report;
    report.max_rel_err.assign(params.size(), 0.0);
    std::vector<Tensor> probe = params;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t j = 0; j < params[pi].data.size(); ++j) {
            const double orig = probe[pi].data[j];
            probe[pi].data[j] = orig + h;
            const double lp = eval(probe);
            probe[pi].data[j] = orig - h;
            const double lm = eval(probe);
            probe[pi].data[j] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[pi].data[j];
            const double rel =
                std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6});
            report.max_rel_err[pi] = std::max(report.max_rel_err[pi], rel);
        }
        report.worst = std::max(report.worst, report.max_rel_err[pi]);
    }
    return report;
}

}  // namespace diveup::ad
