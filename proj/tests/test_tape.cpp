#include <cmath>
#include <functional>

#include "diveup/tape.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace diveup;
using test_support::random_tensor;

namespace {

// Random values kept away from the kinks of abs/relu/clip/max so central
// differences stay valid.
Tensor random_away_from_kinks(Rng& rng, std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) {
        double x = rng.uniform(0.08, 0.7);
        if (rng.uniform() < 0.5) x = -x;
        v = x;
    }
    return t;
}

using LossFn = std::function<ad::Value(ad::Tape&, const std::vector<ad::Value>&)>;

void check_op_grads(const char* name, const LossFn& f, const std::vector<Tensor>& params) {
    ad::GradCheckReport report = ad::grad_check(f, params);
    INFO(name << " worst rel err " << report.worst);
    CHECK(report.passed());
}

}  // namespace

TEST_CASE("sum of squares has the exact gradient") {
    ad::Tape tape;
    ad::Value x = tape.leaf(Tensor::from({2}, {1.0, 2.0}), true);
    ad::Value loss = ad::sum(ad::mul(x, x));
    CHECK(tape.val(loss).data[0] == doctest::Approx(5.0));
    tape.backward(loss);
    CHECK(tape.grad(x).data[0] == doctest::Approx(2.0));
    CHECK(tape.grad(x).data[1] == doctest::Approx(4.0));

    auto f = [](ad::Tape&, const std::vector<ad::Value>& p) {
        return ad::sum(ad::mul(p[0], p[0]));
    };
    ad::GradCheckReport report = ad::grad_check(f, {Tensor::from({2}, {1.0, 2.0})});
    CHECK(report.worst < 1e-7);
}

TEST_CASE("every primitive op passes grad_check on 50 random seeds") {
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed);
        Tensor a = random_away_from_kinks(rng, {2, 3});
        Tensor b = random_away_from_kinks(rng, {2, 3});
        Tensor pos = random_tensor(rng, {2, 3}, 0.3, 2.0);

        check_op_grads("add", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::add(p[0], p[1]));
        }, {a, b});
        check_op_grads("sub+mul", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::mul(ad::sub(p[0], p[1]), p[0]));
        }, {a, b});
        check_op_grads("divide", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::divide(p[0], p[1]));
        }, {a, pos});
        check_op_grads("vmax", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::vmax(p[0], p[1]));
        }, {a, b});
        check_op_grads("exp", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::vexp(p[0]));
        }, {a});
        check_op_grads("log", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::vlog(p[0]));
        }, {pos});
        check_op_grads("tanh", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::vtanh(p[0]));
        }, {a});
        check_op_grads("sqrt", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::vsqrt(p[0]));
        }, {pos});
        check_op_grads("abs", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::vabs(p[0]));
        }, {a});
        check_op_grads("relu", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::relu(p[0]));
        }, {a});
        check_op_grads("clip", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::clip(p[0], -0.5, 0.5));
        }, {a});
        check_op_grads("affine+mean", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::mean(ad::affine(p[0], 2.5, -0.25));
        }, {a});
        check_op_grads("sum_last", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::mul(ad::sum_last(p[0]), ad::sum_last(p[0])));
        }, {a});
        check_op_grads("max_last", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::max_last(p[0]));
        }, {a});
        check_op_grads("softmax_last", [](ad::Tape&, const std::vector<ad::Value>& p) {
            std::vector<double> w = {0.3, -1.0, 2.0};
            return ad::sum(ad::weighted_sum_last(ad::softmax_last(p[0]), w));
        }, {a});
        check_op_grads("normalize_last", [](ad::Tape&, const std::vector<ad::Value>& p) {
            std::vector<double> w = {1.0, -0.5, 0.25};
            return ad::sum(ad::weighted_sum_last(ad::normalize_last(p[0]), w));
        }, {pos});
        check_op_grads("stack+dot_last", [](ad::Tape&, const std::vector<ad::Value>& p) {
            ad::Value s = ad::stack_last({ad::sum_last(p[0]), ad::sum_last(p[1])});
            return ad::sum(ad::dot_last(s, s));
        }, {a, b});
        check_op_grads("shift_clamp2d", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::mul(p[0], ad::shift_clamp2d(p[0], 1, -1)));
        }, {a});
        check_op_grads("diff_x/diff_y", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::add(ad::sum(ad::vabs(ad::diff_x(p[0]))),
                           ad::sum(ad::vabs(ad::diff_y(p[0]))));
        }, {a});
    }
}

TEST_CASE("structured ops pass grad_check on 50 random seeds") {
    for (uint64_t seed = 101; seed <= 150; ++seed) {
        Rng rng(seed);
        Tensor img = random_tensor(rng, {4, 4, 2}, -0.8, 0.8);
        Tensor kern = random_tensor(rng, {3, 3, 2, 3}, -0.5, 0.5);
        Tensor bias = random_tensor(rng, {3}, -0.2, 0.2);
        check_op_grads("conv2d_same", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::mean(ad::mul(ad::conv2d_same(p[0], p[1], p[2]),
                                    ad::conv2d_same(p[0], p[1], p[2])));
        }, {img, kern, bias});

        Tensor g = random_tensor(rng, {4, 4, 4}, -1.0, 1.0);
        check_op_grads("rope2d", [](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::sum(ad::mul(ad::rope2d(p[0], 50.0), ad::shift_clamp2d(p[0], 0, 1)));
        }, {g});
        check_op_grads("avgpool2d", [](ad::Tape&, const std::vector<ad::Value>& p) {
            ad::Value pooled = ad::avgpool2d(p[0], 2);
            return ad::sum(ad::mul(pooled, pooled));
        }, {g});

        Tensor q = random_tensor(rng, {4, 4, 4}, -0.8, 0.8);
        Tensor k = random_tensor(rng, {2, 2, 4}, -0.8, 0.8);
        Tensor v = random_tensor(rng, {2, 2, 3}, -1.0, 1.0);
        check_op_grads("neighborhood_attention", [](ad::Tape&, const std::vector<ad::Value>& p) {
            ad::Value out = ad::neighborhood_attention(p[0], p[1], p[2], 3, 2);
            return ad::mean(ad::mul(out, out));
        }, {q, k, v});

        Tensor feat = random_tensor(rng, {3, 3, 4}, -1.0, 1.0);
        Tensor weight = random_tensor(rng, {5, 4}, -0.5, 0.5);
        check_op_grads("pixelwise_linear", [](ad::Tape&, const std::vector<ad::Value>& p) {
            ad::Value out = ad::pixelwise_linear(p[0], p[1]);
            return ad::mean(ad::mul(out, out));
        }, {feat, weight});

        std::vector<int> labels(9);
        for (int i = 0; i < 9; ++i) labels[i] = rng.uniform_int(0, 4);
        check_op_grads("cross_entropy_mean", [labels](ad::Tape&, const std::vector<ad::Value>& p) {
            return ad::cross_entropy_mean(ad::pixelwise_linear(p[0], p[1]), labels);
        }, {feat, weight});
    }
}

TEST_CASE("tape forward values match the plain tensor ops") {
    Rng rng(3);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {3, 4}, 0.5, 2.0);
    ad::Tape tape;
    ad::Value va = tape.constant(a), vb = tape.constant(b);
    CHECK(test_support::max_abs_diff(tape.val(ad::add(va, vb)), add(a, b)) == 0.0);
    CHECK(test_support::max_abs_diff(tape.val(ad::divide(va, vb)), divide(a, b)) == 0.0);
    CHECK(test_support::max_abs_diff(tape.val(ad::vexp(va)), vexp(a)) == 0.0);
}

TEST_CASE("backward requires a scalar loss and finite values") {
    ad::Tape tape;
    ad::Value x = tape.leaf(Tensor::from({2}, {1.0, 2.0}), true);
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("grad_check reports non-finite losses at the probe point") {
    auto f = [](ad::Tape& t, const std::vector<ad::Value>& p) {
        (void)p;
        return t.constant(Tensor::from({1}, {std::nan("")}));
    };
    CHECK_THROWS_AS(ad::grad_check(f, {Tensor::from({1}, {1.0})}), std::runtime_error);
}

TEST_CASE("gradients accumulate when a node feeds multiple consumers") {
    ad::Tape tape;
    ad::Value x = tape.leaf(Tensor::from({1}, {3.0}), true);
    ad::Value y = ad::add(ad::mul(x, x), ad::affine(x, 2.0, 0.0));  // x^2 + 2x
    tape.backward(ad::sum(y));
    CHECK(tape.grad(x).data[0] == doctest::Approx(8.0));  // 2*3 + 2
}
