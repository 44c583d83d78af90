#include <cmath>

#include "diveup/reference.hpp"
#include "diveup/upsampler.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace diveup;
using test_support::max_abs_diff;
using test_support::random_tensor;

namespace {

ups::UpsamplerConfig tiny_cfg(int scale = 2, int window = 3) {
    ups::UpsamplerConfig cfg;
    cfg.dim = 8;
    cfg.window = window;
    cfg.enc1 = 4;
    cfg.enc2 = 4;
    cfg.scale = scale;
    return cfg;
}

}  // namespace

TEST_CASE("encode_guidance") {
    ups::UpsamplerConfig cfg = tiny_cfg();
    SUBCASE("zero image with zero biases gives zero guidance") {
        ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 1);
        Tensor img = Tensor::zeros({6, 6, 3});
        Tensor g = ups::encode_guidance(cfg, p, img);
        for (double v : g.data) CHECK(v == 0.0);
    }
    SUBCASE("output shape is (H,W,d)") {
        ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 2);
        Rng rng(1);
        Tensor img = random_tensor(rng, {5, 7, 3}, 0.0, 1.0);
        CHECK(ups::encode_guidance(cfg, p, img).shape == std::vector<int>{5, 7, 8});
    }
    SUBCASE("fixed seed and image give bit-identical guidance") {
        ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 3);
        Rng rng(2);
        Tensor img = random_tensor(rng, {6, 6, 3}, 0.0, 1.0);
        CHECK(max_abs_diff(ups::encode_guidance(cfg, p, img),
                           ups::encode_guidance(cfg, p, img)) == 0.0);
    }
}

TEST_CASE("rope") {
    SUBCASE("rotation preserves the norm") {
        Rng rng(3);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> v(16);
            for (double& x : v) x = rng.normal();
            std::vector<double> r =
                ups::rope_apply(v, rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), 100.0);
            double n0 = 0.0, n1 = 0.0;
            for (size_t i = 0; i < v.size(); ++i) {
                n0 += v[i] * v[i];
                n1 += r[i] * r[i];
            }
            CHECK(std::fabs(std::sqrt(n0) - std::sqrt(n1)) < 1e-12);
        }
    }
    SUBCASE("position (0,0) is the identity") {
        Rng rng(4);
        std::vector<double> v(8);
        for (double& x : v) x = rng.normal();
        std::vector<double> r = ups::rope_apply(v, 0.0, 0.0, 100.0);
        for (size_t i = 0; i < v.size(); ++i) CHECK(r[i] == doctest::Approx(v[i]));
    }
    SUBCASE("query/key dot product depends only on the relative position") {
        Rng rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> q(12), k(12);
            for (double& x : q) x = rng.normal();
            for (double& x : k) x = rng.normal();
            const double qx = rng.uniform(0.0, 0.5), qy = rng.uniform(0.0, 0.5);
            const double kx = rng.uniform(0.0, 0.5), ky = rng.uniform(0.0, 0.5);
            const double sx = rng.uniform(0.0, 0.5), sy = rng.uniform(0.0, 0.5);
            auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
                double acc = 0.0;
                for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
                return acc;
            };
            const double base = 40.0;
            const double d0 = dot(ups::rope_apply(q, qx, qy, base), ups::rope_apply(k, kx, ky, base));
            const double d1 = dot(ups::rope_apply(q, qx + sx, qy + sy, base),
                                  ups::rope_apply(k, kx + sx, ky + sy, base));
            CHECK(std::fabs(d0 - d1) < 1e-10);
        }
    }
    SUBCASE("dim not divisible by 4 is an error") {
        std::vector<double> v(6, 1.0);
        CHECK_THROWS_AS(ups::rope_apply(v, 0.5, 0.5, 100.0), std::invalid_argument);
    }
}

TEST_CASE("pool_keys") {
    Rng rng(6);
    SUBCASE("s = 1 is the identity") {
        Tensor g = random_tensor(rng, {4, 4, 4});
        ad::Tape tape;
        CHECK(max_abs_diff(tape.val(ups::pool_keys(tape.constant(g), 1)), g) == 0.0);
    }
    SUBCASE("constant fields stay constant") {
        Tensor g = Tensor::full({4, 4, 4}, 0.3);
        ad::Tape tape;
        Tensor pooled = tape.val(ups::pool_keys(tape.constant(g), 2));
        for (double v : pooled.data) CHECK(v == doctest::Approx(0.3));
    }
    SUBCASE("quadrant means match the oracle") {
        Tensor g = random_tensor(rng, {4, 4, 2});
        ad::Tape tape;
        Tensor pooled = tape.val(ups::pool_keys(tape.constant(g), 2));
        CHECK(max_abs_diff(pooled, ref::avgpool_naive(g, 2)) < 1e-15);
    }
    SUBCASE("non-divisible extents are an error") {
        Tensor g = Tensor::zeros({5, 4, 4});
        ad::Tape tape;
        ad::Value v = tape.constant(g);
        CHECK_THROWS_AS(ups::pool_keys(v, 2), std::invalid_argument);
    }
}

TEST_CASE("neighborhood attention") {
    Rng rng(7);
    SUBCASE("single-key window copies the anchored cell exactly") {
        Tensor q = random_tensor(rng, {6, 6, 4});
        Tensor k = random_tensor(rng, {3, 3, 4});
        Tensor v = random_tensor(rng, {3, 3, 5});
        ad::Tape tape;
        Tensor out = tape.val(ad::neighborhood_attention(
            tape.constant(q), tape.constant(k), tape.constant(v), 1, 2));
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 6; ++x) {
                for (int c = 0; c < 5; ++c) {
                    CHECK(out.at(y, x, c) == v.at(y / 2, x / 2, c));
                }
            }
        }
    }
    SUBCASE("outputs stay within the per-channel min/max of the attended window") {
        for (int trial = 0; trial < 1000; ++trial) {
            const int s = rng.uniform_int(1, 3);
            const int kh = rng.uniform_int(2, 4), kw = rng.uniform_int(2, 4);
            const int window = 1 + 2 * rng.uniform_int(0, 2);
            const int d = 4, c = 3;
            Tensor q = random_tensor(rng, {kh * s, kw * s, d}, -2.0, 2.0);
            Tensor k = random_tensor(rng, {kh, kw, d}, -2.0, 2.0);
            Tensor v = random_tensor(rng, {kh, kw, c}, -3.0, 3.0);
            ad::Tape tape;
            Tensor out = tape.val(ad::neighborhood_attention(
                tape.constant(q), tape.constant(k), tape.constant(v), window, s));
            const int r = window / 2;
            for (int y = 0; y < kh * s; ++y) {
                for (int x = 0; x < kw * s; ++x) {
                    for (int ch = 0; ch < c; ++ch) {
                        double lo = 1e300, hi = -1e300;
                        for (int oy = -r; oy <= r; ++oy) {
                            for (int ox = -r; ox <= r; ++ox) {
                                const int ky = y / s + oy, kx = x / s + ox;
                                if (ky < 0 || ky >= kh || kx < 0 || kx >= kw) continue;
                                lo = std::min(lo, v.at(ky, kx, ch));
                                hi = std::max(hi, v.at(ky, kx, ch));
                            }
                        }
                        REQUIRE(out.at(y, x, ch) >= lo - 1e-12);
                        REQUIRE(out.at(y, x, ch) <= hi + 1e-12);
                    }
                }
            }
        }
    }
    SUBCASE("matches the per-query loop oracle within 1e-12") {
        for (int trial = 0; trial < 100; ++trial) {
            const int s = rng.uniform_int(1, 3);
            const int kh = rng.uniform_int(2, 4), kw = rng.uniform_int(2, 4);
            const int window = 1 + 2 * rng.uniform_int(0, 2);
            Tensor q = random_tensor(rng, {kh * s, kw * s, 4}, -1.5, 1.5);
            Tensor k = random_tensor(rng, {kh, kw, 4}, -1.5, 1.5);
            Tensor v = random_tensor(rng, {kh, kw, 3}, -2.0, 2.0);
            ad::Tape tape;
            Tensor out = tape.val(ad::neighborhood_attention(
                tape.constant(q), tape.constant(k), tape.constant(v), window, s));
            CHECK(max_abs_diff(out, ref::attention_naive(q, k, v, window, s)) < 1e-12);
        }
    }
}

TEST_CASE("upsample") {
    Rng rng(8);
    SUBCASE("s=1, w=1 reproduces the low-res features exactly") {
        ups::UpsamplerConfig cfg = tiny_cfg(1, 1);
        ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 5);
        Tensor img = random_tensor(rng, {5, 5, 3}, 0.0, 1.0);
        Tensor f_lr = random_tensor(rng, {5, 5, 6});
        CHECK(max_abs_diff(ups::upsample(cfg, p, img, f_lr), f_lr) == 0.0);
    }
    SUBCASE("shape contract (h*s, w*s, C)") {
        ups::UpsamplerConfig cfg = tiny_cfg(2);
        ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 6);
        Tensor img = random_tensor(rng, {8, 6, 3}, 0.0, 1.0);
        Tensor f_lr = random_tensor(rng, {4, 3, 5});
        CHECK(ups::upsample(cfg, p, img, f_lr).shape == std::vector<int>{8, 6, 5});
    }
    SUBCASE("determinism: fixed params and inputs give bit-identical outputs") {
        ups::UpsamplerConfig cfg = tiny_cfg(2);
        ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 7);
        Tensor img = random_tensor(rng, {6, 6, 3}, 0.0, 1.0);
        Tensor f_lr = random_tensor(rng, {3, 3, 4});
        CHECK(max_abs_diff(ups::upsample(cfg, p, img, f_lr),
                           ups::upsample(cfg, p, img, f_lr)) == 0.0);
    }
    SUBCASE("attention weights sum to 1 after masking (via constant values)") {
        // with all-ones values, a convex combination must return exactly 1
        ups::UpsamplerConfig cfg = tiny_cfg(2, 3);
        ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 8);
        for (int trial = 0; trial < 50; ++trial) {
            Tensor img = random_tensor(rng, {8, 8, 3}, 0.0, 1.0);
            Tensor ones = Tensor::full({4, 4, 2}, 1.0);
            Tensor out = ups::upsample(cfg, p, img, ones);
            for (double v : out.data) CHECK(std::fabs(v - 1.0) < 1e-12);
        }
    }
    SUBCASE("gradients w.r.t. every parameter and F_lr pass grad_check (8x8 -> 16x16)") {
        ups::UpsamplerConfig cfg = tiny_cfg(2);
        ups::UpsamplerParams init = ups::UpsamplerParams::init(cfg, 9);
        Tensor img = random_tensor(rng, {16, 16, 3}, 0.0, 1.0);
        Tensor f_lr = random_tensor(rng, {8, 8, 4});
        auto f = [&cfg, &img](ad::Tape& tape, const std::vector<ad::Value>& p) {
            ups::ParamValues pv{p[0], p[1], p[2], p[3], p[4], p[5]};
            ad::Value out = ups::upsample_t(cfg, pv, tape.constant(img), p[6]);
            return ad::mean(ad::mul(out, out));
        };
        std::vector<Tensor> params = {init.k1, init.b1, init.k2, init.b2, init.k3, init.b3, f_lr};
        ad::GradCheckReport report = ad::grad_check(f, params);
        INFO("worst rel err " << report.worst);
        CHECK(report.passed());
    }
}

TEST_CASE("parameter count is reported") {
    ups::UpsamplerConfig cfg = tiny_cfg();
    ups::UpsamplerParams p = ups::UpsamplerParams::init(cfg, 10);
    // 5*5*3*4+4 + 3*3*4*4+4 + 3*3*4*8+8 = 304 + 148 + 296
    CHECK(p.param_count() == 748);
    CHECK(p.finite());
}
