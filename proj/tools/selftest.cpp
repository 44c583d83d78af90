#include "selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "diveup/io.hpp"
#include "diveup/reference.hpp"
#include "diveup/training.hpp"

namespace diveup::cli {

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

bool suite_softmax_oracle() {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor a = random_tensor(rng, {9}, -3.0, 3.0);
        if (max_abs_diff(softmax(a, 0), ref::softmax_last_naive(a)) >= 1e-12) return false;
    }
    return true;
}

bool suite_relational_oracle() {
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const int h = rng.uniform_int(3, 6), w = rng.uniform_int(3, 6);
        const int d = rng.uniform_int(2, 5);
        const int window = 1 + 2 * rng.uniform_int(1, 2);
        rel::RelationalConfig cfg;
        cfg.window = window;
        cfg.tau = rng.uniform(0.5, 2.0);
        cfg.dim = d;
        Tensor z = random_tensor(rng, {h, w, d}, -1.5, 1.5);
        Tensor aff = rel::local_affinity(z, cfg);
        if (max_abs_diff(aff, ref::affinity_naive(z, window, cfg.tau)) >= 1e-12) return false;
        if (max_abs_diff(rel::entropy(aff), ref::entropy_naive(aff)) >= 1e-12) return false;
        if (max_abs_diff(rel::spikiness(z, cfg.eps), ref::spikiness_naive(z, cfg.eps)) >= 1e-12) {
            return false;
        }
        if (max_abs_diff(rel::com_field(aff, cfg), ref::com_naive(aff, window)) >= 1e-12) {
            return false;
        }
    }
    return true;
}

bool suite_fusion_oracle() {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor fields = random_tensor(rng, {4, 5, 3, 2}, -1.0, 1.0);
        Tensor scores = random_tensor(rng, {4, 5, 3}, -5.0, 5.0);
        Tensor alpha = fusion::select(scores);
        if (max_abs_diff(alpha, ref::select_naive(scores)) != 0.0) return false;
        if (max_abs_diff(fusion::consensus(fields, alpha),
                         ref::consensus_naive(fields, alpha)) != 0.0) {
            return false;
        }
        Tensor m = random_tensor(rng, {4, 5}, -2.0, 2.0);
        if (max_abs_diff(fusion::zscore(m, 1e-8), ref::zscore_naive(m, 1e-8)) >= 1e-12) {
            return false;
        }
    }
    return true;
}

bool suite_attention_oracle() {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const int s = rng.uniform_int(1, 3);
        const int kh = rng.uniform_int(2, 4), kw = rng.uniform_int(2, 4);
        const int window = 1 + 2 * rng.uniform_int(0, 2);
        Tensor q = random_tensor(rng, {kh * s, kw * s, 4}, -1.5, 1.5);
        Tensor k = random_tensor(rng, {kh, kw, 4}, -1.5, 1.5);
        Tensor v = random_tensor(rng, {kh, kw, 3}, -2.0, 2.0);
        ad::Tape tape;
        Tensor out = tape.val(ad::neighborhood_attention(tape.constant(q), tape.constant(k),
                                                         tape.constant(v), window, s));
        if (max_abs_diff(out, ref::attention_naive(q, k, v, window, s)) >= 1e-12) return false;
    }
    return true;
}

bool suite_loss_oracle() {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor a = random_tensor(rng, {4, 5, 3}, -2.0, 2.0);
        Tensor b = random_tensor(rng, {4, 5, 3}, -2.0, 2.0);
        if (std::fabs(train::loss_rec(a, b) - ref::loss_rec_naive(a, b)) >= 1e-12) return false;
        Tensor f1 = random_tensor(rng, {4, 5, 2}, -1.0, 1.0);
        Tensor f2 = random_tensor(rng, {4, 5, 2}, -1.0, 1.0);
        if (std::fabs(train::loss_guide(f1, f2) - ref::loss_guide_naive(f1, f2)) >= 1e-12) {
            return false;
        }
    }
    return true;
}

bool suite_gradients() {
    ups::UpsamplerConfig cfg;
    cfg.dim = 8;
    cfg.enc1 = 4;
    cfg.enc2 = 4;
    cfg.scale = 2;
    cfg.window = 3;
    rel::RelationalConfig rel_cfg;
    rel_cfg.window = 3;
    rel_cfg.dim = 4;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed);
        ups::UpsamplerParams init = ups::UpsamplerParams::init(cfg, seed);
        train::TrainPair pair;
        pair.image = random_tensor(rng, {8, 8, 3}, 0.0, 1.0);
        pair.f_lr = random_tensor(rng, {4, 4, 4}, -1.0, 1.0);
        pair.f_hr = random_tensor(rng, {8, 8, 4}, -1.0, 1.0);
        pair.b_ens = random_tensor(rng, {8, 8, 2}, -1.0, 1.0);
        auto f = [&](ad::Tape& tape, const std::vector<ad::Value>& p) {
            ups::ParamValues pv{p[0], p[1], p[2], p[3], p[4], p[5]};
            return train::loss_total_t(cfg, pv, pair, 0.5, tape, rel_cfg).total;
        };
        std::vector<Tensor> params = {init.k1, init.b1, init.k2, init.b2, init.k3, init.b3};
        if (!ad::grad_check(f, params).passed()) return false;
    }
    return true;
}

bool suite_determinism() {
    Rng a(9, 3), b(9, 3);
    for (int i = 0; i < 256; ++i) {
        if (a.next_u64() != b.next_u64()) return false;
    }
    synth::SceneConfig scfg;
    scfg.height = 16;
    scfg.width = 16;
    Rng r1(7), r2(7);
    synth::SceneSample s1 = synth::gen_scene(r1, scfg);
    synth::SceneSample s2 = synth::gen_scene(r2, scfg);
    return max_abs_diff(s1.image, s2.image) == 0.0 && s1.labels == s2.labels;
}

bool suite_fmap_roundtrip() {
    Rng rng(11);
    Tensor t = random_tensor(rng, {3, 4, 2}, -50.0, 50.0);
    const std::string path =
        (std::filesystem::temp_directory_path() / "diveup_selftest.fmap").string();
    io::write_fmap(path, t);
    Tensor back = io::read_fmap(path);
    std::filesystem::remove(path);
    return back.shape == t.shape && max_abs_diff(back, t) == 0.0;
}

}  // namespace

int run_selftest() {
    struct Suite {
        const char* name;
        std::function<bool()> run;
    };
    const std::vector<Suite> suites = {
        {"softmax-oracle", suite_softmax_oracle},
        {"relational-oracle", suite_relational_oracle},
        {"fusion-oracle", suite_fusion_oracle},
        {"attention-oracle", suite_attention_oracle},
        {"loss-oracle", suite_loss_oracle},
        {"gradients", suite_gradients},
        {"determinism", suite_determinism},
        {"fmap-roundtrip", suite_fmap_roundtrip},
    };
    int failures = 0;
    for (const Suite& suite : suites) {
        const auto start = std::chrono::steady_clock::now();
        bool ok = false;
        std::string error;
        try {
            ok = suite.run();
        } catch (const std::exception& e) {
            error = std::string(" error: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] %-18s (%.2fs)%s\n", ok ? "PASS" : "FAIL", suite.name, secs,
                    error.c_str());
        if (!ok) failures++;
    }
    return failures == 0 ? 0 : 1;
}

}  // namespace diveup::cli
