#include <cmath>

#include "diveup/fusion.hpp"
#include "diveup/reference.hpp"
#include "diveup/synthworld.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace diveup;
using test_support::max_abs_diff;
using test_support::random_normal_tensor;
using test_support::random_tensor;

TEST_CASE("zscore") {
    SUBCASE("population statistics on [1,2,3]") {
        Tensor m = Tensor::from({3}, {1.0, 2.0, 3.0});
        Tensor z = fusion::zscore(m, 1e-8);
        CHECK(z.data[0] == doctest::Approx(-1.22474487).epsilon(1e-8));
        CHECK(z.data[1] == doctest::Approx(0.0));
        CHECK(z.data[2] == doctest::Approx(1.22474487).epsilon(1e-8));
    }
    SUBCASE("constant maps give all zeros") {
        Tensor m = Tensor::full({4, 4}, 2.5);
        Tensor z = fusion::zscore(m, 1e-8);
        for (double v : z.data) CHECK(v == 0.0);
    }
    SUBCASE("affine invariance: zscore(aH+b) == zscore(H) for a > 0") {
        Rng rng(1);
        for (int trial = 0; trial < 50; ++trial) {
            Tensor m = random_tensor(rng, {5, 5}, -2.0, 2.0);
            const double a = rng.uniform(0.1, 5.0);
            const double b = rng.uniform(-10.0, 10.0);
            Tensor m2 = m;
            for (double& v : m2.data) v = a * v + b;
            CHECK(max_abs_diff(fusion::zscore(m, 1e-8), fusion::zscore(m2, 1e-8)) < 1e-9);
        }
    }
    SUBCASE("matches the naive oracle") {
        Rng rng(2);
        for (int trial = 0; trial < 100; ++trial) {
            Tensor m = random_tensor(rng, {4, 6}, -3.0, 3.0);
            CHECK(max_abs_diff(fusion::zscore(m, 1e-8), ref::zscore_naive(m, 1e-8)) < 1e-12);
        }
    }
}

TEST_CASE("confidence") {
    fusion::FusionConfig cfg;  // beta=20, gamma=0.6
    SUBCASE("penalty is exactly zero at the threshold") {
        Tensor h = Tensor::from({1}, {0.5});
        Tensor k = Tensor::from({1}, {0.6});
        CHECK(fusion::confidence(h, k, cfg).data[0] == doctest::Approx(-0.5));
    }
    SUBCASE("hinge arm above the threshold") {
        Tensor h = Tensor::from({1}, {0.5});
        Tensor k = Tensor::from({1}, {0.8});
        // -0.5 - 20*(0.2) = -4.5
        CHECK(fusion::confidence(h, k, cfg).data[0] == doctest::Approx(-4.5));
    }
    SUBCASE("beta = 0 ignores spikiness") {
        fusion::FusionConfig cfg0;
        cfg0.beta = 0.0;
        Rng rng(3);
        Tensor h = random_tensor(rng, {3, 3});
        Tensor k = random_tensor(rng, {3, 3}, 0.0, 1.0);
        Tensor g = fusion::confidence(h, k, cfg0);
        for (size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] == doctest::Approx(-h.data[i]));
    }
    SUBCASE("defaults follow the standard hyperparameters") {
        CHECK(cfg.beta == 20.0);
        CHECK(cfg.gamma == 0.6);
    }
}

TEST_CASE("select") {
    SUBCASE("picks the larger score") {
        Tensor g = Tensor::from({1, 1, 2}, {-4.5, -1.0});
        Tensor a = fusion::select(g);
        CHECK(a.at(0, 0, 0) == 0.0);
        CHECK(a.at(0, 0, 1) == 1.0);
    }
    SUBCASE("ties break to the lowest index") {
        Tensor g = Tensor::from({1, 1, 2}, {-1.0, -1.0});
        Tensor a = fusion::select(g);
        CHECK(a.at(0, 0, 0) == 1.0);
        CHECK(a.at(0, 0, 1) == 0.0);
    }
    SUBCASE("single source is always selected") {
        Tensor g = Tensor::from({2, 2, 1}, {0.3, -5.0, 2.0, 0.0});
        Tensor a = fusion::select(g);
        for (double v : a.data) CHECK(v == 1.0);
    }
    SUBCASE("alpha is exactly one-hot on random scores") {
        Rng rng(4);
        for (int trial = 0; trial < 200; ++trial) {
            Tensor g = random_tensor(rng, {3, 4, 4}, -5.0, 5.0);
            Tensor a = fusion::select(g);
            for (int p = 0; p < 12; ++p) {
                double sum = 0.0;
                for (int i = 0; i < 4; ++i) {
                    const double v = a.data[p * 4 + i];
                    CHECK((v == 0.0 || v == 1.0));
                    sum += v;
                }
                CHECK(sum == 1.0);
            }
        }
    }
}

TEST_CASE("consensus gather") {
    SUBCASE("identical sources give the same field") {
        Rng rng(5);
        Tensor one = random_tensor(rng, {3, 3, 2});
        Tensor fields = Tensor::zeros({3, 3, 2, 2});
        for (int p = 0; p < 9; ++p) {
            for (int i = 0; i < 2; ++i) {
                fields.data[(p * 2 + i) * 2 + 0] = one.data[p * 2 + 0];
                fields.data[(p * 2 + i) * 2 + 1] = one.data[p * 2 + 1];
            }
        }
        Tensor g = random_tensor(rng, {3, 3, 2});
        Tensor alpha = fusion::select(g);
        CHECK(max_abs_diff(fusion::consensus(fields, alpha), one) == 0.0);
    }
    SUBCASE("selecting source 0 everywhere copies it bitwise") {
        Rng rng(6);
        Tensor fields = random_tensor(rng, {4, 4, 3, 2});
        Tensor alpha = Tensor::zeros({4, 4, 3});
        for (int p = 0; p < 16; ++p) alpha.data[p * 3] = 1.0;
        Tensor out = fusion::consensus(fields, alpha);
        for (int p = 0; p < 16; ++p) {
            CHECK(out.data[p * 2 + 0] == fields.data[(p * 3 + 0) * 2 + 0]);
            CHECK(out.data[p * 2 + 1] == fields.data[(p * 3 + 0) * 2 + 1]);
        }
    }
    SUBCASE("random fields and alpha match the gather oracle") {
        Rng rng(7);
        for (int trial = 0; trial < 100; ++trial) {
            Tensor fields = random_tensor(rng, {3, 5, 3, 2});
            Tensor scores = random_tensor(rng, {3, 5, 3});
            Tensor alpha = fusion::select(scores);
            CHECK(max_abs_diff(fusion::consensus(fields, alpha),
                               ref::consensus_naive(fields, alpha)) == 0.0);
        }
    }
}

TEST_CASE("mean fusion baseline") {
    SUBCASE("identical sources average to themselves") {
        Rng rng(8);
        Tensor f = random_tensor(rng, {3, 3, 2});
        CHECK(max_abs_diff(fusion::fuse_baseline_mean({f, f, f}), f) < 1e-15);
    }
    SUBCASE("opposite unit fields cancel") {
        Tensor a = Tensor::full({2, 2, 2}, 0.0);
        Tensor b = Tensor::full({2, 2, 2}, 0.0);
        a.at(0, 0, 0) = 1.0;
        b.at(0, 0, 0) = -1.0;
        Tensor m = fusion::fuse_baseline_mean({a, b});
        CHECK(m.at(0, 0, 0) == 0.0);
    }
    SUBCASE("matches the arithmetic-mean oracle") {
        Rng rng(9);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<Tensor> fields;
            Tensor stacked = Tensor::zeros({4, 4, 3, 2});
            for (int i = 0; i < 3; ++i) {
                fields.push_back(random_tensor(rng, {4, 4, 2}, -1.5, 1.5));
                for (int p = 0; p < 16; ++p) {
                    stacked.data[(p * 3 + i) * 2 + 0] = fields[i].data[p * 2 + 0];
                    stacked.data[(p * 3 + i) * 2 + 1] = fields[i].data[p * 2 + 1];
                }
            }
            CHECK(max_abs_diff(fusion::fuse_baseline_mean(fields),
                               ref::mean_fuse_naive(stacked)) < 1e-12);
        }
    }
}

namespace {

// Two-source panel with an artifact-corrupted source A; returns features for
// build_consensus plus the artifact ground truth at grid resolution.
struct ArtifactPanel {
    std::vector<Tensor> features;
    std::vector<rel::Projection> projections;
    std::vector<char> mask;
    int grid = 0;
};

ArtifactPanel make_artifact_panel(uint64_t seed, double beta_probe_rate = 0.08) {
    synth::SceneConfig scfg;
    scfg.height = 32;
    scfg.width = 32;
    Rng rng(seed);
    synth::SceneSample scene = synth::gen_scene(rng, scfg);

    synth::SyntheticVFM corrupted;
    corrupted.seed = seed * 3 + 1;
    corrupted.stride = 2;
    corrupted.channels = 16;
    corrupted.corruption.kind = synth::CorruptionSpec::Kind::artifact;
    corrupted.corruption.rate = beta_probe_rate;
    corrupted.corruption.magnitude = 10.0;

    synth::SyntheticVFM clean;
    clean.seed = seed * 3 + 2;
    clean.stride = 2;
    clean.channels = 16;

    ArtifactPanel panel;
    panel.grid = 16;
    panel.features = {synth::extract(corrupted, scene.image),
                      synth::extract(clean, scene.image)};
    panel.projections = {rel::Projection::channel_select(seed + 10, 16, 16),
                         rel::Projection::channel_select(seed + 11, 16, 16)};
    panel.mask = synth::artifact_mask(corrupted, 16, 16);
    return panel;
}

}  // namespace

TEST_CASE("build_consensus") {
    rel::RelationalConfig rel_cfg;
    rel_cfg.window = 5;
    rel_cfg.dim = 16;
    fusion::FusionConfig fcfg;

    SUBCASE("a single clean source is its own consensus") {
        ArtifactPanel panel = make_artifact_panel(21);
        std::vector<Tensor> one = {panel.features[1]};
        std::vector<rel::Projection> proj = {panel.projections[1]};
        fusion::ConsensusField cf = fusion::build_consensus(one, proj, rel_cfg, fcfg, 16, 16);
        Tensor z = rel::project(panel.features[1], panel.projections[1]);
        rel::RelationalField rf = rel::relational_field(z, nullptr, rel_cfg);
        CHECK(max_abs_diff(cf.b_ens, rf.com) == 0.0);
        for (double v : cf.alpha.data) CHECK(v == 1.0);
    }

    SUBCASE("the hinge penalty rejects artifact pixels; beta = 0 does not") {
        int clean_selected_with_beta = 0, clean_selected_without = 0, artifact_pixels = 0;
        for (uint64_t seed = 31; seed < 36; ++seed) {
            ArtifactPanel panel = make_artifact_panel(seed);
            fusion::ConsensusField with_beta = fusion::build_consensus(
                panel.features, panel.projections, rel_cfg, fcfg, 16, 16);
            fusion::FusionConfig no_beta = fcfg;
            no_beta.beta = 0.0;
            fusion::ConsensusField without = fusion::build_consensus(
                panel.features, panel.projections, rel_cfg, no_beta, 16, 16);
            for (int p = 0; p < 16 * 16; ++p) {
                if (!panel.mask[p]) continue;
                artifact_pixels++;
                if (with_beta.alpha.data[p * 2 + 1] == 1.0) clean_selected_with_beta++;
                if (without.alpha.data[p * 2 + 1] == 1.0) clean_selected_without++;
            }
        }
        REQUIRE(artifact_pixels > 0);
        CHECK(clean_selected_with_beta >= (artifact_pixels * 9) / 10);
        CHECK(clean_selected_without < clean_selected_with_beta);
    }

    SUBCASE("permuting source order leaves b_ens unchanged without ties") {
        ArtifactPanel panel = make_artifact_panel(44);
        fusion::ConsensusField fwd = fusion::build_consensus(panel.features, panel.projections,
                                                             rel_cfg, fcfg, 16, 16);
        std::vector<Tensor> rev_f = {panel.features[1], panel.features[0]};
        std::vector<rel::Projection> rev_p = {panel.projections[1], panel.projections[0]};
        fusion::ConsensusField rev = fusion::build_consensus(rev_f, rev_p, rel_cfg, fcfg, 16, 16);
        CHECK(max_abs_diff(fwd.b_ens, rev.b_ens) == 0.0);
        // alpha channels swap
        for (int p = 0; p < 16 * 16; ++p) {
            CHECK(fwd.alpha.data[p * 2 + 0] == rev.alpha.data[p * 2 + 1]);
            CHECK(fwd.alpha.data[p * 2 + 1] == rev.alpha.data[p * 2 + 0]);
        }
    }

    SUBCASE("resampling path: differing native resolutions reconcile to the target") {
        ArtifactPanel panel = make_artifact_panel(50);
        // second source at half resolution
        std::vector<Tensor> feats = {panel.features[0],
                                     resize_bilinear(panel.features[1], 8, 8)};
        fusion::ConsensusField cf =
            fusion::build_consensus(feats, panel.projections, rel_cfg, fcfg, 16, 16);
        CHECK(cf.b_ens.shape == std::vector<int>{16, 16, 2});
        CHECK(cf.alpha.shape == std::vector<int>{16, 16, 2});
    }
}

TEST_CASE("selection invariance under per-source affine entropy changes") {
    // zscore removes affine changes of the raw entropy map, so confidence and
    // selection are unchanged as long as there are no exact ties
    Rng rng(10);
    fusion::FusionConfig fcfg;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor h0 = random_tensor(rng, {5, 5}, 0.0, 2.0);
        Tensor h1 = random_tensor(rng, {5, 5}, 0.0, 2.0);
        Tensor k0 = random_tensor(rng, {5, 5}, 0.0, 0.5);
        Tensor k1 = random_tensor(rng, {5, 5}, 0.0, 0.5);
        auto scores = [&](const Tensor& ha, const Tensor& hb) {
            Tensor g0 = fusion::confidence(fusion::zscore(ha, 1e-8), k0, fcfg);
            Tensor g1 = fusion::confidence(fusion::zscore(hb, 1e-8), k1, fcfg);
            Tensor s = Tensor::zeros({5, 5, 2});
            for (int p = 0; p < 25; ++p) {
                s.data[p * 2] = g0.data[p];
                s.data[p * 2 + 1] = g1.data[p];
            }
            return fusion::select(s);
        };
        Tensor base = scores(h0, h1);
        Tensor h0_affine = h0;
        const double a = rng.uniform(0.2, 4.0), b = rng.uniform(-3.0, 3.0);
        for (double& v : h0_affine.data) v = a * v + b;
        CHECK(max_abs_diff(base, scores(h0_affine, h1)) == 0.0);
    }
}

TEST_CASE("hinge monotonicity in spikiness") {
    fusion::FusionConfig fcfg;
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const double h = rng.uniform(-1.0, 1.0);
        double prev_g = 1e300;
        for (double k = 0.0; k <= 1.0; k += 0.05) {
            Tensor g = fusion::confidence(Tensor::from({1}, {h}), Tensor::from({1}, {k}), fcfg);
            CHECK(g.data[0] <= prev_g + 1e-12);
            if (k <= fcfg.gamma) {
                CHECK(g.data[0] == doctest::Approx(-h));  // independent of K below gamma
            }
            prev_g = g.data[0];
        }
    }
}

TEST_CASE("consensus bound: b_ens components always within [-1,1]") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        ArtifactPanel panel = make_artifact_panel(100 + trial);
        rel::RelationalConfig rel_cfg;
        rel_cfg.window = 3;
        rel_cfg.dim = 16;
        fusion::ConsensusField cf = fusion::build_consensus(
            panel.features, panel.projections, rel_cfg, fusion::FusionConfig{}, 16, 16);
        for (double v : cf.b_ens.data) {
            REQUIRE(v >= -1.0);
            REQUIRE(v <= 1.0);
        }
    }
}
