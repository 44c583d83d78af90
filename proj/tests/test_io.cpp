#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "diveup/io.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace diveup;
using test_support::max_abs_diff;
using test_support::random_tensor;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("diveup_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("FMAP round-trip") {
    TempDir dir;
    SUBCASE("write then read is bit-identical") {
        Rng rng(1);
        Tensor t = random_tensor(rng, {5, 7, 3}, -100.0, 100.0);
        io::write_fmap(dir.file("a.fmap"), t);
        Tensor back = io::read_fmap(dir.file("a.fmap"));
        CHECK(back.shape == t.shape);
        CHECK(max_abs_diff(back, t) == 0.0);
    }
    SUBCASE("rank-2 maps round-trip with C = 1") {
        Rng rng(2);
        Tensor t = random_tensor(rng, {4, 4});
        io::write_fmap(dir.file("b.fmap"), t);
        Tensor back = io::read_fmap(dir.file("b.fmap"));
        CHECK(back.shape == std::vector<int>{4, 4, 1});
        for (size_t i = 0; i < t.data.size(); ++i) CHECK(back.data[i] == t.data[i]);
    }
    SUBCASE("empty map is valid") {
        Tensor t = Tensor::zeros({0, 0, 0});
        io::write_fmap(dir.file("c.fmap"), t);
        Tensor back = io::read_fmap(dir.file("c.fmap"));
        CHECK(back.shape == std::vector<int>{0, 0, 0});
    }
    SUBCASE("truncated files raise an explicit error") {
        Rng rng(3);
        Tensor t = random_tensor(rng, {3, 3, 2});
        io::write_fmap(dir.file("d.fmap"), t);
        std::ifstream in(dir.file("d.fmap"), std::ios::binary);
        std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(dir.file("d.fmap"), std::ios::binary | std::ios::trunc);
        out.write(data.data(), static_cast<std::streamsize>(data.size() - 5));
        out.close();
        CHECK_THROWS_AS(io::read_fmap(dir.file("d.fmap")), io::FileFormatError);
    }
    SUBCASE("bad magic raises an explicit error") {
        std::ofstream out(dir.file("e.fmap"), std::ios::binary);
        out << "NOPE" << std::string(20, '\0');
        out.close();
        CHECK_THROWS_AS(io::read_fmap(dir.file("e.fmap")), io::FileFormatError);
    }
}

TEST_CASE("PPM/PGM round-trips") {
    TempDir dir;
    SUBCASE("PPM images round-trip through the 8-bit quantization") {
        Rng rng(4);
        Tensor img = random_tensor(rng, {6, 5, 3}, 0.0, 1.0);
        io::write_ppm(dir.file("a.ppm"), img);
        Tensor back = io::read_ppm(dir.file("a.ppm"));
        CHECK(back.shape == img.shape);
        CHECK(max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-12);
    }
    SUBCASE("indexed PGM stores raw indices") {
        std::vector<int> idx = {0, 1, 2, 3, 2, 1};
        io::write_pgm_indexed(dir.file("b.pgm"), idx, 2, 3);
        int h = 0, w = 0;
        std::vector<int> back = io::read_pgm_indexed(dir.file("b.pgm"), &h, &w);
        CHECK(h == 2);
        CHECK(w == 3);
        CHECK(back == idx);
    }
}

TEST_CASE("checkpoint round-trip") {
    TempDir dir;
    ups::UpsamplerConfig cfg;
    cfg.dim = 8;
    cfg.enc1 = 4;
    cfg.enc2 = 4;
    cfg.scale = 2;
    ups::UpsamplerParams params = ups::UpsamplerParams::init(cfg, 42);
    io::write_checkpoint(dir.file("m.duwt"), cfg, params);
    auto [cfg2, params2] = io::read_checkpoint(dir.file("m.duwt"));
    CHECK(cfg2.dim == cfg.dim);
    CHECK(cfg2.window == cfg.window);
    CHECK(cfg2.enc1 == cfg.enc1);
    CHECK(cfg2.enc2 == cfg.enc2);
    CHECK(cfg2.scale == cfg.scale);
    CHECK(cfg2.rope_base == cfg.rope_base);
    for (size_t i = 0; i < params.tensors().size(); ++i) {
        CHECK(params2.tensors()[i]->shape == params.tensors()[i]->shape);
        CHECK(max_abs_diff(*params2.tensors()[i], *params.tensors()[i]) == 0.0);
    }
    SUBCASE("truncation is detected") {
        std::ifstream in(dir.file("m.duwt"), std::ios::binary);
        std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(dir.file("m.duwt"), std::ios::binary | std::ios::trunc);
        out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
        out.close();
        CHECK_THROWS_AS(io::read_checkpoint(dir.file("m.duwt")), io::FileFormatError);
    }
}

TEST_CASE("config parsing") {
    SUBCASE("defaults carry the standard hyperparameters") {
        eval::ExperimentConfig cfg = io::default_config();
        CHECK(cfg.relational.window == 7);
        CHECK(cfg.train_cfg.lambda == 0.5);
        CHECK(cfg.fusion_cfg.gamma == 0.6);
        CHECK(cfg.fusion_cfg.beta == 20.0);
        CHECK(cfg.train_cfg.lr == 2e-4);
        CHECK(cfg.train_cfg.weight_decay == 1e-5);
        CHECK(cfg.train_cfg.batch == 2);
    }
    SUBCASE("keys apply to the right fields") {
        eval::ExperimentConfig cfg = io::parse_config_text(
            "relational.window = 5\n"
            "# comment line\n"
            "train.lambda = 0.25\n"
            "vfm.0.seed = 9\n"
            "vfm.0.corruption = artifact\n"
            "vfm.0.artifact_rate = 0.1\n"
            "train.sources = 0\n"
            "train.guidance = 0\n");
        CHECK(cfg.relational.window == 5);
        CHECK(cfg.train_cfg.lambda == 0.25);
        REQUIRE(cfg.vfms.size() == 1);
        CHECK(cfg.vfms[0].seed == 9);
        CHECK(cfg.vfms[0].corruption.kind == synth::CorruptionSpec::Kind::artifact);
        CHECK(cfg.vfms[0].corruption.rate == 0.1);
        CHECK(cfg.guidance_ids == std::vector<int>{0});
    }
    SUBCASE("unknown keys are an error") {
        CHECK_THROWS_AS(io::parse_config_text("bogus.key = 1\n"), io::ConfigError);
        CHECK_THROWS_AS(io::parse_config_text("vfm.0.bogus = 1\n"), io::ConfigError);
    }
    SUBCASE("malformed lines are an error") {
        CHECK_THROWS_AS(io::parse_config_text("not a key value line\n"), io::ConfigError);
        CHECK_THROWS_AS(io::parse_config_text("train.lambda = abc\n"), io::ConfigError);
    }
}

TEST_CASE("visualization emitters") {
    SUBCASE("entropy normalizes by ln w^2") {
        Tensor h = Tensor::full({2, 2}, std::log(49.0));
        Tensor g = io::entropy_to_gray(h, 7);
        for (double v : g.data) CHECK(v == doctest::Approx(1.0));
    }
    SUBCASE("COM HSV encoding: zero magnitude is black, unit magnitude is saturated") {
        Tensor com = Tensor::zeros({1, 2, 2});
        com.at(0, 1, 0) = 1.0;
        Tensor rgb = io::com_to_hsv_rgb(com);
        for (int c = 0; c < 3; ++c) CHECK(rgb.at(0, 0, c) == doctest::Approx(0.0));
        double mx = 0.0;
        for (int c = 0; c < 3; ++c) mx = std::max(mx, rgb.at(0, 1, c));
        CHECK(mx == doctest::Approx(1.0));
    }
    SUBCASE("selection indices are the argmax over sources") {
        Tensor alpha = Tensor::zeros({1, 2, 3});
        alpha.at(0, 0, 2) = 1.0;
        alpha.at(0, 1, 0) = 1.0;
        CHECK(io::selection_to_indices(alpha) == std::vector<int>{2, 0});
    }
}

TEST_CASE("CSV formats") {
    SUBCASE("loss trace header and rows") {
        train::TraceRow row;
        row.iteration = 3;
        row.source_id = 1;
        row.loss_rec = 0.5;
        row.loss_guide = 0.25;
        row.loss_total = 0.625;
        std::string csv = io::loss_trace_csv({row});
        CHECK(csv == "iteration,source_id,loss_rec,loss_guide,loss_total\n3,1,0.5,0.25,0.625\n");
    }
    SUBCASE("deterministic double formatting") {
        CHECK(io::format_double(0.1) == io::format_double(0.1));
        CHECK(io::format_double(1.0) == "1");
    }
}
