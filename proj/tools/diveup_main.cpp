#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "diveup/io.hpp"
#include "selftest.hpp"

namespace {

using namespace diveup;

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitFileFormat = 3;
constexpr int kExitDivergence = 4;

std::string sample_path(const std::string& dir, int index, const char* suffix) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%04d.", index);
    return (std::filesystem::path(dir) / (buf + std::string(suffix))).string();
}

// gen: dataset directory with per-sample image/labels/depth/boundary files
// and a manifest listing seeds and geometry.
int cmd_gen(const eval::ExperimentConfig& cfg, uint64_t seed, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const uint64_t scene_seed = seed != 0 ? seed : cfg.scene_seed;
    Rng rng(scene_seed, 0x5CE2E5ULL);
    const int total = cfg.scene_count + cfg.scene_eval_count;
    for (int i = 0; i < total; ++i) {
        synth::SceneSample s = synth::gen_scene(rng, cfg.scene);
        io::write_ppm(sample_path(out_dir, i, "image.ppm"), s.image);
        io::write_pgm_indexed(sample_path(out_dir, i, "labels.pgm"), s.labels, cfg.scene.height,
                              cfg.scene.width);
        io::write_fmap(sample_path(out_dir, i, "depth.fmap"), s.depth);
        io::write_fmap(sample_path(out_dir, i, "boundary.fmap"), s.boundary_com);
    }
    std::string manifest;
    manifest += "seed=" + std::to_string(scene_seed) + "\n";
    manifest += "count=" + std::to_string(cfg.scene_count) + "\n";
    manifest += "eval_count=" + std::to_string(cfg.scene_eval_count) + "\n";
    manifest += "height=" + std::to_string(cfg.scene.height) + "\n";
    manifest += "width=" + std::to_string(cfg.scene.width) + "\n";
    manifest += "classes=" + std::to_string(cfg.scene.n_classes) + "\n";
    manifest += "boundary_radius=" + std::to_string(cfg.scene.boundary_radius) + "\n";
    io::write_text_atomic((std::filesystem::path(out_dir) / "manifest.txt").string(), manifest);
    std::printf("wrote %d samples to %s\n", total, out_dir.c_str());
    return kExitOk;
}

int cmd_featurize(const eval::ExperimentConfig& cfg, const std::string& in_dir, int sample,
                  int vfm_id, int stride, const std::string& out) {
    if (vfm_id < 0 || vfm_id >= static_cast<int>(cfg.vfms.size())) {
        throw io::ConfigError("featurize: vfm index out of range");
    }
    Tensor image = io::read_ppm(sample_path(in_dir, sample, "image.ppm"));
    Tensor feat = synth::extract(cfg.vfms[vfm_id], image, stride);
    io::write_fmap(out, feat);
    std::printf("featurized sample %d with vfm %d -> %s (%dx%dx%d)\n", sample, vfm_id,
                out.c_str(), feat.shape[0], feat.shape[1], feat.shape[2]);
    return kExitOk;
}

int cmd_relate(const eval::ExperimentConfig& cfg, const std::string& in, const std::string& out) {
    Tensor feat = io::read_fmap(in);
    rel::RelationalField field = rel::relational_field(feat, nullptr, cfg.relational);
    io::write_fmap(out + ".entropy.fmap", field.entropy);
    io::write_fmap(out + ".spikiness.fmap", field.spikiness);
    io::write_fmap(out + ".com.fmap", field.com);
    io::write_pgm(out + ".entropy.pgm",
                  io::entropy_to_gray(field.entropy, cfg.relational.window));
    std::printf("relational field -> %s.{entropy,spikiness,com}.fmap\n", out.c_str());
    return kExitOk;
}

int cmd_fuse(const eval::ExperimentConfig& cfg, const std::string& in_dir, int sample,
             const std::string& out) {
    Tensor image = io::read_ppm(sample_path(in_dir, sample, "image.ppm"));
    train::GuidanceSetup setup = eval::make_guidance(cfg);
    if (setup.vfms.empty()) throw io::ConfigError("fuse: guidance panel is empty");
    std::vector<Tensor> feats;
    for (const synth::SyntheticVFM& vfm : setup.vfms) {
        feats.push_back(synth::extract(vfm, image));
    }
    const int th = image.shape[0] / cfg.train_cfg.fine_stride;
    const int tw = image.shape[1] / cfg.train_cfg.fine_stride;
    fusion::ConsensusField cf = fusion::build_consensus(feats, setup.projections, cfg.relational,
                                                        cfg.fusion_cfg, th, tw);
    io::write_fmap(out + ".bens.fmap", cf.b_ens);
    io::write_fmap(out + ".confidence.fmap", cf.confidence);
    io::write_pgm_indexed(out + ".selection.pgm", io::selection_to_indices(cf.alpha), th, tw);
    io::write_ppm(out + ".bens.ppm", io::com_to_hsv_rgb(cf.b_ens));
    std::printf("consensus field -> %s.bens.fmap, selection -> %s.selection.pgm\n", out.c_str(),
                out.c_str());
    return kExitOk;
}

int cmd_train(eval::ExperimentConfig cfg, uint64_t seed, const std::string& out) {
    if (seed != 0) cfg.train_cfg.seed = seed;
    Rng scene_rng(cfg.scene_seed, 0x5CE2E5ULL);
    std::vector<synth::SceneSample> scenes;
    for (int i = 0; i < cfg.scene_count; ++i) scenes.push_back(synth::gen_scene(scene_rng, cfg.scene));
    std::vector<synth::SyntheticVFM> sources;
    for (int id : cfg.source_ids) sources.push_back(cfg.vfms.at(id));
    train::GuidanceSetup guidance = eval::make_guidance(cfg);
    ups::UpsamplerParams params = ups::UpsamplerParams::init(cfg.upsampler, cfg.upsampler_seed);
    std::printf("training: %lld parameters, %d iterations, lambda=%g\n",
                params.param_count(), cfg.train_cfg.iters, cfg.train_cfg.lambda);
    try {
        train::TrainResult res =
            train::train(scenes, sources, guidance, cfg.upsampler, cfg.upsampler_seed,
                         cfg.train_cfg);
        io::write_checkpoint(out + ".duwt", cfg.upsampler, res.params);
        io::write_text_atomic(out + ".loss.csv", io::loss_trace_csv(res.trace));
        if (!res.trace.empty()) {
            std::printf("final loss_rec %.6g (iteration 0: %.6g)\n",
                        res.trace.back().loss_rec, res.trace.front().loss_rec);
        }
        std::printf("checkpoint -> %s.duwt, trace -> %s.loss.csv\n", out.c_str(), out.c_str());
        return kExitOk;
    } catch (const train::DivergenceError& e) {
        io::write_text_atomic(out + ".loss.csv", io::loss_trace_csv(e.trace));
        std::fprintf(stderr, "diveup train: %s (partial trace -> %s.loss.csv)\n", e.what(),
                     out.c_str());
        return kExitDivergence;
    }
}

int cmd_upsample(const eval::ExperimentConfig& cfg, const std::string& checkpoint,
                 const std::string& in_dir, int sample, const std::string& out) {
    auto [ucfg, params] = io::read_checkpoint(checkpoint);
    Tensor image = io::read_ppm(sample_path(in_dir, sample, "image.ppm"));
    const int source = cfg.source_ids.empty() ? 0 : cfg.source_ids[0];
    Tensor f_lr = synth::extract(cfg.vfms.at(source), image, cfg.train_cfg.coarse_stride);
    const int th = f_lr.shape[0] * ucfg.scale, tw = f_lr.shape[1] * ucfg.scale;
    Tensor enc_image = resize_bilinear(image, th, tw);
    Tensor out_map = ups::upsample(ucfg, params, enc_image, f_lr);
    io::write_fmap(out, out_map);
    std::printf("upsampled %dx%d -> %dx%d (C=%d) -> %s\n", f_lr.shape[0], f_lr.shape[1], th, tw,
                out_map.shape[2], out.c_str());
    return kExitOk;
}

int apply_seed(eval::ExperimentConfig& cfg, uint64_t seed) {
    if (seed != 0) {
        cfg.train_cfg.seed = seed;
        cfg.scene_seed = seed + 1000;
        cfg.probe.seed = seed + 2000;
    }
    return 0;
}

int cmd_probe(eval::ExperimentConfig cfg, uint64_t seed, const std::string& checkpoint,
              const std::string& out) {
    apply_seed(cfg, seed);
    auto [ucfg, params] = io::read_checkpoint(checkpoint);
    cfg.upsampler = ucfg;
    eval::ExperimentResult res = eval::probe_with_params(cfg, params);
    io::write_text_atomic(out + ".metrics.csv", io::metrics_csv(res.metrics));
    std::printf("miou %.4f  pixel_acc %.4f%s -> %s.metrics.csv\n", res.metrics.miou,
                res.metrics.pixel_acc,
                cfg.run_depth_probe ? (" delta1 " + io::format_double(res.metrics.delta1)).c_str()
                                    : "",
                out.c_str());
    return kExitOk;
}

int cmd_eval(eval::ExperimentConfig cfg, uint64_t seed, const std::string& baseline,
             const std::string& out) {
    apply_seed(cfg, seed);
    if (baseline == "bilinear") {
        cfg.method = eval::UpsampleMethod::bilinear;
    } else if (!baseline.empty()) {
        throw io::ConfigError("eval: unknown baseline '" + baseline + "'");
    }
    eval::ExperimentResult res = eval::run_experiment(cfg);
    if (res.diverged) {
        io::write_text_atomic(out + ".loss.csv", io::loss_trace_csv(res.trace));
        std::fprintf(stderr, "diveup eval: %s\n", res.error.c_str());
        return kExitDivergence;
    }
    io::write_text_atomic(out + ".metrics.csv", io::metrics_csv(res.metrics));
    if (!res.trace.empty()) {
        io::write_text_atomic(out + ".loss.csv", io::loss_trace_csv(res.trace));
    }
    std::printf("miou %.4f  pixel_acc %.4f  delta1 %.4f -> %s.metrics.csv\n", res.metrics.miou,
                res.metrics.pixel_acc, res.metrics.delta1, out.c_str());
    return kExitOk;
}

int cmd_ablate(eval::ExperimentConfig cfg, const std::string& suite, int n_seeds,
               uint64_t seed_base, const std::string& out) {
    std::vector<uint64_t> seeds;
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(seed_base + i);
    std::vector<eval::AblationRow> rows = eval::run_ablation(suite, cfg, seeds);
    io::write_text_atomic(out + ".csv", io::ablation_csv(rows));
    std::string table = io::ablation_table(rows);
    std::fputs(table.c_str(), stdout);
    bool any_diverged = false;
    for (const auto& r : rows) any_diverged = any_diverged || r.diverged;
    if (any_diverged) std::fprintf(stderr, "diveup ablate: some runs diverged (flagged in CSV)\n");
    std::printf("rows -> %s.csv\n", out.c_str());
    return kExitOk;
}

int cmd_viz(const eval::ExperimentConfig& cfg, const std::string& in, const std::string& kind,
            const std::string& out) {
    Tensor map = io::read_fmap(in);
    if (kind == "entropy") {
        if (map.shape[2] != 1) throw io::FileFormatError("viz entropy: expected C=1 map");
        Tensor gray = Tensor::zeros({map.shape[0], map.shape[1]});
        for (long long i = 0; i < gray.numel(); ++i) gray.data[i] = map.data[i];
        io::write_pgm(out, io::entropy_to_gray(gray, cfg.relational.window));
    } else if (kind == "com") {
        if (map.shape[2] != 2) throw io::FileFormatError("viz com: expected C=2 map");
        io::write_ppm(out, io::com_to_hsv_rgb(map));
    } else if (kind == "selection") {
        io::write_pgm_indexed(out, io::selection_to_indices(map), map.shape[0], map.shape[1]);
    } else {
        throw io::ConfigError("viz: kind must be entropy, com or selection");
    }
    std::printf("viz %s -> %s\n", kind.c_str(), out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DiveUp-style relational feature upsampling laboratory"};
    app.require_subcommand(1);

    std::string config_path, out, in_dir, in_file, checkpoint, kind = "com", suite, baseline;
    uint64_t seed = 0;
    int sample = 0, vfm_id = 0, stride = 0, n_seeds = 5;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value configuration file");
        sub->add_option("--seed", seed, "seed override (0 keeps the configured seeds)");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
    add_common(gen);
    gen->add_option("--out", out, "output directory")->required();

    CLI::App* featurize = app.add_subcommand("featurize", "extract synthetic-VFM features");
    add_common(featurize);
    featurize->add_option("--in", in_dir, "dataset directory")->required();
    featurize->add_option("--sample", sample, "sample index");
    featurize->add_option("--vfm", vfm_id, "vfm index from the config");
    featurize->add_option("--stride", stride, "stride override (0 = native)");
    featurize->add_option("--out", out, "output FMAP path")->required();

    CLI::App* relate = app.add_subcommand("relate", "relational field of a feature map");
    add_common(relate);
    relate->add_option("--in", in_file, "input FMAP")->required();
    relate->add_option("--out", out, "output prefix")->required();

    CLI::App* fuse = app.add_subcommand("fuse", "consensus field from the guidance panel");
    add_common(fuse);
    fuse->add_option("--in", in_dir, "dataset directory")->required();
    fuse->add_option("--sample", sample, "sample index");
    fuse->add_option("--out", out, "output prefix")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "train the upsampler");
    add_common(train_cmd);
    train_cmd->add_option("--out", out, "output prefix")->required();

    CLI::App* upsample = app.add_subcommand("upsample", "run a checkpoint on a sample");
    add_common(upsample);
    upsample->add_option("--checkpoint", checkpoint, "DUWT checkpoint")->required();
    upsample->add_option("--in", in_dir, "dataset directory")->required();
    upsample->add_option("--sample", sample, "sample index");
    upsample->add_option("--out", out, "output FMAP path")->required();

    CLI::App* probe = app.add_subcommand("probe", "linear-probe a checkpoint");
    add_common(probe);
    probe->add_option("--checkpoint", checkpoint, "DUWT checkpoint")->required();
    probe->add_option("--out", out, "output prefix")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "full train+probe evaluation");
    add_common(eval_cmd);
    eval_cmd->add_option("--baseline", baseline, "bilinear (skip training)");
    eval_cmd->add_option("--out", out, "output prefix")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "run an ablation suite");
    add_common(ablate);
    ablate->add_option("--suite", suite,
                       "guidance-panel | fusion-strategy | window-sweep | bilinear-baseline")
        ->required();
    ablate->add_option("--seeds", n_seeds, "number of seeds");
    ablate->add_option("--out", out, "output prefix")->required();

    CLI::App* viz = app.add_subcommand("viz", "render FMAPs as PGM/PPM images");
    add_common(viz);
    viz->add_option("--in", in_file, "input FMAP")->required();
    viz->add_option("--kind", kind, "entropy | com | selection");
    viz->add_option("--out", out, "output image path")->required();

    CLI::App* selftest = app.add_subcommand("selftest", "oracle and gradient suites");
    add_common(selftest);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        eval::ExperimentConfig cfg = diveup::io::load_config(config_path);
        if (gen->parsed()) return cmd_gen(cfg, seed, out);
        if (featurize->parsed()) return cmd_featurize(cfg, in_dir, sample, vfm_id, stride, out);
        if (relate->parsed()) return cmd_relate(cfg, in_file, out);
        if (fuse->parsed()) return cmd_fuse(cfg, in_dir, sample, out);
        if (train_cmd->parsed()) return cmd_train(cfg, seed, out);
        if (upsample->parsed()) return cmd_upsample(cfg, checkpoint, in_dir, sample, out);
        if (probe->parsed()) return cmd_probe(cfg, seed, checkpoint, out);
        if (eval_cmd->parsed()) return cmd_eval(cfg, seed, baseline, out);
        if (ablate->parsed()) return cmd_ablate(cfg, suite, n_seeds, seed == 0 ? 1 : seed, out);
        if (viz->parsed()) return cmd_viz(cfg, in_file, kind, out);
        if (selftest->parsed()) return diveup::cli::run_selftest();
    } catch (const diveup::io::ConfigError& e) {
        std::fprintf(stderr, "diveup: %s\n", e.what());
        return kExitConfig;
    } catch (const diveup::io::FileFormatError& e) {
        std::fprintf(stderr, "diveup: %s\n", e.what());
        return kExitFileFormat;
    } catch (const diveup::train::DivergenceError& e) {
        std::fprintf(stderr, "diveup: %s\n", e.what());
        return kExitDivergence;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "diveup: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "diveup: %s\n", e.what());
        return kExitFail;
    }
    return kExitFail;
}
