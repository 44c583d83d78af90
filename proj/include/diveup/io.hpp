#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "diveup/evalkit.hpp"

namespace diveup::io {

class FileFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// FMAP: "FMAP", version u32, H u32, W u32, C u32, dtype u8 (0 = f64 LE),
// payload row-major. Rank-2 tensors are written with C = 1; reads always
// return (H,W,C). All writes go through a temp file and rename.
void write_fmap(const std::string& path, const Tensor& t);
Tensor read_fmap(const std::string& path);

// Binary PGM (P5) / PPM (P6), values scaled from [0,1] to 0..255.
void write_pgm(const std::string& path, const Tensor& gray);
void write_ppm(const std::string& path, const Tensor& rgb);
Tensor read_ppm(const std::string& path);

// Raw index image, maxval = max(1, max index).
void write_pgm_indexed(const std::string& path, const std::vector<int>& indices, int h, int w);
std::vector<int> read_pgm_indexed(const std::string& path, int* h, int* w);

// "DUWT" checkpoint: magic, version u32, config block, parameter tensors in
// declaration order, all 64-bit little-endian.
void write_checkpoint(const std::string& path, const ups::UpsamplerConfig& cfg,
                      const ups::UpsamplerParams& params);
std::pair<ups::UpsamplerConfig, ups::UpsamplerParams> read_checkpoint(const std::string& path);

// Visualization emitters.
Tensor entropy_to_gray(const Tensor& entropy, int window);  // normalized by ln w^2
Tensor com_to_hsv_rgb(const Tensor& com);                   // hue = angle, value = magnitude
std::vector<int> selection_to_indices(const Tensor& alpha); // argmax over sources

// Line-based key=value configuration; unknown keys are an error. Defaults
// follow the standard hyperparameters (w=7, lambda=0.5, gamma=0.6, beta=20,
// lr=2e-4, wd=1e-5, batch=2).
eval::ExperimentConfig default_config();
eval::ExperimentConfig parse_config_text(const std::string& text);
eval::ExperimentConfig load_config(const std::string& path);  // empty path -> defaults

// CSV helpers (deterministic formatting).
std::string format_double(double v);
void write_text_atomic(const std::string& path, const std::string& content);

std::string loss_trace_csv(const std::vector<train::TraceRow>& trace);
std::string metrics_csv(const eval::MetricReport& report);
std::string ablation_csv(const std::vector<eval::AblationRow>& rows);
std::string ablation_table(const std::vector<eval::AblationRow>& rows);

}  // namespace diveup::io
