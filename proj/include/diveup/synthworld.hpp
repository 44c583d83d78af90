#pragma once

#include <cstdint>
#include <vector>

#include "diveup/rng.hpp"
#include "diveup/tensor.hpp"

namespace diveup::synth {

struct SceneConfig {
    int height = 64;
    int width = 64;
    int n_classes = 5;
    int min_shapes = 2;
    int max_shapes = 5;
    double noise = 0.02;
    int boundary_radius = 3;  // ground-truth COM window radius
    void validate() const;
};

struct SceneSample {
    Tensor image;             // (H,W,3) in [0,1]
    std::vector<int> labels;  // H*W class ids, row-major
    Tensor depth;             // (H,W), positive
    Tensor boundary_com;      // (H,W,2) in [-1,1], zero away from label boundaries
};

// Fixed per-class color; independent of any per-scene randomness so that
// class appearance is learnable across a dataset.
void class_color(int class_id, double rgb[3]);

SceneSample gen_scene(Rng& rng, const SceneConfig& cfg);

// Majority label per stride x stride cell (ties -> smallest id).
std::vector<int> downsample_labels(const std::vector<int>& labels, int h, int w, int stride);

// Mean depth per cell.
Tensor downsample_depth(const Tensor& depth, int stride);

struct CorruptionSpec {
    enum class Kind { none, artifact, misalign };
    Kind kind = Kind::none;
    double rate = 0.05;       // artifact: fraction of cells spiked
    double magnitude = 10.0;  // artifact: spike height
    int shift_x = 0;          // misalign
    int shift_y = 0;
    int blur = 0;             // misalign: box blur radius
};

// Frozen random feature extractor over a stride-k patch grid. Identical
// (seed, input) always produces identical features.
struct SyntheticVFM {
    uint64_t seed = 1;
    int stride = 8;
    int channels = 16;
    CorruptionSpec corruption;
};

// Patch features at the requested stride; corruption applied after the clean
// stack. stride_override == 0 uses the VFM's native stride.
Tensor extract(const SyntheticVFM& vfm, const Tensor& image, int stride_override = 0);

// Ground-truth artifact cells for a given grid, matching what extract() spikes.
std::vector<char> artifact_mask(const SyntheticVFM& vfm, int grid_h, int grid_w);

// Integer-cell translation with edge clamping followed by a box blur.
Tensor inject_misalign(const Tensor& features, int shift_x, int shift_y, int blur);

}  // namespace diveup::synth
