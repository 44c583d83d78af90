#include "diveup/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace diveup::synth {

namespace {

constexpr double kDepthMin = 0.1;
constexpr double kDepthMax = 5.0;

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }
double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    const double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

struct Shape {
    int kind;  // 0 ellipse, 1 rectangle, 2 triangle
    int class_id;
    double cx, cy, rx, ry;
    double px[3], py[3];  // triangle vertices

    bool contains(double x, double y) const {
        switch (kind) {
            case 0: {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                return dx * dx + dy * dy <= 1.0;
            }
            case 1:
                return std::fabs(x - cx) <= rx && std::fabs(y - cy) <= ry;
            default: {
                // sign test against all three edges
                double sign = 0.0;
                for (int i = 0; i < 3; ++i) {
                    const int j = (i + 1) % 3;
                    const double cross =
                        (px[j] - px[i]) * (y - py[i]) - (py[j] - py[i]) * (x - px[i]);
                    if (cross != 0.0) {
                        if (sign == 0.0) {
                            sign = cross > 0 ? 1.0 : -1.0;
                        } else if ((cross > 0 ? 1.0 : -1.0) != sign) {
                            return false;
                        }
                    }
                }
                return true;
            }
        }
    }
};

}  // namespace

void SceneConfig::validate() const {
    if (height < 1 || width < 1) throw std::invalid_argument("scene: bad resolution");
    if (n_classes < 1) throw std::invalid_argument("scene: need at least one class");
    if (min_shapes < 0 || max_shapes < min_shapes) throw std::invalid_argument("scene: bad shape range");
    if (boundary_radius < 1) throw std::invalid_argument("scene: boundary radius must be >= 1");
}

void class_color(int class_id, double rgb[3]) {
    if (class_id == 0) {
        rgb[0] = rgb[1] = rgb[2] = 0.25;  // background
        return;
    }
    const double hue = std::fmod(0.61803398875 * class_id, 1.0);
    hsv_to_rgb(hue, 0.60, 0.80, rgb);
}

SceneSample gen_scene(Rng& rng, const SceneConfig& cfg) {
    cfg.validate();
    const int h = cfg.height, w = cfg.width;

    const int n_shapes = cfg.max_shapes > 0
                             ? rng.uniform_int(cfg.min_shapes, cfg.max_shapes)
                             : 0;
    std::vector<Shape> shapes(n_shapes);
    const double dim = std::min(h, w);
    for (int i = 0; i < n_shapes; ++i) {
        Shape& s = shapes[i];
        s.kind = rng.uniform_int(0, 2);
        s.class_id = cfg.n_classes > 1 ? rng.uniform_int(1, cfg.n_classes - 1) : 0;
        s.cx = rng.uniform(0.2, 0.8) * w;
        s.cy = rng.uniform(0.2, 0.8) * h;
        s.rx = rng.uniform(0.12, 0.30) * dim;
        s.ry = rng.uniform(0.12, 0.30) * dim;
        for (int v = 0; v < 3; ++v) {
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            const double rad = rng.uniform(0.5, 1.0) * s.rx;
            s.px[v] = s.cx + rad * std::cos(ang);
            s.py[v] = s.cy + rad * std::sin(ang);
        }
    }
    // depth is one plane per class so label changes and depth jumps coincide;
    // class 0 (background) sits strictly behind the shape classes
    std::vector<double> cls_base(cfg.n_classes), cls_gx(cfg.n_classes), cls_gy(cfg.n_classes);
    for (int c = 0; c < cfg.n_classes; ++c) {
        cls_base[c] = c == 0 ? rng.uniform(3.2, 4.8)
                             : 0.5 + 2.0 * (c - 1 + rng.uniform(0.15, 0.85)) /
                                         std::max(1, cfg.n_classes - 1);
        cls_gx[c] = rng.uniform(-0.5, 0.5);
        cls_gy[c] = rng.uniform(-0.5, 0.5);
    }

    SceneSample sample;
    sample.labels.assign(static_cast<size_t>(h) * w, 0);
    sample.depth = Tensor::zeros({h, w});
    sample.image = Tensor::zeros({h, w, 3});

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t p = static_cast<size_t>(y) * w + x;
            for (int i = n_shapes - 1; i >= 0; --i) {  // later shapes occlude
                if (shapes[i].contains(x + 0.5, y + 0.5)) {
                    sample.labels[p] = shapes[i].class_id;
                    break;
                }
            }
            const int cls = sample.labels[p];
            const double depth = cls_base[cls] + cls_gx[cls] * (static_cast<double>(x) / w) +
                                 cls_gy[cls] * (static_cast<double>(y) / h);
            sample.depth.at(y, x) = clampd(depth, kDepthMin, kDepthMax);
        }
    }

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double rgb[3];
            class_color(sample.labels[static_cast<size_t>(y) * w + x], rgb);
            for (int c = 0; c < 3; ++c) {
                sample.image.at(y, x, c) = clampd(rgb[c] + cfg.noise * rng.normal(), 0.0, 1.0);
            }
        }
    }

    // analytic boundary COM: mean offset to same-label pixels in the
    // clamp-to-edge window, normalized by the radius
    const int r = cfg.boundary_radius;
    sample.boundary_com = Tensor::zeros({h, w, 2});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int lbl = sample.labels[static_cast<size_t>(y) * w + x];
            double sx = 0.0, sy = 0.0;
            int count = 0;
            bool mixed = false;
            for (int oy = -r; oy <= r; ++oy) {
                const int qy = clampi(y + oy, 0, h - 1);
                for (int ox = -r; ox <= r; ++ox) {
                    const int qx = clampi(x + ox, 0, w - 1);
                    if (sample.labels[static_cast<size_t>(qy) * w + qx] == lbl) {
                        sx += ox;
                        sy += oy;
                        count++;
                    } else {
                        mixed = true;
                    }
                }
            }
            if (!mixed || count == 0) continue;
            sample.boundary_com.at(y, x, 0) = clampd(sx / count / r, -1.0, 1.0);
            sample.boundary_com.at(y, x, 1) = clampd(sy / count / r, -1.0, 1.0);
        }
    }
    return sample;
}

std::vector<int> downsample_labels(const std::vector<int>& labels, int h, int w, int stride) {
    if (h % stride != 0 || w % stride != 0) {
        throw std::invalid_argument("downsample_labels: non-divisible extents");
    }
    const int gh = h / stride, gw = w / stride;
    std::vector<int> out(static_cast<size_t>(gh) * gw, 0);
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            std::map<int, int> counts;
            for (int py = 0; py < stride; ++py) {
                for (int px = 0; px < stride; ++px) {
                    counts[labels[static_cast<size_t>(y * stride + py) * w + x * stride + px]]++;
                }
            }
            int best = 0, best_count = -1;
            for (const auto& [lbl, cnt] : counts) {
                if (cnt > best_count) {
                    best = lbl;
                    best_count = cnt;
                }
            }
            out[static_cast<size_t>(y) * gw + x] = best;
        }
    }
    return out;
}

Tensor downsample_depth(const Tensor& depth, int stride) {
    const int h = depth.shape[0], w = depth.shape[1];
    if (h % stride != 0 || w % stride != 0) {
        throw std::invalid_argument("downsample_depth: non-divisible extents");
    }
    const int gh = h / stride, gw = w / stride;
    Tensor out = Tensor::zeros({gh, gw});
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            double acc = 0.0;
            for (int py = 0; py < stride; ++py) {
                for (int px = 0; px < stride; ++px) {
                    acc += depth.at(y * stride + py, x * stride + px);
                }
            }
            out.at(y, x) = acc / (stride * stride);
        }
    }
    return out;
}

namespace {

// Frozen 3x3 convolution with clamp-to-edge padding.
Tensor conv3_clamp(const Tensor& in, const Tensor& kern, const Tensor& bias, bool apply_tanh) {
    const int h = in.shape[0], w = in.shape[1], cin = in.shape[2];
    const int cout = kern.shape[3];
    Tensor out = Tensor::zeros({h, w, cout});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* op = &out.data[(static_cast<long long>(y) * w + x) * cout];
            for (int co = 0; co < cout; ++co) op[co] = bias.data[co];
            for (int ty = 0; ty < 3; ++ty) {
                const int sy = clampi(y + ty - 1, 0, h - 1);
                for (int tx = 0; tx < 3; ++tx) {
                    const int sx = clampi(x + tx - 1, 0, w - 1);
                    const double* ip = &in.data[(static_cast<long long>(sy) * w + sx) * cin];
                    for (int ci = 0; ci < cin; ++ci) {
                        const double* kp =
                            &kern.data[((static_cast<long long>(ty) * 3 + tx) * cin + ci) * cout];
                        for (int co = 0; co < cout; ++co) op[co] += ip[ci] * kp[co];
                    }
                }
            }
            if (apply_tanh) {
                for (int co = 0; co < cout; ++co) op[co] = std::tanh(op[co]);
            }
        }
    }
    return out;
}

Tensor frozen_kernel(Rng rng, int cin, int cout) {
    Tensor k = Tensor::zeros({3, 3, cin, cout});
    const double s = 1.0 / std::sqrt(9.0 * cin);
    for (double& v : k.data) v = rng.normal() * s;
    return k;
}

Tensor frozen_bias(Rng rng, int cout) {
    Tensor b = Tensor::zeros({cout});
    for (double& v : b.data) v = rng.normal() * 0.1;
    return b;
}

int artifact_channel(const SyntheticVFM& vfm) {
    Rng rng(vfm.seed, 3);
    return rng.uniform_int(0, vfm.channels - 1);
}

}  // namespace

std::vector<char> artifact_mask(const SyntheticVFM& vfm, int grid_h, int grid_w) {
    std::vector<char> mask(static_cast<size_t>(grid_h) * grid_w, 0);
    if (vfm.corruption.kind != CorruptionSpec::Kind::artifact) return mask;
    // seeded per grid size so every extraction at that resolution agrees
    Rng rng(vfm.seed, 4 + (static_cast<uint64_t>(grid_h) << 20) + grid_w);
    for (auto& m : mask) m = rng.uniform() < vfm.corruption.rate ? 1 : 0;
    return mask;
}

Tensor extract(const SyntheticVFM& vfm, const Tensor& image, int stride_override) {
    if (image.rank() != 3 || image.shape[2] != 3) {
        throw std::invalid_argument("extract: expected (H,W,3) image");
    }
    const int stride = stride_override > 0 ? stride_override : vfm.stride;
    const int h = image.shape[0], w = image.shape[1];
    if (stride < 1 || h % stride != 0 || w % stride != 0) {
        throw std::invalid_argument("extract: image extents not divisible by stride");
    }
    const int gh = h / stride, gw = w / stride;

    // patch descriptor: mean RGB per cell
    Tensor grid = Tensor::zeros({gh, gw, 3});
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int py = 0; py < stride; ++py) {
                    for (int px = 0; px < stride; ++px) {
                        acc += image.at(y * stride + py, x * stride + px, c);
                    }
                }
                grid.at(y, x, c) = acc / (stride * stride);
            }
        }
    }

    // frozen two-layer stack; weights depend only on the seed, so the same
    // VFM at different strides is the same network on a finer grid
    const int c = vfm.channels;
    Tensor k1 = frozen_kernel(Rng(vfm.seed, 1), 3, c);
    Tensor b1 = frozen_bias(Rng(vfm.seed, 11), c);
    Tensor k2 = frozen_kernel(Rng(vfm.seed, 2), c, c);
    Tensor b2 = frozen_bias(Rng(vfm.seed, 12), c);
    Tensor feat = conv3_clamp(conv3_clamp(grid, k1, b1, true), k2, b2, true);

    switch (vfm.corruption.kind) {
        case CorruptionSpec::Kind::none:
            break;
        case CorruptionSpec::Kind::artifact: {
            const std::vector<char> mask = artifact_mask(vfm, gh, gw);
            const int chan = artifact_channel(vfm);
            for (long long p = 0; p < static_cast<long long>(gh) * gw; ++p) {
                if (mask[p]) feat.data[p * c + chan] += vfm.corruption.magnitude;
            }
            break;
        }
        case CorruptionSpec::Kind::misalign:
            feat = inject_misalign(feat, vfm.corruption.shift_x, vfm.corruption.shift_y,
                                   vfm.corruption.blur);
            break;
    }
    return feat;
}

Tensor inject_misalign(const Tensor& features, int shift_x, int shift_y, int blur) {
    if (features.rank() != 3) throw std::invalid_argument("inject_misalign: expected (H,W,C)");
    const int h = features.shape[0], w = features.shape[1], c = features.shape[2];
    if (std::abs(shift_x) >= w || std::abs(shift_y) >= h) {
        throw std::invalid_argument("inject_misalign: shift exceeds map extents");
    }
    if (blur < 0) throw std::invalid_argument("inject_misalign: negative blur radius");

    Tensor shifted = Tensor::zeros(features.shape);
    for (int y = 0; y < h; ++y) {
        const int sy = clampi(y - shift_y, 0, h - 1);
        for (int x = 0; x < w; ++x) {
            const int sx = clampi(x - shift_x, 0, w - 1);
            for (int ch = 0; ch < c; ++ch) {
                shifted.at(y, x, ch) = features.at(sy, sx, ch);
            }
        }
    }
    if (blur == 0) return shifted;

    // separable box blur with clamped edges
    Tensor tmp = Tensor::zeros(features.shape);
    const double inv = 1.0 / (2 * blur + 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int o = -blur; o <= blur; ++o) {
                    acc += shifted.at(y, clampi(x + o, 0, w - 1), ch);
                }
                tmp.at(y, x, ch) = acc * inv;
            }
        }
    }
    Tensor out = Tensor::zeros(features.shape);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int o = -blur; o <= blur; ++o) {
                    acc += tmp.at(clampi(y + o, 0, h - 1), x, ch);
                }
                out.at(y, x, ch) = acc * inv;
            }
        }
    }
    return out;
}

}  // namespace diveup::synth
