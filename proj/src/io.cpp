#include "diveup/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace diveup::io {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
public:
    Reader(std::string data, std::string path)
        : data_(std::move(data)), path_(std::move(path)) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }

    double f64() {
        need(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void magic(const char* expect) {
        need(4);
        if (std::memcmp(data_.data() + pos_, expect, 4) != 0) {
            throw FileFormatError(path_ + ": bad magic, expected " + expect);
        }
        pos_ += 4;
    }

    void done() {
        if (pos_ != data_.size()) throw FileFormatError(path_ + ": trailing bytes");
    }

private:
    void need(size_t n) {
        if (pos_ + n > data_.size()) throw FileFormatError(path_ + ": truncated file");
    }
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileFormatError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error(tmp + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void write_text_atomic(const std::string& path, const std::string& content) {
    write_file_atomic(path, content);
}

void write_fmap(const std::string& path, const Tensor& t) {
    int h, w, c;
    if (t.rank() == 2) {
        h = t.shape[0];
        w = t.shape[1];
        c = 1;
    } else if (t.rank() == 3) {
        h = t.shape[0];
        w = t.shape[1];
        c = t.shape[2];
    } else {
        throw std::invalid_argument("write_fmap: expected (H,W) or (H,W,C)");
    }
    std::string out;
    out.reserve(17 + t.data.size() * 8);
    out += "FMAP";
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(h));
    put_u32(out, static_cast<uint32_t>(w));
    put_u32(out, static_cast<uint32_t>(c));
    out.push_back(0);  // dtype 0: f64 little-endian
    for (double v : t.data) put_f64(out, v);
    write_file_atomic(path, out);
}

Tensor read_fmap(const std::string& path) {
    Reader r(read_file(path), path);
    r.magic("FMAP");
    const uint32_t version = r.u32();
    if (version != 1) throw FileFormatError(path + ": unsupported FMAP version");
    const int h = static_cast<int>(r.u32());
    const int w = static_cast<int>(r.u32());
    const int c = static_cast<int>(r.u32());
    const uint8_t dtype = r.u8();
    if (dtype != 0) throw FileFormatError(path + ": unsupported dtype code");
    Tensor t = Tensor::zeros({h, w, c});
    for (long long i = 0; i < t.numel(); ++i) t.data[i] = r.f64();
    r.done();
    return t;
}

namespace {

uint8_t to_byte(double v) {
    const double s = std::min(std::max(v, 0.0), 1.0) * 255.0;
    return static_cast<uint8_t>(std::lround(s));
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& gray) {
    if (gray.rank() != 2) throw std::invalid_argument("write_pgm: expected (H,W)");
    std::string out = "P5\n" + std::to_string(gray.shape[1]) + " " +
                      std::to_string(gray.shape[0]) + "\n255\n";
    for (double v : gray.data) out.push_back(static_cast<char>(to_byte(v)));
    write_file_atomic(path, out);
}

void write_ppm(const std::string& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.shape[2] != 3) throw std::invalid_argument("write_ppm: expected (H,W,3)");
    std::string out = "P6\n" + std::to_string(rgb.shape[1]) + " " +
                      std::to_string(rgb.shape[0]) + "\n255\n";
    for (double v : rgb.data) out.push_back(static_cast<char>(to_byte(v)));
    write_file_atomic(path, out);
}

namespace {

// Parses "P5"/"P6" headers: whitespace-separated tokens with '#' comments.
struct PnmHeader {
    int w = 0, h = 0, maxval = 0;
    size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& data, const std::string& path, const char* magic) {
    if (data.size() < 2 || data[0] != magic[0] || data[1] != magic[1]) {
        throw FileFormatError(path + ": bad magic");
    }
    PnmHeader hdr;
    size_t pos = 2;
    int fields[3];
    for (int f = 0; f < 3; ++f) {
        // skip whitespace and comments
        while (pos < data.size()) {
            if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                pos++;
            } else if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') pos++;
            } else {
                break;
            }
        }
        int v = 0;
        bool any = false;
        while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
            v = v * 10 + (data[pos] - '0');
            pos++;
            any = true;
        }
        if (!any) throw FileFormatError(path + ": malformed header");
        fields[f] = v;
    }
    if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
        throw FileFormatError(path + ": malformed header");
    }
    pos++;  // single whitespace after maxval
    hdr.w = fields[0];
    hdr.h = fields[1];
    hdr.maxval = fields[2];
    hdr.data_offset = pos;
    return hdr;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    const std::string data = read_file(path);
    const PnmHeader hdr = parse_pnm_header(data, path, "P6");
    if (hdr.maxval != 255) throw FileFormatError(path + ": unsupported maxval");
    const size_t need = static_cast<size_t>(hdr.w) * hdr.h * 3;
    if (data.size() - hdr.data_offset < need) throw FileFormatError(path + ": truncated file");
    Tensor t = Tensor::zeros({hdr.h, hdr.w, 3});
    for (size_t i = 0; i < need; ++i) {
        t.data[i] = static_cast<unsigned char>(data[hdr.data_offset + i]) / 255.0;
    }
    return t;
}

void write_pgm_indexed(const std::string& path, const std::vector<int>& indices, int h, int w) {
    if (static_cast<long long>(indices.size()) != static_cast<long long>(h) * w) {
        throw std::invalid_argument("write_pgm_indexed: index count mismatch");
    }
    int maxval = 1;
    for (int v : indices) {
        if (v < 0 || v > 255) throw std::invalid_argument("write_pgm_indexed: index out of range");
        maxval = std::max(maxval, v);
    }
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
                      std::to_string(maxval) + "\n";
    for (int v : indices) out.push_back(static_cast<char>(v));
    write_file_atomic(path, out);
}

std::vector<int> read_pgm_indexed(const std::string& path, int* h, int* w) {
    const std::string data = read_file(path);
    const PnmHeader hdr = parse_pnm_header(data, path, "P5");
    if (hdr.maxval > 255) throw FileFormatError(path + ": unsupported maxval");
    const size_t need = static_cast<size_t>(hdr.w) * hdr.h;
    if (data.size() - hdr.data_offset < need) throw FileFormatError(path + ": truncated file");
    std::vector<int> out(need);
    for (size_t i = 0; i < need; ++i) {
        out[i] = static_cast<unsigned char>(data[hdr.data_offset + i]);
    }
    if (h != nullptr) *h = hdr.h;
    if (w != nullptr) *w = hdr.w;
    return out;
}

void write_checkpoint(const std::string& path, const ups::UpsamplerConfig& cfg,
                      const ups::UpsamplerParams& params) {
    std::string out = "DUWT";
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(cfg.dim));
    put_u32(out, static_cast<uint32_t>(cfg.window));
    put_u32(out, static_cast<uint32_t>(cfg.enc1));
    put_u32(out, static_cast<uint32_t>(cfg.enc2));
    put_u32(out, static_cast<uint32_t>(cfg.scale));
    put_f64(out, cfg.rope_base);
    for (const Tensor* t : params.tensors()) {
        put_u32(out, static_cast<uint32_t>(t->rank()));
        for (int e : t->shape) put_u32(out, static_cast<uint32_t>(e));
        for (double v : t->data) put_f64(out, v);
    }
    write_file_atomic(path, out);
}

std::pair<ups::UpsamplerConfig, ups::UpsamplerParams> read_checkpoint(const std::string& path) {
    Reader r(read_file(path), path);
    r.magic("DUWT");
    const uint32_t version = r.u32();
    if (version != 1) throw FileFormatError(path + ": unsupported checkpoint version");
    ups::UpsamplerConfig cfg;
    cfg.dim = static_cast<int>(r.u32());
    cfg.window = static_cast<int>(r.u32());
    cfg.enc1 = static_cast<int>(r.u32());
    cfg.enc2 = static_cast<int>(r.u32());
    cfg.scale = static_cast<int>(r.u32());
    cfg.rope_base = r.f64();
    ups::UpsamplerParams params;
    for (Tensor* t : params.tensors()) {
        const int rank = static_cast<int>(r.u32());
        if (rank < 1 || rank > 4) throw FileFormatError(path + ": bad tensor rank");
        std::vector<int> shape(rank);
        for (int i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32());
        *t = Tensor::zeros(shape);
        for (long long i = 0; i < t->numel(); ++i) t->data[i] = r.f64();
    }
    r.done();
    return {cfg, params};
}

Tensor entropy_to_gray(const Tensor& entropy, int window) {
    if (entropy.rank() != 2) throw std::invalid_argument("entropy_to_gray: expected (H,W)");
    const double cap = std::log(static_cast<double>(window) * window);
    Tensor out = Tensor::zeros(entropy.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = cap > 0.0 ? std::min(std::max(entropy.data[i] / cap, 0.0), 1.0) : 0.0;
    }
    return out;
}

namespace {

void hsv_to_rgb_local(double h, double s, double v, double* rgb) {
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
    rgb[0] = r + v - c;
    rgb[1] = g + v - c;
    rgb[2] = b + v - c;
}

}  // namespace

Tensor com_to_hsv_rgb(const Tensor& com) {
    if (com.rank() != 3 || com.shape[2] != 2) {
        throw std::invalid_argument("com_to_hsv_rgb: expected (H,W,2)");
    }
    const int h = com.shape[0], w = com.shape[1];
    Tensor out = Tensor::zeros({h, w, 3});
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
        const double bx = com.data[p * 2], by = com.data[p * 2 + 1];
        const double mag = std::min(std::sqrt(bx * bx + by * by), 1.0);
        double angle = std::atan2(by, bx);  // [-pi, pi]
        double hue = (angle + M_PI) / (2.0 * M_PI);
        if (hue >= 1.0) hue = 0.0;
        double rgb[3];
        hsv_to_rgb_local(hue, 1.0, mag, rgb);
        for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = rgb[c];
    }
    return out;
}

std::vector<int> selection_to_indices(const Tensor& alpha) {
    if (alpha.rank() != 3) throw std::invalid_argument("selection_to_indices: expected (H,W,N)");
    const int n = alpha.shape[2];
    const long long npix = alpha.numel() / n;
    std::vector<int> out(static_cast<size_t>(npix), 0);
    for (long long p = 0; p < npix; ++p) {
        int best = 0;
        for (int i = 1; i < n; ++i) {
            if (alpha.data[p * n + i] > alpha.data[p * n + best]) best = i;
        }
        out[p] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

eval::ExperimentConfig default_config() {
    eval::ExperimentConfig cfg;
    // default panel: one clean source plus two guidance extractors at the
    // fine stride
    synth::SyntheticVFM source;
    source.seed = 101;
    source.stride = 8;
    source.channels = 8;
    synth::SyntheticVFM guide_a;
    guide_a.seed = 102;
    guide_a.stride = 2;
    guide_a.channels = 16;
    synth::SyntheticVFM guide_b;
    guide_b.seed = 103;
    guide_b.stride = 2;
    guide_b.channels = 16;
    cfg.vfms = {source, guide_a, guide_b};
    return cfg;
}

namespace {

struct KeyParser {
    eval::ExperimentConfig& cfg;
    bool vfms_cleared = false;

    void ensure_vfm(size_t index) {
        if (!vfms_cleared) {
            cfg.vfms.clear();  // explicit panel replaces the default one
            vfms_cleared = true;
        }
        while (cfg.vfms.size() <= index) cfg.vfms.push_back(synth::SyntheticVFM{});
    }

    static double to_double(const std::string& key, const std::string& v) {
        try {
            size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return d;
        } catch (...) {
            throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
        }
    }

    static long long to_int(const std::string& key, const std::string& v) {
        try {
            size_t used = 0;
            const long long i = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return i;
        } catch (...) {
            throw ConfigError("config: bad integer value for " + key + ": '" + v + "'");
        }
    }

    static std::vector<int> to_int_list(const std::string& key, const std::string& v) {
        std::vector<int> out;
        std::string cur;
        for (char ch : v + ",") {
            if (ch == ',') {
                if (!cur.empty()) out.push_back(static_cast<int>(to_int(key, cur)));
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        return out;
    }

    void apply(const std::string& key, const std::string& value) {
        if (key.rfind("vfm.", 0) == 0) {
            apply_vfm(key, value);
            return;
        }
        if (key == "scene.height") cfg.scene.height = static_cast<int>(to_int(key, value));
        else if (key == "scene.width") cfg.scene.width = static_cast<int>(to_int(key, value));
        else if (key == "scene.classes") cfg.scene.n_classes = static_cast<int>(to_int(key, value));
        else if (key == "scene.shapes_min") cfg.scene.min_shapes = static_cast<int>(to_int(key, value));
        else if (key == "scene.shapes_max") cfg.scene.max_shapes = static_cast<int>(to_int(key, value));
        else if (key == "scene.noise") cfg.scene.noise = to_double(key, value);
        else if (key == "scene.boundary_radius") cfg.scene.boundary_radius = static_cast<int>(to_int(key, value));
        else if (key == "scene.count") cfg.scene_count = static_cast<int>(to_int(key, value));
        else if (key == "scene.eval_count") cfg.scene_eval_count = static_cast<int>(to_int(key, value));
        else if (key == "scene.seed") cfg.scene_seed = static_cast<uint64_t>(to_int(key, value));
        else if (key == "relational.window") cfg.relational.window = static_cast<int>(to_int(key, value));
        else if (key == "relational.tau") cfg.relational.tau = to_double(key, value);
        else if (key == "relational.dim") cfg.relational.dim = static_cast<int>(to_int(key, value));
        else if (key == "relational.epsilon") cfg.relational.eps = to_double(key, value);
        else if (key == "relational.projection_seed") cfg.relational.projection_seed = static_cast<uint64_t>(to_int(key, value));
        else if (key == "fusion.beta") cfg.fusion_cfg.beta = to_double(key, value);
        else if (key == "fusion.gamma") cfg.fusion_cfg.gamma = to_double(key, value);
        else if (key == "fusion.std_floor") cfg.fusion_cfg.std_floor = to_double(key, value);
        else if (key == "fusion.mode") {
            if (value == "sa-select") cfg.fusion_mode = fusion::FusionMode::sa_select;
            else if (value == "mean") cfg.fusion_mode = fusion::FusionMode::mean;
            else throw ConfigError("config: fusion.mode must be sa-select or mean");
        } else if (key == "upsampler.dim") cfg.upsampler.dim = static_cast<int>(to_int(key, value));
        else if (key == "upsampler.window") cfg.upsampler.window = static_cast<int>(to_int(key, value));
        else if (key == "upsampler.enc1") cfg.upsampler.enc1 = static_cast<int>(to_int(key, value));
        else if (key == "upsampler.enc2") cfg.upsampler.enc2 = static_cast<int>(to_int(key, value));
        else if (key == "upsampler.rope_base") cfg.upsampler.rope_base = to_double(key, value);
        else if (key == "upsampler.seed") cfg.upsampler_seed = static_cast<uint64_t>(to_int(key, value));
        else if (key == "train.lambda") cfg.train_cfg.lambda = to_double(key, value);
        else if (key == "train.lr") cfg.train_cfg.lr = to_double(key, value);
        else if (key == "train.weight_decay") cfg.train_cfg.weight_decay = to_double(key, value);
        else if (key == "train.batch") cfg.train_cfg.batch = static_cast<int>(to_int(key, value));
        else if (key == "train.iters") cfg.train_cfg.iters = static_cast<int>(to_int(key, value));
        else if (key == "train.seed") cfg.train_cfg.seed = static_cast<uint64_t>(to_int(key, value));
        else if (key == "train.crop") cfg.train_cfg.crop = static_cast<int>(to_int(key, value));
        else if (key == "train.fine_stride") cfg.train_cfg.fine_stride = static_cast<int>(to_int(key, value));
        else if (key == "train.coarse_stride") cfg.train_cfg.coarse_stride = static_cast<int>(to_int(key, value));
        else if (key == "train.sources") cfg.source_ids = to_int_list(key, value);
        else if (key == "train.guidance") cfg.guidance_ids = to_int_list(key, value);
        else if (key == "probe.iters") cfg.probe.iters = static_cast<int>(to_int(key, value));
        else if (key == "probe.lr") cfg.probe.lr = to_double(key, value);
        else if (key == "probe.weight_decay") cfg.probe.weight_decay = to_double(key, value);
        else if (key == "probe.seed") cfg.probe.seed = static_cast<uint64_t>(to_int(key, value));
        else if (key == "probe.depth_bins") cfg.probe.depth_bins = static_cast<int>(to_int(key, value));
        else if (key == "probe.depth_min") cfg.probe.depth_min = to_double(key, value);
        else if (key == "probe.depth_max") cfg.probe.depth_max = to_double(key, value);
        else if (key == "probe.depth") cfg.run_depth_probe = to_int(key, value) != 0;
        else throw ConfigError("config: unknown key '" + key + "'");
    }

    void apply_vfm(const std::string& key, const std::string& value) {
        const size_t second_dot = key.find('.', 4);
        if (second_dot == std::string::npos) throw ConfigError("config: malformed vfm key '" + key + "'");
        const std::string idx_str = key.substr(4, second_dot - 4);
        const std::string field = key.substr(second_dot + 1);
        const long long idx = to_int(key, idx_str);
        if (idx < 0 || idx > 63) throw ConfigError("config: vfm index out of range");
        ensure_vfm(static_cast<size_t>(idx));
        synth::SyntheticVFM& vfm = cfg.vfms[static_cast<size_t>(idx)];
        if (field == "seed") vfm.seed = static_cast<uint64_t>(to_int(key, value));
        else if (field == "stride") vfm.stride = static_cast<int>(to_int(key, value));
        else if (field == "channels") vfm.channels = static_cast<int>(to_int(key, value));
        else if (field == "corruption") {
            if (value == "none") vfm.corruption.kind = synth::CorruptionSpec::Kind::none;
            else if (value == "artifact") vfm.corruption.kind = synth::CorruptionSpec::Kind::artifact;
            else if (value == "misalign") vfm.corruption.kind = synth::CorruptionSpec::Kind::misalign;
            else throw ConfigError("config: corruption must be none, artifact or misalign");
        } else if (field == "artifact_rate") vfm.corruption.rate = to_double(key, value);
        else if (field == "artifact_magnitude") vfm.corruption.magnitude = to_double(key, value);
        else if (field == "shift_x") vfm.corruption.shift_x = static_cast<int>(to_int(key, value));
        else if (field == "shift_y") vfm.corruption.shift_y = static_cast<int>(to_int(key, value));
        else if (field == "blur") vfm.corruption.blur = static_cast<int>(to_int(key, value));
        else throw ConfigError("config: unknown vfm field '" + field + "'");
    }
};

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) b++;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) e--;
    return s.substr(b, e - b);
}

}  // namespace

eval::ExperimentConfig parse_config_text(const std::string& text) {
    eval::ExperimentConfig cfg = default_config();
    KeyParser parser{cfg};
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
        }
        parser.apply(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

eval::ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return default_config();
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// CSV / report helpers
// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string loss_trace_csv(const std::vector<train::TraceRow>& trace) {
    std::string out = "iteration,source_id,loss_rec,loss_guide,loss_total\n";
    for (const train::TraceRow& r : trace) {
        out += std::to_string(r.iteration) + "," + std::to_string(r.source_id) + "," +
               format_double(r.loss_rec) + "," + format_double(r.loss_guide) + "," +
               format_double(r.loss_total) + "\n";
    }
    return out;
}

std::string metrics_csv(const eval::MetricReport& report) {
    std::string out = "metric,value\n";
    out += "miou," + format_double(report.miou) + "\n";
    out += "pixel_acc," + format_double(report.pixel_acc) + "\n";
    out += "delta1," + format_double(report.delta1) + "\n";
    for (size_t c = 0; c < report.per_class_iou.size(); ++c) {
        out += "iou_class_" + std::to_string(c) + "," + format_double(report.per_class_iou[c]) +
               "\n";
    }
    return out;
}

std::string ablation_csv(const std::vector<eval::AblationRow>& rows) {
    std::string out = "config,seed,miou,delta1,diverged\n";
    for (const eval::AblationRow& r : rows) {
        out += r.config_name + "," + std::to_string(r.seed) + "," + format_double(r.miou) + "," +
               format_double(r.delta1) + "," + (r.diverged ? "1" : "0") + "\n";
    }
    return out;
}

std::string ablation_table(const std::vector<eval::AblationRow>& rows) {
    std::vector<std::string> names;
    for (const eval::AblationRow& r : rows) {
        if (std::find(names.begin(), names.end(), r.config_name) == names.end()) {
            names.push_back(r.config_name);
        }
    }
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s %12s %12s %8s\n", "config", "miou_mean", "miou_std",
                  "runs");
    out += buf;
    for (const std::string& name : names) {
        auto [mean, sd] = eval::summarize(rows, name);
        int runs = 0;
        for (const eval::AblationRow& r : rows) {
            if (r.config_name == name && !r.diverged) runs++;
        }
        std::snprintf(buf, sizeof(buf), "%-20s %12.4f %12.4f %8d\n", name.c_str(), mean, sd, runs);
        out += buf;
    }
    return out;
}

}  // namespace diveup::io
