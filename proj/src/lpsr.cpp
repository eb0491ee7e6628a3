#include "stmae/lpsr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace stmae {

ImageTensor normalize_image(const Grid& raw, const NormalizeStats& stats, const std::string& id) {
    if (raw.c != 3) throw InvalidInput("normalize_image: expected 3 channels, got " + std::to_string(raw.c));
    ImageTensor out;
    out.id = id;
    out.data = Grid(raw.h, raw.w, 3);
    for (int y = 0; y < raw.h; ++y)
        for (int x = 0; x < raw.w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                out.data.at(y, x, ch) =
                    (raw.at(y, x, ch) / 255.0 - stats.mean[ch]) / stats.stddev[ch];
    return out;
}

namespace {

// ---------------------------------------------------------------------------
// Weights file: "STMW", version, then named nd-tensors (f32 or f64).
// Matches tools/export_backbone.py.
// ---------------------------------------------------------------------------

struct StoredTensor {
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};

using TensorMap = std::map<std::string, StoredTensor>;

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("weights file: truncated read");
    return v;
}

TensorMap load_weights_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "STMW", 4) != 0)
        throw IoError("not a backbone weights file: " + path);
    const auto version = read_pod<std::uint32_t>(in);
    if (version != 1) throw IoError("unsupported weights file version " + std::to_string(version));
    const auto count = read_pod<std::uint32_t>(in);
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto dtype = read_pod<std::uint8_t>(in);
        const auto ndim = read_pod<std::uint32_t>(in);
        StoredTensor t;
        std::uint64_t n = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            t.dims.push_back(read_pod<std::uint64_t>(in));
            n *= t.dims.back();
        }
        t.values.resize(n);
        if (dtype == 0) {
            std::vector<float> buf(n);
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
            std::copy(buf.begin(), buf.end(), t.values.begin());
        } else if (dtype == 1) {
            in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * 8));
        } else {
            throw IoError("weights file: unknown dtype tag");
        }
        if (!in) throw IoError("weights file: truncated tensor data");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backbone program
// ---------------------------------------------------------------------------

enum class OpKind { Conv, Affine, ReLU, ReLU6, MaxPool, Save, Load, Add, Tap };

struct Op {
    OpKind kind;
    // Conv
    std::string param_name;  // torch state_dict prefix, e.g. "features.0"
    int in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0, groups = 1;
    Mat w;   // (k*k*in_c/groups) x out_c, column oc; groups==in_c -> depthwise (k*k) x out_c
    Vec b;   // out_c
    // Affine (folded batch norm): per-channel scale/shift
    Vec scale, shift;
    // MaxPool
    int pool_k = 2, pool_stride = 2, pool_pad = 0;
    // Save / Load / Add
    int slot = 0;
    // Tap
    int tap_id = 0;
};

Grid conv2d(const Grid& in, const Op& p) {
    const int oh = (in.h + 2 * p.pad - p.k) / p.stride + 1;
    const int ow = (in.w + 2 * p.pad - p.k) / p.stride + 1;
    Grid out(oh, ow, p.out_c);
    if (p.groups == 1) {
        const int cols = p.k * p.k * in.c;
        Mat im2col(oh * ow, cols);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double* row = im2col.row(y * ow + x).data();
                for (int ky = 0; ky < p.k; ++ky) {
                    const int sy = y * p.stride + ky - p.pad;
                    for (int kx = 0; kx < p.k; ++kx) {
                        const int sx = x * p.stride + kx - p.pad;
                        double* dst = row + (ky * p.k + kx) * in.c;
                        if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) {
                            std::fill(dst, dst + in.c, 0.0);
                        } else {
                            const double* src = &in.data[(static_cast<std::size_t>(sy) * in.w + sx) * in.c];
                            std::copy(src, src + in.c, dst);
                        }
                    }
                }
            }
        Mat res = im2col * p.w;
        res.rowwise() += p.b.transpose();
        std::copy(res.data(), res.data() + res.size(), out.data.begin());
    } else {
        // depthwise (groups == in_c == out_c)
        if (p.groups != in.c || p.out_c != in.c)
            throw ConfigError("conv2d: only depthwise grouped convolutions are supported");
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int ch = 0; ch < in.c; ++ch) {
                    double acc = p.b[ch];
                    for (int ky = 0; ky < p.k; ++ky) {
                        const int sy = y * p.stride + ky - p.pad;
                        if (sy < 0 || sy >= in.h) continue;
                        for (int kx = 0; kx < p.k; ++kx) {
                            const int sx = x * p.stride + kx - p.pad;
                            if (sx < 0 || sx >= in.w) continue;
                            acc += p.w(ky * p.k + kx, ch) * in.at(sy, sx, ch);
                        }
                    }
                    out.at(y, x, ch) = acc;
                }
    }
    return out;
}

Grid maxpool2d(const Grid& in, const Op& p) {
    const int oh = (in.h + 2 * p.pool_pad - p.pool_k) / p.pool_stride + 1;
    const int ow = (in.w + 2 * p.pool_pad - p.pool_k) / p.pool_stride + 1;
    Grid out(oh, ow, in.c);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int ch = 0; ch < in.c; ++ch) {
                double best = -1e300;
                for (int ky = 0; ky < p.pool_k; ++ky) {
                    const int sy = y * p.pool_stride + ky - p.pool_pad;
                    if (sy < 0 || sy >= in.h) continue;
                    for (int kx = 0; kx < p.pool_k; ++kx) {
                        const int sx = x * p.pool_stride + kx - p.pool_pad;
                        if (sx < 0 || sx >= in.w) continue;
                        best = std::max(best, in.at(sy, sx, ch));
                    }
                }
                out.at(y, x, ch) = best;
            }
    return out;
}

// ---------------------------------------------------------------------------
// Architecture builders (ops named after the torchvision state_dict layout so
// exported weight files line up one-to-one).
// ---------------------------------------------------------------------------

struct ProgramBuilder {
    std::vector<Op> ops;
    std::vector<int> tap_widths;  // channel width at each tap, 1-based order

    void conv(const std::string& name, int in_c, int out_c, int k, int stride, int pad, int groups = 1) {
        Op op;
        op.kind = OpKind::Conv;
        op.param_name = name;
        op.in_c = in_c; op.out_c = out_c; op.k = k; op.stride = stride; op.pad = pad; op.groups = groups;
        ops.push_back(std::move(op));
    }
    void bn(const std::string& name, int channels) {
        Op op;
        op.kind = OpKind::Affine;
        op.param_name = name;
        op.out_c = channels;
        ops.push_back(std::move(op));
    }
    void relu() { ops.push_back(Op{.kind = OpKind::ReLU}); }
    void relu6() { ops.push_back(Op{.kind = OpKind::ReLU6}); }
    void maxpool(int k, int stride, int pad = 0) {
        Op op; op.kind = OpKind::MaxPool; op.pool_k = k; op.pool_stride = stride; op.pool_pad = pad;
        ops.push_back(std::move(op));
    }
    void save(int slot) { Op op; op.kind = OpKind::Save; op.slot = slot; ops.push_back(op); }
    void load(int slot) { Op op; op.kind = OpKind::Load; op.slot = slot; ops.push_back(op); }
    void add(int slot) { Op op; op.kind = OpKind::Add; op.slot = slot; ops.push_back(op); }
    void tap(int width) {
        Op op; op.kind = OpKind::Tap; op.tap_id = static_cast<int>(tap_widths.size()) + 1;
        ops.push_back(op);
        tap_widths.push_back(width);
    }
};

ProgramBuilder build_vgg19() {
    ProgramBuilder b;
    // torchvision vgg19 "features" indices; taps at the last ReLU of the
    // first four convolutional blocks.
    auto block = [&](std::initializer_list<int> conv_idx, int in_c, int out_c) {
        int c = in_c;
        for (int idx : conv_idx) {
            b.conv("features." + std::to_string(idx), c, out_c, 3, 1, 1);
            b.relu();
            c = out_c;
        }
        b.tap(out_c);
        b.maxpool(2, 2);
    };
    block({0, 2}, 3, 64);
    block({5, 7}, 64, 128);
    block({10, 12, 14, 16}, 128, 256);
    block({19, 21, 23, 25}, 256, 512);
    return b;
}

ProgramBuilder build_resnet(bool bottleneck) {
    ProgramBuilder b;
    b.conv("conv1", 3, 64, 7, 2, 3);
    b.bn("bn1", 64);
    b.relu();
    b.maxpool(3, 2, 1);
    const int counts[4] = {3, bottleneck ? 4 : 4, 6, 3};
    const int widths[4] = {64, 128, 256, 512};
    const int expansion = bottleneck ? 4 : 1;
    int in_c = 64;
    for (int stage = 0; stage < 4; ++stage) {
        const int width = widths[stage];
        const int out_c = width * expansion;
        for (int block = 0; block < counts[stage]; ++block) {
            const std::string p = "layer" + std::to_string(stage + 1) + "." + std::to_string(block) + ".";
            const int stride = (stage > 0 && block == 0) ? 2 : 1;
            const bool needs_ds = (block == 0 && (stride != 1 || in_c != out_c));
            b.save(0);
            if (bottleneck) {
                b.conv(p + "conv1", in_c, width, 1, 1, 0); b.bn(p + "bn1", width); b.relu();
                b.conv(p + "conv2", width, width, 3, stride, 1); b.bn(p + "bn2", width); b.relu();
                b.conv(p + "conv3", width, out_c, 1, 1, 0); b.bn(p + "bn3", out_c);
            } else {
                b.conv(p + "conv1", in_c, width, 3, stride, 1); b.bn(p + "bn1", width); b.relu();
                b.conv(p + "conv2", width, width, 3, 1, 1); b.bn(p + "bn2", width);
            }
            if (needs_ds) {
                b.save(1);
                b.load(0);
                b.conv(p + "downsample.0", in_c, out_c, 1, stride, 0);
                b.bn(p + "downsample.1", out_c);
                b.add(1);
            } else {
                b.add(0);
            }
            b.relu();
            in_c = out_c;
        }
        b.tap(out_c);
    }
    return b;
}

ProgramBuilder build_mobilenetv2() {
    ProgramBuilder b;
    b.conv("features.0.0", 3, 32, 3, 2, 1);
    b.bn("features.0.1", 32);
    b.relu6();
    int in_c = 32;
    int feature_idx = 1;
    auto inverted_residual = [&](int t, int out_c, int stride) {
        const std::string p = "features." + std::to_string(feature_idx) + ".conv.";
        const int hidden = in_c * t;
        const bool residual = (stride == 1 && in_c == out_c);
        if (residual) b.save(0);
        int ci = 0;
        if (t != 1) {
            b.conv(p + "0.0", in_c, hidden, 1, 1, 0); b.bn(p + "0.1", hidden); b.relu6();
            ci = 1;
        }
        b.conv(p + std::to_string(ci) + ".0", hidden, hidden, 3, stride, 1, hidden);
        b.bn(p + std::to_string(ci) + ".1", hidden);
        b.relu6();
        b.conv(p + std::to_string(ci + 1), hidden, out_c, 1, 1, 0);
        b.bn(p + std::to_string(ci + 2), out_c);
        if (residual) b.add(0);
        in_c = out_c;
        ++feature_idx;
    };
    // Stage layout of torchvision mobilenet_v2, tapped after each of the
    // first four stages (see Open Questions on non-VGG tap placement).
    inverted_residual(1, 16, 1);
    b.tap(16);
    inverted_residual(6, 24, 2);
    inverted_residual(6, 24, 1);
    b.tap(24);
    inverted_residual(6, 32, 2);
    inverted_residual(6, 32, 1);
    inverted_residual(6, 32, 1);
    b.tap(32);
    inverted_residual(6, 64, 2);
    inverted_residual(6, 64, 1);
    inverted_residual(6, 64, 1);
    inverted_residual(6, 64, 1);
    b.tap(64);
    return b;
}

void init_random(std::vector<Op>& ops, std::uint64_t seed) {
    int op_index = 0;
    for (Op& op : ops) {
        ++op_index;
        if (op.kind == OpKind::Conv) {
            const int rows = (op.groups == 1) ? op.k * op.k * op.in_c : op.k * op.k;
            const int fan_in = op.k * op.k * op.in_c / op.groups;
            std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(op_index)));
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
            op.w = Mat(rows, op.out_c);
            for (Eigen::Index i = 0; i < op.w.size(); ++i) op.w.data()[i] = dist(rng);
            op.b = Vec::Zero(op.out_c);
        } else if (op.kind == OpKind::Affine) {
            op.scale = Vec::Ones(op.out_c);
            op.shift = Vec::Zero(op.out_c);
        }
    }
}

void init_from_file(std::vector<Op>& ops, const std::string& path) {
    const TensorMap tensors = load_weights_file(path);
    auto fetch = [&](const std::string& name) -> const StoredTensor& {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("weights file is missing tensor: " + name);
        return it->second;
    };
    for (Op& op : ops) {
        if (op.kind == OpKind::Conv) {
            const StoredTensor& wt = fetch(op.param_name + ".weight");
            const int icg = op.in_c / op.groups;
            if (wt.dims.size() != 4 || static_cast<int>(wt.dims[0]) != op.out_c ||
                static_cast<int>(wt.dims[1]) != icg || static_cast<int>(wt.dims[2]) != op.k)
                throw IoError("weights file: shape mismatch for " + op.param_name);
            const int rows = (op.groups == 1) ? op.k * op.k * op.in_c : op.k * op.k;
            op.w = Mat(rows, op.out_c);
            // torch layout (oc, ic, ky, kx) -> im2col layout ((ky,kx,ic), oc)
            for (int oc = 0; oc < op.out_c; ++oc)
                for (int ic = 0; ic < icg; ++ic)
                    for (int ky = 0; ky < op.k; ++ky)
                        for (int kx = 0; kx < op.k; ++kx) {
                            const double v = wt.values[((static_cast<std::size_t>(oc) * icg + ic) * op.k + ky) * op.k + kx];
                            const int row = (op.groups == 1) ? (ky * op.k + kx) * op.in_c + ic
                                                             : ky * op.k + kx;
                            op.w(row, oc) = v;
                        }
            op.b = Vec::Zero(op.out_c);
            auto bias_it = tensors.find(op.param_name + ".bias");
            if (bias_it != tensors.end())
                for (int oc = 0; oc < op.out_c; ++oc) op.b[oc] = bias_it->second.values[oc];
        } else if (op.kind == OpKind::Affine) {
            const StoredTensor& gamma = fetch(op.param_name + ".weight");
            const StoredTensor& beta = fetch(op.param_name + ".bias");
            const StoredTensor& mean = fetch(op.param_name + ".running_mean");
            const StoredTensor& var = fetch(op.param_name + ".running_var");
            op.scale = Vec(op.out_c);
            op.shift = Vec(op.out_c);
            for (int ch = 0; ch < op.out_c; ++ch) {
                const double s = gamma.values[ch] / std::sqrt(var.values[ch] + 1e-5);
                op.scale[ch] = s;
                op.shift[ch] = beta.values[ch] - mean.values[ch] * s;
            }
        }
    }
}

}  // namespace

struct Backbone::Impl {
    std::vector<Op> ops;
    std::vector<int> selected_taps;  // sorted, 1-based
    int last_tap = 0;
};

Backbone::~Backbone() = default;
Backbone::Backbone(Backbone&&) noexcept = default;
Backbone& Backbone::operator=(Backbone&&) noexcept = default;

Backbone::Backbone(const BackboneConfig& config) : impl_(std::make_unique<Impl>()), name_(config.name) {
    ProgramBuilder builder;
    if (config.name == "vgg19") builder = build_vgg19();
    else if (config.name == "resnet34") builder = build_resnet(false);
    else if (config.name == "resnet50") builder = build_resnet(true);
    else if (config.name == "mobilenetv2") builder = build_mobilenetv2();
    else if (config.name == "pixel") {
        // No network: the (normalized) image itself is the single hierarchy level.
        builder.tap(3);
    } else {
        throw ConfigError("unknown backbone: " + config.name);
    }

    if (config.taps.empty()) throw ConfigError("backbone.taps must not be empty");
    impl_->selected_taps = config.taps;
    std::sort(impl_->selected_taps.begin(), impl_->selected_taps.end());
    for (int t : impl_->selected_taps) {
        if (t < 1 || t > static_cast<int>(builder.tap_widths.size()))
            throw ConfigError("tap point " + std::to_string(t) + " not found in backbone " + config.name);
        tap_channels_.push_back(builder.tap_widths[t - 1]);
    }
    impl_->last_tap = impl_->selected_taps.back();
    impl_->ops = std::move(builder.ops);

    if (config.name == "pixel") return;
    if (config.weights == "random" || config.weights.rfind("random:", 0) == 0) {
        std::uint64_t seed = 0;
        if (auto pos = config.weights.find(':'); pos != std::string::npos)
            seed = std::stoull(config.weights.substr(pos + 1));
        init_random(impl_->ops, seed);
    } else if (config.weights.empty()) {
        throw ConfigError("backbone.weights is required (a file path or \"random[:seed]\")");
    } else {
        init_from_file(impl_->ops, config.weights);
    }
}

HierarchicalFeatures Backbone::extract(const ImageTensor& image) const {
    if (image.data.c != 3) throw InvalidInput("backbone input must have 3 channels");
    HierarchicalFeatures out;
    Grid cur = image.data;
    std::map<int, Grid> slots;
    for (const Op& op : impl_->ops) {
        switch (op.kind) {
            case OpKind::Conv: cur = conv2d(cur, op); break;
            case OpKind::Affine:
                for (std::size_t i = 0; i < cur.data.size(); ++i) {
                    const int ch = static_cast<int>(i % cur.c);
                    cur.data[i] = cur.data[i] * op.scale[ch] + op.shift[ch];
                }
                break;
            case OpKind::ReLU:
                for (double& v : cur.data) v = std::max(v, 0.0);
                break;
            case OpKind::ReLU6:
                for (double& v : cur.data) v = std::clamp(v, 0.0, 6.0);
                break;
            case OpKind::MaxPool: cur = maxpool2d(cur, op); break;
            case OpKind::Save: slots[op.slot] = cur; break;
            case OpKind::Load: std::swap(cur, slots[op.slot]); break;
            case OpKind::Add: {
                const Grid& other = slots.at(op.slot);
                for (std::size_t i = 0; i < cur.data.size(); ++i) cur.data[i] += other.data[i];
                break;
            }
            case OpKind::Tap:
                if (std::binary_search(impl_->selected_taps.begin(), impl_->selected_taps.end(), op.tap_id)) {
                    out.levels.push_back(cur);
                    out.tap_ids.push_back(op.tap_id);
                }
                if (op.tap_id >= impl_->last_tap) return out;
                break;
        }
    }
    return out;
}

std::uint64_t Backbone::weights_digest() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const double* p, std::size_t n) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ULL;
        }
    };
    for (const Op& op : impl_->ops) {
        if (op.kind == OpKind::Conv) {
            mix(op.w.data(), static_cast<std::size_t>(op.w.size()));
            mix(op.b.data(), static_cast<std::size_t>(op.b.size()));
        } else if (op.kind == OpKind::Affine) {
            mix(op.scale.data(), static_cast<std::size_t>(op.scale.size()));
            mix(op.shift.data(), static_cast<std::size_t>(op.shift.size()));
        }
    }
    return h;
}

Grid fuse_pfdf(const HierarchicalFeatures& features, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0) throw ConfigError("fuse_pfdf: non-positive target size");
    if (features.levels.empty()) throw InvalidInput("fuse_pfdf: no hierarchy levels");
    std::vector<Grid> resized;
    resized.reserve(features.levels.size());
    for (const Grid& level : features.levels)
        resized.push_back(resize_bilinear(level, target_h, target_w));
    return concat_channels(resized);
}

}  // namespace stmae
