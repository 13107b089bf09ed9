#pragma once

// Backbone + discriminative-localization head.
//
// Base model:  image -> backbone -> N x N x D features -> spatial mean -> linear -> K logits
// WSL model:   image -> backbone -> features -> 1x1 conv -> N x N x K score maps -> pooling -> logits
//
// With average pooling both routes produce the same logits (the 1x1 conv is
// linear and commutes with the spatial mean), which is what lets a WSL head
// start from a trained base classifier.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "types.hpp"

namespace wsl {

template <class T>
using Logits = std::vector<T>;

template <class T>
struct BackboneFeatures {
    Grid<T> grid;  // N x N x D

    int rows() const { return grid.rows; }
    int cols() const { return grid.cols; }
    int depth() const { return grid.channels; }
};

template <class T>
struct ScoreMaps {
    Grid<T> maps;  // N x N x K

    int classes() const { return maps.channels; }
};

// D x K weights (row-major, one row per input channel) plus K biases.
template <class T>
struct LinearMap {
    int depth = 0;
    int classes = 0;
    std::vector<T> weight;
    std::vector<T> bias;

    LinearMap() = default;
    LinearMap(int d, int k)
        : depth(d), classes(k), weight(static_cast<std::size_t>(d) * k, T{}), bias(static_cast<std::size_t>(k), T{}) {}

    T w(int d, int k) const { return weight[static_cast<std::size_t>(d) * classes + k]; }

    bool finite() const {
        auto ok = [](T v) { return std::isfinite(v); };
        return std::all_of(weight.begin(), weight.end(), ok) && std::all_of(bias.begin(), bias.end(), ok);
    }

    template <class U>
    LinearMap<U> cast() const {
        LinearMap<U> out(depth, classes);
        std::copy(weight.begin(), weight.end(), out.weight.begin());
        std::copy(bias.begin(), bias.end(), out.bias.begin());
        return out;
    }
};

// Final layer of the base model, applied to spatially pooled features.
template <class T>
struct LinearClassifier : LinearMap<T> {
    using LinearMap<T>::LinearMap;
};

// The 1x1 convolution kernel mapping features to class score maps.
template <class T>
struct WslHead : LinearMap<T> {
    using LinearMap<T>::LinearMap;
};

enum class Pooling { Average, Max };

inline const char* to_string(Pooling p) { return p == Pooling::Average ? "average" : "max"; }

inline Pooling parse_pooling(const std::string& s) {
    if (s == "average" || s == "avg") return Pooling::Average;
    if (s == "max") return Pooling::Max;
    throw ConfigError("unknown pooling '" + s + "'");
}

// ---------------------------------------------------------------------------
// Head forward paths

template <class T>
std::vector<T> spatial_mean(const Grid<T>& g) {
    std::vector<double> acc(static_cast<std::size_t>(g.channels), 0.0);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const T* v = g.cell(r, c);
            for (int ch = 0; ch < g.channels; ++ch) acc[ch] += v[ch];
        }
    const double n = static_cast<double>(g.rows) * g.cols;
    std::vector<T> out(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / n);
    return out;
}

template <class T>
Logits<T> global_average_pool(const ScoreMaps<T>& s) {
    return spatial_mean(s.maps);
}

// The max-pooling alternative to global average pooling.
template <class T>
Logits<T> spatial_max_pool(const ScoreMaps<T>& s) {
    Logits<T> out(static_cast<std::size_t>(s.classes()), -std::numeric_limits<T>::infinity());
    for (int r = 0; r < s.maps.rows; ++r)
        for (int c = 0; c < s.maps.cols; ++c)
            for (int k = 0; k < s.classes(); ++k) out[k] = std::max(out[k], s.maps(r, c, k));
    return out;
}

template <class T>
ScoreMaps<T> score_maps(const BackboneFeatures<T>& f, const WslHead<T>& h) {
    if (f.depth() != h.depth)
        throw ShapeError("feature depth " + std::to_string(f.depth()) + " does not match head depth " +
                         std::to_string(h.depth));
    ScoreMaps<T> s{Grid<T>(f.rows(), f.cols(), h.classes)};
    std::vector<double> acc(static_cast<std::size_t>(h.classes));
    for (int r = 0; r < f.rows(); ++r)
        for (int c = 0; c < f.cols(); ++c) {
            const T* x = f.grid.cell(r, c);
            for (int k = 0; k < h.classes; ++k) acc[k] = h.bias[k];
            for (int d = 0; d < h.depth; ++d) {
                const double xd = x[d];
                const T* wr = h.weight.data() + static_cast<std::size_t>(d) * h.classes;
                for (int k = 0; k < h.classes; ++k) acc[k] += xd * wr[k];
            }
            T* out = s.maps.cell(r, c);
            for (int k = 0; k < h.classes; ++k) out[k] = static_cast<T>(acc[k]);
        }
    return s;
}

template <class T>
struct WslOutput {
    ScoreMaps<T> maps;
    Logits<T> logits;
};

template <class T>
WslOutput<T> wsl_forward(const BackboneFeatures<T>& f, const WslHead<T>& h, Pooling pooling = Pooling::Average) {
    WslOutput<T> out{score_maps(f, h), {}};
    out.logits = pooling == Pooling::Average ? global_average_pool(out.maps) : spatial_max_pool(out.maps);
    return out;
}

template <class T>
Logits<T> linear_apply(const LinearMap<T>& m, std::span<const T> x) {
    std::vector<double> acc(m.bias.begin(), m.bias.end());
    for (int d = 0; d < m.depth; ++d)
        for (int k = 0; k < m.classes; ++k) acc[k] += static_cast<double>(m.w(d, k)) * x[d];
    return Logits<T>(acc.begin(), acc.end());
}

// Base route: pool the features, then apply the classifier.
template <class T>
Logits<T> classify_pooled(const BackboneFeatures<T>& f, const LinearClassifier<T>& cls) {
    if (f.depth() != cls.depth) throw ShapeError("feature depth does not match classifier depth");
    const std::vector<T> pooled = spatial_mean(f.grid);
    return linear_apply<T>(cls, pooled);
}

// Copies the base classifier into a 1x1 conv head.
template <class T>
WslHead<T> init_wsl_from_base(const LinearClassifier<T>& base, int feature_depth) {
    if (base.depth != feature_depth)
        throw ShapeError("base classifier expects " + std::to_string(base.depth) + "-d features, backbone produces " +
                         std::to_string(feature_depth));
    WslHead<T> h(base.depth, base.classes);
    h.weight = base.weight;
    h.bias = base.bias;
    return h;
}

// ---------------------------------------------------------------------------
// Class activation maps

// Bilinear upsampling with corner alignment (output corners reproduce input
// corners), followed by per-map min-max normalization. A constant map
// normalizes to all zeros.
template <class T>
Heatmap compute_cam(const ScoreMaps<T>& s, int class_k, int target_h, int target_w) {
    if (class_k < 0 || class_k >= s.classes()) throw ConfigError("class index out of range");
    if (target_h < 1 || target_w < 1) throw ShapeError("target size must be positive");
    const int R = s.maps.rows, C = s.maps.cols;
    Heatmap hm;
    hm.height = target_h;
    hm.width = target_w;
    hm.class_index = class_k;
    hm.values.assign(static_cast<std::size_t>(target_h) * target_w, 0.0);

    auto src_coord = [](int i, int out_n, int in_n) {
        return out_n > 1 ? static_cast<double>(i) * (in_n - 1) / (out_n - 1) : 0.0;
    };
    for (int y = 0; y < target_h; ++y) {
        const double sy = src_coord(y, target_h, R);
        const int y0 = std::min(static_cast<int>(sy), R - 1), y1 = std::min(y0 + 1, R - 1);
        const double fy = sy - y0;
        for (int x = 0; x < target_w; ++x) {
            const double sx = src_coord(x, target_w, C);
            const int x0 = std::min(static_cast<int>(sx), C - 1), x1 = std::min(x0 + 1, C - 1);
            const double fx = sx - x0;
            const double top = (1 - fx) * s.maps(y0, x0, class_k) + fx * s.maps(y0, x1, class_k);
            const double bot = (1 - fx) * s.maps(y1, x0, class_k) + fx * s.maps(y1, x1, class_k);
            hm(y, x) = (1 - fy) * top + fy * bot;
        }
    }
    const auto [lo, hi] = std::minmax_element(hm.values.begin(), hm.values.end());
    const double mn = *lo, range = *hi - *lo;
    for (double& v : hm.values) v = range > 0 ? std::clamp((v - mn) / range, 0.0, 1.0) : 0.0;
    return hm;
}

// ---------------------------------------------------------------------------
// Toy backbone: stacked [3x3 conv (pad 1) -> ELU -> 2x2 average pool] stages.
// Total stride is 2^stages; zero stages is the identity backbone.

template <class T>
struct ConvStage {
    int in_channels = 0;
    int out_channels = 0;
    AlignedVector<T> weight;  // [ky][kx][in][out]
    AlignedVector<T> bias;    // [out]

    ConvStage() = default;
    ConvStage(int in, int out)
        : in_channels(in), out_channels(out), weight(static_cast<std::size_t>(9) * in * out, T{}),
          bias(static_cast<std::size_t>(out), T{}) {}
};

template <class T>
struct ToyBackbone {
    int in_channels = 3;
    std::vector<ConvStage<T>> stages;

    int stride() const { return 1 << stages.size(); }
    int output_depth() const { return stages.empty() ? in_channels : stages.back().out_channels; }

    // Zero-valued parameters of identical shape; used as gradient storage.
    ToyBackbone zeros_like() const {
        ToyBackbone z;
        z.in_channels = in_channels;
        for (const auto& s : stages) z.stages.emplace_back(s.in_channels, s.out_channels);
        return z;
    }

    template <class U>
    ToyBackbone<U> cast() const {
        ToyBackbone<U> out;
        out.in_channels = in_channels;
        for (const auto& s : stages) {
            ConvStage<U> c(s.in_channels, s.out_channels);
            std::copy(s.weight.begin(), s.weight.end(), c.weight.begin());
            std::copy(s.bias.begin(), s.bias.end(), c.bias.begin());
            out.stages.push_back(std::move(c));
        }
        return out;
    }
};

// He-normal weights, zero biases.
template <class T>
ToyBackbone<T> make_toy_backbone(int in_channels, std::span<const int> widths, std::uint64_t seed) {
    ToyBackbone<T> net;
    net.in_channels = in_channels;
    std::mt19937_64 rng(derive_seed(seed, "backbone-init"));
    int in = in_channels;
    for (int w : widths) {
        if (w < 1) throw ConfigError("backbone widths must be positive");
        ConvStage<T> s(in, w);
        std::normal_distribution<double> N(0.0, std::sqrt(2.0 / (9.0 * in)));
        for (auto& v : s.weight) v = static_cast<T>(N(rng));
        net.stages.push_back(std::move(s));
        in = w;
    }
    return net;
}

template <class T>
struct BackboneTape {
    std::vector<Grid<T>> patches;      // im2col of each stage input: (R*C) x (9*in)
    std::vector<Grid<T>> activations;  // post-ELU, pre-pool
    Grid<T> grad_act, grad_patches, grad_in;  // backward scratch
};

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixView = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixView = Eigen::Map<const RowMatrix<T>>;

// 3x3 zero-padded neighbourhoods, one row per output pixel, laid out
// [ky][kx][channel] to match ConvStage::weight.
template <class T>
void im2col3x3(const Grid<T>& in, Grid<T>& cols) {
    const int R = in.rows, C = in.cols, ch = in.channels;
    cols.reset(R * C, 1, 9 * ch);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < C; ++x) {
            T* dst = cols.cell(y * C + x, 0);
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx, dst += ch) {
                    const int iy = y + ky - 1, ix = x + kx - 1;
                    if (iy < 0 || iy >= R || ix < 0 || ix >= C) continue;
                    std::copy_n(in.cell(iy, ix), ch, dst);
                }
        }
}

template <class T>
void col2im3x3_add(const Grid<T>& cols, Grid<T>& out) {
    const int R = out.rows, C = out.cols, ch = out.channels;
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < C; ++x) {
            const T* src = cols.cell(y * C + x, 0);
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx, src += ch) {
                    const int iy = y + ky - 1, ix = x + kx - 1;
                    if (iy < 0 || iy >= R || ix < 0 || ix >= C) continue;
                    T* dst = out.cell(iy, ix);
                    for (int c = 0; c < ch; ++c) dst[c] += src[c];
                }
        }
}

template <class T>
void conv3x3_forward(const Grid<T>& patches, int rows, int cols, const ConvStage<T>& s, Grid<T>& out) {
    out.reset(rows, cols, s.out_channels);
    const int P = rows * cols, K = 9 * s.in_channels;
    MatrixView<T> o(out.values.data(), P, s.out_channels);
    o.noalias() = ConstMatrixView<T>(patches.values.data(), P, K) *
                  ConstMatrixView<T>(s.weight.data(), K, s.out_channels);
    o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(s.bias.data(), s.out_channels);
}

// Accumulates weight/bias gradients into `g`; writes the input gradient into
// `grad_in` (shape rows x cols x in) when non-null, using `dcols` as scratch.
template <class T>
void conv3x3_backward(const Grid<T>& patches, const ConvStage<T>& s, const Grid<T>& grad_out, ConvStage<T>& g,
                      Grid<T>* grad_in, Grid<T>& dcols) {
    const int P = grad_out.rows * grad_out.cols, K = 9 * s.in_channels, co = s.out_channels;
    ConstMatrixView<T> go(grad_out.values.data(), P, co);
    ConstMatrixView<T> pm(patches.values.data(), P, K);
    MatrixView<T>(g.weight.data(), K, co).noalias() += pm.transpose() * go;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.bias.data(), co) += go.colwise().sum();
    if (grad_in) {
        dcols.reset(P, 1, K);
        MatrixView<T>(dcols.values.data(), P, K).noalias() = go * ConstMatrixView<T>(s.weight.data(), K, co).transpose();
        grad_in->reset(grad_out.rows, grad_out.cols, s.in_channels);
        col2im3x3_add(dcols, *grad_in);
    }
}

template <class T>
void elu_inplace(Grid<T>& g) {
    for (T& v : g.values)
        if (v <= T(0)) v = std::expm1(v);
}

template <class T>
Grid<T> avg_pool2(const Grid<T>& in) {
    Grid<T> out(in.rows / 2, in.cols / 2, in.channels);
    for (int y = 0; y < out.rows; ++y)
        for (int x = 0; x < out.cols; ++x) {
            T* o = out.cell(y, x);
            const T* a = in.cell(2 * y, 2 * x);
            const T* b = in.cell(2 * y, 2 * x + 1);
            const T* c = in.cell(2 * y + 1, 2 * x);
            const T* d = in.cell(2 * y + 1, 2 * x + 1);
            for (int ch = 0; ch < in.channels; ++ch) o[ch] = T(0.25) * (a[ch] + b[ch] + c[ch] + d[ch]);
        }
    return out;
}

}  // namespace detail

template <class T>
BackboneFeatures<T> toy_backbone_forward(const Grid<T>& image, const ToyBackbone<T>& net,
                                         BackboneTape<T>* tape = nullptr) {
    if (image.channels != net.in_channels)
        throw ShapeError("image has " + std::to_string(image.channels) + " channels, backbone expects " +
                         std::to_string(net.in_channels));
    if (image.rows % net.stride() != 0 || image.cols % net.stride() != 0)
        throw ShapeError("image " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                         " is not divisible by backbone stride " + std::to_string(net.stride()));
    const std::size_t n = net.stages.size();
    thread_local BackboneTape<T> local;
    BackboneTape<T>& t = tape ? *tape : local;
    t.patches.resize(n);
    t.activations.resize(n);
    Grid<T> x = image;
    for (std::size_t i = 0; i < n; ++i) {
        // Without a caller tape only one slot is needed.
        const std::size_t slot = tape ? i : 0;
        detail::im2col3x3(x, t.patches[slot]);
        detail::conv3x3_forward(t.patches[slot], x.rows, x.cols, net.stages[i], t.activations[slot]);
        detail::elu_inplace(t.activations[slot]);
        x = detail::avg_pool2(t.activations[slot]);
    }
    return {std::move(x)};
}

// Backpropagates d(loss)/d(features) through the stack, accumulating
// parameter gradients into `grads` (shaped like `net`).
template <class T>
void toy_backbone_backward(const ToyBackbone<T>& net, BackboneTape<T>& tape, Grid<T> grad, ToyBackbone<T>& grads) {
    for (int i = static_cast<int>(net.stages.size()) - 1; i >= 0; --i) {
        const Grid<T>& act = tape.activations[i];
        Grid<T>& gz = tape.grad_act;
        gz.reset(act.rows, act.cols, act.channels);
        for (int y = 0; y < act.rows; ++y)
            for (int x = 0; x < act.cols; ++x) {
                const T* gp = grad.cell(y / 2, x / 2);
                const T* a = act.cell(y, x);
                T* o = gz.cell(y, x);
                for (int ch = 0; ch < act.channels; ++ch) {
                    const T dact = a[ch] > T(0) ? T(1) : a[ch] + T(1);
                    o[ch] = T(0.25) * gp[ch] * dact;
                }
            }
        detail::conv3x3_backward(tape.patches[i], net.stages[i], gz, grads.stages[i], i > 0 ? &tape.grad_in : nullptr,
                                 tape.grad_patches);
        if (i > 0) std::swap(grad, tape.grad_in);
    }
}

// ---------------------------------------------------------------------------
// Full model

template <class T>
struct Model {
    ToyBackbone<T> backbone;
    LinearClassifier<T> classifier;
    std::optional<WslHead<T>> wsl;  // set once the WSL phase has run
    Pooling pooling = Pooling::Average;

    int num_classes() const { return classifier.classes; }
    bool is_wsl() const { return wsl.has_value(); }

    // Parameters of the active head.
    const LinearMap<T>& head() const {
        return wsl ? static_cast<const LinearMap<T>&>(*wsl) : static_cast<const LinearMap<T>&>(classifier);
    }
    LinearMap<T>& head() {
        return wsl ? static_cast<LinearMap<T>&>(*wsl) : static_cast<LinearMap<T>&>(classifier);
    }

    template <class U>
    Model<U> cast() const {
        Model<U> m;
        m.backbone = backbone.template cast<U>();
        static_cast<LinearMap<U>&>(m.classifier) = classifier.template cast<U>();
        if (wsl) {
            m.wsl.emplace();
            static_cast<LinearMap<U>&>(*m.wsl) = wsl->template cast<U>();
        }
        m.pooling = pooling;
        return m;
    }
};

template <class T>
Model<T> make_model(int in_channels, std::span<const int> widths, int num_classes, std::uint64_t seed) {
    Model<T> m;
    m.backbone = make_toy_backbone<T>(in_channels, widths, seed);
    const int d = m.backbone.output_depth();
    m.classifier = LinearClassifier<T>(d, num_classes);
    std::mt19937_64 rng(derive_seed(seed, "classifier-init"));
    std::normal_distribution<double> N(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (auto& w : m.classifier.weight) w = static_cast<T>(N(rng));
    return m;
}

template <class T>
Logits<T> head_logits(const Model<T>& m, const BackboneFeatures<T>& f) {
    if (m.wsl) return wsl_forward(f, *m.wsl, m.pooling).logits;
    return classify_pooled(f, m.classifier);
}

template <class T>
Logits<T> model_logits(const Model<T>& m, const Grid<T>& image) {
    return head_logits(m, toy_backbone_forward(image, m.backbone));
}

// Score maps for CAMs. A base-only model uses a head copied from its
// classifier, which yields identical logits.
template <class T>
ScoreMaps<T> model_score_maps(const Model<T>& m, const Grid<T>& image) {
    const BackboneFeatures<T> f = toy_backbone_forward(image, m.backbone);
    if (m.wsl) return score_maps(f, *m.wsl);
    return score_maps(f, init_wsl_from_base(m.classifier, f.depth()));
}

// Given dL/dlogits for one sample, accumulates head gradients into `gh` and
// returns dL/dfeatures.
template <class T>
Grid<T> head_backward(const Model<T>& m, const BackboneFeatures<T>& f, std::span<const T> dlogits, LinearMap<T>& gh) {
    const LinearMap<T>& h = m.head();
    const int R = f.rows(), C = f.cols(), D = f.depth(), K = h.classes;
    Grid<T> gf(R, C, D);
    for (int k = 0; k < K; ++k) gh.bias[k] += dlogits[k];

    if (!m.wsl || m.pooling == Pooling::Average) {
        const std::vector<T> pooled = spatial_mean(f.grid);
        std::vector<T> gpool(static_cast<std::size_t>(D), T{});
        for (int d = 0; d < D; ++d) {
            T acc = 0;
            for (int k = 0; k < K; ++k) {
                gh.weight[static_cast<std::size_t>(d) * K + k] += pooled[d] * dlogits[k];
                acc += h.w(d, k) * dlogits[k];
            }
            gpool[d] = acc / static_cast<T>(R * C);
        }
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) std::copy(gpool.begin(), gpool.end(), gf.cell(r, c));
        return gf;
    }

    // Max pooling: each class routes its gradient through its first argmax cell.
    const ScoreMaps<T> s = score_maps(f, *m.wsl);
    for (int k = 0; k < K; ++k) {
        int br = 0, bc = 0;
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                if (s.maps(r, c, k) > s.maps(br, bc, k)) br = r, bc = c;
        const T* x = f.grid.cell(br, bc);
        T* g = gf.cell(br, bc);
        for (int d = 0; d < D; ++d) {
            gh.weight[static_cast<std::size_t>(d) * K + k] += x[d] * dlogits[k];
            g[d] += h.w(d, k) * dlogits[k];
        }
    }
    return gf;
}

// Shape digest of a model: backbone widths, feature depth and class count.
template <class T>
std::uint64_t architecture_hash(const Model<T>& m) {
    Fnv1a h;
    std::string desc = "in=" + std::to_string(m.backbone.in_channels);
    for (const auto& s : m.backbone.stages) desc += ";conv3x3:" + std::to_string(s.out_channels);
    desc += ";d=" + std::to_string(m.classifier.depth) + ";k=" + std::to_string(m.classifier.classes);
    return h.update(desc).value();
}

template <class T>
std::uint64_t backbone_digest(const ToyBackbone<T>& b) {
    Fnv1a h;
    for (const auto& s : b.stages) h.update_values(s.weight).update_values(s.bias);
    return h.value();
}

template <class T>
std::uint64_t parameter_digest(const Model<T>& m) {
    Fnv1a h;
    h.update(hex64(backbone_digest(m.backbone)));
    h.update_values(m.classifier.weight).update_values(m.classifier.bias);
    if (m.wsl) h.update("wsl").update_values(m.wsl->weight).update_values(m.wsl->bias);
    return h.value();
}

}  // namespace wsl
