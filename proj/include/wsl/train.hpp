#pragma once

// Cross-entropy training of the base model and head-only fine-tuning of the
// WSL head, plus finite-difference verification of the analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "image_io.hpp"
#include "model.hpp"
#include "types.hpp"

namespace wsl {

// ---------------------------------------------------------------------------
// Loss

class NonFiniteLogitError : public Error {
public:
    using Error::Error;
};

// -log softmax(logits)[label], stabilized by subtracting the max logit.
template <class T>
double cross_entropy(std::span<const T> logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size())) throw ConfigError("label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) {
        if (!std::isfinite(v)) throw NonFiniteLogitError("non-finite logit");
        mx = std::max(mx, static_cast<double>(v));
    }
    double sum = 0.0;
    for (T v : logits) sum += std::exp(static_cast<double>(v) - mx);
    return mx + std::log(sum) - static_cast<double>(logits[label]);
}

template <class T>
double cross_entropy(const Logits<T>& logits, int label) {
    return cross_entropy(std::span<const T>(logits), label);
}

template <class T>
std::vector<double> softmax(std::span<const T> logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    for (double& v : p) v /= sum;
    return p;
}

// ---------------------------------------------------------------------------
// Configuration

enum class OptimizerKind { Adam, Sgd };
enum class Phase { Base, WslHeadOnly };

inline const char* to_string(OptimizerKind o) { return o == OptimizerKind::Adam ? "adam" : "sgd"; }
inline const char* to_string(Phase p) { return p == Phase::Base ? "base" : "wsl_head_only"; }

struct TrainConfig {
    int batch_size = 50;
    double lr_head = 1e-3;
    double lr_backbone = 1e-4;  // ignored in the WSL phase
    OptimizerKind optimizer = OptimizerKind::Adam;
    int epochs = 10;
    Phase phase = Phase::Base;
    std::uint64_t seed = 0;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.0;
    bool horizontal_flip = false;
    std::vector<int> backbone_widths{16, 32, 32};
    Pooling pooling = Pooling::Average;  // WSL phase only
    bool select_best_val = true;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(lr_head > 0.0)) throw ConfigError("lr_head must be > 0");
        if (phase == Phase::Base && !(lr_backbone > 0.0)) throw ConfigError("lr_backbone must be > 0");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
            throw ConfigError("Adam moment decays must be in [0, 1)");
        if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
    }

    nlohmann::json to_json() const {
        return {{"batch_size", batch_size},
                {"lr_head", lr_head},
                {"lr_backbone", lr_backbone},
                {"optimizer", to_string(optimizer)},
                {"epochs", epochs},
                {"phase", to_string(phase)},
                {"seed", seed},
                {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},
                {"adam_epsilon", adam_epsilon},
                {"weight_decay", weight_decay},
                {"horizontal_flip", horizontal_flip},
                {"backbone_widths", backbone_widths},
                {"pooling", to_string(pooling)},
                {"select_best_val", select_best_val}};
    }

    // Overlays the keys present in `j`; unknown keys are rejected.
    void apply_json(const nlohmann::json& j) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "batch_size") batch_size = v.get<int>();
            else if (k == "lr_head") lr_head = v.get<double>();
            else if (k == "lr_backbone") lr_backbone = v.get<double>();
            else if (k == "optimizer") {
                const auto s = v.get<std::string>();
                if (s == "adam") optimizer = OptimizerKind::Adam;
                else if (s == "sgd") optimizer = OptimizerKind::Sgd;
                else throw ConfigError("unknown optimizer '" + s + "'");
            } else if (k == "epochs") epochs = v.get<int>();
            else if (k == "phase") {
                const auto s = v.get<std::string>();
                if (s == "base") phase = Phase::Base;
                else if (s == "wsl_head_only" || s == "wsl") phase = Phase::WslHeadOnly;
                else throw ConfigError("unknown phase '" + s + "'");
            } else if (k == "seed") seed = v.get<std::uint64_t>();
            else if (k == "adam_beta1") adam_beta1 = v.get<double>();
            else if (k == "adam_beta2") adam_beta2 = v.get<double>();
            else if (k == "adam_epsilon") adam_epsilon = v.get<double>();
            else if (k == "weight_decay") weight_decay = v.get<double>();
            else if (k == "horizontal_flip") horizontal_flip = v.get<bool>();
            else if (k == "backbone_widths") backbone_widths = v.get<std::vector<int>>();
            else if (k == "pooling") pooling = parse_pooling(v.get<std::string>());
            else if (k == "select_best_val") select_best_val = v.get<bool>();
            else throw ConfigError("unknown training config key '" + k + "'");
        }
    }

    static TrainConfig from_json(const nlohmann::json& j, Phase phase = Phase::Base) {
        TrainConfig c;
        c.phase = phase;
        c.apply_json(j);
        c.validate();
        return c;
    }

    std::uint64_t hash() const { return Fnv1a{}.update(to_json().dump()).value(); }
};

inline TrainConfig default_wsl_config() {
    TrainConfig c;
    c.phase = Phase::WslHeadOnly;
    return c;
}

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_top1 = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
    Model<float> model;
    std::vector<std::string> label_space;
    TrainConfig config;
    int epoch = 0;  // epoch the parameters were taken from
    std::vector<EpochStats> history;
    int input_height = 0;
    int input_width = 0;
    std::string base_digest;  // parameter digest of the base checkpoint (WSL phase)
};

class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(const std::string& what, Checkpoint last_good)
        : Error(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return last_good_; }

private:
    Checkpoint last_good_;
};

// ---------------------------------------------------------------------------
// Gradients

template <class T>
struct Gradients {
    ToyBackbone<T> backbone;
    LinearMap<T> head;
};

template <class T>
Gradients<T> zero_gradients(const Model<T>& m) {
    return {m.backbone.zeros_like(), LinearMap<T>(m.head().depth, m.head().classes)};
}

// Mean cross-entropy over the batch. When `grads` is given, accumulates the
// gradient of the mean loss; backbone gradients only when `backbone_grads`.
template <class T>
double batch_loss(const Model<T>& m, std::span<const Grid<T>* const> images, std::span<const int> labels,
                  Gradients<T>* grads = nullptr, bool backbone_grads = true) {
    if (images.size() != labels.size() || images.empty()) throw ShapeError("batch images/labels mismatch");
    const T inv_b = T(1) / static_cast<T>(images.size());
    double total = 0.0;
    BackboneTape<T> tape;
    const bool need_tape = grads && backbone_grads && !m.backbone.stages.empty();
    for (std::size_t i = 0; i < images.size(); ++i) {
        BackboneFeatures<T> f = toy_backbone_forward(*images[i], m.backbone, need_tape ? &tape : nullptr);
        Logits<T> z = head_logits(m, f);
        total += cross_entropy(std::span<const T>(z), labels[i]);
        if (!grads) continue;
        std::vector<double> p = softmax(std::span<const T>(z));
        std::vector<T> dz(p.size());
        for (std::size_t k = 0; k < p.size(); ++k)
            dz[k] = static_cast<T>(p[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0)) * inv_b;
        Grid<T> gf = head_backward(m, f, std::span<const T>(dz), grads->head);
        if (need_tape) toy_backbone_backward(m.backbone, tape, std::move(gf), grads->backbone);
    }
    return total / static_cast<double>(images.size());
}

// Named views over matching parameter / gradient storage.
template <class T>
struct ParamBlock {
    std::string name;
    std::span<T> values;
    std::span<T> grads;
    bool backbone = false;
};

template <class T>
std::vector<ParamBlock<T>> param_blocks(Model<T>& m, Gradients<T>& g, bool include_backbone) {
    std::vector<ParamBlock<T>> blocks;
    if (include_backbone) {
        for (std::size_t i = 0; i < m.backbone.stages.size(); ++i) {
            auto& s = m.backbone.stages[i];
            auto& gs = g.backbone.stages[i];
            blocks.push_back({"conv" + std::to_string(i + 1) + ".weight", s.weight, gs.weight, true});
            blocks.push_back({"conv" + std::to_string(i + 1) + ".bias", s.bias, gs.bias, true});
        }
    }
    auto& h = m.head();
    const std::string prefix = m.is_wsl() ? "wsl_head" : "classifier";
    blocks.push_back({prefix + ".weight", h.weight, g.head.weight, false});
    blocks.push_back({prefix + ".bias", h.bias, g.head.bias, false});
    return blocks;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckOptions {
    double epsilon = 1e-4;
    std::size_t backbone_samples_per_tensor = 24;  // random subsample of each backbone tensor
    std::uint64_t seed = 0;
    bool include_backbone = true;
};

struct GradCheckBlock {
    std::string name;
    std::vector<std::size_t> indices;
    std::vector<double> analytic;
    std::vector<double> numeric;
    double relative_error = 0.0;  // ||a - n|| / max(||a||, ||n||)
    double max_abs_diff = 0.0;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t parameters_checked = 0;
    std::vector<GradCheckBlock> blocks;
};

// Central differences on every head parameter and a random subsample of
// backbone parameters, compared blockwise with the analytic gradient.
inline GradCheckReport grad_check(Model<double> model, std::span<const Grid<double>> batch, std::span<const int> labels,
                                  const GradCheckOptions& opt = {}) {
    if (!(opt.epsilon >= 1e-6 && opt.epsilon <= 1e-3)) throw ConfigError("epsilon must be in [1e-6, 1e-3]");
    std::vector<const Grid<double>*> ptrs;
    for (const auto& g : batch) ptrs.push_back(&g);
    const std::span<const Grid<double>* const> images(ptrs);

    Gradients<double> grads = zero_gradients(model);
    batch_loss(model, images, labels, &grads, opt.include_backbone);

    std::mt19937_64 rng(derive_seed(opt.seed, "grad-check"));
    GradCheckReport report;
    for (auto& block : param_blocks(model, grads, opt.include_backbone)) {
        GradCheckBlock out;
        out.name = block.name;
        out.indices = block.backbone && block.values.size() > opt.backbone_samples_per_tensor
                          ? sample_without_replacement(block.values.size(), opt.backbone_samples_per_tensor, rng())
                          : [&] {
                                std::vector<std::size_t> all(block.values.size());
                                std::iota(all.begin(), all.end(), std::size_t{0});
                                return all;
                            }();
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t idx : out.indices) {
            double& p = block.values[idx];
            const double saved = p;
            p = saved + opt.epsilon;
            const double up = batch_loss(model, images, labels);
            p = saved - opt.epsilon;
            const double down = batch_loss(model, images, labels);
            p = saved;
            const double numeric = (up - down) / (2.0 * opt.epsilon);
            const double analytic = block.grads[idx];
            out.analytic.push_back(analytic);
            out.numeric.push_back(numeric);
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            out.max_abs_diff = std::max(out.max_abs_diff, std::abs(analytic - numeric));
        }
        const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
        out.relative_error = denom > 1e-12 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
        report.max_relative_error = std::max(report.max_relative_error, out.relative_error);
        report.parameters_checked += out.indices.size();
        report.blocks.push_back(std::move(out));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
class Optimizer {
public:
    explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

    void step(std::vector<ParamBlock<T>>& blocks) {
        if (moments_.empty()) {
            for (const auto& b : blocks)
                moments_.push_back({std::vector<double>(b.values.size(), 0.0), std::vector<double>(b.values.size(), 0.0)});
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_), c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            auto& b = blocks[bi];
            auto& [m, v] = moments_[bi];
            const double lr = b.backbone ? cfg_.lr_backbone : cfg_.lr_head;
            for (std::size_t i = 0; i < b.values.size(); ++i) {
                const double g = static_cast<double>(b.grads[i]) + cfg_.weight_decay * b.values[i];
                if (cfg_.optimizer == OptimizerKind::Sgd) {
                    b.values[i] = static_cast<T>(b.values[i] - lr * g);
                    continue;
                }
                m[i] = cfg_.adam_beta1 * m[i] + (1.0 - cfg_.adam_beta1) * g;
                v[i] = cfg_.adam_beta2 * v[i] + (1.0 - cfg_.adam_beta2) * g * g;
                const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_epsilon);
                b.values[i] = static_cast<T>(b.values[i] - lr * update);
            }
        }
    }

private:
    TrainConfig cfg_;
    long long t_ = 0;
    std::vector<std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// ---------------------------------------------------------------------------
// Evaluation helpers shared with the eval module

inline std::vector<Logits<float>> predict_logits(const Model<float>& m, const DatasetManifest& data, ImageStore& store) {
    std::vector<Logits<float>> out;
    out.reserve(data.size());
    for (const auto& r : data.records) out.push_back(model_logits(m, store.tensor(r)));
    return out;
}

// Index of the largest logit, lowest index on ties.
template <class T>
int argmax(std::span<const T> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

namespace detail {

struct SplitStats {
    double loss = 0.0;
    double top1 = 0.0;
};

inline SplitStats logits_stats(const std::vector<Logits<float>>& logits, const DatasetManifest& data) {
    SplitStats s;
    if (data.records.empty()) return s;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        s.loss += cross_entropy(logits[i], data.records[i].label);
        if (argmax(std::span<const float>(logits[i])) == data.records[i].label) ++correct;
    }
    s.loss /= static_cast<double>(logits.size());
    s.top1 = static_cast<double>(correct) / static_cast<double>(logits.size());
    return s;
}

inline Grid<float> hflip(const Grid<float>& g) {
    Grid<float> out(g.rows, g.cols, g.channels);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) std::copy_n(g.cell(r, g.cols - 1 - c), g.channels, out.cell(r, c));
    return out;
}

inline void check_input_shapes(const DatasetManifest& data, int& h, int& w) {
    for (const auto& r : data.records) {
        if (h == 0) h = r.height, w = r.width;
        if (r.height != h || r.width != w)
            throw ShapeError("record '" + r.id + "' is " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                             ", expected " + std::to_string(w) + "x" + std::to_string(h));
    }
}

// Epoch loop shared by both phases. `loss_fn` computes the mean loss of a
// batch (given as record indices) and its gradients; `eval_fn` returns val
// stats for the current parameters.
template <class LossFn, class EvalFn, class TrainLossFn>
void run_epochs(Checkpoint& ckpt, const TrainConfig& cfg, std::size_t n_train, bool include_backbone,
                      bool have_val, LossFn&& loss_fn, EvalFn&& eval_fn, TrainLossFn&& full_train_loss,
                      const std::function<void(const EpochStats&)>& on_epoch) {
    Model<float>& model = ckpt.model;
    Gradients<float> grads = zero_gradients(model);
    Optimizer<float> opt(cfg);

    auto record = [&](int epoch, double train_loss) {
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = train_loss;
        if (have_val) {
            auto v = eval_fn();
            st.val_loss = v.loss;
            st.val_top1 = v.top1;
        }
        ckpt.history.push_back(st);
        if (on_epoch) on_epoch(st);
        return st;
    };

    ckpt.epoch = 0;
    EpochStats best_stats = record(0, full_train_loss());
    Model<float> best = model;
    Checkpoint last_good = ckpt;

    std::vector<std::size_t> order(n_train);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> batch(order.data() + start, end - start);
            grads = zero_gradients(model);
            double loss;
            try {
                loss = loss_fn(batch, grads, epoch);
            } catch (const NonFiniteLogitError&) {
                loss = std::numeric_limits<double>::quiet_NaN();
            }
            if (!std::isfinite(loss)) {
                throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                             std::to_string(start),
                                         last_good);
            }
            loss_sum += loss * static_cast<double>(batch.size());
            auto blocks = param_blocks(model, grads, include_backbone);
            opt.step(blocks);
        }
        ckpt.epoch = epoch;
        EpochStats st = record(epoch, loss_sum / static_cast<double>(n_train));
        last_good = ckpt;
        const bool better = !have_val || !cfg.select_best_val || st.val_top1 > best_stats.val_top1 ||
                            (st.val_top1 == best_stats.val_top1 && st.val_loss < best_stats.val_loss);
        if (better) {
            best_stats = st;
            best = model;
        }
    }
    ckpt.model = std::move(best);
    ckpt.epoch = best_stats.epoch;
}

}  // namespace detail

struct TrainHooks {
    std::function<void(const EpochStats&)> on_epoch;
    const Model<float>* initial = nullptr;  // pre-trained starting point for the base phase
};

// Phase 1: backbone at lr_backbone, classifier at lr_head. With a validation
// manifest and select_best_val, returns the parameters of the best epoch
// (epoch 0 = initialization included).
inline Checkpoint train_base(const DatasetManifest& data, ImageStore& store, const TrainConfig& cfg,
                             const DatasetManifest* val = nullptr, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (cfg.phase != Phase::Base) throw ConfigError("train_base requires phase=base");
    if (data.records.empty()) throw ConfigError("training manifest is empty");
    if (val && val->label_space != data.label_space) throw ConfigError("validation label space differs");

    Checkpoint ckpt;
    ckpt.label_space = data.label_space;
    ckpt.config = cfg;
    detail::check_input_shapes(data, ckpt.input_height, ckpt.input_width);
    if (val) detail::check_input_shapes(*val, ckpt.input_height, ckpt.input_width);
    const int channels = store.tensor(data.records.front()).channels;
    if (hooks.initial) {
        ckpt.model = *hooks.initial;
        if (ckpt.model.num_classes() != data.num_classes()) throw ShapeError("initial model class count differs");
        ckpt.model.wsl.reset();
    } else {
        ckpt.model = make_model<float>(channels, cfg.backbone_widths, data.num_classes(), cfg.seed);
    }
    Model<float>& model = ckpt.model;

    auto loss_fn = [&](std::span<const std::size_t> batch, Gradients<float>& grads, int epoch) {
        std::vector<Grid<float>> flipped;
        std::vector<const Grid<float>*> imgs;
        std::vector<int> labels;
        flipped.reserve(batch.size());
        for (std::size_t i : batch) {
            const ImageRecord& r = data.records[i];
            const Grid<float>* t = &store.tensor(r);
            if (cfg.horizontal_flip) {
                std::mt19937_64 frng(derive_seed(cfg.seed, "flip", static_cast<std::uint64_t>(epoch) * 1000003ULL + i));
                if (frng() & 1ULL) {
                    flipped.push_back(detail::hflip(*t));
                    t = &flipped.back();
                }
            }
            imgs.push_back(t);
            labels.push_back(r.label);
        }
        return batch_loss<float>(model, imgs, labels, &grads, true);
    };
    auto eval_fn = [&] { return detail::logits_stats(predict_logits(model, *val, store), *val); };
    auto train_loss_fn = [&] { return detail::logits_stats(predict_logits(model, data, store), data).loss; };
    detail::run_epochs(ckpt, cfg, data.size(), true, val != nullptr, loss_fn, eval_fn, train_loss_fn, hooks.on_epoch);
    return ckpt;
}

// Phase 2: the WSL head starts as a copy of the base classifier and only the
// head is updated (lr_head); backbone parameters are never written.
inline Checkpoint train_wsl(const Checkpoint& base, const DatasetManifest& data, ImageStore& store,
                            const TrainConfig& cfg, const DatasetManifest* val = nullptr, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (cfg.phase != Phase::WslHeadOnly) throw ConfigError("train_wsl requires phase=wsl_head_only");
    if (data.records.empty()) throw ConfigError("training manifest is empty");
    if (data.label_space != base.label_space) throw ShapeError("data label space differs from base checkpoint");
    int h = base.input_height, w = base.input_width;
    detail::check_input_shapes(data, h, w);
    if (val) detail::check_input_shapes(*val, h, w);

    Checkpoint ckpt;
    ckpt.label_space = base.label_space;
    ckpt.config = cfg;
    ckpt.input_height = base.input_height;
    ckpt.input_width = base.input_width;
    ckpt.model = base.model;
    ckpt.base_digest = hex64(parameter_digest(base.model));
    const int depth = ckpt.model.backbone.output_depth();
    ckpt.model.wsl = init_wsl_from_base(base.model.classifier, depth);
    ckpt.model.pooling = cfg.pooling;
    const std::uint64_t frozen = backbone_digest(ckpt.model.backbone);

    // The backbone is frozen, so features are computed once per image
    // (twice with flipping).
    auto features_of = [&](const DatasetManifest& m, bool flip) {
        std::vector<BackboneFeatures<float>> f;
        f.reserve(m.size());
        for (const auto& r : m.records) {
            const Grid<float>& t = store.tensor(r);
            f.push_back(toy_backbone_forward(flip ? detail::hflip(t) : t, base.model.backbone));
        }
        return f;
    };
    const auto train_feats = features_of(data, false);
    const auto train_feats_flip = cfg.horizontal_flip ? features_of(data, true) : decltype(train_feats){};
    const auto val_feats = val ? features_of(*val, false) : decltype(train_feats){};
    Model<float>& model = ckpt.model;

    auto head_stats = [&](const std::vector<BackboneFeatures<float>>& feats, const DatasetManifest& m) {
        std::vector<Logits<float>> logits;
        logits.reserve(feats.size());
        for (const auto& f : feats) logits.push_back(head_logits(model, f));
        return detail::logits_stats(logits, m);
    };
    auto loss_fn = [&](std::span<const std::size_t> batch, Gradients<float>& grads, int epoch) {
        const float inv_b = 1.0f / static_cast<float>(batch.size());
        double total = 0.0;
        for (std::size_t i : batch) {
            const BackboneFeatures<float>* f = &train_feats[i];
            if (cfg.horizontal_flip) {
                std::mt19937_64 frng(derive_seed(cfg.seed, "flip", static_cast<std::uint64_t>(epoch) * 1000003ULL + i));
                if (frng() & 1ULL) f = &train_feats_flip[i];
            }
            const Logits<float> z = head_logits(model, *f);
            const int label = data.records[i].label;
            total += cross_entropy(z, label);
            std::vector<double> p = softmax(std::span<const float>(z));
            std::vector<float> dz(p.size());
            for (std::size_t k = 0; k < p.size(); ++k)
                dz[k] = static_cast<float>(p[k] - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_b;
            head_backward(model, *f, std::span<const float>(dz), grads.head);
        }
        return total / static_cast<double>(batch.size());
    };
    auto eval_fn = [&] { return head_stats(val_feats, *val); };
    auto train_loss_fn = [&] { return head_stats(train_feats, data).loss; };
    detail::run_epochs(ckpt, cfg, data.size(), false, val != nullptr, loss_fn, eval_fn, train_loss_fn, hooks.on_epoch);
    if (backbone_digest(ckpt.model.backbone) != frozen) throw Error("backbone parameters changed during WSL phase");
    return ckpt;
}

}  // namespace wsl
