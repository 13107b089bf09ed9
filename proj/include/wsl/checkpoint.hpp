#pragma once

// Checkpoint container: a versioned JSON document holding backbone
// parameters, classifier / WSL head, label space, the training config and an
// architecture hash that must match the stored parameter shapes on load.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>

#include <json.hpp>

#include "train.hpp"

namespace wsl {

namespace detail {

inline nlohmann::json linear_to_json(const LinearMap<float>& m) {
    return {{"depth", m.depth}, {"classes", m.classes}, {"weight", m.weight}, {"bias", m.bias}};
}

inline void linear_from_json(const nlohmann::json& j, LinearMap<float>& m) {
    m = LinearMap<float>(j.at("depth").get<int>(), j.at("classes").get<int>());
    auto w = j.at("weight").get<std::vector<float>>();
    auto b = j.at("bias").get<std::vector<float>>();
    if (w.size() != m.weight.size() || b.size() != m.bias.size()) throw ShapeError("linear layer size mismatch");
    m.weight = std::move(w);
    m.bias = std::move(b);
}

inline nlohmann::json nan_to_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
inline double null_to_nan(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : c.model.backbone.stages)
        stages.push_back({{"in", s.in_channels}, {"out", s.out_channels}, {"weight", s.weight}, {"bias", s.bias}});
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : c.history)
        history.push_back({{"epoch", h.epoch}, {"train_loss", detail::nan_to_null(h.train_loss)},
                           {"val_loss", detail::nan_to_null(h.val_loss)}, {"val_top1", detail::nan_to_null(h.val_top1)}});
    nlohmann::json j = {
        {"format", "wsl-checkpoint"},
        {"version", 1},
        {"architecture_hash", hex64(architecture_hash(c.model))},
        {"parameter_digest", hex64(parameter_digest(c.model))},
        {"config_hash", hex64(c.config.hash())},
        {"input", {{"height", c.input_height}, {"width", c.input_width}, {"channels", c.model.backbone.in_channels}}},
        {"label_space", c.label_space},
        {"backbone", stages},
        {"classifier", detail::linear_to_json(c.model.classifier)},
        {"wsl_head", c.model.wsl ? detail::linear_to_json(*c.model.wsl) : nlohmann::json(nullptr)},
        {"pooling", to_string(c.model.pooling)},
        {"config", c.config.to_json()},
        {"epoch", c.epoch},
        {"history", history},
        {"base_digest", c.base_digest},
    };
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "wsl-checkpoint") throw Error("not a wsl checkpoint");
    if (j.value("version", 0) != 1) throw Error("unsupported checkpoint version");
    Checkpoint c;
    try {
        c.label_space = j.at("label_space").get<std::vector<std::string>>();
        c.input_height = j.at("input").at("height").get<int>();
        c.input_width = j.at("input").at("width").get<int>();
        c.model.backbone.in_channels = j.at("input").at("channels").get<int>();
        for (const auto& s : j.at("backbone")) {
            ConvStage<float> st(s.at("in").get<int>(), s.at("out").get<int>());
            auto w = s.at("weight").get<std::vector<float>>();
            auto b = s.at("bias").get<std::vector<float>>();
            if (w.size() != st.weight.size() || b.size() != st.bias.size()) throw ShapeError("conv stage size mismatch");
            st.weight.assign(w.begin(), w.end());
            st.bias.assign(b.begin(), b.end());
            c.model.backbone.stages.push_back(std::move(st));
        }
        detail::linear_from_json(j.at("classifier"), c.model.classifier);
        if (!j.at("wsl_head").is_null()) {
            c.model.wsl.emplace();
            detail::linear_from_json(j.at("wsl_head"), *c.model.wsl);
        }
        c.model.pooling = parse_pooling(j.at("pooling").get<std::string>());
        c.config = TrainConfig::from_json(j.at("config"), j.at("config").at("phase").get<std::string>() == "base"
                                                              ? Phase::Base
                                                              : Phase::WslHeadOnly);
        c.epoch = j.at("epoch").get<int>();
        for (const auto& h : j.at("history"))
            c.history.push_back({h.at("epoch").get<int>(), detail::null_to_nan(h.at("train_loss")),
                                 detail::null_to_nan(h.at("val_loss")), detail::null_to_nan(h.at("val_top1"))});
        c.base_digest = j.value("base_digest", "");
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed checkpoint: ") + e.what());
    }
    if (j.at("architecture_hash").get<std::string>() != hex64(architecture_hash(c.model)))
        throw ShapeError("checkpoint architecture hash does not match stored parameter shapes");
    if (c.model.classifier.depth != c.model.backbone.output_depth() ||
        c.model.classifier.classes != static_cast<int>(c.label_space.size()))
        throw ShapeError("checkpoint classifier shape inconsistent with backbone / label space");
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(c).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

// epoch,train_loss,val_loss,val_top1 (empty cells when no validation set).
inline void write_loss_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    auto cell = [](double v) {
        if (std::isnan(v)) return std::string();
        std::ostringstream s;
        s << std::setprecision(9) << v;
        return s.str();
    };
    out << "epoch,train_loss,val_loss,val_top1\n";
    for (const auto& h : history)
        out << h.epoch << ',' << cell(h.train_loss) << ',' << cell(h.val_loss) << ',' << cell(h.val_top1) << '\n';
}

}  // namespace wsl
