#pragma once

// Accuracy metrics, confusion analysis, and the curated/uncurated mixing
// sweep with its CSV / SVG report.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "image_io.hpp"
#include "train.hpp"
#include "types.hpp"

namespace wsl {

// True label counts as a top-k hit when fewer than k classes outrank it;
// a class outranks another with a larger logit, or an equal logit and a
// lower index.
template <class T>
bool in_top_k(std::span<const T> logits, int label, int k) {
    int ahead = 0;
    for (int j = 0; j < static_cast<int>(logits.size()); ++j)
        if (logits[j] > logits[label] || (logits[j] == logits[label] && j < label)) ++ahead;
    return ahead < k;
}

template <class T>
double topk_accuracy(const std::vector<std::vector<T>>& rows, const std::vector<int>& labels, int k) {
    if (rows.empty()) throw ConfigError("topk_accuracy needs at least one row");
    if (rows.size() != labels.size()) throw ShapeError("rows and labels differ in length");
    if (k < 1) throw ConfigError("k must be >= 1");
    const int K = static_cast<int>(rows.front().size());
    if (k > K) throw ConfigError("k=" + std::to_string(k) + " exceeds the number of classes " + std::to_string(K));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<int>(rows[i].size()) != K) throw ShapeError("ragged logit rows");
        if (labels[i] < 0 || labels[i] >= K) throw ConfigError("label out of range");
        if (in_top_k(std::span<const T>(rows[i]), labels[i], k)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

struct ConfusionMatrix {
    int classes = 0;
    std::vector<long long> counts;  // row = true class, column = predicted

    long long operator()(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * classes + pred]; }
    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }
    long long trace() const {
        long long t = 0;
        for (int i = 0; i < classes; ++i) t += (*this)(i, i);
        return t;
    }
    long long support(int truth) const {
        long long t = 0;
        for (int j = 0; j < classes; ++j) t += (*this)(truth, j);
        return t;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels, int K) {
    if (preds.size() != labels.size()) throw ShapeError("preds and labels differ in length");
    if (K < 1) throw ConfigError("K must be >= 1");
    ConfusionMatrix cm{K, std::vector<long long>(static_cast<std::size_t>(K) * K, 0)};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= K || labels[i] < 0 || labels[i] >= K)
            throw ConfigError("class index out of range at position " + std::to_string(i));
        ++cm.counts[static_cast<std::size_t>(labels[i]) * K + preds[i]];
    }
    return cm;
}

struct EvalResult {
    double top1 = 0.0;
    double topk = 0.0;
    int k = 5;
    ConfusionMatrix confusion;
};

inline EvalResult evaluate(const Model<float>& m, const DatasetManifest& data, ImageStore& store, int k = 5) {
    const auto logits = predict_logits(m, data, store);
    std::vector<int> labels, preds;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        labels.push_back(data.records[i].label);
        preds.push_back(argmax(std::span<const float>(logits[i])));
    }
    EvalResult r;
    r.k = std::min(k, data.num_classes());
    r.top1 = topk_accuracy(logits, labels, 1);
    r.topk = topk_accuracy(logits, labels, r.k);
    r.confusion = confusion_matrix(preds, labels, data.num_classes());
    return r;
}

// ---------------------------------------------------------------------------
// Mixing sweep

struct SweepRow {
    std::string description;
    std::size_t train_size = 0;
    std::string type;  // N, C or N+C
    bool with_wsl = false;
    std::size_t curated_images = 0;
    double top1 = 0.0;
    double top5 = 0.0;
    std::string base_digest;  // shared by the paired with/without-WSL rows

    bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    bool partial = false;
    std::string error;
    nlohmann::json provenance;
};

struct SweepPlan {
    std::vector<MixSpec> specs;
    ManifestCatalog catalog;
    TrainConfig base_config;
    TrainConfig wsl_config = default_wsl_config();
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    int topk = 5;
};

// One spec per fraction: the whole pool plus that fraction of the curated set.
inline std::vector<MixSpec> curated_fraction_specs(const std::string& pool, const std::string& curated,
                                                   const std::vector<double>& fractions, std::uint64_t seed) {
    std::vector<MixSpec> specs;
    for (double f : fractions) {
        MixSpec s;
        std::ostringstream d;
        d << pool << " + " << f << " " << curated;
        s.description = d.str();
        s.components.push_back({pool, 1.0, derive_seed(seed, "mix/" + pool)});
        s.components.push_back({curated, f, derive_seed(seed, "mix/" + curated)});
        specs.push_back(std::move(s));
    }
    return specs;
}

inline nlohmann::json sweep_provenance(const SweepPlan& plan) {
    nlohmann::json specs = nlohmann::json::array();
    for (const auto& s : plan.specs) specs.push_back(mix_spec_to_json(s));
    nlohmann::json manifests = nlohmann::json::object();
    for (const auto& [name, m] : plan.catalog) manifests[name] = {{"records", m.size()}, {"name", m.name}};
    return {{"seed", plan.seed},
            {"val_fraction", plan.val_fraction},
            {"topk", plan.topk},
            {"base_config", plan.base_config.to_json()},
            {"wsl_config", plan.wsl_config.to_json()},
            {"specs", specs},
            {"manifests", manifests}};
}

// Sweep config file (JSON):
//   {"manifests": {"noisy": "noisy/manifest.jsonl", "curated": "curated/manifest.jsonl"},
//    "specs": [<mix spec>, ...],
//    "curated_fraction": {"pool": "noisy", "curated": "curated", "fractions": [0, 0.25, 0.5, 0.75, 1]},
//    "base_config": {...}, "wsl_config": {...},
//    "val_fraction": 0.1, "seed": 0, "topk": 5}
// "specs" and "curated_fraction" may both be present; explicit specs come first.
// Relative manifest paths resolve against `base_dir`.
inline nlohmann::json resolve_sweep_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    static const std::set<std::string> known{"manifests", "specs",  "curated_fraction", "base_config",
                                             "wsl_config", "val_fraction", "seed", "topk"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown sweep config key '" + it.key() + "'");
    if (!j.contains("manifests") || !j.at("manifests").is_object()) throw ConfigError("sweep config needs a manifests object");
    if (!j.contains("specs") && !j.contains("curated_fraction")) throw ConfigError("sweep config lists no specs");
    nlohmann::json r = j;
    for (auto& [name, path] : r["manifests"].items()) {
        std::filesystem::path p = path.get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        path = std::filesystem::absolute(p).lexically_normal().string();
    }
    TrainConfig base;
    if (j.contains("base_config")) base.apply_json(j.at("base_config"));
    base.phase = Phase::Base;
    TrainConfig wsl = default_wsl_config();
    if (j.contains("wsl_config")) wsl.apply_json(j.at("wsl_config"));
    wsl.phase = Phase::WslHeadOnly;
    r["base_config"] = base.to_json();
    r["wsl_config"] = wsl.to_json();
    r["val_fraction"] = j.value("val_fraction", 0.1);
    r["seed"] = j.value("seed", std::uint64_t{0});
    r["topk"] = j.value("topk", 5);
    return r;
}

// Builds a plan from a resolved config, loading every listed manifest.
inline SweepPlan sweep_plan_from_json(const nlohmann::json& resolved) {
    SweepPlan plan;
    try {
        plan.seed = resolved.at("seed").get<std::uint64_t>();
        plan.val_fraction = resolved.at("val_fraction").get<double>();
        plan.topk = resolved.at("topk").get<int>();
        plan.base_config = TrainConfig::from_json(resolved.at("base_config"), Phase::Base);
        plan.wsl_config = TrainConfig::from_json(resolved.at("wsl_config"), Phase::WslHeadOnly);
        if (resolved.contains("specs"))
            for (const auto& s : resolved.at("specs")) plan.specs.push_back(mix_spec_from_json(s));
        if (resolved.contains("curated_fraction")) {
            const auto& cf = resolved.at("curated_fraction");
            auto more = curated_fraction_specs(cf.at("pool").get<std::string>(), cf.at("curated").get<std::string>(),
                                               cf.at("fractions").get<std::vector<double>>(), plan.seed);
            plan.specs.insert(plan.specs.end(), more.begin(), more.end());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed sweep config: ") + e.what());
    }
    if (plan.specs.empty()) throw ConfigError("sweep config lists no specs");
    if (!(plan.val_fraction > 0.0 && plan.val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
    if (plan.topk < 1) throw ConfigError("topk must be >= 1");
    plan.catalog = load_catalog(resolved.at("manifests"), {});
    for (const auto& s : plan.specs)
        for (const auto& c : s.components)
            if (!plan.catalog.count(c.manifest))
                throw ConfigError("spec '" + s.description + "' references unknown manifest '" + c.manifest + "'");
    return plan;
}

using SweepLog = std::function<void(const std::string&)>;

// For every spec: compose, split off validation data, train the base model,
// evaluate, run the WSL phase from that checkpoint, evaluate again. Each spec
// trains from the same initialization seed. A failure stops the sweep and
// returns the rows completed so far, marked partial.
inline SweepResult run_mixing_sweep(const SweepPlan& plan, const DatasetManifest& test, ImageStore& store,
                                    const SweepLog& log = {}) {
    SweepResult result;
    result.provenance = sweep_provenance(plan);
    for (const auto& [name, m] : plan.catalog)
        if (m.label_space != test.label_space)
            throw ConfigError("manifest '" + name + "' label space differs from the test set");
    try {
        for (std::size_t i = 0; i < plan.specs.size(); ++i) {
            const MixSpec& spec = plan.specs[i];
            const DatasetManifest mixed = compose_mix(spec, plan.catalog);
            const TrainValSplit split = split_train_val(mixed, plan.val_fraction, derive_seed(plan.seed, "sweep-split"));
            if (log) log("[" + std::to_string(i + 1) + "/" + std::to_string(plan.specs.size()) + "] " + spec.description +
                         ": " + std::to_string(split.train.size()) + " train / " + std::to_string(split.val.size()) +
                         " val");

            SweepRow row;
            row.description = spec.description;
            row.train_size = mixed.size();
            row.type = dataset_type_tag(mixed);
            row.curated_images = count_curated(mixed);

            const Checkpoint base = train_base(split.train, store, plan.base_config, &split.val);
            row.base_digest = hex64(parameter_digest(base.model));
            EvalResult e = evaluate(base.model, test, store, plan.topk);
            row.with_wsl = false;
            row.top1 = e.top1;
            row.top5 = e.topk;
            result.rows.push_back(row);
            if (log) log("    without WSL: top-1 " + std::to_string(e.top1));

            const Checkpoint wsl = train_wsl(base, split.train, store, plan.wsl_config, &split.val);
            e = evaluate(wsl.model, test, store, plan.topk);
            row.with_wsl = true;
            row.top1 = e.top1;
            row.top5 = e.topk;
            result.rows.push_back(row);
            if (log) log("    with WSL:    top-1 " + std::to_string(e.top1));
        }
    } catch (const std::exception& ex) {
        result.partial = true;
        result.error = ex.what();
    }
    return result;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> cells(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cells.back() += '"', ++i;
            else if (c == '"') quoted = false;
            else cells.back() += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.emplace_back();
        } else {
            cells.back() += c;
        }
    }
    return cells;
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw Error("bad number '" + s + "' in CSV");
    return v;
}

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

}  // namespace detail

inline constexpr const char* kResultsHeader = "dataset,num_images,type,variant,curated_images,top1,top5,base_digest";

inline void write_results_csv(std::ostream& out, const SweepResult& r) {
    out << kResultsHeader << '\n';
    for (const auto& row : r.rows)
        out << detail::csv_quote(row.description) << ',' << row.train_size << ',' << row.type << ','
            << (row.with_wsl ? "with_wsl" : "without_wsl") << ',' << row.curated_images << ','
            << detail::fmt_double(row.top1) << ',' << detail::fmt_double(row.top5) << ',' << row.base_digest << '\n';
}

inline std::vector<SweepRow> parse_results_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kResultsHeader) throw Error("not a sweep results CSV");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = detail::csv_split(line);
        if (c.size() != 8) throw Error("malformed results row: " + line);
        SweepRow r;
        r.description = c[0];
        r.train_size = static_cast<std::size_t>(std::stoull(c[1]));
        r.type = c[2];
        if (c[3] != "with_wsl" && c[3] != "without_wsl") throw Error("bad variant '" + c[3] + "'");
        r.with_wsl = c[3] == "with_wsl";
        r.curated_images = static_cast<std::size_t>(std::stoull(c[4]));
        r.top1 = detail::parse_double(c[5]);
        r.top5 = detail::parse_double(c[6]);
        r.base_digest = c[7];
        rows.push_back(std::move(r));
    }
    return rows;
}

// Paired layout: one line per dataset composition, top-1 without / with WSL.
inline void write_table_csv(std::ostream& out, const SweepResult& r) {
    out << "dataset,num_images,type,without_wsl,with_wsl,wsl_wins\n";
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const SweepRow& a = r.rows[i];
        if (a.with_wsl) continue;
        const SweepRow* b = nullptr;
        for (std::size_t j = i + 1; j < r.rows.size() && !b; ++j)
            if (r.rows[j].with_wsl && r.rows[j].description == a.description) b = &r.rows[j];
        out << detail::csv_quote(a.description) << ',' << a.train_size << ',' << a.type << ','
            << detail::fmt_double(a.top1) << ',' << (b ? detail::fmt_double(b->top1) : "") << ','
            << (b ? (b->top1 > a.top1 ? "yes" : (b->top1 == a.top1 ? "tie" : "no")) : "") << '\n';
    }
}

// Line plot of top-1 versus the number of curated images, one series per
// variant.
inline std::string accuracy_plot_svg(const SweepResult& r) {
    const double W = 640, H = 420, L = 70, R = 20, T = 30, B = 60;
    double xmax = 1;
    for (const auto& row : r.rows) xmax = std::max(xmax, static_cast<double>(row.curated_images));
    auto px = [&](double x) { return L + (W - L - R) * x / xmax; };
    auto py = [&](double y) { return H - B - (H - T - B) * y; };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 10; t += 2) {
        s << "<text x=\"" << L - 8 << "\" y=\"" << py(t / 10.0) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
          << t * 10 << "%</text>\n";
    }
    s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 20 << "\" font-size=\"13\" text-anchor=\"middle\">"
      << "curated images added</text>\n"
      << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (T + H - B) / 2 << ")\">top-1 accuracy</text>\n";
    const char* colors[2] = {"#1f77b4", "#d62728"};
    const char* names[2] = {"without WSL", "with WSL"};
    for (int v = 0; v < 2; ++v) {
        std::ostringstream pts;
        for (const auto& row : r.rows) {
            if (row.with_wsl != (v == 1)) continue;
            pts << px(static_cast<double>(row.curated_images)) << ',' << py(row.top1) << ' ';
            s << "<circle cx=\"" << px(static_cast<double>(row.curated_images)) << "\" cy=\"" << py(row.top1)
              << "\" r=\"3\" fill=\"" << colors[v] << "\"/>\n";
        }
        s << "<polyline fill=\"none\" stroke=\"" << colors[v] << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n"
          << "<text x=\"" << W - R - 110 << "\" y=\"" << T + 16 * (v + 1) << "\" font-size=\"12\" fill=\"" << colors[v]
          << "\">" << detail::svg_escape(names[v]) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

struct ReportFiles {
    std::filesystem::path results_csv, table_csv, plot_svg;
};

inline ReportFiles emit_report(const SweepResult& r, const std::filesystem::path& dir) {
    if (r.rows.empty()) throw Error("sweep result has no rows; nothing to report");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create report directory " + dir.string() + ": " + ec.message());
    ReportFiles f{dir / "results.csv", dir / "table.csv", dir / "accuracy_vs_curated.svg"};
    auto open = [](const std::filesystem::path& p) {
        std::ofstream out(p);
        if (!out) throw Error("cannot write " + p.string());
        return out;
    };
    {
        auto out = open(f.results_csv);
        write_results_csv(out, r);
    }
    {
        auto out = open(f.table_csv);
        write_table_csv(out, r);
    }
    {
        auto out = open(f.plot_svg);
        out << accuracy_plot_svg(r);
    }
    return f;
}

}  // namespace wsl
