// wslfood: command-line driver for dataset preparation, synthetic data,
// training, evaluation, the mixing sweep and CAM localization.
//
// Every artifact-producing command writes one run manifest: DIR/run_manifest.json
// for directory outputs, <stem>.run.json next to single-file outputs.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <wsl/wsl.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kOutputRootEnv = "WSLFOOD_OUTPUT_ROOT";

struct UsageError : wsl::Error {
    using wsl::Error::Error;
};

// Relative output paths land under $WSLFOOD_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
    fs::path out = p;
    if (const char* root = std::getenv(kOutputRootEnv); root && *root && out.is_relative()) out = fs::path(root) / out;
    return out;
}

std::string abs_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

std::string file_digest(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "";
    std::ostringstream s;
    s << in.rdbuf();
    return wsl::hex64(wsl::Fnv1a{}.update(s.str()).value());
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw wsl::Error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

class RunManifest {
public:
    explicit RunManifest(std::string command) : start_(std::chrono::steady_clock::now()) {
        doc_["command"] = std::move(command);
        doc_["tool_version"] = wsl::kVersion;
        doc_["config"] = json::object();
        doc_["seeds"] = json::object();
        doc_["inputs"] = json::object();
        doc_["outputs"] = json::object();
    }

    json& config() { return doc_["config"]; }
    void seed(const std::string& name, std::uint64_t v) { doc_["seeds"][name] = v; }
    void input(const std::string& name, const fs::path& p) {
        doc_["inputs"][name] = {{"path", abs_string(p)}, {"digest", file_digest(p)}};
    }
    void output(const std::string& name, const fs::path& p) { doc_["outputs"][name] = abs_string(p); }
    json& extra(const std::string& key) { return doc_[key]; }

    void write(const fs::path& p) {
        doc_["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        write_json_file(p, doc_);
        std::cout << "run manifest: " << p.string() << '\n';
    }

private:
    json doc_;
    std::chrono::steady_clock::time_point start_;
};

fs::path sidecar(const fs::path& file) {
    fs::path s = file;
    s.replace_extension(".run.json");
    return s;
}

// A dataset argument may name a manifest file or a directory holding manifest.jsonl.
fs::path manifest_path(const std::string& arg) {
    fs::path p = arg;
    if (fs::is_directory(p)) p /= "manifest.jsonl";
    if (!fs::exists(p)) throw UsageError("manifest not found: " + p.string());
    return p;
}

wsl::DatasetManifest load_reported(const fs::path& p) {
    wsl::ManifestLoadReport report;
    wsl::DatasetManifest m = wsl::load_manifest(p, &report);
    for (const auto& id : report.missing_files) std::cerr << "warning: record '" << id << "' has no image file\n";
    return m;
}

// ---------------------------------------------------------------------------
// dataset

struct DatasetArgs {
    std::string manifest, out, spec;
    int min_px = 256;
    double val_frac = 0.1;
    std::uint64_t seed = 0;
};

void cmd_dataset_filter(const DatasetArgs& a) {
    RunManifest rm("dataset filter");
    const fs::path in = manifest_path(a.manifest), out = output_path(a.out);
    const wsl::DatasetManifest m = load_reported(in);
    const wsl::FilterResult r = wsl::filter_min_dimension(m, a.min_px);
    wsl::save_manifest(out, r.kept);
    rm.config() = {{"min_px", a.min_px}};
    rm.input("manifest", in);
    rm.output("manifest", out);
    rm.extra("counts") = {{"before", m.size()}, {"after", r.kept.size()}, {"removed", r.removed}};
    std::cout << "kept " << r.kept.size() << " of " << m.size() << " records (min side " << a.min_px << " px)\n";
    rm.write(sidecar(out));
}

void cmd_dataset_split(const DatasetArgs& a) {
    RunManifest rm("dataset split");
    const fs::path in = manifest_path(a.manifest), dir = output_path(a.out);
    const wsl::DatasetManifest m = load_reported(in);
    const wsl::TrainValSplit s = wsl::split_train_val(m, a.val_frac, a.seed);
    wsl::save_manifest(dir / "train.jsonl", s.train);
    wsl::save_manifest(dir / "val.jsonl", s.val);
    rm.config() = {{"val_fraction", a.val_frac}};
    rm.seed("split", a.seed);
    rm.input("manifest", in);
    rm.output("train", dir / "train.jsonl");
    rm.output("val", dir / "val.jsonl");
    std::cout << "train " << s.train.size() << ", val " << s.val.size() << '\n';
    rm.write(dir / "run_manifest.json");
}

void cmd_dataset_mix(const DatasetArgs& a) {
    RunManifest rm("dataset mix");
    const fs::path spec_path = a.spec, out = output_path(a.out);
    const json j = read_json_file(spec_path);
    if (!j.contains("manifests")) throw UsageError("mix spec needs a manifests object");
    const wsl::MixSpec spec = wsl::mix_spec_from_json(j);
    const wsl::ManifestCatalog cat = wsl::load_catalog(j.at("manifests"), spec_path.parent_path());
    const wsl::DatasetManifest mixed = wsl::compose_mix(spec, cat);
    wsl::save_manifest(out, mixed);
    rm.config() = wsl::mix_spec_to_json(spec);
    for (const auto& c : spec.components) rm.seed(c.manifest, c.seed);
    rm.input("spec", spec_path);
    for (auto it = j.at("manifests").begin(); it != j.at("manifests").end(); ++it) {
        fs::path p = it.value().get<std::string>();
        rm.input(it.key(), p.is_relative() ? spec_path.parent_path() / p : p);
    }
    rm.output("manifest", out);
    std::cout << "mixed " << mixed.size() << " records (" << wsl::count_curated(mixed) << " curated, type "
              << wsl::dataset_type_tag(mixed) << ")\n";
    rm.write(sidecar(out));
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string config, out, name;
    std::optional<int> classes, per_class, size;
    std::optional<double> cross_cat, cross_dom, clutter;
    std::optional<std::uint64_t> seed;
    bool curated = false;
};

wsl::SynthConfig resolve_synth(const SynthArgs& a) {
    wsl::SynthConfig c;
    if (!a.config.empty()) {
        const json j = read_json_file(a.config);
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "classes") c.num_classes = it->get<int>();
            else if (k == "per_class") c.images_per_class = it->get<int>();
            else if (k == "image_size") c.image_size = it->get<int>();
            else if (k == "cross_category_rate") c.cross_category_rate = it->get<double>();
            else if (k == "cross_domain_rate") c.cross_domain_rate = it->get<double>();
            else if (k == "clutter_rate") c.clutter_rate = it->get<double>();
            else if (k == "seed") c.seed = it->get<std::uint64_t>();
            else if (k == "name") c.name = it->get<std::string>();
            else if (k == "curated") c.curated = it->get<bool>();
            else throw UsageError("unknown synth config key '" + k + "'");
        }
    }
    if (a.classes) c.num_classes = *a.classes;
    if (a.per_class) c.images_per_class = *a.per_class;
    if (a.size) c.image_size = *a.size;
    if (a.cross_cat) c.cross_category_rate = *a.cross_cat;
    if (a.cross_dom) c.cross_domain_rate = *a.cross_dom;
    if (a.clutter) c.clutter_rate = *a.clutter;
    if (a.seed) c.seed = *a.seed;
    if (!a.name.empty()) c.name = a.name;
    if (a.curated) c.curated = true;
    if (c.curated) c.source = wsl::Source::CrowdCurated;
    c.validate();
    return c;
}

json synth_to_json(const wsl::SynthConfig& c) {
    return {{"classes", c.num_classes},
            {"per_class", c.images_per_class},
            {"image_size", c.image_size},
            {"cross_category_rate", c.cross_category_rate},
            {"cross_domain_rate", c.cross_domain_rate},
            {"clutter_rate", c.clutter_rate},
            {"seed", c.seed},
            {"name", c.name},
            {"curated", c.curated}};
}

void cmd_synth(const SynthArgs& a, bool test_set) {
    RunManifest rm(test_set ? "synth testset" : "synth generate");
    const wsl::SynthConfig cfg = resolve_synth(a);
    const fs::path dir = output_path(a.out);
    const wsl::SynthDataset ds = test_set ? wsl::make_clean_test_set(cfg) : wsl::generate_dataset(cfg);
    wsl::write_synth_dataset(dir, ds);
    const wsl::NoiseCounts n = wsl::count_noise(ds.manifest);
    rm.config() = synth_to_json(cfg);
    rm.seed("synth", cfg.seed);
    if (!a.config.empty()) rm.input("config", a.config);
    rm.output("manifest", dir / "manifest.jsonl");
    rm.output("images", dir / "images");
    rm.extra("counts") = {{"images", n.images}, {"distractors", n.distractors}, {"multi_glyph", n.multi_glyph}};
    std::cout << "wrote " << n.images << " images (" << n.distractors << " cross-domain, " << n.multi_glyph
              << " multi-glyph) to " << dir.string() << '\n';
    rm.write(dir / "run_manifest.json");
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string data, val, config, base, out;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr_head, lr_backbone;
    std::optional<std::uint64_t> seed;
    std::string pooling;
};

wsl::TrainConfig resolve_train(const TrainArgs& a, wsl::Phase phase) {
    wsl::TrainConfig c = phase == wsl::Phase::Base ? wsl::TrainConfig{} : wsl::default_wsl_config();
    if (!a.config.empty()) c.apply_json(read_json_file(a.config));
    c.phase = phase;
    if (a.epochs) c.epochs = *a.epochs;
    if (a.batch_size) c.batch_size = *a.batch_size;
    if (a.lr_head) c.lr_head = *a.lr_head;
    if (a.lr_backbone) c.lr_backbone = *a.lr_backbone;
    if (a.seed) c.seed = *a.seed;
    if (!a.pooling.empty()) c.pooling = wsl::parse_pooling(a.pooling);
    c.validate();
    return c;
}

void cmd_train(const TrainArgs& a, wsl::Phase phase) {
    RunManifest rm(phase == wsl::Phase::Base ? "train base" : "train wsl");
    const wsl::TrainConfig cfg = resolve_train(a, phase);
    const fs::path data_path = manifest_path(a.data), dir = output_path(a.out);
    const wsl::DatasetManifest data = load_reported(data_path);
    std::optional<wsl::DatasetManifest> val;
    if (!a.val.empty()) val = load_reported(manifest_path(a.val));

    wsl::FileImageStore store;
    wsl::TrainHooks hooks;
    hooks.on_epoch = [](const wsl::EpochStats& s) {
        std::cout << "epoch " << s.epoch << "  train_loss " << s.train_loss;
        if (!std::isnan(s.val_top1)) std::cout << "  val_loss " << s.val_loss << "  val_top1 " << s.val_top1;
        std::cout << std::endl;
    };
    wsl::Checkpoint ckpt;
    if (phase == wsl::Phase::Base) {
        ckpt = wsl::train_base(data, store, cfg, val ? &*val : nullptr, hooks);
    } else {
        const fs::path base_path = a.base;
        const wsl::Checkpoint base = wsl::load_checkpoint(base_path);
        rm.input("base_checkpoint", base_path);
        ckpt = wsl::train_wsl(base, data, store, cfg, val ? &*val : nullptr, hooks);
    }
    wsl::save_checkpoint(dir / "checkpoint.json", ckpt);
    wsl::write_loss_history_csv(dir / "loss_history.csv", ckpt.history);

    rm.config() = cfg.to_json();
    rm.seed("train", cfg.seed);
    rm.input("data", data_path);
    if (!a.val.empty()) rm.input("val", manifest_path(a.val));
    if (!a.config.empty()) rm.input("config", a.config);
    rm.output("checkpoint", dir / "checkpoint.json");
    rm.output("loss_history", dir / "loss_history.csv");
    rm.extra("selected_epoch") = ckpt.epoch;
    rm.extra("parameter_digest") = wsl::hex64(wsl::parameter_digest(ckpt.model));
    if (!ckpt.base_digest.empty()) rm.extra("base_digest") = ckpt.base_digest;
    std::cout << "selected epoch " << ckpt.epoch << ", checkpoint " << (dir / "checkpoint.json").string() << '\n';
    rm.write(dir / "run_manifest.json");
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string ckpt, data, out;
    int k = 5;
};

void cmd_eval(const EvalArgs& a) {
    RunManifest rm("eval");
    const fs::path data_path = manifest_path(a.data), dir = output_path(a.out);
    const wsl::Checkpoint ckpt = wsl::load_checkpoint(a.ckpt);
    const wsl::DatasetManifest data = load_reported(data_path);
    if (data.label_space != ckpt.label_space) throw wsl::ShapeError("data label space differs from checkpoint");
    wsl::FileImageStore store;
    const wsl::EvalResult r = wsl::evaluate(ckpt.model, data, store, a.k);

    fs::create_directories(dir);
    {
        std::ofstream out(dir / "metrics.csv");
        out << "images,k,top1,topk\n"
            << data.size() << ',' << r.k << ',' << wsl::detail::fmt_double(r.top1) << ','
            << wsl::detail::fmt_double(r.topk) << '\n';
    }
    {
        std::ofstream out(dir / "confusion.csv");
        out << "true\\predicted";
        for (const auto& name : data.label_space) out << ',' << wsl::detail::csv_quote(name);
        out << '\n';
        for (int t = 0; t < r.confusion.classes; ++t) {
            out << wsl::detail::csv_quote(data.label_space[t]);
            for (int p = 0; p < r.confusion.classes; ++p) out << ',' << r.confusion(t, p);
            out << '\n';
        }
    }
    rm.config() = {{"k", a.k}};
    rm.input("checkpoint", a.ckpt);
    rm.input("data", data_path);
    rm.output("metrics", dir / "metrics.csv");
    rm.output("confusion", dir / "confusion.csv");
    std::cout << "top-1 " << r.top1 << "  top-" << r.k << ' ' << r.topk << "  (" << data.size() << " images)\n";
    rm.write(dir / "run_manifest.json");
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
    std::string specs, test, out, replay;
    std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a) {
    RunManifest rm("sweep run");
    json resolved;
    fs::path test_path;
    if (!a.replay.empty()) {
        const json prev = read_json_file(a.replay);
        if (prev.value("command", "") != "sweep run") throw UsageError(a.replay + " is not a sweep run manifest");
        resolved = prev.at("config").at("sweep");
        test_path = prev.at("config").at("test").get<std::string>();
        rm.input("replayed_manifest", a.replay);
    } else {
        if (a.specs.empty() || a.test.empty()) throw UsageError("sweep run needs --specs and --test (or --replay)");
        resolved = wsl::resolve_sweep_config(read_json_file(a.specs), fs::path(a.specs).parent_path());
        test_path = fs::absolute(manifest_path(a.test)).lexically_normal();
        rm.input("specs", a.specs);
    }
    if (a.seed) resolved["seed"] = *a.seed;
    const fs::path dir = output_path(a.out);

    const wsl::SweepPlan plan = wsl::sweep_plan_from_json(resolved);
    const wsl::DatasetManifest test = load_reported(test_path);
    wsl::FileImageStore store;
    const wsl::SweepResult result =
        wsl::run_mixing_sweep(plan, test, store, [](const std::string& line) { std::cout << line << std::endl; });

    rm.config() = {{"sweep", resolved}, {"test", test_path.string()}};
    rm.seed("sweep", plan.seed);
    rm.seed("base_train", plan.base_config.seed);
    rm.seed("wsl_train", plan.wsl_config.seed);
    rm.input("test", test_path);
    for (const auto& [name, path] : resolved.at("manifests").items()) rm.input(name, path.get<std::string>());
    rm.extra("provenance") = result.provenance;
    rm.extra("partial") = result.partial;
    if (result.partial) rm.extra("error") = result.error;
    if (!result.rows.empty()) {
        const wsl::ReportFiles f = wsl::emit_report(result, dir);
        rm.output("results", f.results_csv);
        rm.output("table", f.table_csv);
        rm.output("plot", f.plot_svg);
    } else {
        fs::create_directories(dir);
    }
    rm.write(dir / "run_manifest.json");
    if (result.partial) {
        std::cerr << "error: sweep stopped early: " << result.error << '\n';
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// cam

struct CamArgs {
    std::string image, ckpt, out, boxes;
    std::optional<int> class_k;
    double tau = wsl::kDefaultTau;
    long long min_area = -1;
    double alpha = 0.5;
};

void cmd_cam(const CamArgs& a) {
    RunManifest rm("cam");
    const fs::path image_path = a.image, out = output_path(a.out);
    const wsl::Checkpoint ckpt = wsl::load_checkpoint(a.ckpt);
    if (!ckpt.model.wsl) std::cerr << "warning: checkpoint has no WSL head; using the base classifier as a 1x1 conv\n";
    const wsl::Image img = wsl::read_png(image_path);
    if (img.height != ckpt.input_height || img.width != ckpt.input_width)
        throw wsl::ShapeError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                              ", checkpoint expects " + std::to_string(ckpt.input_width) + "x" +
                              std::to_string(ckpt.input_height));
    const wsl::Logits<float> logits = wsl::model_logits(ckpt.model, wsl::to_tensor<float>(img));
    const int predicted = wsl::argmax(std::span<const float>(logits));
    const int k = a.class_k.value_or(predicted);
    if (k < 0 || k >= ckpt.model.num_classes()) throw UsageError("--class-k out of range");

    wsl::LocalizeOptions opt;
    opt.tau = a.tau;
    opt.min_area = a.min_area;
    opt.alpha = a.alpha;
    const wsl::Localization loc = wsl::localize(img, ckpt.model, k, opt);
    wsl::write_png(out, loc.overlay);

    const std::string id = image_path.stem().string();
    std::optional<fs::path> boxes_path;
    if (!a.boxes.empty()) {
        boxes_path = output_path(a.boxes);
        if (boxes_path->has_parent_path()) fs::create_directories(boxes_path->parent_path());
        std::ofstream bo(*boxes_path);
        if (!bo) throw wsl::Error("cannot write " + boxes_path->string());
        bo << "id,class,x,y,w,h,score\n";
        for (const auto& b : loc.boxes)
            bo << wsl::detail::csv_quote(id) << ',' << k << ',' << b.box.x << ',' << b.box.y << ',' << b.box.w << ','
               << b.box.h << ',' << wsl::detail::fmt_double(b.score) << '\n';
    }
    rm.config() = {{"class_k", k}, {"tau", a.tau}, {"min_area", a.min_area}, {"alpha", a.alpha}};
    rm.input("image", image_path);
    rm.input("checkpoint", a.ckpt);
    rm.output("overlay", out);
    if (boxes_path) rm.output("boxes", *boxes_path);
    rm.extra("predicted_class") = ckpt.label_space[predicted];
    std::cout << "class " << ckpt.label_space[k] << " (predicted " << ckpt.label_space[predicted] << "): "
              << loc.boxes.size() << " box(es)\n";
    for (const auto& b : loc.boxes)
        std::cout << "  " << b.box.x << ',' << b.box.y << ' ' << b.box.w << 'x' << b.box.h << "  score " << b.score
                  << '\n';
    rm.write(sidecar(out));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weakly supervised classification with class activation maps: data, training, sweeps, localization",
                 "wslfood"};
    app.set_version_flag("--version", std::string(wsl::kVersion));
    app.require_subcommand(1);

    DatasetArgs da;
    auto* dataset = app.add_subcommand("dataset", "Filter, split or mix image manifests");
    dataset->require_subcommand(1);
    auto* dfilter = dataset->add_subcommand("filter", "Drop records whose shorter side is below --min-px");
    dfilter->add_option("--manifest", da.manifest, "Input manifest (file or dataset directory)")->required();
    dfilter->add_option("--min-px", da.min_px, "Minimum image side in pixels")->check(CLI::PositiveNumber);
    dfilter->add_option("--out", da.out, "Output manifest file")->required();
    auto* dsplit = dataset->add_subcommand("split", "Stratified train/validation split");
    dsplit->add_option("--manifest", da.manifest, "Input manifest (file or dataset directory)")->required();
    dsplit->add_option("--val-frac", da.val_frac, "Validation fraction in (0, 1)");
    dsplit->add_option("--seed", da.seed, "Split seed");
    dsplit->add_option("--out", da.out, "Output directory (train.jsonl, val.jsonl)")->required();
    auto* dmix = dataset->add_subcommand("mix", "Compose a manifest from fractions of other manifests");
    dmix->add_option("--spec", da.spec, "Mix spec file")->required()->check(CLI::ExistingFile);
    dmix->add_option("--out", da.out, "Output manifest file")->required();

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate synthetic glyph datasets");
    synth->require_subcommand(1);
    auto add_synth_opts = [&](CLI::App* c) {
        c->add_option("--config", sa.config, "Synth config file")->check(CLI::ExistingFile);
        c->add_option("--classes", sa.classes, "Number of classes");
        c->add_option("--per-class", sa.per_class, "Images per class");
        c->add_option("--size", sa.size, "Image side in pixels");
        c->add_option("--seed", sa.seed, "Generator seed");
        c->add_option("--name", sa.name, "Dataset name");
        c->add_option("--out", sa.out, "Output directory")->required();
    };
    auto* sgen = synth->add_subcommand("generate", "Noisy training set with ground-truth boxes");
    add_synth_opts(sgen);
    sgen->add_option("--cross-cat", sa.cross_cat, "Cross-category noise rate");
    sgen->add_option("--cross-dom", sa.cross_dom, "Cross-domain noise rate");
    sgen->add_option("--clutter", sa.clutter, "Clutter rate");
    sgen->add_flag("--curated", sa.curated, "Mark records as curated");
    auto* stest = synth->add_subcommand("testset", "Clean single-glyph test set");
    add_synth_opts(stest);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train the base model or the WSL head");
    train->require_subcommand(1);
    auto add_train_opts = [&](CLI::App* c) {
        c->add_option("--data", ta.data, "Training manifest (file or dataset directory)")->required();
        c->add_option("--val", ta.val, "Validation manifest for best-epoch selection");
        c->add_option("--config", ta.config, "Training config file")->check(CLI::ExistingFile);
        c->add_option("--epochs", ta.epochs, "Epochs");
        c->add_option("--batch-size", ta.batch_size, "Mini-batch size");
        c->add_option("--lr-head", ta.lr_head, "Head learning rate");
        c->add_option("--seed", ta.seed, "Training seed");
        c->add_option("--out", ta.out, "Output directory")->required();
    };
    auto* tbase = train->add_subcommand("base", "Backbone + pooled linear classifier");
    add_train_opts(tbase);
    tbase->add_option("--lr-backbone", ta.lr_backbone, "Backbone learning rate");
    auto* twsl = train->add_subcommand("wsl", "1x1 conv head on a frozen base backbone");
    add_train_opts(twsl);
    twsl->add_option("--base", ta.base, "Base checkpoint")->required()->check(CLI::ExistingFile);
    twsl->add_option("--pooling", ta.pooling, "average or max");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Top-1 / top-k accuracy and confusion matrix");
    eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", ea.data, "Test manifest (file or dataset directory)")->required();
    eval->add_option("-k,--k", ea.k, "k for top-k")->check(CLI::PositiveNumber);
    eval->add_option("--out", ea.out, "Output directory")->required();

    SweepArgs wa;
    auto* sweep = app.add_subcommand("sweep", "Curated/uncurated mixing sweep");
    sweep->require_subcommand(1);
    auto* srun = sweep->add_subcommand("run", "Train and evaluate every spec with and without the WSL head");
    srun->add_option("--specs", wa.specs, "Sweep config file")->check(CLI::ExistingFile);
    srun->add_option("--test", wa.test, "Test manifest (file or dataset directory)");
    srun->add_option("--replay", wa.replay, "Rerun the sweep recorded in a run manifest")->check(CLI::ExistingFile);
    srun->add_option("--seed", wa.seed, "Override the sweep seed");
    srun->add_option("--out", wa.out, "Report directory")->required();

    CamArgs ca;
    auto* cam = app.add_subcommand("cam", "Class activation map, boxes and overlay for one image");
    cam->add_option("--image", ca.image, "Input PNG")->required()->check(CLI::ExistingFile);
    cam->add_option("--ckpt", ca.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    cam->add_option("--class-k", ca.class_k, "Class index (default: predicted class)");
    cam->add_option("--tau", ca.tau, "Threshold as a fraction of the map maximum");
    cam->add_option("--min-area", ca.min_area, "Minimum component area in pixels (default 0.5% of the image)");
    cam->add_option("--alpha", ca.alpha, "Overlay opacity")->check(CLI::Range(0.0, 1.0));
    cam->add_option("--out", ca.out, "Overlay PNG")->required();
    cam->add_option("--boxes", ca.boxes, "Boxes CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << '\n' << app.help();
        return 2;
    }

    try {
        if (*dfilter) cmd_dataset_filter(da);
        else if (*dsplit) cmd_dataset_split(da);
        else if (*dmix) cmd_dataset_mix(da);
        else if (*sgen) cmd_synth(sa, false);
        else if (*stest) cmd_synth(sa, true);
        else if (*tbase) cmd_train(ta, wsl::Phase::Base);
        else if (*twsl) cmd_train(ta, wsl::Phase::WslHeadOnly);
        else if (*eval) cmd_eval(ea);
        else if (*srun) return cmd_sweep(wa);
        else if (*cam) cmd_cam(ca);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const wsl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
