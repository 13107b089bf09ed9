#pragma once

// Dataset manifests: provenance-tagged image catalogs, filtering, stratified
// splitting and curated/uncurated composition.
//
// On-disk manifest format (UTF-8, one JSON value per line):
//
//   line 1   {"format":"wsl-manifest","version":1,"name":...,"label_space":[...]}
//   line 2+  [id, path, label, source, curated, width, height, gt_boxes]
//
// Record fields are positional, in exactly that order. `source` is one of
// "WEB_SEARCH", "CROWD_CURATED", "SYNTHETIC". `gt_boxes` is either null or a
// list of [class, x, y, w, h] pixel tuples. Relative paths are resolved
// against the manifest's directory on load and written relative to the
// output directory on save.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "types.hpp"

namespace wsl {

namespace fs = std::filesystem;

enum class Source { WebSearch, CrowdCurated, Synthetic };

inline std::string to_string(Source s) {
    switch (s) {
        case Source::WebSearch: return "WEB_SEARCH";
        case Source::CrowdCurated: return "CROWD_CURATED";
        case Source::Synthetic: return "SYNTHETIC";
    }
    return "?";
}

inline Source parse_source(const std::string& s) {
    if (s == "WEB_SEARCH") return Source::WebSearch;
    if (s == "CROWD_CURATED") return Source::CrowdCurated;
    if (s == "SYNTHETIC") return Source::Synthetic;
    throw ManifestError("unknown source '" + s + "'");
}

struct GtBox {
    int class_index = 0;
    BoundingBox box;
    bool operator==(const GtBox&) const = default;
};

struct ImageRecord {
    std::string id;
    std::string path;
    int label = 0;
    Source source = Source::Synthetic;
    bool curated = false;
    int width = 0;
    int height = 0;
    // Absent for ordinary web images; present (possibly empty) for synthetic
    // data, where an empty list marks an out-of-domain distractor.
    std::optional<std::vector<GtBox>> gt_boxes;

    bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
    std::string name;
    std::vector<std::string> label_space;
    std::vector<ImageRecord> records;

    int num_classes() const { return static_cast<int>(label_space.size()); }
    std::size_t size() const { return records.size(); }

    // Throws ManifestError naming the first offending record.
    void validate() const {
        std::unordered_set<std::string> seen;
        seen.reserve(records.size());
        for (const auto& r : records) {
            if (!seen.insert(r.id).second)
                throw ManifestError("duplicate record id '" + r.id + "'");
            if (r.label < 0 || r.label >= num_classes())
                throw ManifestError("record '" + r.id + "': label " + std::to_string(r.label) +
                                    " out of range for " + std::to_string(num_classes()) + " classes");
            if (r.width < 1 || r.height < 1)
                throw ManifestError("record '" + r.id + "': non-positive image size");
            if (r.gt_boxes) {
                for (const auto& g : *r.gt_boxes) {
                    if (!g.box.inside(r.width, r.height))
                        throw ManifestError("record '" + r.id + "': gt box outside image bounds");
                    if (g.class_index < 0 || g.class_index >= num_classes())
                        throw ManifestError("record '" + r.id + "': gt box class out of range");
                }
            }
        }
    }
};

struct MixComponent {
    std::string manifest;
    double fraction = 1.0;
    std::uint64_t seed = 0;
};

struct MixSpec {
    std::vector<MixComponent> components;
    std::string description;

    void validate() const {
        std::set<std::string> names;
        for (const auto& c : components) {
            if (!(c.fraction >= 0.0 && c.fraction <= 1.0))
                throw ConfigError("mix component '" + c.manifest + "': fraction must be in [0, 1]");
            if (!names.insert(c.manifest).second)
                throw ConfigError("mix spec lists manifest '" + c.manifest + "' more than once");
        }
    }
};

using ManifestCatalog = std::map<std::string, DatasetManifest>;

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json record_to_json(const ImageRecord& r, const std::string& path) {
    nlohmann::json boxes = nullptr;
    if (r.gt_boxes) {
        boxes = nlohmann::json::array();
        for (const auto& g : *r.gt_boxes)
            boxes.push_back({g.class_index, g.box.x, g.box.y, g.box.w, g.box.h});
    }
    return nlohmann::json::array(
        {r.id, path, r.label, to_string(r.source), r.curated, r.width, r.height, boxes});
}

inline ImageRecord record_from_json(const nlohmann::json& j, std::size_t line_no) {
    auto where = [&] { return "line " + std::to_string(line_no); };
    if (!j.is_array() || j.size() != 8)
        throw ManifestError(where() + ": expected an 8-field record array");
    ImageRecord r;
    try {
        r.id = j[0].get<std::string>();
        r.path = j[1].get<std::string>();
        r.label = j[2].get<int>();
        r.source = parse_source(j[3].get<std::string>());
        r.curated = j[4].get<bool>();
        r.width = j[5].get<int>();
        r.height = j[6].get<int>();
        if (!j[7].is_null()) {
            std::vector<GtBox> boxes;
            for (const auto& b : j[7]) {
                if (!b.is_array() || b.size() != 5)
                    throw ManifestError("gt box must be [class,x,y,w,h]");
                boxes.push_back({b[0].get<int>(), {b[1].get<int>(), b[2].get<int>(), b[3].get<int>(), b[4].get<int>()}});
            }
            r.gt_boxes = std::move(boxes);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(where() + (r.id.empty() ? "" : " (record '" + r.id + "')") + ": " + e.what());
    } catch (const ManifestError& e) {
        throw ManifestError(where() + (r.id.empty() ? "" : " (record '" + r.id + "')") + ": " + e.what());
    }
    return r;
}

}  // namespace detail

struct ManifestLoadReport {
    std::vector<std::string> missing_files;  // ids whose image file does not exist
};

inline DatasetManifest parse_manifest(std::istream& in, const fs::path& base_dir = {}) {
    DatasetManifest m;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ManifestError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!have_header) {
            if (!j.is_object() || j.value("format", "") != "wsl-manifest")
                throw ManifestError("line 1: missing wsl-manifest header");
            if (j.value("version", 0) != 1)
                throw ManifestError("unsupported manifest version");
            m.name = j.value("name", "");
            m.label_space = j.at("label_space").get<std::vector<std::string>>();
            have_header = true;
            continue;
        }
        ImageRecord r = detail::record_from_json(j, line_no);
        if (!base_dir.empty() && fs::path(r.path).is_relative())
            r.path = (base_dir / r.path).lexically_normal().string();
        m.records.push_back(std::move(r));
    }
    if (!have_header) throw ManifestError("empty manifest");
    m.validate();
    return m;
}

// `path` may also name a dataset directory holding manifest.jsonl.
inline DatasetManifest load_manifest(fs::path path, ManifestLoadReport* report = nullptr) {
    if (fs::is_directory(path)) path /= "manifest.jsonl";
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest " + path.string());
    DatasetManifest m = parse_manifest(in, fs::absolute(path).parent_path());
    if (report) {
        report->missing_files.clear();
        for (const auto& r : m.records)
            if (!fs::exists(r.path)) report->missing_files.push_back(r.id);
    }
    return m;
}

inline void write_manifest(std::ostream& out, const DatasetManifest& m, const fs::path& relative_to = {}) {
    nlohmann::json header = {{"format", "wsl-manifest"}, {"version", 1}, {"name", m.name},
                             {"label_space", m.label_space}};
    out << header.dump() << '\n';
    for (const auto& r : m.records) {
        std::string path = r.path;
        if (!relative_to.empty() && fs::path(path).is_absolute())
            path = fs::path(path).lexically_relative(relative_to).generic_string();
        out << detail::record_to_json(r, path).dump() << '\n';
    }
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
    m.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest " + path.string());
    fs::path dir = fs::absolute(path).parent_path();
    write_manifest(out, m, dir);
}

// ---------------------------------------------------------------------------
// Operations

struct FilterResult {
    DatasetManifest kept;
    std::size_t removed = 0;
};

// Keeps records whose shorter side is at least `min_px`; 256 exactly survives
// a 256 filter.
inline FilterResult filter_min_dimension(const DatasetManifest& m, int min_px) {
    if (min_px < 1) throw ConfigError("min_px must be >= 1");
    FilterResult res;
    res.kept.name = m.name;
    res.kept.label_space = m.label_space;
    for (const auto& r : m.records) {
        if (std::min(r.width, r.height) >= min_px)
            res.kept.records.push_back(r);
        else
            ++res.removed;
    }
    return res;
}

// First `count` entries of a seeded shuffle of [0, n), returned ascending.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, std::uint64_t seed) {
    if (count > n) throw ConfigError("cannot sample " + std::to_string(count) + " of " + std::to_string(n));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct TrainValSplit {
    DatasetManifest train;
    DatasetManifest val;
};

// Stratified split: each class contributes round(val_fraction * class count)
// records to val. Both halves keep input order.
inline TrainValSplit split_train_val(const DatasetManifest& m, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ConfigError("val_fraction must be in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(m.label_space.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) by_class.at(m.records[i].label).push_back(i);

    std::vector<char> in_val(m.records.size(), 0);
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        const auto& members = by_class[k];
        if (members.empty()) continue;
        if (members.size() < 2)
            throw ManifestError("class '" + m.label_space[k] + "' has fewer than 2 records; cannot split");
        auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(members.size())));
        for (std::size_t j : sample_without_replacement(members.size(), n_val, derive_seed(seed, "split", k)))
            in_val[members[j]] = 1;
    }

    TrainValSplit out;
    out.train.name = m.name + ".train";
    out.val.name = m.name + ".val";
    out.train.label_space = out.val.label_space = m.label_space;
    for (std::size_t i = 0; i < m.records.size(); ++i)
        (in_val[i] ? out.val : out.train).records.push_back(m.records[i]);
    return out;
}

// Number of records drawn for a fraction: ceil(fraction * n), with a small
// tolerance so that e.g. 0.7 * 10 yields 7.
inline std::size_t mix_count(double fraction, std::size_t n) {
    double x = fraction * static_cast<double>(n);
    auto c = static_cast<std::size_t>(std::ceil(x - 1e-9));
    return std::min(c, n);
}

inline DatasetManifest compose_mix(const MixSpec& spec, const ManifestCatalog& catalog) {
    spec.validate();
    DatasetManifest out;
    out.name = spec.description;
    bool first = true;
    for (const auto& c : spec.components) {
        auto it = catalog.find(c.manifest);
        if (it == catalog.end()) throw ConfigError("mix spec references unknown manifest '" + c.manifest + "'");
        if (first) {
            out.label_space = it->second.label_space;
            first = false;
        } else if (it->second.label_space != out.label_space) {
            throw ConfigError("manifest '" + c.manifest + "' has a different label space");
        }
    }

    std::unordered_set<std::string> ids;
    for (const auto& c : spec.components) {
        const DatasetManifest& m = catalog.at(c.manifest);
        for (std::size_t i : sample_without_replacement(m.size(), mix_count(c.fraction, m.size()), c.seed)) {
            ImageRecord r = m.records[i];
            if (ids.count(r.id)) {
                r.id = c.manifest + "/" + r.id;
                if (ids.count(r.id)) throw ManifestError("unresolvable id collision for '" + r.id + "'");
            }
            ids.insert(r.id);
            out.records.push_back(std::move(r));
        }
    }
    return out;
}

// "N" (only uncurated), "C" (only curated) or "N+C".
inline std::string dataset_type_tag(const DatasetManifest& m) {
    bool noisy = false, clean = false;
    for (const auto& r : m.records) (r.curated ? clean : noisy) = true;
    if (noisy && clean) return "N+C";
    if (clean) return "C";
    return "N";
}

inline std::size_t count_curated(const DatasetManifest& m) {
    return static_cast<std::size_t>(
        std::count_if(m.records.begin(), m.records.end(), [](const ImageRecord& r) { return r.curated; }));
}

// ---------------------------------------------------------------------------
// Mix spec files (JSON):
//   {"description": "...",
//    "manifests": {"web": "web/manifest.jsonl", ...},
//    "components": [{"manifest": "web", "fraction": 1.0, "seed": 1}, ...]}

inline MixSpec mix_spec_from_json(const nlohmann::json& j) {
    MixSpec s;
    s.description = j.value("description", "");
    for (const auto& c : j.at("components"))
        s.components.push_back({c.at("manifest").get<std::string>(), c.value("fraction", 1.0),
                                c.value("seed", std::uint64_t{0})});
    s.validate();
    return s;
}

inline nlohmann::json mix_spec_to_json(const MixSpec& s) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : s.components)
        comps.push_back({{"manifest", c.manifest}, {"fraction", c.fraction}, {"seed", c.seed}});
    return {{"description", s.description}, {"components", comps}};
}

// Loads every entry of a {"name": "path"} object, keyed by name.
inline ManifestCatalog load_catalog(const nlohmann::json& manifests, const fs::path& base_dir) {
    ManifestCatalog cat;
    for (auto it = manifests.begin(); it != manifests.end(); ++it) {
        fs::path p = it.value().get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        cat.emplace(it.key(), load_manifest(p));
    }
    return cat;
}

}  // namespace wsl
