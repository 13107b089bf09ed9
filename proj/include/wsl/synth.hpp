#pragma once

// Procedural multi-object image datasets with controllable label noise and
// exact localization ground truth.
//
// Every class is a glyph family (shape x texture x color). Noise model, per
// image, each decision an independent Bernoulli draw:
//   cross-domain   : the image is replaced by a glyph-free texture but keeps
//                    its class label (gt_boxes = []).
//   cross-category : a glyph of the class's fixed co-occurrence partner is
//                    drawn next to the primary glyph; the label stays primary.
//   clutter        : a neutral, non-class object is painted under the glyphs.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "data.hpp"
#include "image_io.hpp"
#include "types.hpp"

namespace wsl {

struct SynthConfig {
    int num_classes = 5;
    int images_per_class = 200;
    int image_size = 96;
    double cross_category_rate = 0.2;
    double cross_domain_rate = 0.1;
    double clutter_rate = 0.0;
    std::uint64_t seed = 0;
    std::string name = "synth";
    Source source = Source::Synthetic;
    bool curated = false;

    void validate() const;
};

enum class GlyphShape { Circle, Square, Triangle, Cross, Ring, Crescent };
enum class GlyphTexture { Solid, Stripes, Checker, Dots };

struct GlyphFamily {
    GlyphShape shape;
    GlyphTexture texture;
    std::array<std::uint8_t, 3> color;
};

inline constexpr int kNumShapes = 6;
inline constexpr int kNumTextures = 4;
inline constexpr int kMaxSynthClasses = kNumShapes * kNumTextures;

inline constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
    {220, 40, 40}, {40, 180, 60}, {50, 80, 220}, {230, 200, 40},
    {200, 50, 190}, {40, 190, 200}, {240, 130, 30}, {120, 60, 170},
}};

inline void SynthConfig::validate() const {
    auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (num_classes < 2 || num_classes > kMaxSynthClasses)
        throw ConfigError("num_classes must be in [2, " + std::to_string(kMaxSynthClasses) + "]");
    if (images_per_class < 1) throw ConfigError("images_per_class must be >= 1");
    if (image_size < 32) throw ConfigError("image_size must be >= 32");
    if (!rate_ok(cross_category_rate) || !rate_ok(cross_domain_rate) || !rate_ok(clutter_rate))
        throw ConfigError("noise rates must be in [0, 1]");
    if (name.empty()) throw ConfigError("dataset name must not be empty");
}

// Class i: shape i mod 6, texture (i / 6) mod 4; (shape, texture) is unique
// for i < 24 and the color stride keeps neighbouring classes apart.
inline GlyphFamily glyph_family(int cls) {
    return {static_cast<GlyphShape>(cls % kNumShapes),
            static_cast<GlyphTexture>((cls / kNumShapes) % kNumTextures),
            kPalette[static_cast<std::size_t>(cls * 3 + cls / kNumShapes) % kPalette.size()]};
}

inline std::vector<std::string> synth_label_space(int k) {
    static constexpr const char* shapes[] = {"circle", "square", "triangle", "cross", "ring", "crescent"};
    static constexpr const char* textures[] = {"solid", "striped", "checkered", "dotted"};
    std::vector<std::string> names;
    for (int i = 0; i < k; ++i)
        names.push_back(std::string(textures[(i / kNumShapes) % kNumTextures]) + "_" + shapes[i % kNumShapes]);
    return names;
}

// Fixed derangement: partner[i] != i for every class (Sattolo's cycle).
inline std::vector<int> cooccurrence_partners(int k, std::uint64_t seed) {
    std::vector<int> p(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) p[i] = i;
    std::mt19937_64 rng(derive_seed(seed, "partners"));
    for (int i = k - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i - 1);
        std::swap(p[i], p[pick(rng)]);
    }
    return p;
}

namespace detail {

struct GlyphPlacement {
    int cls = 0;
    double cx = 0, cy = 0, radius = 0, theta = 0;
    std::array<int, 3> jitter{};
};

inline bool glyph_contains(GlyphShape s, double u, double v) {
    const double r2 = u * u + v * v;
    switch (s) {
        case GlyphShape::Circle: return r2 <= 0.81;
        case GlyphShape::Square: return std::abs(u) <= 0.65 && std::abs(v) <= 0.65;
        case GlyphShape::Triangle: {
            const double s3 = std::numbers::sqrt3;
            return v >= -0.475 && s3 * u + v <= 0.95 && -s3 * u + v <= 0.95;
        }
        case GlyphShape::Cross:
            return (std::abs(u) <= 0.3 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.9);
        case GlyphShape::Ring: return r2 >= 0.25 && r2 <= 0.8464;
        case GlyphShape::Crescent: return r2 <= 0.81 && (u - 0.4) * (u - 0.4) + v * v > 0.4225;
    }
    return false;
}

inline bool texture_dark(GlyphTexture t, double u, double v) {
    switch (t) {
        case GlyphTexture::Solid: return false;
        case GlyphTexture::Stripes: return static_cast<int>(std::floor((u + 2.0) * 3.0)) % 2 == 1;
        case GlyphTexture::Checker:
            return (static_cast<int>(std::floor((u + 2.0) * 2.5)) + static_cast<int>(std::floor((v + 2.0) * 2.5))) % 2 == 1;
        case GlyphTexture::Dots: {
            double du = u * 3.0 - std::round(u * 3.0), dv = v * 3.0 - std::round(v * 3.0);
            return du * du + dv * dv < 0.12;
        }
    }
    return false;
}

// Calls fn(x, y, u, v) for every pixel covered by the glyph, with (u, v) the
// pixel centre in the glyph's rotated unit frame.
template <class Fn>
void for_each_glyph_pixel(const GlyphPlacement& g, int size, Fn&& fn) {
    const GlyphShape shape = glyph_family(g.cls).shape;
    const double c = std::cos(g.theta), s = std::sin(g.theta);
    const int x0 = std::max(0, static_cast<int>(std::floor(g.cx - g.radius)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(g.cx + g.radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(g.cy - g.radius)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(g.cy + g.radius)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x + 0.5 - g.cx) / g.radius, dy = (y + 0.5 - g.cy) / g.radius;
            const double u = c * dx + s * dy, v = -s * dx + c * dy;
            if (glyph_contains(shape, u, v)) fn(x, y, u, v);
        }
    }
}

inline std::optional<BoundingBox> glyph_box(const GlyphPlacement& g, int size) {
    int x0 = size, y0 = size, x1 = -1, y1 = -1;
    for_each_glyph_pixel(g, size, [&](int x, int y, double, double) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
    });
    if (x1 < 0) return std::nullopt;
    return BoundingBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

inline std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

inline void paint_glyph(Image& img, const GlyphPlacement& g) {
    const GlyphFamily fam = glyph_family(g.cls);
    for_each_glyph_pixel(g, img.width, [&](int x, int y, double u, double v) {
        const double shade = texture_dark(fam.texture, u, v) ? 0.45 : 1.0;
        std::uint8_t* px = img.at(x, y);
        for (int ch = 0; ch < 3; ++ch) px[ch] = clamp_u8((fam.color[ch] + g.jitter[ch]) * shade);
    });
}

inline Image textured_background(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double gray = 70.0 + 110.0 * U(rng);
    std::array<double, 3> tint{};
    for (auto& t : tint) t = -20.0 + 40.0 * U(rng);
    const double grad_angle = 2.0 * std::numbers::pi * U(rng), grad_amp = 30.0 * U(rng);
    const double f = 0.1 + 0.4 * U(rng), wave_angle = std::numbers::pi * U(rng), wave_amp = 8.0 * U(rng);
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double gx = (x / double(size) - 0.5) * std::cos(grad_angle) + (y / double(size) - 0.5) * std::sin(grad_angle);
            const double wave = std::sin(f * (x * std::cos(wave_angle) + y * std::sin(wave_angle)));
            const double base = gray + grad_amp * gx + wave_amp * wave;
            std::uint8_t* px = img.at(x, y);
            for (int ch = 0; ch < 3; ++ch) px[ch] = clamp_u8(base + tint[ch] + (U(rng) - 0.5) * 12.0);
        }
    }
    return img;
}

// Out-of-domain image: saturated plaid/stripes with no glyph.
inline Image distractor_texture(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, kPalette.size() - 1);
    const auto a = kPalette[pick(rng)], b = kPalette[pick(rng)];
    const double f1 = 0.15 + 0.5 * U(rng), f2 = 0.15 + 0.5 * U(rng);
    const double t1 = std::numbers::pi * U(rng), t2 = std::numbers::pi * U(rng);
    const double mix2 = U(rng);
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double w = 0.5 + 0.5 * std::sin(f1 * (x * std::cos(t1) + y * std::sin(t1)));
            w = (1.0 - mix2) * w + mix2 * (0.5 + 0.5 * std::sin(f2 * (x * std::cos(t2) + y * std::sin(t2))));
            std::uint8_t* px = img.at(x, y);
            for (int ch = 0; ch < 3; ++ch) px[ch] = clamp_u8(w * a[ch] + (1.0 - w) * b[ch] + (U(rng) - 0.5) * 20.0);
        }
    }
    return img;
}

// Neutral gray bar (a utensil stand-in) that belongs to no class.
inline void paint_clutter(Image& img, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const int size = img.width;
    const double len = size * (0.25 + 0.15 * U(rng)), half_w = size * (0.03 + 0.02 * U(rng));
    const double cx = size * (0.2 + 0.6 * U(rng)), cy = size * (0.2 + 0.6 * U(rng));
    const double th = std::numbers::pi * U(rng), level = 150.0 + 60.0 * U(rng);
    const double c = std::cos(th), s = std::sin(th);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            if (std::abs(c * dx + s * dy) <= len && std::abs(-s * dx + c * dy) <= half_w) {
                std::uint8_t* px = img.at(x, y);
                px[0] = px[1] = px[2] = clamp_u8(level);
            }
        }
    }
}

inline GlyphPlacement random_placement(int cls, int size, double radius, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    GlyphPlacement g;
    g.cls = cls;
    g.radius = radius;
    const double lo = radius + 1.0, hi = size - radius - 1.0;
    g.cx = lo + (hi - lo) * U(rng);
    g.cy = lo + (hi - lo) * U(rng);
    g.theta = 2.0 * std::numbers::pi * U(rng);
    for (auto& j : g.jitter) j = static_cast<int>(std::floor(U(rng) * 31.0)) - 15;
    return g;
}

inline bool boxes_intersect(const BoundingBox& a, const BoundingBox& b) {
    return a.x < b.right() && b.x < a.right() && a.y < b.bottom() && b.y < a.bottom();
}

struct RenderedImage {
    Image image;
    std::vector<GtBox> boxes;
};

inline RenderedImage render_image(int cls, int size, bool distractor, bool partner_glyph, bool clutter,
                                  int partner, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    RenderedImage out;
    if (distractor) {
        out.image = distractor_texture(size, rng);
        return out;
    }
    out.image = textured_background(size, rng);
    if (clutter) paint_clutter(out.image, rng);

    const double r_lo = 0.15 * size, r_hi = 0.225 * size;
    GlyphPlacement primary = random_placement(cls, size, r_lo + (r_hi - r_lo) * U(rng), rng);
    BoundingBox primary_box = *glyph_box(primary, size);
    paint_glyph(out.image, primary);
    out.boxes.push_back({cls, primary_box});

    if (partner_glyph) {
        double radius = r_lo + (r_hi - r_lo) * U(rng);
        for (;;) {
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                GlyphPlacement g = random_placement(partner, size, radius, rng);
                auto box = glyph_box(g, size);
                if (!box || boxes_intersect(*box, primary_box)) continue;
                paint_glyph(out.image, g);
                out.boxes.push_back({partner, *box});
                placed = true;
            }
            if (placed) break;
            radius *= 0.85;
        }
    }
    return out;
}

inline std::string synth_id(const std::string& prefix, int cls, int j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_c%02d_%05d", cls, j);
    return prefix + buf;
}

}  // namespace detail

struct SynthDataset {
    DatasetManifest manifest;
    std::vector<Image> images;  // parallel to manifest.records

    MemoryImageStore make_store() const {
        MemoryImageStore store;
        for (std::size_t i = 0; i < images.size(); ++i) store.add(manifest.records[i].path, images[i]);
        return store;
    }
};

namespace detail {

inline SynthDataset generate(const SynthConfig& cfg, const std::string& id_prefix, const std::string& stream) {
    cfg.validate();
    const std::vector<int> partners = cooccurrence_partners(cfg.num_classes, cfg.seed);
    SynthDataset ds;
    ds.manifest.name = cfg.name;
    ds.manifest.label_space = synth_label_space(cfg.num_classes);
    for (int cls = 0; cls < cfg.num_classes; ++cls) {
        for (int j = 0; j < cfg.images_per_class; ++j) {
            const auto index = static_cast<std::uint64_t>(cls) * cfg.images_per_class + j;
            std::mt19937_64 flags(derive_seed(cfg.seed, stream + "/noise", index));
            std::uniform_real_distribution<double> U(0.0, 1.0);
            const bool distractor = U(flags) < cfg.cross_domain_rate;
            const bool partner = U(flags) < cfg.cross_category_rate;
            const bool clutter = U(flags) < cfg.clutter_rate;
            RenderedImage r = render_image(cls, cfg.image_size, distractor, partner, clutter, partners[cls],
                                           derive_seed(cfg.seed, stream + "/render", index));
            ImageRecord rec;
            rec.id = synth_id(id_prefix, cls, j);
            rec.path = "images/" + rec.id + ".png";
            rec.label = cls;
            rec.source = cfg.source;
            rec.curated = cfg.curated;
            rec.width = rec.height = cfg.image_size;
            rec.gt_boxes = std::move(r.boxes);
            ds.manifest.records.push_back(std::move(rec));
            ds.images.push_back(std::move(r.image));
        }
    }
    ds.manifest.validate();
    return ds;
}

}  // namespace detail

inline SynthDataset generate_dataset(const SynthConfig& cfg) {
    return detail::generate(cfg, cfg.name, "train");
}

// Noise-free, curated, single-glyph images drawn from a seed stream disjoint
// from generate_dataset's; ids carry a "-test" suffix on the dataset name.
inline SynthDataset make_clean_test_set(SynthConfig cfg) {
    cfg.cross_category_rate = 0.0;
    cfg.cross_domain_rate = 0.0;
    cfg.clutter_rate = 0.0;
    cfg.curated = true;
    cfg.source = Source::Synthetic;
    SynthDataset ds = detail::generate(cfg, cfg.name + "-test", "clean-test");
    ds.manifest.name = cfg.name + "-test";
    return ds;
}

// Writes DIR/manifest.jsonl and DIR/images/<id>.png.
inline void write_synth_dataset(const std::filesystem::path& dir, const SynthDataset& ds) {
    std::filesystem::create_directories(dir / "images");
    for (std::size_t i = 0; i < ds.images.size(); ++i) write_png(dir / ds.manifest.records[i].path, ds.images[i]);
    save_manifest(dir / "manifest.jsonl", ds.manifest);
}

struct NoiseCounts {
    std::size_t images = 0;
    std::size_t distractors = 0;  // gt_boxes == []
    std::size_t multi_glyph = 0;  // gt_boxes.size() >= 2
};

inline NoiseCounts count_noise(const DatasetManifest& m) {
    NoiseCounts c;
    for (const auto& r : m.records) {
        ++c.images;
        if (!r.gt_boxes) continue;
        if (r.gt_boxes->empty()) ++c.distractors;
        if (r.gt_boxes->size() >= 2) ++c.multi_glyph;
    }
    return c;
}

}  // namespace wsl
