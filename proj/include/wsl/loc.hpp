#pragma once

// Heatmap post-processing: thresholding, 4-connected components, box
// extraction, IoU, and the image -> CAM -> boxes -> overlay chain.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "model.hpp"
#include "types.hpp"

namespace wsl {

inline constexpr double kDefaultTau = 0.2;
inline constexpr double kDefaultMinAreaFraction = 0.005;

struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    bool operator()(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
    bool subset_of(const Mask& o) const {
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i] && !o.bits[i]) return false;
        return true;
    }
};

// values >= tau * max(values); an all-zero heatmap gives an empty mask.
inline Mask threshold_heatmap(const Heatmap& hm, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must be in (0, 1)");
    Mask m{hm.height, hm.width, std::vector<std::uint8_t>(hm.values.size(), 0)};
    const double mx = hm.values.empty() ? 0.0 : *std::max_element(hm.values.begin(), hm.values.end());
    if (!(mx > 0.0)) return m;
    const double cut = tau * mx;
    for (std::size_t i = 0; i < hm.values.size(); ++i) m.bits[i] = hm.values[i] >= cut ? 1 : 0;
    return m;
}

struct Region {
    BoundingBox box;
    long long area = 0;  // pixel count of the component
    std::size_t first_pixel = 0;
};

// 4-connected components with at least `min_area` pixels, sorted by pixel
// area (descending), then box area, then raster order of the first pixel.
inline std::vector<Region> mask_regions(const Mask& mask, long long min_area) {
    std::vector<Region> out;
    std::vector<std::uint8_t> seen(mask.bits.size(), 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.bits.size(); ++start) {
        if (!mask.bits[start] || seen[start]) continue;
        Region r;
        r.first_pixel = start;
        int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const int y = static_cast<int>(p / mask.width), x = static_cast<int>(p % mask.width);
            ++r.area;
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
            auto visit = [&](int ny, int nx) {
                if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) return;
                const std::size_t q = static_cast<std::size_t>(ny) * mask.width + nx;
                if (mask.bits[q] && !seen[q]) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            };
            visit(y - 1, x);
            visit(y + 1, x);
            visit(y, x - 1);
            visit(y, x + 1);
        }
        r.box = {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
        if (r.area >= min_area) out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(), [](const Region& a, const Region& b) {
        if (a.area != b.area) return a.area > b.area;
        if (a.box.area() != b.box.area()) return a.box.area() > b.box.area();
        return a.first_pixel < b.first_pixel;
    });
    return out;
}

inline std::vector<BoundingBox> mask_to_boxes(const Mask& mask, long long min_area) {
    std::vector<BoundingBox> boxes;
    for (const auto& r : mask_regions(mask, min_area)) boxes.push_back(r.box);
    return boxes;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const long long iw = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
    const long long ih = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
    const long long inter = iw * ih;
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

inline long long default_min_area(int height, int width) {
    return static_cast<long long>(std::ceil(kDefaultMinAreaFraction * height * width));
}

// Jet-style colormap, v in [0, 1].
inline std::array<std::uint8_t, 3> jet(double v) {
    auto ch = [&](double center) {
        return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0)));
    };
    return {ch(3.0), ch(2.0), ch(1.0)};
}

inline Image render_overlay(const Image& img, const Heatmap& hm, const std::vector<BoundingBox>& boxes, double alpha) {
    if (hm.width != img.width || hm.height != img.height) throw ShapeError("heatmap size differs from image");
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto c = jet(hm(y, x));
            std::uint8_t* px = out.at(x, y);
            for (int ch = 0; ch < 3; ++ch)
                px[ch] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * px[ch] + alpha * c[ch]));
        }
    for (const auto& b : boxes) {
        auto put = [&](int x, int y) {
            std::uint8_t* px = out.at(x, y);
            px[0] = 255, px[1] = 255, px[2] = 255;
        };
        for (int x = b.x; x < b.right(); ++x) put(x, b.y), put(x, b.bottom() - 1);
        for (int y = b.y; y < b.bottom(); ++y) put(b.x, y), put(b.right() - 1, y);
    }
    return out;
}

struct ScoredBox {
    BoundingBox box;
    double score = 0.0;  // mean heatmap value over the component's box
};

struct Localization {
    Heatmap heatmap;
    std::vector<ScoredBox> boxes;
    Image overlay;
};

struct LocalizeOptions {
    double tau = kDefaultTau;
    long long min_area = -1;  // < 0: 0.5% of the image area
    double alpha = 0.5;
};

// score maps -> CAM for class_k -> threshold -> boxes, plus an overlay.
inline Localization localize(const Image& image, const Model<float>& model, int class_k,
                             const LocalizeOptions& opt = {}) {
    const Grid<float> x = to_tensor<float>(image);
    const ScoreMaps<float> maps = model_score_maps(model, x);
    Localization out;
    out.heatmap = compute_cam(maps, class_k, image.height, image.width);
    const long long min_area = opt.min_area < 0 ? default_min_area(image.height, image.width) : opt.min_area;
    std::vector<BoundingBox> plain;
    for (const auto& r : mask_regions(threshold_heatmap(out.heatmap, opt.tau), min_area)) {
        double sum = 0.0;
        for (int y = r.box.y; y < r.box.bottom(); ++y)
            for (int xx = r.box.x; xx < r.box.right(); ++xx) sum += out.heatmap(y, xx);
        out.boxes.push_back({r.box, sum / static_cast<double>(r.box.area())});
        plain.push_back(r.box);
    }
    out.overlay = render_overlay(image, out.heatmap, plain, opt.alpha);
    return out;
}

}  // namespace wsl
