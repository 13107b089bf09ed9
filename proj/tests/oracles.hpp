#pragma once

// Brute-force reference implementations used by the unit and acceptance
// suites. Deliberately naive and structurally different from the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <wsl/wsl.hpp>

namespace oracle {

// ---------------------------------------------------------------------------
// data

inline wsl::DatasetManifest random_manifest(std::mt19937_64& rng, const std::string& name, int min_records = 0,
                                            int max_records = 80) {
    std::uniform_int_distribution<int> nk(2, 6), nr(min_records, max_records), side(64, 640), coin(0, 1);
    wsl::DatasetManifest m;
    m.name = name;
    const int k = nk(rng);
    for (int i = 0; i < k; ++i) m.label_space.push_back("class" + std::to_string(i));
    const int n = nr(rng);
    std::uniform_int_distribution<int> lab(0, k - 1);
    for (int i = 0; i < n; ++i) {
        wsl::ImageRecord r;
        r.id = name + "-" + std::to_string(i);
        r.path = "img/" + r.id + ".png";
        r.label = lab(rng);
        r.curated = coin(rng) == 1;
        r.source = r.curated ? wsl::Source::CrowdCurated : wsl::Source::WebSearch;
        r.width = side(rng);
        r.height = side(rng);
        m.records.push_back(r);
    }
    return m;
}

inline std::vector<wsl::ImageRecord> filter(const wsl::DatasetManifest& m, int min_px) {
    std::vector<wsl::ImageRecord> out;
    for (const auto& r : m.records) {
        bool small = false;
        if (r.width < min_px) small = true;
        if (r.height < min_px) small = true;
        if (!small) out.push_back(r);
    }
    return out;
}

inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

// Per class: the members at the positions chosen by the (separately tested)
// sampler go to validation; everything else stays in input order.
inline std::pair<std::vector<wsl::ImageRecord>, std::vector<wsl::ImageRecord>> split(const wsl::DatasetManifest& m,
                                                                                      double frac, std::uint64_t seed) {
    std::set<std::string> val_ids;
    for (int k = 0; k < m.num_classes(); ++k) {
        std::vector<std::string> members;
        for (const auto& r : m.records)
            if (r.label == k) members.push_back(r.id);
        if (members.empty()) continue;
        const std::size_t n_val = round_half_up(frac * static_cast<double>(members.size()));
        for (std::size_t j : wsl::sample_without_replacement(members.size(), n_val, wsl::derive_seed(seed, "split", k)))
            val_ids.insert(members[j]);
    }
    std::vector<wsl::ImageRecord> train, val;
    for (const auto& r : m.records) (val_ids.count(r.id) ? val : train).push_back(r);
    return {train, val};
}

inline std::size_t ceil_count(double f, std::size_t n) {
    // Smallest c with c >= f * n (within rounding noise).
    for (std::size_t c = 0; c <= n; ++c)
        if (static_cast<double>(c) + 1e-9 >= f * static_cast<double>(n)) return c;
    return n;
}

inline std::vector<wsl::ImageRecord> mix(const wsl::MixSpec& spec, const wsl::ManifestCatalog& cat) {
    std::vector<wsl::ImageRecord> out;
    std::set<std::string> ids;
    for (const auto& c : spec.components) {
        const auto& m = cat.at(c.manifest);
        const auto picked = wsl::sample_without_replacement(m.size(), ceil_count(c.fraction, m.size()), c.seed);
        for (std::size_t i : picked) {
            wsl::ImageRecord r = m.records[i];
            if (ids.count(r.id)) r.id = c.manifest + "/" + r.id;
            ids.insert(r.id);
            out.push_back(r);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// model

// Score map cell (r, c, k) as an explicit dot product, then mean over cells.
inline std::vector<long double> conv_then_gap(const wsl::Grid<double>& f, const wsl::LinearMap<double>& h) {
    std::vector<long double> out(h.classes, 0.0L);
    for (int k = 0; k < h.classes; ++k) {
        long double acc = 0.0L;
        for (int r = 0; r < f.rows; ++r)
            for (int c = 0; c < f.cols; ++c) {
                long double s = h.bias[k];
                for (int d = 0; d < h.depth; ++d) s += static_cast<long double>(f(r, c, d)) * h.w(d, k);
                acc += s;
            }
        out[k] = acc / (static_cast<long double>(f.rows) * f.cols);
    }
    return out;
}

inline std::vector<double> max_over_cells(const wsl::Grid<double>& maps) {
    std::vector<double> out;
    for (int k = 0; k < maps.channels; ++k) {
        std::vector<double> vals;
        for (int r = 0; r < maps.rows; ++r)
            for (int c = 0; c < maps.cols; ++c) vals.push_back(maps(r, c, k));
        out.push_back(*std::max_element(vals.begin(), vals.end()));
    }
    return out;
}

// Direct zero-padded 3x3 convolution + ELU + 2x2 mean, one stage.
inline wsl::Grid<double> conv_stage(const wsl::Grid<double>& x, const wsl::ConvStage<double>& s) {
    wsl::Grid<double> a(x.rows, x.cols, s.out_channels);
    for (int y = 0; y < x.rows; ++y)
        for (int xx = 0; xx < x.cols; ++xx)
            for (int o = 0; o < s.out_channels; ++o) {
                double v = s.bias[o];
                for (int ky = -1; ky <= 1; ++ky)
                    for (int kx = -1; kx <= 1; ++kx) {
                        const int iy = y + ky, ix = xx + kx;
                        if (iy < 0 || ix < 0 || iy >= x.rows || ix >= x.cols) continue;
                        for (int i = 0; i < s.in_channels; ++i)
                            v += x(iy, ix, i) * s.weight[((static_cast<std::size_t>(ky + 1) * 3 + (kx + 1)) *
                                                              s.in_channels + i) * s.out_channels + o];
                    }
                a(y, xx, o) = v > 0 ? v : std::exp(v) - 1.0;
            }
    wsl::Grid<double> p(x.rows / 2, x.cols / 2, s.out_channels);
    for (int y = 0; y < p.rows; ++y)
        for (int xx = 0; xx < p.cols; ++xx)
            for (int o = 0; o < s.out_channels; ++o)
                p(y, xx, o) = (a(2 * y, 2 * xx, o) + a(2 * y + 1, 2 * xx, o) + a(2 * y, 2 * xx + 1, o) +
                               a(2 * y + 1, 2 * xx + 1, o)) / 4.0;
    return p;
}

// ---------------------------------------------------------------------------
// train / eval

inline long double cross_entropy(const std::vector<float>& z, int label) {
    long double sum = 0.0L;
    for (float v : z) sum += std::exp(static_cast<long double>(v));
    return std::log(sum) - static_cast<long double>(z[label]);
}

// Rank classes by (logit desc, index asc) via a full sort.
inline bool in_top_k(const std::vector<float>& z, int label, int k) {
    std::vector<int> order(z.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return z[a] != z[b] ? z[a] > z[b] : a < b; });
    return std::find(order.begin(), order.begin() + k, label) != order.begin() + k;
}

inline std::vector<std::vector<long long>> confusion(const std::vector<int>& preds, const std::vector<int>& labels, int K) {
    std::vector<std::vector<long long>> m(K, std::vector<long long>(K, 0));
    for (int t = 0; t < K; ++t)
        for (int p = 0; p < K; ++p)
            for (std::size_t i = 0; i < preds.size(); ++i)
                if (labels[i] == t && preds[i] == p) ++m[t][p];
    return m;
}

// ---------------------------------------------------------------------------
// loc

inline wsl::Mask random_mask(std::mt19937_64& rng, int h, int w, double density) {
    std::bernoulli_distribution on(density);
    wsl::Mask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
    for (auto& b : m.bits) b = on(rng) ? 1 : 0;
    return m;
}

// Union-find labeling over 4-neighbours, then per-label extents.
inline std::vector<wsl::BoundingBox> components(const wsl::Mask& m, long long min_area) {
    const int H = m.height, W = m.width;
    std::vector<int> parent(static_cast<std::size_t>(H) * W);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    auto unite = [&](int a, int b) {
        a = find(a), b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!m(y, x)) continue;
            if (x + 1 < W && m(y, x + 1)) unite(y * W + x, y * W + x + 1);
            if (y + 1 < H && m(y + 1, x)) unite(y * W + x, (y + 1) * W + x);
        }
    struct Acc {
        long long n = 0;
        int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1, first = 1 << 30;
    };
    std::map<int, Acc> acc;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!m(y, x)) continue;
            Acc& a = acc[find(y * W + x)];
            ++a.n;
            a.x0 = std::min(a.x0, x), a.x1 = std::max(a.x1, x), a.y0 = std::min(a.y0, y), a.y1 = std::max(a.y1, y);
            a.first = std::min(a.first, y * W + x);
        }
    std::vector<Acc> keep;
    for (const auto& [root, a] : acc)
        if (a.n >= min_area) keep.push_back(a);
    std::sort(keep.begin(), keep.end(), [](const Acc& a, const Acc& b) {
        const long long ba = static_cast<long long>(a.x1 - a.x0 + 1) * (a.y1 - a.y0 + 1);
        const long long bb = static_cast<long long>(b.x1 - b.x0 + 1) * (b.y1 - b.y0 + 1);
        if (a.n != b.n) return a.n > b.n;
        if (ba != bb) return ba > bb;
        return a.first < b.first;
    });
    std::vector<wsl::BoundingBox> out;
    for (const auto& a : keep) out.push_back({a.x0, a.y0, a.x1 - a.x0 + 1, a.y1 - a.y0 + 1});
    return out;
}

// IoU by counting pixels of a canvas that covers both boxes.
inline double pixel_iou(const wsl::BoundingBox& a, const wsl::BoundingBox& b) {
    const int x0 = std::min(a.x, b.x), y0 = std::min(a.y, b.y);
    const int x1 = std::max(a.right(), b.right()), y1 = std::max(a.bottom(), b.bottom());
    long long inter = 0, uni = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const bool ia = x >= a.x && x < a.right() && y >= a.y && y < a.bottom();
            const bool ib = x >= b.x && x < b.right() && y >= b.y && y < b.bottom();
            inter += ia && ib;
            uni += ia || ib;
        }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace oracle
