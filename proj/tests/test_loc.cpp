#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace wsl;

namespace {

Heatmap random_heatmap(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Heatmap hm;
    hm.height = h;
    hm.width = w;
    hm.values.resize(static_cast<std::size_t>(h) * w);
    for (auto& v : hm.values) v = U(rng);
    return hm;
}

BoundingBox random_box(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pos(0, 40), len(1, 30);
    return {pos(rng), pos(rng), len(rng), len(rng)};
}

}  // namespace

TEST(Threshold, ConstantAndZeroHeatmaps) {
    Heatmap hm{4, 5, 0, "", std::vector<double>(20, 0.7)};
    EXPECT_EQ(threshold_heatmap(hm, 0.2).count(), 20u);
    hm.values.assign(20, 0.0);
    EXPECT_EQ(threshold_heatmap(hm, 0.2).count(), 0u);
    EXPECT_THROW(threshold_heatmap(hm, 0.0), ConfigError);
    EXPECT_THROW(threshold_heatmap(hm, 1.0), ConfigError);
}

TEST(Threshold, MatchesBruteForceAndNests) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
        const Heatmap hm = random_heatmap(rng, 17, 23);
        const double mx = *std::max_element(hm.values.begin(), hm.values.end());
        Mask prev = threshold_heatmap(hm, 0.05);
        for (double tau : {0.1, 0.3, 0.5, 0.9}) {
            const Mask m = threshold_heatmap(hm, tau);
            for (std::size_t i = 0; i < hm.values.size(); ++i) EXPECT_EQ(m.bits[i] != 0, hm.values[i] >= tau * mx);
            EXPECT_TRUE(m.subset_of(prev));
            prev = m;
        }
    }
}

TEST(Boxes, MatchUnionFindOracle) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 200; ++t) {
        const Mask m = oracle::random_mask(rng, 20 + t % 7, 25, 0.15 + 0.003 * t);
        const long long min_area = t % 4;
        EXPECT_EQ(mask_to_boxes(m, min_area), oracle::components(m, min_area));
    }
}

TEST(Boxes, KnownLayout) {
    // Two blobs: a 2x3 block and a single pixel diagonal from it.
    Mask m{4, 6, std::vector<std::uint8_t>(24, 0)};
    auto set = [&](int y, int x) { m.bits[static_cast<std::size_t>(y) * 6 + x] = 1; };
    set(0, 0), set(0, 1), set(0, 2), set(1, 0), set(1, 1), set(1, 2), set(2, 3);
    const auto boxes = mask_to_boxes(m, 0);
    ASSERT_EQ(boxes.size(), 2u);
    EXPECT_EQ(boxes[0], (BoundingBox{0, 0, 3, 2}));
    EXPECT_EQ(boxes[1], (BoundingBox{3, 2, 1, 1}));
    EXPECT_EQ(mask_to_boxes(m, 2).size(), 1u);
    EXPECT_TRUE(mask_to_boxes(Mask{3, 3, std::vector<std::uint8_t>(9, 0)}, 0).empty());
}

TEST(Iou, MatchesPixelCountingOracle) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 500; ++t) {
        const BoundingBox a = random_box(rng), b = random_box(rng);
        EXPECT_NEAR(iou(a, b), oracle::pixel_iou(a, b), 1e-12);
        EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
        EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    }
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {2, 0, 2, 2}), 0.0);  // touching edges
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 0, 2, 2}), 1.0 / 3.0);
}

TEST(Cam, AffineRescalingOfScoresLeavesBoxesUnchanged) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> N(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        ScoreMaps<double> s{Grid<double>(8, 8, 3)};
        for (auto& v : s.maps.values) v = N(rng);
        ScoreMaps<double> scaled = s;
        for (auto& v : scaled.maps.values) v = 3.0 * v + 7.0;
        const Heatmap a = compute_cam(s, 1, 64, 64), b = compute_cam(scaled, 1, 64, 64);
        for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-9);
        EXPECT_EQ(mask_to_boxes(threshold_heatmap(a, 0.4), 0), mask_to_boxes(threshold_heatmap(b, 0.4), 0));
    }
}

TEST(Localize, ZeroModelGivesNoBoxes) {
    const std::vector<int> w{4, 4};
    Model<float> m = make_model<float>(3, w, 3, 1);
    for (auto& v : m.classifier.weight) v = 0.0f;
    for (auto& v : m.classifier.bias) v = 0.0f;
    Image img(32, 32, 3, 90);
    const Localization loc = localize(img, m, 0);
    EXPECT_TRUE(loc.boxes.empty());
    for (double v : loc.heatmap.values) EXPECT_EQ(v, 0.0);
}

TEST(Localize, OverlayMatchesImageAndBoxesInside) {
    const std::vector<int> w{4, 4};
    const Model<float> m = make_model<float>(3, w, 3, 5);
    std::mt19937_64 rng(5);
    Image img(48, 40, 3);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    const Localization loc = localize(img, m, 2, LocalizeOptions{0.3, 0, 0.5});
    EXPECT_EQ(loc.overlay.width, 48);
    EXPECT_EQ(loc.overlay.height, 40);
    EXPECT_EQ(loc.heatmap.width, 48);
    EXPECT_FALSE(loc.boxes.empty());
    for (const auto& b : loc.boxes) {
        EXPECT_TRUE(b.box.inside(48, 40));
        EXPECT_GE(b.score, 0.0);
        EXPECT_LE(b.score, 1.0);
    }
    EXPECT_THROW(localize(img, m, 3), ConfigError);
}

TEST(Localize, DefaultMinArea) {
    EXPECT_EQ(default_min_area(96, 96), 47);
    EXPECT_EQ(default_min_area(10, 10), 1);
}
