#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"

using namespace wsl;

namespace {

Grid<double> random_image(std::mt19937_64& rng, int size) {
    std::uniform_real_distribution<double> U(-0.5, 0.5);
    Grid<double> g(size, size, 3);
    for (auto& v : g.values) v = U(rng);
    return g;
}

// Bright vs. dark noisy images, 2 classes.
SynthDataset brightness_dataset(int per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> noise(-40, 40);
    SynthDataset ds;
    ds.manifest.name = "bright";
    ds.manifest.label_space = {"dark", "bright"};
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < per_class; ++i) {
            Image img(16, 16, 3);
            for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::clamp((k ? 170 : 85) + noise(rng), 0, 255));
            ImageRecord r;
            r.id = "b" + std::to_string(k) + "_" + std::to_string(i);
            r.path = r.id + ".png";
            r.label = k;
            r.width = r.height = 16;
            ds.manifest.records.push_back(r);
            ds.images.push_back(img);
        }
    return ds;
}

// Perceptron on pooled RGB features; converging proves linear separability.
bool perceptron_separates(const SynthDataset& ds) {
    std::vector<std::array<double, 4>> x;
    std::vector<int> y;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        std::array<double, 4> f{0, 0, 0, 1};
        const Image& img = ds.images[i];
        for (int p = 0; p < img.width * img.height; ++p)
            for (int c = 0; c < 3; ++c) f[c] += img.pixels[p * 3 + c] / 255.0 - 0.5;
        for (int c = 0; c < 3; ++c) f[c] /= img.width * img.height;
        x.push_back(f);
        y.push_back(ds.manifest.records[i].label ? 1 : -1);
    }
    std::array<double, 4> w{};
    for (int pass = 0; pass < 10000; ++pass) {
        bool clean = true;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double s = 0;
            for (int j = 0; j < 4; ++j) s += w[j] * x[i][j];
            if (s * y[i] <= 0) {
                for (int j = 0; j < 4; ++j) w[j] += y[i] * x[i][j];
                clean = false;
            }
        }
        if (clean) return true;
    }
    return false;
}

SynthConfig tiny_synth(std::uint64_t seed) {
    SynthConfig c;
    c.num_classes = 3;
    c.images_per_class = 12;
    c.image_size = 32;
    c.seed = seed;
    return c;
}

TrainConfig tiny_train() {
    TrainConfig c;
    c.backbone_widths = {4, 6, 8};
    c.epochs = 2;
    c.batch_size = 8;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(CrossEntropy, UniformLogits) {
    const std::vector<float> z(4, 0.7f);
    EXPECT_NEAR(cross_entropy(z, 2), std::log(4.0), 1e-6);
}

TEST(CrossEntropy, LargeLogitsDoNotOverflow) {
    const std::vector<float> z{1000.f, 0.f, 0.f};
    const double l = cross_entropy(z, 0);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_NEAR(l, 0.0, 1e-9);
    EXPECT_NEAR(cross_entropy(z, 1), 1000.0, 1e-3);
}

TEST(CrossEntropy, MatchesExtendedPrecision) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> N(0.f, 3.f);
    for (int t = 0; t < 200; ++t) {
        std::vector<float> z(3);
        for (auto& v : z) v = N(rng);
        const int label = t % 3;
        const double l = cross_entropy(z, label);
        EXPECT_NEAR(l, static_cast<double>(oracle::cross_entropy(z, label)), 1e-9);
        EXPECT_GE(l, 0.0);
    }
}

TEST(CrossEntropy, ShiftInvariant) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> N(0, 2);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> z(5), s(5);
        const double c = N(rng) * 50;
        for (int k = 0; k < 5; ++k) z[k] = N(rng), s[k] = z[k] + c;
        EXPECT_NEAR(cross_entropy(z, t % 5), cross_entropy(s, t % 5), 1e-6);
    }
}

TEST(CrossEntropy, Errors) {
    EXPECT_THROW(cross_entropy(std::vector<float>{1.f, 2.f}, 2), ConfigError);
    EXPECT_THROW(cross_entropy(std::vector<float>{NAN, 2.f}, 0), NonFiniteLogitError);
    EXPECT_THROW(cross_entropy(std::vector<float>{INFINITY, 2.f}, 0), NonFiniteLogitError);
}

TEST(GradCheck, LinearOnlyModelIsExact) {
    std::mt19937_64 rng(3);
    const std::vector<int> none;
    const Model<double> m = make_model<double>(3, none, 4, 7);
    std::vector<Grid<double>> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_image(rng, 6));
    const std::vector<int> labels{0, 1, 2, 3};
    const GradCheckReport r = grad_check(m, batch, labels);
    EXPECT_LT(r.max_relative_error, 1e-6);
    EXPECT_EQ(r.parameters_checked, 3u * 4u + 4u);
}

TEST(GradCheck, UnusedClassHasZeroGradient) {
    std::mt19937_64 rng(4);
    const std::vector<int> none;
    Model<double> m = make_model<double>(3, none, 3, 1);
    // Class 2: zero weights, very negative bias, never a label -> no probability mass.
    for (int d = 0; d < 3; ++d) m.classifier.weight[d * 3 + 2] = 0.0;
    m.classifier.bias[2] = -60.0;
    std::vector<Grid<double>> batch{random_image(rng, 4), random_image(rng, 4)};
    const std::vector<int> labels{0, 1};
    const GradCheckReport r = grad_check(m, batch, labels);
    for (const auto& b : r.blocks) {
        if (b.name != "classifier.bias") continue;
        EXPECT_LT(std::abs(b.analytic[2]), 1e-8);
        EXPECT_LT(std::abs(b.numeric[2]), 1e-8);
    }
}

TEST(GradCheck, FullToyModelRandomBatch) {
    std::mt19937_64 rng(5);
    const std::vector<int> widths{4, 6, 8};
    const Model<double> m = make_model<double>(3, widths, 5, 11);
    std::vector<Grid<double>> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_image(rng, 16));
    const std::vector<int> labels{0, 3, 1, 4};
    const GradCheckReport r = grad_check(m, batch, labels);
    EXPECT_LT(r.max_relative_error, 1e-4);
    EXPECT_EQ(r.blocks.size(), 8u);
}

TEST(GradCheck, WslHeadWithMaxPooling) {
    std::mt19937_64 rng(6);
    const std::vector<int> widths{4, 6};
    Model<double> m = make_model<double>(3, widths, 3, 2);
    m.wsl = init_wsl_from_base(m.classifier, m.backbone.output_depth());
    m.pooling = Pooling::Max;
    std::vector<Grid<double>> batch{random_image(rng, 8), random_image(rng, 8)};
    const std::vector<int> labels{0, 2};
    GradCheckOptions opt;
    opt.include_backbone = false;
    EXPECT_LT(grad_check(m, batch, labels, opt).max_relative_error, 1e-4);
}

TEST(GradCheck, EpsilonRange) {
    const std::vector<int> none;
    const Model<double> m = make_model<double>(3, none, 2, 1);
    std::vector<Grid<double>> batch{Grid<double>(2, 2, 3)};
    const std::vector<int> labels{0};
    GradCheckOptions opt;
    opt.epsilon = 1e-2;
    EXPECT_THROW(grad_check(m, batch, labels, opt), ConfigError);
    opt.epsilon = 1e-7;
    EXPECT_THROW(grad_check(m, batch, labels, opt), ConfigError);
}

TEST(Optimizer, FirstStepDescendsForMostSeeds) {
    int decreased = 0;
    const std::vector<int> widths{4, 6, 8};
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        std::mt19937_64 rng(seed);
        Model<float> m = make_model<float>(3, widths, 5, seed);
        std::vector<Grid<float>> imgs;
        for (int i = 0; i < 8; ++i) imgs.push_back(random_image(rng, 16).cast<float>());
        std::vector<const Grid<float>*> ptrs;
        for (const auto& g : imgs) ptrs.push_back(&g);
        std::vector<int> labels;
        for (int i = 0; i < 8; ++i) labels.push_back(static_cast<int>(rng() % 5));
        Gradients<float> g = zero_gradients(m);
        const double before = batch_loss<float>(m, ptrs, labels, &g, true);
        TrainConfig cfg;
        cfg.lr_backbone = 1e-3;
        cfg.lr_head = 1e-3;
        Optimizer<float> opt(cfg);
        auto blocks = param_blocks(m, g, true);
        opt.step(blocks);
        if (batch_loss<float>(m, ptrs, labels) < before) ++decreased;
    }
    EXPECT_GE(decreased, 38);
}

TEST(TrainConfig, DefaultsFollowPublishedSchedule) {
    const TrainConfig c;
    EXPECT_EQ(c.batch_size, 50);
    EXPECT_DOUBLE_EQ(c.lr_head, 1e-3);
    EXPECT_DOUBLE_EQ(c.lr_backbone, 1e-4);
    EXPECT_EQ(c.optimizer, OptimizerKind::Adam);
    EXPECT_DOUBLE_EQ(c.adam_beta1, 0.9);
    EXPECT_DOUBLE_EQ(c.adam_beta2, 0.999);
    EXPECT_DOUBLE_EQ(c.adam_epsilon, 1e-8);
    EXPECT_FALSE(c.horizontal_flip);
    EXPECT_DOUBLE_EQ(c.weight_decay, 0.0);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
    TrainConfig c;
    c.batch_size = 7;
    c.optimizer = OptimizerKind::Sgd;
    c.backbone_widths = {3, 5};
    c.pooling = Pooling::Max;
    const TrainConfig back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.hash(), c.hash());
    EXPECT_THROW(TrainConfig::from_json({{"batch_sise", 4}}), ConfigError);
    EXPECT_THROW(TrainConfig::from_json({{"batch_size", 0}}), ConfigError);
    EXPECT_THROW(TrainConfig::from_json({{"lr_head", -1.0}}), ConfigError);
    EXPECT_THROW(TrainConfig::from_json({{"optimizer", "rmsprop"}}), ConfigError);
}

TEST(TrainBase, ZeroEpochsReturnsInitialization) {
    const SynthDataset ds = generate_dataset(tiny_synth(1));
    MemoryImageStore store = ds.make_store();
    TrainConfig cfg = tiny_train();
    cfg.epochs = 0;
    const Checkpoint c = train_base(ds.manifest, store, cfg);
    const Model<float> init = make_model<float>(3, cfg.backbone_widths, 3, cfg.seed);
    EXPECT_EQ(parameter_digest(c.model), parameter_digest(init));
    EXPECT_EQ(c.epoch, 0);
    ASSERT_EQ(c.history.size(), 1u);
}

TEST(TrainBase, IsDeterministic) {
    const SynthDataset ds = generate_dataset(tiny_synth(2));
    MemoryImageStore store = ds.make_store();
    const auto split = split_train_val(ds.manifest, 0.25, 1);
    const Checkpoint a = train_base(split.train, store, tiny_train(), &split.val);
    const Checkpoint b = train_base(split.train, store, tiny_train(), &split.val);
    EXPECT_EQ(parameter_digest(a.model), parameter_digest(b.model));
    ASSERT_EQ(a.history.size(), 3u);
    for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
}

TEST(Optimizer, StepIndependentOfStorageOffset) {
    // Same parameters and gradients at every float offset within a cache line;
    // vectorized loops peel a different number of leading elements each time.
    constexpr std::size_t n = 301;
    std::mt19937_64 rng(8);
    std::normal_distribution<float> N(0.f, 1.f);
    std::vector<float> p0(n), g0(n);
    for (std::size_t i = 0; i < n; ++i) p0[i] = N(rng), g0[i] = 1e-3f * N(rng);
    TrainConfig cfg;
    cfg.lr_head = 3e-3;
    cfg.weight_decay = 1e-4;
    std::vector<float> first;
    for (std::size_t off = 0; off < 16; ++off) {
        std::vector<float> pbuf(n + 16), gbuf(n + 16);
        std::copy(p0.begin(), p0.end(), pbuf.begin() + off);
        std::copy(g0.begin(), g0.end(), gbuf.begin() + off);
        std::vector<ParamBlock<float>> blocks{
            {"w", std::span<float>(pbuf.data() + off, n), std::span<float>(gbuf.data() + off, n), false}};
        Optimizer<float> opt(cfg);
        for (int step = 0; step < 5; ++step) opt.step(blocks);
        const std::vector<float> out(pbuf.begin() + off, pbuf.begin() + off + n);
        if (off == 0) first = out;
        EXPECT_EQ(out, first) << "offset " << off;
    }
}

TEST(TrainBase, SeparableTwoClassReachesFullTrainAccuracy) {
    const SynthDataset ds = brightness_dataset(20, 9);
    ASSERT_TRUE(perceptron_separates(ds));
    MemoryImageStore store = ds.make_store();
    TrainConfig cfg;
    cfg.backbone_widths = {};
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.lr_head = 0.1;
    const Checkpoint c = train_base(ds.manifest, store, cfg);
    EXPECT_EQ(c.epoch, 20);
    EXPECT_DOUBLE_EQ(evaluate(c.model, ds.manifest, store, 1).top1, 1.0);
}

TEST(TrainBase, NanLossAbortsWithLastGoodCheckpoint) {
    const SynthDataset ds = generate_dataset(tiny_synth(3));
    MemoryImageStore store = ds.make_store();
    TrainConfig cfg = tiny_train();
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.lr_head = 1e30;
    cfg.lr_backbone = 1e30;
    cfg.epochs = 5;
    try {
        train_base(ds.manifest, store, cfg);
        FAIL() << "expected NonFiniteLossError";
    } catch (const NonFiniteLossError& e) {
        const Checkpoint& good = e.last_good();
        EXPECT_TRUE(good.model.classifier.finite());
        EXPECT_FALSE(good.history.empty());
    }
}

TEST(TrainBase, RejectsWrongPhaseAndEmptyData) {
    const SynthDataset ds = generate_dataset(tiny_synth(4));
    MemoryImageStore store = ds.make_store();
    TrainConfig cfg = tiny_train();
    cfg.phase = Phase::WslHeadOnly;
    EXPECT_THROW(train_base(ds.manifest, store, cfg), ConfigError);
    DatasetManifest empty = ds.manifest;
    empty.records.clear();
    EXPECT_THROW(train_base(empty, store, tiny_train()), ConfigError);
}

TEST(TrainWsl, ZeroEpochsReproducesBaseLogits) {
    const SynthDataset ds = generate_dataset(tiny_synth(5));
    MemoryImageStore store = ds.make_store();
    const Checkpoint base = train_base(ds.manifest, store, tiny_train());
    TrainConfig wc = default_wsl_config();
    wc.epochs = 0;
    const Checkpoint w = train_wsl(base, ds.manifest, store, wc);
    ASSERT_TRUE(w.model.wsl.has_value());
    for (const auto& r : ds.manifest.records) {
        const auto a = model_logits(base.model, store.tensor(r)), b = model_logits(w.model, store.tensor(r));
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
    }
}

TEST(TrainWsl, BackboneFrozenAndValNotWorseThanStart) {
    const SynthDataset ds = generate_dataset(tiny_synth(6));
    MemoryImageStore store = ds.make_store();
    const auto split = split_train_val(ds.manifest, 0.25, 2);
    const Checkpoint base = train_base(split.train, store, tiny_train(), &split.val);
    TrainConfig wc = default_wsl_config();
    wc.epochs = 3;
    wc.batch_size = 8;
    const Checkpoint w = train_wsl(base, split.train, store, wc, &split.val);
    EXPECT_EQ(backbone_digest(w.model.backbone), backbone_digest(base.model.backbone));
    EXPECT_EQ(w.model.backbone.stages[0].weight, base.model.backbone.stages[0].weight);
    EXPECT_EQ(w.base_digest, hex64(parameter_digest(base.model)));
    const double start = w.history.front().val_top1;
    EXPECT_GE(evaluate(w.model, split.val, store, 1).top1, start);
}

TEST(TrainWsl, LabelSpaceMismatchRejected) {
    const SynthDataset ds = generate_dataset(tiny_synth(7));
    MemoryImageStore store = ds.make_store();
    const Checkpoint base = train_base(ds.manifest, store, tiny_train());
    DatasetManifest other = ds.manifest;
    other.label_space.push_back("extra");
    EXPECT_THROW(train_wsl(base, other, store, default_wsl_config()), ShapeError);
}

TEST(Checkpoint, RoundTripAndArchitectureCheck) {
    const SynthDataset ds = generate_dataset(tiny_synth(8));
    MemoryImageStore store = ds.make_store();
    const auto split = split_train_val(ds.manifest, 0.25, 1);
    const Checkpoint base = train_base(split.train, store, tiny_train(), &split.val);
    const Checkpoint w = train_wsl(base, split.train, store, default_wsl_config(), &split.val);
    const auto dir = std::filesystem::temp_directory_path() / "wsl_test_ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "c.json", w);
    const Checkpoint back = load_checkpoint(dir / "c.json");
    EXPECT_EQ(parameter_digest(back.model), parameter_digest(w.model));
    EXPECT_EQ(back.label_space, w.label_space);
    EXPECT_EQ(back.config.to_json(), w.config.to_json());
    EXPECT_EQ(back.history.size(), w.history.size());
    EXPECT_EQ(back.base_digest, w.base_digest);

    nlohmann::json j = checkpoint_to_json(w);
    j["architecture_hash"] = "0000000000000000";
    EXPECT_THROW(checkpoint_from_json(j), ShapeError);

    write_loss_history_csv(dir / "h.csv", w.history);
    std::ifstream in(dir / "h.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "epoch,train_loss,val_loss,val_top1");
}
