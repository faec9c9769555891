#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "wattgan/invert.hpp"

using namespace wattgan;

namespace {

Tensor3 rows_of(const Tensor3& t, std::span<const int> idx) {
    Tensor3 out(static_cast<int>(idx.size()), t.channels, t.length);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int c = 0; c < t.channels; ++c)
            for (int l = 0; l < t.length; ++l) out.at(static_cast<int>(i), c, l) = t.at(idx[i], c, l);
    return out;
}

// Smooth targets in [-1, 1] that a generator can roughly follow.
Tensor3 target_windows(int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 6.28);
    Tensor3 x(k, 1, kWindow);
    for (int i = 0; i < k; ++i) {
        const double phase = u(rng);
        for (int t = 0; t < kWindow; ++t) x.at(i, 0, t) = static_cast<Real>(0.6 * std::sin(phase + 2 * 3.14159265 * t / 24.0));
    }
    return x;
}

// Moves batchnorm running statistics off their initial values so SSM is not trivial.
GeneratorNet warmed_generator(std::uint64_t seed) {
    auto g = init_generator(seed);
    for (int i = 0; i < 3; ++i) {
        BatchStats stats;
        forward(g, to_activation(init_latents(16, seed + i)), BnMode::ASM, nullptr, &stats);
        update_running_stats(g, stats);
    }
    return g;
}

double max_abs_diff(const Tensor3& a, const Tensor3& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data[i] - b.data[i])));
    return m;
}

}  // namespace

TEST(InitLatents, DeterministicStandardNormal) {
    auto a = init_latents(1000, 42), b = init_latents(1000, 42), c = init_latents(1000, 43);
    EXPECT_EQ(a.batch, 1000);
    EXPECT_EQ(a.channels, kLatentDim);
    EXPECT_EQ(a.length, 1);
    EXPECT_EQ(a.data, b.data);
    EXPECT_NE(a.data, c.data);
    double mean = 0, sq = 0;
    for (Real v : a.data) {
        mean += v;
        sq += static_cast<double>(v) * v;
    }
    mean /= static_cast<double>(a.data.size());
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(sq / static_cast<double>(a.data.size()), 1.0, 0.02);
    EXPECT_THROW(init_latents(0, 1), ArgumentError);
}

TEST(InvertBatch, SequentialEqualsBatchInSsm) {
    auto g = warmed_generator(3);
    auto x = target_windows(8, 4);
    auto z0 = init_latents(8, 5);
    InvertConfig cfg;
    cfg.steps = 20;
    cfg.bn_mode = BnMode::SSM;
    cfg.aggregate = Aggregate::sum;
    auto batch = invert_batch(x, g, cfg, z0);
    for (int i = 0; i < 8; ++i) {
        const int idx[] = {i};
        auto single = invert_batch(rows_of(x, idx), g, cfg, rows_of(z0, idx));
        EXPECT_LT(max_abs_diff(single.z_final, rows_of(batch.z_final, idx)), 1e-9);
        EXPECT_LT(max_abs_diff(single.x_recon, rows_of(batch.x_recon, idx)), 1e-9);
        EXPECT_NEAR(single.losses[0], batch.losses[i], 1e-9);
    }
}

TEST(InvertBatch, FixedPointHasZeroLossAndNoUpdate) {
    auto g = warmed_generator(6);
    auto z0 = init_latents(4, 7);
    for (BnMode mode : {BnMode::ASM, BnMode::SSM}) {
        auto x = generator_forward(g, z0, mode);
        InvertConfig cfg;
        cfg.steps = 5;
        cfg.loss = ReconLoss::euclidean;
        cfg.bn_mode = mode;
        auto rec = invert_batch(x, g, cfg, z0);
        EXPECT_EQ(rec.loss_history[0], 0.0);
        EXPECT_EQ(rec.z_final.data, z0.data);
        for (double l : rec.losses) EXPECT_EQ(l, 0.0);
    }
}

TEST(InvertBatch, EuclideanLossNonIncreasingForSmallSteps) {
    auto g = warmed_generator(8);
    auto x = target_windows(4, 9);
    InvertConfig cfg;
    cfg.steps = 200;
    cfg.step_size = 0.01;
    cfg.loss = ReconLoss::euclidean;
    cfg.bn_mode = BnMode::SSM;
    cfg.seed = 10;
    auto rec = invert_batch(x, g, cfg);
    ASSERT_EQ(rec.loss_history.size(), 200u);
    for (std::size_t s = 1; s < rec.loss_history.size(); ++s) EXPECT_LE(rec.loss_history[s], rec.loss_history[s - 1] + 1e-12) << s;
    EXPECT_LT(rec.loss_history.back(), rec.loss_history.front());
    for (double l : rec.losses) EXPECT_GE(l, 0.0);
}

TEST(InvertBatch, ReconstructionIsGeneratorOfFinalLatents) {
    auto g = warmed_generator(11);
    auto x = target_windows(3, 12);
    for (BnMode mode : {BnMode::ASM, BnMode::SSM}) {
        InvertConfig cfg;
        cfg.steps = 10;
        cfg.bn_mode = mode;
        auto rec = invert_batch(x, g, cfg);
        EXPECT_EQ(rec.x_recon.data, generator_forward(g, rec.z_final, mode).data);
        for (int i = 0; i < 3; ++i) {
            double s = 0;
            for (int c = 0; c < kLatentDim; ++c) s += std::pow(static_cast<double>(rec.z_final.at(i, c, 0)), 2);
            EXPECT_NEAR(rec.latent_norms[i], std::sqrt(s), 1e-12);
        }
    }
}

TEST(InvertBatch, GeneratorIsFrozen) {
    const auto g0 = warmed_generator(13);
    auto g = g0;
    InvertConfig cfg;
    cfg.steps = 15;
    invert_batch(target_windows(5, 14), g, cfg);
    cfg.bn_mode = BnMode::SSM;
    invert_batch(target_windows(5, 14), g, cfg);
    auto pa = parameters(g);
    auto pb = parameters(g0);
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(*pa[i] == *pb[i]);
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        if (auto* bn = std::get_if<BatchNorm1d>(&g.layers[i])) {
            const auto& bn0 = std::get<BatchNorm1d>(g0.layers[i]);
            EXPECT_TRUE(bn->running_mean == bn0.running_mean);
            EXPECT_TRUE(bn->running_var == bn0.running_var);
        }
    }
}

TEST(InvertBatch, SsmPermutationEquivariance) {
    auto g = warmed_generator(15);
    auto x = target_windows(6, 16);
    auto z0 = init_latents(6, 17);
    const int perm[] = {3, 0, 5, 1, 4, 2};
    InvertConfig cfg;
    cfg.steps = 10;
    cfg.bn_mode = BnMode::SSM;
    auto a = invert_batch(x, g, cfg, z0);
    auto b = invert_batch(rows_of(x, perm), g, cfg, rows_of(z0, perm));
    EXPECT_LT(max_abs_diff(rows_of(a.z_final, perm), b.z_final), 1e-9);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a.losses[perm[i]], b.losses[i], 1e-9);
}

TEST(InvertBatch, AsmDiffersFromSsm) {
    auto g = warmed_generator(18);
    auto x = target_windows(4, 19);
    auto z0 = init_latents(4, 20);
    InvertConfig cfg;
    cfg.steps = 10;
    cfg.bn_mode = BnMode::ASM;
    auto a = invert_batch(x, g, cfg, z0);
    cfg.bn_mode = BnMode::SSM;
    auto s = invert_batch(x, g, cfg, z0);
    EXPECT_GT(max_abs_diff(a.x_recon, s.x_recon), 1e-6);
}

TEST(InvertBatch, MeanAggregateEqualsScaledStepSize) {
    auto g = warmed_generator(21);
    auto x = target_windows(4, 22);
    InvertConfig cfg;
    cfg.steps = 10;
    cfg.bn_mode = BnMode::SSM;
    cfg.aggregate = Aggregate::mean;
    auto m = invert_batch(x, g, cfg);
    cfg.aggregate = Aggregate::sum;
    cfg.step_size /= 4;
    auto s = invert_batch(x, g, cfg);
    EXPECT_LT(max_abs_diff(m.z_final, s.z_final), 1e-12);
    EXPECT_NEAR(m.loss_history[0] * 4, s.loss_history[0], 1e-9);
}

TEST(InvertBatch, RestartsKeepPerWindowBest) {
    auto g = warmed_generator(23);
    auto x = target_windows(4, 24);
    InvertConfig cfg;
    cfg.steps = 10;
    cfg.bn_mode = BnMode::SSM;
    auto one = invert_batch(x, g, cfg);
    cfg.restarts = 3;
    auto three = invert_batch(x, g, cfg);
    for (int i = 0; i < 4; ++i) EXPECT_LE(three.losses[i], one.losses[i]);
}

TEST(InvertBatch, NonFiniteLossNamesStep) {
    auto g = init_generator(1);
    auto x = target_windows(2, 2);
    x.at(1, 0, 7) = std::numeric_limits<Real>::quiet_NaN();
    InvertConfig cfg;
    cfg.steps = 3;
    try {
        invert_batch(x, g, cfg);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    }
}

TEST(InvertBatch, ContractErrors) {
    auto g = init_generator(1);
    InvertConfig cfg;
    cfg.steps = 0;
    EXPECT_THROW(invert_batch(target_windows(2, 1), g, cfg), ConfigError);
    cfg.steps = 1;
    cfg.step_size = 0;
    EXPECT_THROW(invert_batch(target_windows(2, 1), g, cfg), ConfigError);
    cfg.step_size = 0.1;
    EXPECT_THROW(invert_batch(Tensor3(2, 1, 47), g, cfg), ArgumentError);
    EXPECT_THROW(invert_batch(target_windows(1, 1), g, cfg), ArgumentError);  // ASM with one window
    EXPECT_THROW(invert_batch(target_windows(2, 1), g, cfg, init_latents(3, 1)), ArgumentError);
}

TEST(AnomalyScore, Arithmetic) {
    Tensor3 x = target_windows(2, 30);
    Reconstruction rec;
    rec.x_recon = target_windows(2, 31);
    rec.z_final = Tensor3(2, kLatentDim, 1);
    rec.z_final.data.assign(rec.z_final.data.size(), Real(0.1));
    rec.latent_norms = {1.0, 1.0};

    auto latent_only = anomaly_score(x, rec, {0.0, 1.0}, {});
    EXPECT_NEAR(latent_only[0], 1.0, 1e-12);

    auto recon_only = anomaly_score(x, rec, {2.5, 0.0}, {0.1});
    std::vector<double> a(kWindow), b(kWindow);
    for (int t = 0; t < kWindow; ++t) {
        a[t] = x.at(1, 0, t);
        b[t] = rec.x_recon.at(1, 0, t);
    }
    EXPECT_NEAR(recon_only[1], 2.5 * sdtw(a, b, {0.1}), 1e-12);

    rec.latent_norms = {0.0, 0.0};
    auto zero_z = anomaly_score(x, rec, {1.0, 7.0}, {0.1});
    EXPECT_NEAR(zero_z[1], sdtw(a, b, {0.1}), 1e-12);

    EXPECT_THROW((ScoreWeights{0.0, 0.0}.validate()), ConfigError);
    EXPECT_THROW((ScoreWeights{-1.0, 1.0}.validate()), ConfigError);
}

TEST(AnomalyScore, RecomputesSoftDtwAfterEuclideanInversion) {
    auto g = warmed_generator(32);
    auto x = target_windows(3, 33);
    InvertConfig cfg;
    cfg.steps = 5;
    cfg.loss = ReconLoss::euclidean;
    auto rec = invert_batch(x, g, cfg);
    auto s = anomaly_score(x, rec, {1.0, 0.0}, {0.1});
    std::vector<double> a(kWindow), b(kWindow);
    for (int t = 0; t < kWindow; ++t) {
        a[t] = x.at(0, 0, t);
        b[t] = rec.x_recon.at(0, 0, t);
    }
    EXPECT_EQ(s[0], sdtw(a, b, {0.1}));
    EXPECT_NE(s[0], rec.losses[0]);
}

TEST(BatchSizes, BalancedChunks) {
    EXPECT_EQ(batch_sizes(0, 10), std::vector<std::size_t>{});
    EXPECT_EQ(batch_sizes(7, 0), std::vector<std::size_t>{7});
    EXPECT_EQ(batch_sizes(11, 5), (std::vector<std::size_t>{4, 4, 3}));
    for (std::size_t n = 1; n < 300; n += 7) {
        auto sizes = batch_sizes(n, 64);
        EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), n);
        for (auto s : sizes) EXPECT_LE(s, 64u);
        if (n >= 2)
            for (auto s : sizes) EXPECT_GE(s, 2u);
    }
}

TEST(ScoreSegment, CountAlignmentAndDeterminism) {
    auto s = synth_series({.length = 147, .seed = 3});
    auto seg = normalize(segmentize(s, 1)[0]);
    auto g = warmed_generator(34);
    InvertConfig cfg;
    cfg.steps = 3;
    cfg.max_batch = 32;
    auto a = score_segment(seg, g, cfg, {1.0, 0.1});
    auto b = score_segment(seg, g, cfg, {1.0, 0.1});
    ASSERT_EQ(a.score.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(a.starts[i], i);
    EXPECT_EQ(a.score, b.score);
    auto r = rescore(a, {1.0, 0.1});
    for (std::size_t i = 0; i < 100; ++i) EXPECT_NEAR(r[i], a.score[i], 1e-12);
    std::ostringstream csv;
    write_scores_csv(csv, 4, a);
    EXPECT_EQ(csv.str().rfind("segment_id,window_start,recon_loss,latent_norm,anomaly_score\n4,0,", 0), 0u);
    EXPECT_THROW(score_segment(seg, g, cfg, {1.0, 0.0}, 24), ArgumentError);
}
