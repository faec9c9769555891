#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "wattgan/checkpoint.hpp"
#include "wattgan/train.hpp"

using namespace wattgan;

namespace {

WindowBatch sinusoid_windows(std::size_t length, std::uint64_t seed) {
    auto s = synth_series({.length = length, .noise_scale = 1.0, .seed = seed});
    return windows(normalize(segmentize(s, 1)[0]), kWindow);
}

Tensor3 real_batch(const WindowBatch& wb, int k) {
    Tensor3 x(k, 1, kWindow);
    for (int i = 0; i < k; ++i)
        for (int t = 0; t < kWindow; ++t) x.at(i, 0, t) = static_cast<Real>(wb.row(i)[t]);
    return x;
}

bool same_params(const Network& a, const Network& b) {
    auto pa = parameters(a), pb = parameters(b);
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!(*pa[i] == *pb[i])) return false;
    return true;
}

bool same_running_stats(const Network& a, const Network& b) {
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        auto* x = std::get_if<BatchNorm1d>(&a.layers[i]);
        auto* y = std::get_if<BatchNorm1d>(&b.layers[i]);
        if (x && !(x->running_mean == y->running_mean && x->running_var == y->running_var)) return false;
    }
    return true;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParams) {
    Matrix p = Matrix::Constant(2, 3, 0.5);
    const Matrix before = p;
    AdamState st;
    adam_step({&p}, {Matrix::Zero(2, 3)}, st, 1e-3, 0.5, 0.999);
    EXPECT_TRUE(p == before);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepClosedForm) {
    Matrix p(1, 4);
    p << 1.0, -2.0, 0.0, 3.0;
    Matrix g(1, 4);
    g << 0.3, -1e-3, 5.0, 1e-9;
    const Matrix before = p;
    AdamState st;
    adam_step({&p}, {g}, st, 2e-4, 0.5, 0.999);
    for (int i = 0; i < 4; ++i) {
        const double expected = before(0, i) - 2e-4 * g(0, i) / (std::abs(g(0, i)) + 1e-8);
        EXPECT_NEAR(p(0, i), expected, 1e-15);
    }
}

TEST(Adam, DeterministicAndValidated) {
    Matrix a = Matrix::Constant(2, 2, 1.0), b = a;
    AdamState sa, sb;
    Matrix g = Matrix::Constant(2, 2, 0.7);
    for (int i = 0; i < 3; ++i) {
        adam_step({&a}, {g}, sa, 1e-2, 0.5, 0.999);
        adam_step({&b}, {g}, sb, 1e-2, 0.5, 0.999);
    }
    EXPECT_TRUE(a == b);
    Matrix bad = Matrix::Constant(2, 2, std::numeric_limits<Real>::quiet_NaN());
    EXPECT_THROW(adam_step({&a}, {bad}, sa, 1e-2, 0.5, 0.999), NumericalError);
    EXPECT_THROW(adam_step({&a}, {Matrix::Zero(3, 2)}, sa, 1e-2, 0.5, 0.999), ArgumentError);
}

TEST(CriticStep, ClipsLeavesGeneratorAndReportsPreUpdateLoss) {
    auto wb = sinusoid_windows(200, 1);
    auto g = init_generator(1);
    auto d = init_critic(2);
    const auto g0 = g;
    TrainConfig cfg;
    std::mt19937_64 rng(3);
    auto real = real_batch(wb, 16);
    auto z = sample_latents(16, rng);

    // expected loss from the same batch-statistics forward passes, before any update
    auto fake = generator_forward(g, z, BnMode::ASM);
    auto sr = critic_forward(d, real, BnMode::ASM), sf = critic_forward(d, fake, BnMode::ASM);
    double expected = 0;
    for (int i = 0; i < 16; ++i) expected += (sr[i] - sf[i]) / 16.0;

    AdamState adam;
    const double loss = critic_step(d, g, real, z, adam, cfg);
    EXPECT_NEAR(loss, expected, 1e-12);
    EXPECT_LE(max_abs_param(d), Real(0.01));
    EXPECT_TRUE(same_params(g, g0));
    EXPECT_TRUE(same_running_stats(g, g0));
}

TEST(GeneratorStep, LeavesCriticAndIsDeterministic) {
    auto g = init_generator(4);
    auto d = init_critic(5);
    clip_params(d, Real(0.01));
    const auto d0 = d;
    TrainConfig cfg;
    std::mt19937_64 rng(6);
    auto z = sample_latents(8, rng);
    auto g1 = g, g2 = g;
    AdamState a1, a2;
    const double l1 = generator_step(d, g1, z, a1, cfg);
    const double l2 = generator_step(d, g2, z, a2, cfg);
    EXPECT_EQ(l1, l2);
    EXPECT_TRUE(same_params(g1, g2));
    EXPECT_FALSE(same_params(g1, g));
    EXPECT_TRUE(same_params(d, d0));
    EXPECT_TRUE(same_running_stats(d, d0));
}

TEST(GeneratorStep, GradientFlowsThroughCritic) {
    auto g = init_generator(7);
    auto d = init_critic(8);
    std::mt19937_64 rng(9);
    auto z = to_activation(sample_latents(4, rng));
    auto loss = [&](const GeneratorNet& gen) {
        Activation x = forward(gen, z, BnMode::ASM);
        Activation s = forward(d, x, BnMode::ASM);
        return -static_cast<double>(s.values.mean());
    };
    Tape tg, td;
    Activation x = forward(g, z, BnMode::ASM, &tg);
    Activation s = forward(d, x, BnMode::ASM, &td);
    Matrix dx = backward(d, td, Matrix::Constant(1, 4, Real(-0.25)));
    ParamGrads grads = zero_grads(g);
    backward(g, tg, dx, &grads);

    // spot-check the last transposed-conv weights, the ones nearest the critic;
    // the step is small because batchnorm puts critic preactivations at unit
    // scale, so larger steps cross leaky-relu kinks
    auto params = parameters(g);
    const std::size_t p = params.size() - 2;
    std::vector<double> analytic, numeric;
    std::uniform_int_distribution<Eigen::Index> pick(0, params[p]->size() - 1);
    for (int i = 0; i < 20; ++i) {
        const Eigen::Index idx = pick(rng);
        Real& w = params[p]->data()[idx];
        const Real w0 = w;
        w = w0 + Real(1e-7);
        const double fp = loss(g);
        w = w0 - Real(1e-7);
        const double fm = loss(g);
        w = w0;
        analytic.push_back(grads[p].data()[idx]);
        numeric.push_back((fp - fm) / 2e-7);
    }
    EXPECT_GT(grads[p].cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT(oracle::max_rel_error(analytic, numeric), 1e-4);
}

TEST(Train, ZeroEpochsReturnsInitialNets) {
    auto wb = sinusoid_windows(300, 2);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 16;
    cfg.seed = 5;
    auto r = train(wb, cfg);
    EXPECT_TRUE(same_params(r.generator, init_generator(detail::mix_seed(5, 0))));
    EXPECT_TRUE(same_params(r.critic, init_critic(detail::mix_seed(5, 1))));
    EXPECT_TRUE(r.report.iterations.empty());
}

TEST(Train, ScheduleClipAndDeterminism) {
    auto wb = sinusoid_windows(400, 3);  // 353 windows
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.ncritic = 5;
    cfg.seed = 11;
    int callbacks = 0;
    auto a = train(wb, cfg, [&](int, const TrainReport&) { ++callbacks; });
    auto b = train(wb, cfg);
    EXPECT_EQ(callbacks, 2);
    const std::int64_t per_epoch = 353 / 32;
    EXPECT_EQ(a.report.critic_steps, 2 * per_epoch);
    EXPECT_EQ(a.report.generator_steps, (a.report.critic_steps + cfg.ncritic - 1) / cfg.ncritic);
    EXPECT_EQ(a.report.iterations.size(), static_cast<std::size_t>(a.report.critic_steps));
    EXPECT_EQ(a.report.epoch_wasserstein.size(), 2u);
    EXPECT_LE(a.report.max_critic_param, cfg.clip_c);
    for (const auto& it : a.report.iterations) {
        EXPECT_TRUE(std::isfinite(it.critic_loss));
        EXPECT_TRUE(std::isfinite(it.gen_loss));
    }
    Checkpoint ca{"x", cfg, config_hash(cfg), a.generator, a.critic};
    Checkpoint cb{"x", cfg, config_hash(cfg), b.generator, b.critic};
    EXPECT_EQ(serialize_checkpoint(ca), serialize_checkpoint(cb));
}

TEST(Train, RejectsEmptyOrShortData) {
    TrainConfig cfg;
    EXPECT_THROW(train(WindowBatch{{}, {}, 48}, cfg), DataError);
    auto wb = sinusoid_windows(100, 1);  // 53 windows < 128
    EXPECT_THROW(train(wb, cfg), DataError);
    cfg.batch_size = 1;
    EXPECT_THROW(train(wb, cfg), ConfigError);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
             [](TrainConfig& x) { x.lr = 0; }, [](TrainConfig& x) { x.beta1 = 1; }, [](TrainConfig& x) { x.beta2 = -0.1; },
             [](TrainConfig& x) { x.ncritic = 0; }, [](TrainConfig& x) { x.clip_c = 0; }, [](TrainConfig& x) { x.batch_size = 1; }}) {
        TrainConfig bad;
        mutate(bad);
        EXPECT_THROW(bad.validate(), ConfigError);
    }
}
