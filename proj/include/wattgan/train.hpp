#pragma once

// Wasserstein training of the generator/critic pair: Adam updates, critic
// weight clipping, and n_critic critic steps per generator step.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "wattgan/error.hpp"
#include "wattgan/net.hpp"
#include "wattgan/series.hpp"

namespace wattgan {

struct TrainConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int ncritic = 5;
    double clip_c = 0.01;
    int batch_size = 128;
    int epochs = 200;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("train.lr must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
        if (ncritic < 1) throw ConfigError("train.ncritic must be >= 1");
        if (!(clip_c > 0)) throw ConfigError("train.clip_c must be positive");
        if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
        if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    }
};

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::int64_t step = 0;
};

inline constexpr double kAdamEps = 1e-8;

// Bias-corrected Adam, applied elementwise:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
inline void adam_step(const std::vector<Matrix*>& params, const ParamGrads& grads, AdamState& state, double lr,
                      double beta1, double beta2, double eps = kAdamEps) {
    if (params.size() != grads.size()) throw ArgumentError("adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        for (const Matrix* p : params) {
            state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
            state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    if (state.m.size() != params.size()) throw ArgumentError("adam_step: state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols())
            throw ArgumentError("adam_step: gradient " + std::to_string(i) + " has the wrong shape");
        if (!grads[i].allFinite()) throw NumericalError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
    ++state.step;
    const Real b1 = static_cast<Real>(beta1), b2 = static_cast<Real>(beta2);
    const Real bc1 = static_cast<Real>(1.0 - std::pow(beta1, static_cast<double>(state.step)));
    const Real bc2 = static_cast<Real>(1.0 - std::pow(beta2, static_cast<double>(state.step)));
    const Real step_lr = static_cast<Real>(lr);
    const Real e = static_cast<Real>(eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (Real(1) - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (Real(1) - b2) * grads[i].cwiseAbs2();
        params[i]->array() -= step_lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + e);
    }
}

// Standard-normal latent batch (k,100,1).
inline Tensor3 sample_latents(int k, std::mt19937_64& rng) {
    Tensor3 z(k, kLatentDim, 1);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : z.data) v = static_cast<Real>(dist(rng));
    return z;
}

namespace detail {

inline Matrix constant_grad(Eigen::Index n, Real value) { return Matrix::Constant(1, n, value); }

inline Real mean_of(const Matrix& scores) { return scores.sum() / static_cast<Real>(scores.size()); }

}  // namespace detail

// One critic update: ascend mean D(real) - mean D(G(z)) (Adam on the
// negation), advance the critic's running statistics, then clip. The
// generator is only read. Returns the objective measured before the update.
inline double critic_step(CriticNet& critic, const GeneratorNet& generator, const Tensor3& real, const Tensor3& z,
                          AdamState& adam, const TrainConfig& cfg) {
    if (real.batch < 2 || z.batch < 2) throw ArgumentError("critic_step: batch size must be >= 2");
    Activation fake = forward(generator, to_activation(z), BnMode::ASM);

    Tape tape_real, tape_fake;
    BatchStats stats_real, stats_fake;
    Activation s_real = forward(critic, to_activation(real), BnMode::ASM, &tape_real, &stats_real);
    Activation s_fake = forward(critic, fake, BnMode::ASM, &tape_fake, &stats_fake);
    const double loss = static_cast<double>(detail::mean_of(s_real.values) - detail::mean_of(s_fake.values));

    ParamGrads grads = zero_grads(critic);
    backward(critic, tape_real, detail::constant_grad(real.batch, Real(-1) / static_cast<Real>(real.batch)), &grads);
    backward(critic, tape_fake, detail::constant_grad(z.batch, Real(1) / static_cast<Real>(z.batch)), &grads);
    adam_step(parameters(critic), grads, adam, cfg.lr, cfg.beta1, cfg.beta2);
    update_running_stats(critic, stats_real);
    update_running_stats(critic, stats_fake);
    clip_params(critic, static_cast<Real>(cfg.clip_c));
    return loss;
}

// One generator update: ascend mean D(G(z)) through a frozen critic. Returns
// -mean D(G(z)) measured before the update.
inline double generator_step(const CriticNet& critic, GeneratorNet& generator, const Tensor3& z, AdamState& adam,
                             const TrainConfig& cfg) {
    if (z.batch < 2) throw ArgumentError("generator_step: batch size must be >= 2");
    Tape tape_g, tape_d;
    BatchStats stats_g;
    Activation fake = forward(generator, to_activation(z), BnMode::ASM, &tape_g, &stats_g);
    Activation scores = forward(critic, fake, BnMode::ASM, &tape_d);
    const double loss = -static_cast<double>(detail::mean_of(scores.values));

    Matrix d_fake = backward(critic, tape_d, detail::constant_grad(z.batch, Real(-1) / static_cast<Real>(z.batch)));
    ParamGrads grads = zero_grads(generator);
    backward(generator, tape_g, std::move(d_fake), &grads);
    adam_step(parameters(generator), grads, adam, cfg.lr, cfg.beta1, cfg.beta2);
    update_running_stats(generator, stats_g);
    return loss;
}

struct IterationRecord {
    std::int64_t iteration = 0;
    int epoch = 0;
    double critic_loss = 0.0;
    double gen_loss = 0.0;  // most recent generator loss
    double wall_seconds = 0.0;
};

struct TrainReport {
    std::vector<IterationRecord> iterations;
    std::vector<double> epoch_wasserstein;  // mean |critic loss| per epoch
    std::int64_t critic_steps = 0;
    std::int64_t generator_steps = 0;
    // Largest |critic parameter| seen right after any critic step.
    double max_critic_param = 0.0;
};

struct TrainResult {
    GeneratorNet generator;
    CriticNet critic;
    TrainReport report;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

using EpochCallback = std::function<void(int epoch, const TrainReport&)>;

// Each epoch shuffles the training windows and walks them in full batches
// (the last partial batch is dropped). Every batch drives one critic step; a
// generator step follows every ncritic-th critic step, starting with the first.
inline TrainResult train(const WindowBatch& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (data.count() == 0) throw DataError("train: empty training set");
    if (data.w != static_cast<std::size_t>(kWindow))
        throw ArgumentError("train: windows must have length " + std::to_string(kWindow));
    if (data.count() < static_cast<std::size_t>(cfg.batch_size))
        throw DataError("train: " + std::to_string(data.count()) + " windows is less than one batch of " +
                        std::to_string(cfg.batch_size));

    TrainResult result{init_generator(detail::mix_seed(cfg.seed, 0)), init_critic(detail::mix_seed(cfg.seed, 1)), {}};
    std::mt19937_64 rng(detail::mix_seed(cfg.seed, 2));
    AdamState adam_g, adam_d;
    TrainReport& report = result.report;

    std::vector<std::size_t> order(data.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batches = data.count() / static_cast<std::size_t>(cfg.batch_size);
    const auto t0 = std::chrono::steady_clock::now();
    double last_gen_loss = 0.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_abs = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            Tensor3 real(cfg.batch_size, 1, kWindow);
            for (int i = 0; i < cfg.batch_size; ++i) {
                auto row = data.row(order[b * cfg.batch_size + i]);
                for (int t = 0; t < kWindow; ++t) real.at(i, 0, t) = static_cast<Real>(row[t]);
            }
            Tensor3 z = sample_latents(cfg.batch_size, rng);
            const double c_loss = critic_step(result.critic, result.generator, real, z, adam_d, cfg);
            report.max_critic_param = std::max(report.max_critic_param, static_cast<double>(max_abs_param(result.critic)));
            if (report.critic_steps % cfg.ncritic == 0) {
                Tensor3 zg = sample_latents(cfg.batch_size, rng);
                last_gen_loss = generator_step(result.critic, result.generator, zg, adam_g, cfg);
                ++report.generator_steps;
            }
            ++report.critic_steps;
            if (!std::isfinite(c_loss) || !std::isfinite(last_gen_loss))
                throw NumericalError("train: non-finite loss at iteration " + std::to_string(report.critic_steps));
            epoch_abs += std::abs(c_loss);
            report.iterations.push_back({report.critic_steps, epoch, c_loss, last_gen_loss,
                                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
        }
        report.epoch_wasserstein.push_back(epoch_abs / static_cast<double>(batches));
        if (on_epoch) on_epoch(epoch, report);
    }
    return result;
}

inline void write_train_report_csv(std::ostream& out, const TrainReport& report) {
    out << "iteration,critic_loss,gen_loss\n";
    for (const auto& r : report.iterations)
        out << r.iteration << ',' << format_double(r.critic_loss) << ',' << format_double(r.gen_loss) << '\n';
}

}  // namespace wattgan
