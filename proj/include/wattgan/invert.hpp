#pragma once

// Generator inversion by gradient descent in latent space, batched so that k
// windows are reconstructed in one pass, and the window anomaly score
//   score_i = alpha_w * SoftDTW(X_i, G(Z_i)) + beta_w * ||Z_i||_2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wattgan/error.hpp"
#include "wattgan/net.hpp"
#include "wattgan/sdtw.hpp"
#include "wattgan/series.hpp"
#include "wattgan/train.hpp"

namespace wattgan {

enum class ReconLoss { soft_dtw, euclidean };
enum class Aggregate { sum, mean };

inline std::string_view to_string(ReconLoss l) { return l == ReconLoss::soft_dtw ? "soft_dtw" : "euclidean"; }
inline ReconLoss recon_loss_from_string(std::string_view s) {
    if (s == "soft_dtw") return ReconLoss::soft_dtw;
    if (s == "euclidean") return ReconLoss::euclidean;
    throw ArgumentError("unknown reconstruction loss '" + std::string(s) + "'");
}
inline std::string_view to_string(Aggregate a) { return a == Aggregate::sum ? "sum" : "mean"; }
inline Aggregate aggregate_from_string(std::string_view s) {
    if (s == "sum") return Aggregate::sum;
    if (s == "mean") return Aggregate::mean;
    throw ArgumentError("unknown aggregate '" + std::string(s) + "'");
}

struct InvertConfig {
    int steps = 500;
    double step_size = 0.05;
    ReconLoss loss = ReconLoss::soft_dtw;
    BnMode bn_mode = BnMode::ASM;
    std::uint64_t seed = 0;
    Aggregate aggregate = Aggregate::sum;
    SdtwConfig sdtw;
    // Independent latent initialisations per window; the lowest final loss wins.
    int restarts = 1;
    // Windows per invert_batch call in score_segment; 0 puts a segment in one batch.
    int max_batch = 0;

    void validate() const {
        if (steps < 1) throw ConfigError("invert.steps must be >= 1");
        if (!(step_size > 0)) throw ConfigError("invert.step_size must be positive");
        if (restarts < 1) throw ConfigError("invert.restarts must be >= 1");
        if (max_batch < 0) throw ConfigError("invert.max_batch must be >= 0");
        sdtw.validate();
    }
};

struct Reconstruction {
    Tensor3 z_final;                  // (k,100,1)
    Tensor3 x_recon;                  // (k,1,48), G(z_final) under the configured mode
    std::vector<double> losses;       // per-window reconstruction loss at z_final
    std::vector<double> latent_norms; // ||z_i||_2
    std::vector<double> loss_history; // aggregated loss before each update
};

struct ScoreWeights {
    double alpha_w = 1.0;
    double beta_w = 0.0;

    void validate() const {
        if (alpha_w < 0 || beta_w < 0 || (alpha_w == 0 && beta_w == 0))
            throw ConfigError("score weights must be non-negative and not both zero");
    }
};

inline Tensor3 init_latents(int k, std::uint64_t seed) {
    if (k < 1) throw ArgumentError("init_latents: k must be >= 1");
    std::mt19937_64 rng(seed);
    return sample_latents(k, rng);
}

inline Tensor3 windows_to_tensor(const WindowBatch& batch, std::size_t first, std::size_t count) {
    if (batch.w != static_cast<std::size_t>(kWindow)) throw ArgumentError("windows must have length 48");
    Tensor3 x(static_cast<int>(count), 1, kWindow);
    for (std::size_t i = 0; i < count; ++i) {
        auto row = batch.row(first + i);
        for (int t = 0; t < kWindow; ++t) x.at(static_cast<int>(i), 0, t) = static_cast<Real>(row[t]);
    }
    return x;
}

namespace detail {

struct BatchLoss {
    std::vector<double> per_window;
    Matrix grad;  // 1 x (k*48), d(sum of losses)/d(recon)
};

inline BatchLoss window_losses(const Matrix& recon, const Tensor3& target, ReconLoss kind, const SdtwConfig& sdtw_cfg,
                               bool with_grad) {
    const int k = target.batch;
    BatchLoss out;
    out.per_window.resize(static_cast<std::size_t>(k));
    if (with_grad) out.grad.resize(1, static_cast<Eigen::Index>(k) * kWindow);
    std::vector<double> xr(kWindow), xt(kWindow);
    for (int i = 0; i < k; ++i) {
        for (int t = 0; t < kWindow; ++t) {
            xr[t] = static_cast<double>(recon(0, static_cast<Eigen::Index>(i) * kWindow + t));
            xt[t] = static_cast<double>(target.at(i, 0, t));
        }
        if (!with_grad) {
            out.per_window[i] = kind == ReconLoss::soft_dtw ? sdtw(xr, xt, sdtw_cfg) : euclidean(xr, xt);
            continue;
        }
        LossAndGrad lg = kind == ReconLoss::soft_dtw ? sdtw_value_and_grad(xr, xt, sdtw_cfg) : euclidean_value_and_grad(xr, xt);
        out.per_window[i] = lg.value;
        for (int t = 0; t < kWindow; ++t) out.grad(0, static_cast<Eigen::Index>(i) * kWindow + t) = static_cast<Real>(lg.grad[t]);
    }
    return out;
}

inline std::vector<double> column_norms(const Tensor3& z) {
    std::vector<double> out(static_cast<std::size_t>(z.batch));
    for (int b = 0; b < z.batch; ++b) {
        double s = 0.0;
        for (int c = 0; c < z.channels; ++c) s += static_cast<double>(z.at(b, c, 0)) * static_cast<double>(z.at(b, c, 0));
        out[b] = std::sqrt(s);
    }
    return out;
}

inline Reconstruction invert_once(const Tensor3& x, const GeneratorNet& g, const InvertConfig& cfg, Tensor3 z0) {
    const int k = x.batch;
    Activation z = to_activation(z0);
    Reconstruction rec;
    rec.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
    const Real scale = cfg.aggregate == Aggregate::mean ? Real(1) / static_cast<Real>(k) : Real(1);
    const Real lr = static_cast<Real>(cfg.step_size);
    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        Activation xr = forward(g, z, cfg.bn_mode, &tape);
        BatchLoss bl = window_losses(xr.values, x, cfg.loss, cfg.sdtw, true);
        double total = 0.0;
        for (double v : bl.per_window) total += v;
        if (!std::isfinite(total)) throw NumericalError("invert_batch: non-finite loss at step " + std::to_string(step));
        rec.loss_history.push_back(cfg.aggregate == Aggregate::mean ? total / k : total);
        Matrix dz = backward(g, tape, scale * bl.grad);
        z.values -= lr * dz;
    }
    Activation xr = forward(g, z, cfg.bn_mode);
    rec.losses = window_losses(xr.values, x, cfg.loss, cfg.sdtw, false).per_window;
    rec.z_final = to_tensor(z);
    rec.x_recon = to_tensor(xr);
    rec.latent_norms = column_norms(rec.z_final);
    return rec;
}

}  // namespace detail

// Runs exactly cfg.steps plain gradient-descent updates Z <- Z - step_size * dL/dZ
// with the generator frozen. The loss is evaluated pairwise (window i against
// reconstruction i) and summed or averaged over the batch. `z0` overrides the
// seeded initial latents for the first restart.
inline Reconstruction invert_batch(const Tensor3& x, const GeneratorNet& g, const InvertConfig& cfg,
                                   const std::optional<Tensor3>& z0 = std::nullopt) {
    cfg.validate();
    if (x.batch < 1 || x.channels != 1 || x.length != kWindow) throw ArgumentError("invert_batch: X must have shape (k,1,48)");
    if (z0 && (z0->batch != x.batch || z0->channels != kLatentDim || z0->length != 1))
        throw ArgumentError("invert_batch: initial latents must have shape (k,100,1)");

    Reconstruction best;
    for (int r = 0; r < cfg.restarts; ++r) {
        Tensor3 init = (r == 0 && z0) ? *z0 : init_latents(x.batch, r == 0 ? cfg.seed : detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        Reconstruction rec = detail::invert_once(x, g, cfg, std::move(init));
        if (r == 0) {
            best = std::move(rec);
            continue;
        }
        for (int i = 0; i < x.batch; ++i) {
            if (!(rec.losses[i] < best.losses[i])) continue;
            best.losses[i] = rec.losses[i];
            best.latent_norms[i] = rec.latent_norms[i];
            for (int c = 0; c < kLatentDim; ++c) best.z_final.at(i, c, 0) = rec.z_final.at(i, c, 0);
            for (int t = 0; t < kWindow; ++t) best.x_recon.at(i, 0, t) = rec.x_recon.at(i, 0, t);
        }
    }
    return best;
}

// alpha_w * SoftDTW(X_i, X'_i) + beta_w * ||Z_i||. The Soft-DTW term is always
// recomputed here, whatever loss drove the inversion.
inline std::vector<double> anomaly_score(const Tensor3& x, const Reconstruction& recon, const ScoreWeights& weights,
                                         const SdtwConfig& sdtw_cfg) {
    if (!x.same_shape(recon.x_recon) || recon.latent_norms.size() != static_cast<std::size_t>(x.batch))
        throw ArgumentError("anomaly_score: reconstruction does not match X");
    std::vector<double> out(static_cast<std::size_t>(x.batch));
    std::vector<double> a(kWindow), b(kWindow);
    for (int i = 0; i < x.batch; ++i) {
        for (int t = 0; t < kWindow; ++t) {
            a[t] = static_cast<double>(x.at(i, 0, t));
            b[t] = static_cast<double>(recon.x_recon.at(i, 0, t));
        }
        const double recon_term = weights.alpha_w == 0.0 ? 0.0 : weights.alpha_w * sdtw(a, b, sdtw_cfg);
        out[i] = recon_term + weights.beta_w * recon.latent_norms[i];
    }
    return out;
}

struct SegmentScores {
    std::vector<std::size_t> starts;
    std::vector<double> recon_loss;   // Soft-DTW(X_i, X'_i)
    std::vector<double> latent_norm;
    std::vector<double> score;
};

// Splits n windows into ceil(n / max_batch) nearly equal chunks so no chunk
// has a single window (which ASM batchnorm cannot normalise).
inline std::vector<std::size_t> batch_sizes(std::size_t n, int max_batch) {
    if (n == 0) return {};
    if (max_batch <= 0 || n <= static_cast<std::size_t>(max_batch)) return {n};
    const std::size_t chunks = (n + max_batch - 1) / max_batch;
    std::vector<std::size_t> sizes(chunks, n / chunks);
    for (std::size_t i = 0; i < n % chunks; ++i) ++sizes[i];
    return sizes;
}

inline SegmentScores score_windows(const WindowBatch& wb, const GeneratorNet& g, const InvertConfig& icfg,
                                   const ScoreWeights& weights) {
    icfg.validate();
    weights.validate();
    SegmentScores out;
    out.starts = wb.starts;
    std::size_t first = 0;
    std::uint64_t chunk = 0;
    for (std::size_t size : batch_sizes(wb.count(), icfg.max_batch)) {
        Tensor3 x = windows_to_tensor(wb, first, size);
        InvertConfig cfg = icfg;
        cfg.seed = detail::mix_seed(icfg.seed, 1000 + chunk++);
        Reconstruction rec = invert_batch(x, g, cfg);
        ScoreWeights unit{1.0, 0.0};
        std::vector<double> recon_term = anomaly_score(x, rec, unit, icfg.sdtw);
        for (std::size_t i = 0; i < size; ++i) {
            out.recon_loss.push_back(recon_term[i]);
            out.latent_norm.push_back(rec.latent_norms[i]);
            out.score.push_back(weights.alpha_w * recon_term[i] + weights.beta_w * rec.latent_norms[i]);
        }
        first += size;
    }
    return out;
}

inline SegmentScores score_segment(const Segment& segment, const GeneratorNet& g, const InvertConfig& icfg,
                                   const ScoreWeights& weights, int w = kWindow) {
    if (w != kWindow) throw ArgumentError("score_segment: the generator produces windows of length 48");
    return score_windows(windows(segment, w), g, icfg, weights);
}

// Re-weights stored score components without re-running the inversion.
inline std::vector<double> rescore(const SegmentScores& s, const ScoreWeights& weights) {
    std::vector<double> out(s.score.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = weights.alpha_w * s.recon_loss[i] + weights.beta_w * s.latent_norm[i];
    return out;
}

inline void write_scores_csv(std::ostream& out, std::size_t segment_id, const SegmentScores& s, bool header = true) {
    if (header) out << "segment_id,window_start,recon_loss,latent_norm,anomaly_score\n";
    for (std::size_t i = 0; i < s.starts.size(); ++i)
        out << segment_id << ',' << s.starts[i] << ',' << format_double(s.recon_loss[i]) << ','
            << format_double(s.latent_norm[i]) << ',' << format_double(s.score[i]) << '\n';
}

}  // namespace wattgan
