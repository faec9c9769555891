#pragma once

// Fixed 1D-DCGAN generator and critic with hand-written backward passes.
//
// Activations travel between layers as a (channels x batch*length) matrix,
// column b*length + t holding position t of sample b. Conv and transposed
// conv share one im2col/col2im geometry; the GEMMs go through Eigen.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "wattgan/error.hpp"

namespace wattgan {

#ifdef WATTGAN_USE_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr int kLatentDim = 100;
inline constexpr int kWindow = 48;

// Dense (batch, channels, length) tensor, row-major.
struct Tensor3 {
    int batch = 0;
    int channels = 0;
    int length = 0;
    std::vector<Real> data;

    Tensor3() = default;
    Tensor3(int k, int c, int l) : batch(k), channels(c), length(l), data(static_cast<std::size_t>(k) * c * l, Real(0)) {}

    Real& at(int b, int c, int l) { return data[(static_cast<std::size_t>(b) * channels + c) * length + l]; }
    Real at(int b, int c, int l) const { return data[(static_cast<std::size_t>(b) * channels + c) * length + l]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor3& o) const { return batch == o.batch && channels == o.channels && length == o.length; }
};

// ASM normalizes with the current batch's statistics, SSM with the stored
// running statistics.
enum class BnMode { ASM, SSM };

inline std::string_view to_string(BnMode m) { return m == BnMode::ASM ? "ASM" : "SSM"; }
inline BnMode bn_mode_from_string(std::string_view s) {
    if (s == "ASM" || s == "asm") return BnMode::ASM;
    if (s == "SSM" || s == "ssm") return BnMode::SSM;
    throw ArgumentError("unknown batchnorm mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Layers

struct Conv1d {
    int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, padding = 0;
    Matrix weight;  // out_ch x (in_ch*kernel), column ci*kernel + k
    Matrix bias;    // out_ch x 1

    int out_length(int in_len) const { return (in_len + 2 * padding - kernel) / stride + 1; }
};

struct ConvTranspose1d {
    int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, padding = 0;
    Matrix weight;  // (out_ch*kernel) x in_ch, row co*kernel + k
    Matrix bias;    // out_ch x 1

    int out_length(int in_len) const { return (in_len - 1) * stride - 2 * padding + kernel; }
};

struct BatchNorm1d {
    int channels = 0;
    Matrix gamma, beta;                 // channels x 1, trainable
    Matrix running_mean, running_var;   // channels x 1, buffers
    Real momentum = Real(0.1);
    Real eps = Real(1e-5);
};

struct ReLU {};
struct LeakyReLU {
    Real slope = Real(0.2);
};
struct Tanh {};

using Layer = std::variant<Conv1d, ConvTranspose1d, BatchNorm1d, ReLU, LeakyReLU, Tanh>;

inline std::string_view layer_kind(const Layer& layer) {
    constexpr std::string_view names[] = {"conv1d", "convT1d", "batchnorm1d", "relu", "leaky_relu", "tanh"};
    return names[layer.index()];
}

struct Network {
    std::string name;
    int in_channels = 0;
    int in_length = 0;
    std::vector<Layer> layers;
};

struct GeneratorNet : Network {};
struct CriticNet : Network {};

// Trainable arrays in a fixed order: for each layer, weight then bias (conv
// kinds) or gamma then beta (batchnorm). Running statistics are excluded.
template <typename Net>
auto parameters(Net& net) {
    using Ptr = std::conditional_t<std::is_const_v<Net>, const Matrix*, Matrix*>;
    std::vector<Ptr> out;
    for (auto& layer : net.layers) {
        std::visit(
            [&](auto& l) {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, Conv1d> || std::is_same_v<L, ConvTranspose1d>) {
                    out.push_back(&l.weight);
                    out.push_back(&l.bias);
                } else if constexpr (std::is_same_v<L, BatchNorm1d>) {
                    out.push_back(&l.gamma);
                    out.push_back(&l.beta);
                }
            },
            layer);
    }
    return out;
}

using ParamGrads = std::vector<Matrix>;

inline ParamGrads zero_grads(const Network& net) {
    ParamGrads g;
    for (const Matrix* p : parameters(net)) g.push_back(Matrix::Zero(p->rows(), p->cols()));
    return g;
}

inline std::size_t parameter_count(const Network& net) {
    std::size_t n = 0;
    for (const Matrix* p : parameters(net)) n += static_cast<std::size_t>(p->size());
    return n;
}

// ---------------------------------------------------------------------------
// Construction

namespace detail {

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Real>(dist(rng));
    return m;
}

inline Conv1d make_conv(int in_ch, int out_ch, int k, int s, int p, std::mt19937_64& rng) {
    Conv1d c{in_ch, out_ch, k, s, p, {}, {}};
    c.weight = normal_matrix(out_ch, static_cast<Eigen::Index>(in_ch) * k, rng, 0.02);
    c.bias = Matrix::Zero(out_ch, 1);
    return c;
}

inline ConvTranspose1d make_convT(int in_ch, int out_ch, int k, int s, int p, std::mt19937_64& rng) {
    ConvTranspose1d c{in_ch, out_ch, k, s, p, {}, {}};
    c.weight = normal_matrix(static_cast<Eigen::Index>(out_ch) * k, in_ch, rng, 0.02);
    c.bias = Matrix::Zero(out_ch, 1);
    return c;
}

inline BatchNorm1d make_bn(int channels) {
    BatchNorm1d bn;
    bn.channels = channels;
    bn.gamma = Matrix::Ones(channels, 1);
    bn.beta = Matrix::Zero(channels, 1);
    bn.running_mean = Matrix::Zero(channels, 1);
    bn.running_var = Matrix::Ones(channels, 1);
    return bn;
}

}  // namespace detail

// latent (k,100,1) -> (k,1,48): lengths 1 -> 6 -> 12 -> 24 -> 48.
inline GeneratorNet init_generator(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GeneratorNet g;
    g.name = "generator";
    g.in_channels = kLatentDim;
    g.in_length = 1;
    g.layers.push_back(detail::make_convT(kLatentDim, 256, 6, 1, 0, rng));
    g.layers.push_back(detail::make_bn(256));
    g.layers.push_back(ReLU{});
    g.layers.push_back(detail::make_convT(256, 128, 4, 2, 1, rng));
    g.layers.push_back(detail::make_bn(128));
    g.layers.push_back(ReLU{});
    g.layers.push_back(detail::make_convT(128, 64, 4, 2, 1, rng));
    g.layers.push_back(detail::make_bn(64));
    g.layers.push_back(ReLU{});
    g.layers.push_back(detail::make_convT(64, 1, 4, 2, 1, rng));
    g.layers.push_back(Tanh{});
    return g;
}

// (k,1,48) -> k raw scores: lengths 48 -> 24 -> 12 -> 6 -> 1. Batchnorm only
// on the two middle convolutions; no output squashing.
inline CriticNet init_critic(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    CriticNet d;
    d.name = "critic";
    d.in_channels = 1;
    d.in_length = kWindow;
    d.layers.push_back(detail::make_conv(1, 64, 4, 2, 1, rng));
    d.layers.push_back(LeakyReLU{});
    d.layers.push_back(detail::make_conv(64, 128, 4, 2, 1, rng));
    d.layers.push_back(detail::make_bn(128));
    d.layers.push_back(LeakyReLU{});
    d.layers.push_back(detail::make_conv(128, 256, 4, 2, 1, rng));
    d.layers.push_back(detail::make_bn(256));
    d.layers.push_back(LeakyReLU{});
    d.layers.push_back(detail::make_conv(256, 1, 6, 1, 0, rng));
    return d;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct Activation {
    Matrix values;  // channels x (batch*length)
    int batch = 0;
    int length = 0;
};

inline Activation to_activation(const Tensor3& t) {
    Activation a;
    a.batch = t.batch;
    a.length = t.length;
    a.values.resize(t.channels, static_cast<Eigen::Index>(t.batch) * t.length);
    for (int b = 0; b < t.batch; ++b)
        for (int c = 0; c < t.channels; ++c)
            for (int l = 0; l < t.length; ++l) a.values(c, static_cast<Eigen::Index>(b) * t.length + l) = t.at(b, c, l);
    return a;
}

inline Tensor3 to_tensor(const Activation& a) {
    Tensor3 t(a.batch, static_cast<int>(a.values.rows()), a.length);
    for (int b = 0; b < t.batch; ++b)
        for (int c = 0; c < t.channels; ++c)
            for (int l = 0; l < t.length; ++l) t.at(b, c, l) = a.values(c, static_cast<Eigen::Index>(b) * t.length + l);
    return t;
}

struct LayerCache {
    Matrix saved;   // conv: im2col columns; convT: input; bn: xhat; activations: input or output
    Matrix invstd;  // bn only
    int batch = 0;
    int in_length = 0;
    BnMode mode = BnMode::SSM;
};

// Per-call record needed for backward; one per forward pass so a network can
// be shared read-only between concurrent callers.
struct Tape {
    std::vector<LayerCache> caches;
};

// Batch statistics observed in ASM mode, one entry per batchnorm layer, used
// to advance running statistics during training.
struct BatchStats {
    std::vector<Matrix> mean;
    std::vector<Matrix> var;   // biased
    std::vector<Eigen::Index> count;
};

namespace detail {

// cols(c*K + k, b*small + t) = src(c, b*big + t*stride - pad + k), zero outside.
inline Matrix im2col(const Matrix& src, int channels, int kernel, int stride, int pad, int batch, int big, int small) {
    Matrix cols(static_cast<Eigen::Index>(channels) * kernel, static_cast<Eigen::Index>(batch) * small);
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < small; ++t) {
            const Eigen::Index col = static_cast<Eigen::Index>(b) * small + t;
            Real* dst = cols.col(col).data();
            for (int k = 0; k < kernel; ++k) {
                const int pos = t * stride - pad + k;
                if (pos < 0 || pos >= big) {
                    for (int c = 0; c < channels; ++c) dst[c * kernel + k] = Real(0);
                } else {
                    const Real* s = src.col(static_cast<Eigen::Index>(b) * big + pos).data();
                    for (int c = 0; c < channels; ++c) dst[c * kernel + k] = s[c];
                }
            }
        }
    }
    return cols;
}

// Adjoint of im2col: dst(c, b*big + t*stride - pad + k) += cols(c*K + k, b*small + t).
inline void col2im_add(const Matrix& cols, Matrix& dst, int channels, int kernel, int stride, int pad, int batch, int big,
                       int small) {
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < small; ++t) {
            const Real* c_src = cols.col(static_cast<Eigen::Index>(b) * small + t).data();
            for (int k = 0; k < kernel; ++k) {
                const int pos = t * stride - pad + k;
                if (pos < 0 || pos >= big) continue;
                Real* d = dst.col(static_cast<Eigen::Index>(b) * big + pos).data();
                for (int c = 0; c < channels; ++c) d[c] += c_src[c * kernel + k];
            }
        }
    }
}

inline void check_finite(const Matrix& m, const Network& net, std::size_t layer, std::string_view phase) {
    if (!m.allFinite())
        throw NumericalError("non-finite " + std::string(phase) + " in " + net.name + " layer " + std::to_string(layer) +
                             " (" + std::string(layer_kind(net.layers[layer])) + ")");
}

inline bool has_batchnorm(const Network& net) {
    for (const auto& l : net.layers)
        if (std::holds_alternative<BatchNorm1d>(l)) return true;
    return false;
}

}  // namespace detail

// Runs the network on an activation. With `tape` the per-layer intermediates
// are recorded for backward(); with `stats` the ASM batch statistics are
// reported. Never mutates the network.
inline Activation forward(const Network& net, Activation x, BnMode mode, Tape* tape = nullptr, BatchStats* stats = nullptr) {
    if (x.values.rows() != net.in_channels || x.length != net.in_length)
        throw ArgumentError(net.name + ": expected input (k," + std::to_string(net.in_channels) + "," +
                            std::to_string(net.in_length) + "), got (k," + std::to_string(x.values.rows()) + "," +
                            std::to_string(x.length) + ")");
    if (x.batch < 1) throw ArgumentError(net.name + ": empty batch");
    if (mode == BnMode::ASM && x.batch < 2 && detail::has_batchnorm(net))
        throw ArgumentError(net.name + ": ASM batchnorm needs a batch of at least 2 (batch variance undefined for k=1)");
    if (!x.values.allFinite()) throw NumericalError(net.name + ": non-finite input");
    if (tape) tape->caches.assign(net.layers.size(), {});
    if (stats) *stats = {};

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        LayerCache* cache = tape ? &tape->caches[i] : nullptr;
        if (cache) {
            cache->batch = x.batch;
            cache->in_length = x.length;
        }
        std::visit(
            [&](const auto& l) {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, Conv1d>) {
                    const int out_len = l.out_length(x.length);
                    Matrix cols = detail::im2col(x.values, l.in_ch, l.kernel, l.stride, l.padding, x.batch, x.length, out_len);
                    Matrix y = l.weight * cols;
                    y.colwise() += l.bias.col(0);
                    if (cache) cache->saved = std::move(cols);
                    x.values = std::move(y);
                    x.length = out_len;
                } else if constexpr (std::is_same_v<L, ConvTranspose1d>) {
                    const int out_len = l.out_length(x.length);
                    Matrix cols = l.weight * x.values;
                    Matrix y = Matrix::Zero(l.out_ch, static_cast<Eigen::Index>(x.batch) * out_len);
                    detail::col2im_add(cols, y, l.out_ch, l.kernel, l.stride, l.padding, x.batch, out_len, x.length);
                    y.colwise() += l.bias.col(0);
                    if (cache) cache->saved = std::move(x.values);
                    x.values = std::move(y);
                    x.length = out_len;
                } else if constexpr (std::is_same_v<L, BatchNorm1d>) {
                    const Eigen::Index n = x.values.cols();
                    Matrix mean, var;
                    if (mode == BnMode::ASM) {
                        mean = x.values.rowwise().mean();
                        var = (x.values.colwise() - mean.col(0)).array().square().rowwise().mean().matrix();
                        if (stats) {
                            stats->mean.push_back(mean);
                            stats->var.push_back(var);
                            stats->count.push_back(n);
                        }
                    } else {
                        mean = l.running_mean;
                        var = l.running_var;
                    }
                    Matrix invstd = (var.array() + l.eps).rsqrt().matrix();
                    Matrix xhat = ((x.values.colwise() - mean.col(0)).array().colwise() * invstd.col(0).array()).matrix();
                    Matrix y = (xhat.array().colwise() * l.gamma.col(0).array()).matrix();
                    y.colwise() += l.beta.col(0);
                    if (cache) {
                        cache->saved = std::move(xhat);
                        cache->invstd = std::move(invstd);
                        cache->mode = mode;
                    }
                    x.values = std::move(y);
                } else if constexpr (std::is_same_v<L, ReLU>) {
                    if (cache) cache->saved = x.values;
                    x.values = x.values.cwiseMax(Real(0));
                } else if constexpr (std::is_same_v<L, LeakyReLU>) {
                    if (cache) cache->saved = x.values;
                    const Real slope = l.slope;
                    x.values = x.values.unaryExpr([slope](Real v) { return v > Real(0) ? v : slope * v; });
                } else if constexpr (std::is_same_v<L, Tanh>) {
                    x.values = x.values.array().tanh().matrix();
                    if (cache) cache->saved = x.values;
                }
            },
            net.layers[i]);
        detail::check_finite(x.values, net, i, "activation");
    }
    return x;
}

// Back-propagates d(loss)/d(output) through a recorded forward pass. Returns
// d(loss)/d(input); when `grads` is given (aligned with parameters(net)) the
// parameter gradients are accumulated into it.
inline Matrix backward(const Network& net, const Tape& tape, Matrix grad, ParamGrads* grads = nullptr) {
    if (tape.caches.size() != net.layers.size()) throw ArgumentError(net.name + ": tape does not match network");
    std::vector<std::size_t> offset(net.layers.size(), 0);
    {
        std::size_t k = 0;
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            offset[i] = k;
            const auto& l = net.layers[i];
            if (!std::holds_alternative<ReLU>(l) && !std::holds_alternative<LeakyReLU>(l) && !std::holds_alternative<Tanh>(l)) k += 2;
        }
        if (grads && grads->size() != k) throw ArgumentError(net.name + ": gradient buffer does not match network");
    }

    for (std::size_t idx = net.layers.size(); idx-- > 0;) {
        const LayerCache& cache = tape.caches[idx];
        std::visit(
            [&](const auto& l) {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, Conv1d>) {
                    const int out_len = l.out_length(cache.in_length);
                    if (grads) {
                        (*grads)[offset[idx]].noalias() += grad * cache.saved.transpose();
                        (*grads)[offset[idx] + 1] += grad.rowwise().sum();
                    }
                    Matrix dcols = l.weight.transpose() * grad;
                    Matrix dx = Matrix::Zero(l.in_ch, static_cast<Eigen::Index>(cache.batch) * cache.in_length);
                    detail::col2im_add(dcols, dx, l.in_ch, l.kernel, l.stride, l.padding, cache.batch, cache.in_length, out_len);
                    grad = std::move(dx);
                } else if constexpr (std::is_same_v<L, ConvTranspose1d>) {
                    const int out_len = l.out_length(cache.in_length);
                    Matrix dcols = detail::im2col(grad, l.out_ch, l.kernel, l.stride, l.padding, cache.batch, out_len, cache.in_length);
                    if (grads) {
                        (*grads)[offset[idx]].noalias() += dcols * cache.saved.transpose();
                        (*grads)[offset[idx] + 1] += grad.rowwise().sum();
                    }
                    grad = l.weight.transpose() * dcols;
                } else if constexpr (std::is_same_v<L, BatchNorm1d>) {
                    const Matrix& xhat = cache.saved;
                    if (grads) {
                        (*grads)[offset[idx]] += (grad.array() * xhat.array()).rowwise().sum().matrix();
                        (*grads)[offset[idx] + 1] += grad.rowwise().sum();
                    }
                    Matrix dxhat = (grad.array().colwise() * l.gamma.col(0).array()).matrix();
                    if (cache.mode == BnMode::ASM) {
                        const Real n = static_cast<Real>(grad.cols());
                        Matrix sum_d = dxhat.rowwise().sum();
                        Matrix sum_dx = (dxhat.array() * xhat.array()).rowwise().sum().matrix();
                        Matrix centered = (n * dxhat.array() - xhat.array().colwise() * sum_dx.col(0).array()).matrix();
                        centered.colwise() -= sum_d.col(0);
                        grad = (centered.array().colwise() * (cache.invstd.col(0).array() / n)).matrix();
                    } else {
                        grad = (dxhat.array().colwise() * cache.invstd.col(0).array()).matrix();
                    }
                } else if constexpr (std::is_same_v<L, ReLU>) {
                    grad = (cache.saved.array() > Real(0)).select(grad, Real(0));
                } else if constexpr (std::is_same_v<L, LeakyReLU>) {
                    grad = (cache.saved.array() > Real(0)).select(grad, l.slope * grad);
                } else if constexpr (std::is_same_v<L, Tanh>) {
                    grad = (grad.array() * (Real(1) - cache.saved.array().square())).matrix();
                }
            },
            net.layers[idx]);
        detail::check_finite(grad, net, idx, "gradient");
    }
    return grad;
}

// Advances running statistics with the batch statistics of one ASM pass
// (PyTorch convention: unbiased variance feeds the running estimate).
inline void update_running_stats(Network& net, const BatchStats& stats) {
    std::size_t k = 0;
    for (auto& layer : net.layers) {
        auto* bn = std::get_if<BatchNorm1d>(&layer);
        if (!bn) continue;
        if (k >= stats.mean.size()) throw ArgumentError(net.name + ": batch statistics missing for batchnorm layer");
        const Real n = static_cast<Real>(stats.count[k]);
        const Real unbias = n > 1 ? n / (n - 1) : Real(1);
        bn->running_mean = (Real(1) - bn->momentum) * bn->running_mean + bn->momentum * stats.mean[k];
        bn->running_var = (Real(1) - bn->momentum) * bn->running_var + bn->momentum * unbias * stats.var[k];
        ++k;
    }
}

// Inference entry points; neither updates running statistics.
inline Tensor3 generator_forward(const GeneratorNet& g, const Tensor3& z, BnMode mode) {
    if (z.channels != kLatentDim || z.length != 1)
        throw ArgumentError("generator_forward: latent must have shape (k,100,1)");
    return to_tensor(forward(g, to_activation(z), mode));
}

inline std::vector<Real> critic_forward(const CriticNet& d, const Tensor3& x, BnMode mode) {
    if (x.channels != 1 || x.length != kWindow) throw ArgumentError("critic_forward: input must have shape (k,1,48)");
    Activation out = forward(d, to_activation(x), mode);
    return std::vector<Real>(out.values.data(), out.values.data() + out.values.size());
}

// Clamps every trainable entry (weights, biases, batchnorm scale/shift) to
// [-c, c]. Running statistics are not parameters and are left alone.
inline void clip_params(Network& net, Real c) {
    if (!(c > 0)) throw ArgumentError("clip_params: clip value must be positive");
    for (Matrix* p : parameters(net)) *p = p->cwiseMax(-c).cwiseMin(c);
}

inline Real max_abs_param(const Network& net) {
    Real m = 0;
    for (const Matrix* p : parameters(net))
        if (p->size() > 0) m = std::max(m, p->cwiseAbs().maxCoeff());
    return m;
}

}  // namespace wattgan
