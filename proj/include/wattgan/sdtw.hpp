#pragma once

// Soft-DTW with squared-difference ground cost: value, gradient with respect
// to the first sequence (backward alignment-expectation recursion), the hard
// DTW limit, and the mean-squared-error alternative.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wattgan/error.hpp"

namespace wattgan {

struct SdtwConfig {
    double gamma = 0.1;

    void validate() const {
        if (!(gamma > 0)) throw ConfigError("sdtw.gamma must be positive");
    }
};

// Stand-in for +infinity on the DP borders; anything at or above it adds
// nothing to a soft minimum.
inline constexpr double kSdtwInf = 1e30;

// -gamma * log(sum exp(-v/gamma)) over the three arguments, shifted by their
// minimum for stability.
inline double softmin3(double a, double b, double c, double gamma) {
    if (!(gamma > 0)) throw ArgumentError("softmin3: gamma must be positive");
    if (a == -std::numeric_limits<double>::infinity() || b == -std::numeric_limits<double>::infinity() ||
        c == -std::numeric_limits<double>::infinity())
        return -std::numeric_limits<double>::infinity();
    const double lo = std::min({a, b, c});
    if (lo >= kSdtwInf) return kSdtwInf;
    double s = 0.0;
    for (double v : {a, b, c})
        if (v < kSdtwInf) s += std::exp(-(v - lo) / gamma);
    return lo - gamma * std::log(s);
}

namespace detail {

inline void check_sequences(std::span<const double> x, std::span<const double> y, const char* what) {
    if (x.empty() || y.empty()) throw ArgumentError(std::string(what) + ": sequences must be non-empty");
}

inline double sq(double v) { return v * v; }

// R is (n+2) x (m+2), row-major; cells (1..n, 1..m) hold the soft alignment
// costs, row/column 0 the +inf border with R(0,0) = 0.
struct SdtwTables {
    std::size_t n = 0, m = 0;
    std::vector<double> r;
    double& at(std::size_t i, std::size_t j) { return r[i * (m + 2) + j]; }
    double at(std::size_t i, std::size_t j) const { return r[i * (m + 2) + j]; }
};

inline SdtwTables sdtw_forward(std::span<const double> x, std::span<const double> y, double gamma) {
    SdtwTables t;
    t.n = x.size();
    t.m = y.size();
    t.r.assign((t.n + 2) * (t.m + 2), kSdtwInf);
    t.at(0, 0) = 0.0;
    for (std::size_t i = 1; i <= t.n; ++i)
        for (std::size_t j = 1; j <= t.m; ++j)
            t.at(i, j) = sq(x[i - 1] - y[j - 1]) + softmin3(t.at(i - 1, j - 1), t.at(i - 1, j), t.at(i, j - 1), gamma);
    return t;
}

}  // namespace detail

inline double sdtw(std::span<const double> x, std::span<const double> y, const SdtwConfig& cfg) {
    detail::check_sequences(x, y, "sdtw");
    cfg.validate();
    return detail::sdtw_forward(x, y, cfg.gamma).at(x.size(), y.size());
}

struct LossAndGrad {
    double value = 0.0;
    std::vector<double> grad;  // d value / d x
};

// Value and gradient in one pass over the tables. E(i,j) is the expected
// number of times cell (i,j) lies on the alignment path under the Gibbs
// distribution at temperature gamma.
inline LossAndGrad sdtw_value_and_grad(std::span<const double> x, std::span<const double> y, const SdtwConfig& cfg) {
    detail::check_sequences(x, y, "sdtw_grad");
    cfg.validate();
    const double gamma = cfg.gamma;
    detail::SdtwTables t = detail::sdtw_forward(x, y, gamma);
    const std::size_t n = t.n, m = t.m;
    LossAndGrad out;
    out.value = t.at(n, m);

    for (std::size_t i = 1; i <= n + 1; ++i) t.at(i, m + 1) = -kSdtwInf;
    for (std::size_t j = 1; j <= m + 1; ++j) t.at(n + 1, j) = -kSdtwInf;
    t.at(n + 1, m + 1) = t.at(n, m);

    const std::size_t stride = m + 2;
    std::vector<double> e((n + 2) * stride, 0.0);
    e[(n + 1) * stride + (m + 1)] = 1.0;
    auto cost = [&](std::size_t i, std::size_t j) { return (i > n || j > m) ? 0.0 : detail::sq(x[i - 1] - y[j - 1]); };

    out.grad.assign(n, 0.0);
    for (std::size_t j = m; j >= 1; --j) {
        for (std::size_t i = n; i >= 1; --i) {
            const double r = t.at(i, j);
            const double a = std::exp((t.at(i + 1, j) - r - cost(i + 1, j)) / gamma);
            const double b = std::exp((t.at(i, j + 1) - r - cost(i, j + 1)) / gamma);
            const double c = std::exp((t.at(i + 1, j + 1) - r - cost(i + 1, j + 1)) / gamma);
            const double eij = e[(i + 1) * stride + j] * a + e[i * stride + j + 1] * b + e[(i + 1) * stride + j + 1] * c;
            e[i * stride + j] = eij;
            out.grad[i - 1] += eij * 2.0 * (x[i - 1] - y[j - 1]);
        }
    }
    return out;
}

inline std::vector<double> sdtw_grad(std::span<const double> x, std::span<const double> y, const SdtwConfig& cfg) {
    return sdtw_value_and_grad(x, y, cfg).grad;
}

// Classic DTW under the same boundary conditions, min instead of softmin.
inline double dtw_exact(std::span<const double> x, std::span<const double> y) {
    detail::check_sequences(x, y, "dtw_exact");
    const std::size_t n = x.size(), m = y.size();
    std::vector<double> r((n + 1) * (m + 1), std::numeric_limits<double>::infinity());
    r[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            r[i * (m + 1) + j] = detail::sq(x[i - 1] - y[j - 1]) +
                                 std::min({r[(i - 1) * (m + 1) + j - 1], r[(i - 1) * (m + 1) + j], r[i * (m + 1) + j - 1]});
    return r[n * (m + 1) + m];
}

// Mean squared error over aligned indices.
inline double euclidean(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ArgumentError("euclidean: length mismatch");
    if (x.empty()) throw ArgumentError("euclidean: sequences must be non-empty");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += detail::sq(x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

inline LossAndGrad euclidean_value_and_grad(std::span<const double> x, std::span<const double> y) {
    LossAndGrad out;
    out.value = euclidean(x, y);
    out.grad.resize(x.size());
    const double scale = 2.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.grad[i] = scale * (x[i] - y[i]);
    return out;
}

// Pairwise Soft-DTW over two equally sized row-major batches of length-w rows:
// entry i compares row i of x with row i of y.
inline std::vector<double> sdtw_batch(std::span<const double> x, std::span<const double> y, std::size_t w,
                                      const SdtwConfig& cfg) {
    if (w == 0 || x.size() != y.size() || x.size() % w != 0) throw ArgumentError("sdtw_batch: batches must be k x w");
    std::vector<double> out(x.size() / w);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sdtw(x.subspan(i * w, w), y.subspan(i * w, w), cfg);
    return out;
}

}  // namespace wattgan
