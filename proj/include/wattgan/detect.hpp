#pragma once

// Window scores -> point predictions: midpoints of over-threshold windows are
// critical points, a Gaussian KDE over them is scaled to a peak of 1, and the
// timestamps at or above min_height are reported.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <vector>

#include "wattgan/error.hpp"
#include "wattgan/invert.hpp"
#include "wattgan/series.hpp"

namespace wattgan {

struct DetectionConfig {
    int w = kWindow;
    double score_threshold = 0.0;
    double bandwidth = 6.0;  // hours
    double min_height = 0.5;

    void validate() const {
        if (w < 1) throw ConfigError("detect.w must be >= 1");
        if (!(bandwidth > 0)) throw ConfigError("detect.bandwidth must be positive");
        if (!(min_height > 0 && min_height <= 1)) throw ConfigError("detect.min_height must lie in (0, 1]");
    }
};

struct SegmentDetection {
    std::vector<std::size_t> critical_points;  // segment-local hour indices
    std::vector<double> kde_curve;             // one value per segment position
    std::vector<std::size_t> predicted;        // segment-local hour indices
    SegmentScores scores;
};

// Windows whose score is strictly greater than the threshold contribute their
// midpoint start + floor(w/2).
inline std::vector<std::size_t> critical_points(std::span<const std::size_t> starts, std::span<const double> scores,
                                                double threshold, int w) {
    if (starts.size() != scores.size()) throw ArgumentError("critical_points: starts and scores differ in length");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i] > threshold) out.push_back(starts[i] + static_cast<std::size_t>(w / 2));
    return out;
}

// sum_i exp(-(t - p_i)^2 / (2 h^2)) on t = 0..grid_size-1, divided by its maximum.
inline std::vector<double> kde_curve(std::span<const std::size_t> points, std::size_t grid_size, double bandwidth) {
    if (!(bandwidth > 0)) throw ArgumentError("kde_curve: bandwidth must be positive");
    std::vector<double> curve(grid_size, 0.0);
    if (points.empty()) return curve;
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    for (std::size_t t = 0; t < grid_size; ++t) {
        double s = 0.0;
        for (std::size_t p : points) {
            const double d = static_cast<double>(t) - static_cast<double>(p);
            s += std::exp(-d * d * inv);
        }
        curve[t] = s;
    }
    const double peak = *std::max_element(curve.begin(), curve.end());
    if (peak > 0)
        for (auto& v : curve) v /= peak;
    return curve;
}

inline std::vector<std::size_t> predict(std::span<const double> curve, double min_height) {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < curve.size(); ++t)
        if (curve[t] > 0.0 && curve[t] >= min_height) out.push_back(t);
    return out;
}

// Steps 4-6 on already computed scores; lets thresholds be swept without
// repeating the inversion.
inline SegmentDetection detect_from_scores(SegmentScores scores, std::span<const double> weighted, std::size_t segment_length,
                                           const DetectionConfig& dcfg) {
    dcfg.validate();
    SegmentDetection det;
    det.critical_points = critical_points(scores.starts, weighted, dcfg.score_threshold, dcfg.w);
    det.kde_curve = kde_curve(det.critical_points, segment_length, dcfg.bandwidth);
    det.predicted = predict(det.kde_curve, dcfg.min_height);
    det.scores = std::move(scores);
    return det;
}

inline SegmentDetection detect_segment(const Segment& segment, const GeneratorNet& g, const InvertConfig& icfg,
                                       const ScoreWeights& weights, const DetectionConfig& dcfg) {
    dcfg.validate();
    if (segment.size() < static_cast<std::size_t>(dcfg.w))
        throw ArgumentError("detect_segment: segment shorter than the window length");
    SegmentScores scores = score_segment(segment, g, icfg, weights, dcfg.w);
    std::vector<double> weighted = scores.score;
    return detect_from_scores(std::move(scores), weighted, segment.size(), dcfg);
}

// Per-timestamp report: timestamp, raw_reading, scaled_kde, predicted_flag, true_label.
inline void write_detection_csv(std::ostream& out, const RawSeries& series, const Segment& segment,
                                const SegmentDetection& det) {
    out << "timestamp,raw_reading,scaled_kde,predicted_flag,true_label\n";
    std::vector<bool> flag(segment.size(), false);
    for (std::size_t p : det.predicted) flag[p] = true;
    for (std::size_t t = 0; t < segment.size(); ++t) {
        const std::size_t g = segment.origin + t;
        out << format_timestamp(series.timestamps[g]) << ',' << format_double(series.readings[g]) << ','
            << format_double(det.kde_curve[t]) << ',' << (flag[t] ? 1 : 0) << ',' << (segment.labels[t] ? 1 : 0) << '\n';
    }
}

}  // namespace wattgan
