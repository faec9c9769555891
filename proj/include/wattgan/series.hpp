#pragma once

// Meter-series ingestion and preprocessing: LEAD-style CSV I/O, missing-value
// removal, segmentation, per-segment min-max scaling, stride-1 windowing, and
// a labeled synthetic generator for desk-scale experiments.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wattgan/error.hpp"

namespace wattgan {

using Timestamp = std::chrono::sys_seconds;

// One building's hourly readings. A NaN reading marks a missing value.
struct RawSeries {
    std::string building_id;
    std::vector<Timestamp> timestamps;
    std::vector<double> readings;
    std::vector<bool> labels;

    std::size_t size() const { return readings.size(); }
};

// Contiguous slice of a series. After normalize() values lie in [-1, 1] and
// raw_min/raw_max hold the scaler; origin is the index of values[0] in the
// parent series.
struct Segment {
    std::vector<double> values;
    double raw_min = 0.0;
    double raw_max = 0.0;
    std::size_t origin = 0;
    std::vector<bool> labels;
    bool normalized = false;

    std::size_t size() const { return values.size(); }
    bool has_anomaly() const { return std::find(labels.begin(), labels.end(), true) != labels.end(); }
};

// n stride-1 windows of length w, stored row-major (n x w).
struct WindowBatch {
    std::vector<double> windows;
    std::vector<std::size_t> starts;
    std::size_t w = 0;

    std::size_t count() const { return starts.size(); }
    std::span<const double> row(std::size_t i) const { return {windows.data() + i * w, w}; }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        auto comma = line.find(',', pos);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(pos)));
            break;
        }
        out.push_back(trim(line.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace detail

// Accepts "YYYY-MM-DD HH:MM[:SS]" with either a space or 'T' separator and an
// optional trailing 'Z'.
inline bool parse_timestamp(std::string_view s, Timestamp& out) {
    using namespace std::chrono;
    if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
    if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != ' ' && s[10] != 'T') || s[13] != ':') return false;
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    if (!detail::parse_int(s.substr(0, 4), y) || !detail::parse_int(s.substr(5, 2), mo) ||
        !detail::parse_int(s.substr(8, 2), d) || !detail::parse_int(s.substr(11, 2), h) ||
        !detail::parse_int(s.substr(14, 2), mi))
        return false;
    if (s.size() > 16) {
        if (s.size() != 19 || s[16] != ':' || !detail::parse_int(s.substr(17, 2), sec)) return false;
    }
    year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) return false;
    out = sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec};
    return true;
}

inline std::string format_timestamp(Timestamp t) {
    using namespace std::chrono;
    auto day_point = floor<days>(t);
    year_month_day ymd{day_point};
    hh_mm_ss hms{t - day_point};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf;
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::vector<RawSeries> parse_lead_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(source + ": missing header row");
    auto header = detail::split_csv_line(line);
    auto find_col = [&](std::string_view name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw FormatError(source + ": missing column '" + std::string(name) + "'");
    };
    const std::size_t c_id = find_col("building_id");
    const std::size_t c_ts = find_col("timestamp");
    const std::size_t c_val = find_col("meter_reading");
    const std::size_t c_lab = find_col("anomaly");
    const std::size_t needed = std::max({c_id, c_ts, c_val, c_lab}) + 1;

    struct Row {
        Timestamp ts;
        double value;
        bool label;
        std::size_t line_no;
    };
    std::map<std::string, std::vector<Row>> by_building;
    std::vector<std::string> order;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line);
        auto fail = [&](const std::string& why) {
            return FormatError(source + ": line " + std::to_string(line_no) + ": " + why);
        };
        if (fields.size() < needed) throw fail("expected " + std::to_string(header.size()) + " fields");
        Row row{};
        row.line_no = line_no;
        if (!parse_timestamp(fields[c_ts], row.ts)) throw fail("unparsable timestamp '" + std::string(fields[c_ts]) + "'");
        auto val = fields[c_val];
        if (val.empty() || val == "NaN" || val == "nan" || val == "NA") {
            row.value = std::numeric_limits<double>::quiet_NaN();
        } else if (!detail::parse_double(val, row.value)) {
            throw fail("unparsable meter_reading '" + std::string(val) + "'");
        }
        auto lab = fields[c_lab];
        if (lab == "0" || lab == "0.0")
            row.label = false;
        else if (lab == "1" || lab == "1.0")
            row.label = true;
        else
            throw fail("anomaly must be 0 or 1, got '" + std::string(lab) + "'");
        std::string id(fields[c_id]);
        auto [it, inserted] = by_building.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(row);
    }

    std::vector<RawSeries> out;
    out.reserve(order.size());
    for (const auto& id : order) {
        auto& rows = by_building[id];
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
        RawSeries s;
        s.building_id = id;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i > 0 && rows[i].ts == rows[i - 1].ts)
                throw FormatError(source + ": line " + std::to_string(rows[i].line_no) + ": duplicate timestamp for building " + id);
            s.timestamps.push_back(rows[i].ts);
            s.readings.push_back(rows[i].value);
            s.labels.push_back(rows[i].label);
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<RawSeries> load_lead_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_lead_csv(in, path);
}

inline void write_lead_csv(std::ostream& out, std::span<const RawSeries> series) {
    out << "building_id,timestamp,meter_reading,anomaly\n";
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            out << s.building_id << ',' << format_timestamp(s.timestamps[i]) << ',' << format_double(s.readings[i])
                << ',' << (s.labels[i] ? '1' : '0') << '\n';
        }
    }
}

inline void write_lead_csv(const std::string& path, std::span<const RawSeries> series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_lead_csv(out, series);
    if (!out) throw IoError("write failed: " + path);
}

inline RawSeries drop_missing(const RawSeries& series) {
    RawSeries out;
    out.building_id = series.building_id;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (std::isnan(series.readings[i])) continue;
        out.timestamps.push_back(series.timestamps[i]);
        out.readings.push_back(series.readings[i]);
        out.labels.push_back(series.labels[i]);
    }
    if (out.readings.empty()) throw DataError("building " + series.building_id + ": all readings missing");
    return out;
}

// Splits into n contiguous pieces; when the length does not divide evenly the
// earlier segments are one element longer.
inline std::vector<Segment> segmentize(const RawSeries& series, int n_segments) {
    const std::size_t len = series.size();
    if (n_segments <= 0 || static_cast<std::size_t>(n_segments) > len)
        throw ArgumentError("segmentize: n_segments must be in [1, " + std::to_string(len) + "], got " +
                            std::to_string(n_segments));
    const std::size_t n = static_cast<std::size_t>(n_segments);
    const std::size_t base = len / n;
    const std::size_t extra = len % n;
    std::vector<Segment> out;
    out.reserve(n);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t seg_len = base + (k < extra ? 1 : 0);
        Segment seg;
        seg.origin = pos;
        seg.values.assign(series.readings.begin() + pos, series.readings.begin() + pos + seg_len);
        seg.labels.assign(series.labels.begin() + pos, series.labels.begin() + pos + seg_len);
        seg.raw_min = *std::min_element(seg.values.begin(), seg.values.end());
        seg.raw_max = *std::max_element(seg.values.begin(), seg.values.end());
        out.push_back(std::move(seg));
        pos += seg_len;
    }
    return out;
}

// Affine map min -> -1, max -> +1 using the segment's own extremes. A constant
// segment maps to all zeros with raw_min == raw_max.
inline Segment normalize(const Segment& segment) {
    if (segment.values.empty()) throw ArgumentError("normalize: empty segment");
    Segment out = segment;
    const auto [lo, hi] = std::minmax_element(segment.values.begin(), segment.values.end());
    out.raw_min = *lo;
    out.raw_max = *hi;
    out.normalized = true;
    const double span = out.raw_max - out.raw_min;
    for (auto& v : out.values) {
        if (span == 0.0) {
            v = 0.0;
        } else {
            v = 2.0 * (v - out.raw_min) / span - 1.0;
            v = std::clamp(v, -1.0, 1.0);
        }
    }
    return out;
}

inline std::vector<double> denormalize(const Segment& segment) {
    if (!segment.normalized) return segment.values;
    std::vector<double> out(segment.values.size());
    const double span = segment.raw_max - segment.raw_min;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = span == 0.0 ? segment.raw_min : (segment.values[i] + 1.0) * 0.5 * span + segment.raw_min;
    return out;
}

struct TrainTestSplit {
    std::vector<Segment> train;
    std::vector<Segment> test;
};

inline TrainTestSplit split_train_test(const std::vector<Segment>& segments) {
    TrainTestSplit split;
    for (const auto& s : segments) (s.has_anomaly() ? split.test : split.train).push_back(s);
    if (split.train.empty()) throw DataError("split_train_test: every segment contains an anomaly; nothing to train on");
    return split;
}

inline WindowBatch make_windows(std::span<const double> values, int w) {
    if (w <= 0 || static_cast<std::size_t>(w) > values.size())
        throw ArgumentError("windows: w must be in [1, " + std::to_string(values.size()) + "], got " + std::to_string(w));
    WindowBatch batch;
    batch.w = static_cast<std::size_t>(w);
    const std::size_t n = values.size() - batch.w + 1;
    batch.windows.reserve(n * batch.w);
    batch.starts.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        batch.starts.push_back(s);
        batch.windows.insert(batch.windows.end(), values.begin() + s, values.begin() + s + batch.w);
    }
    return batch;
}

inline WindowBatch windows(const Segment& segment, int w) { return make_windows(segment.values, w); }

// Concatenates the windows of several segments; starts stay segment-local.
inline WindowBatch concat_windows(std::span<const WindowBatch> parts) {
    WindowBatch out;
    for (const auto& p : parts) {
        if (out.w == 0) out.w = p.w;
        if (p.w != out.w) throw ArgumentError("concat_windows: window lengths differ");
        out.windows.insert(out.windows.end(), p.windows.begin(), p.windows.end());
        out.starts.insert(out.starts.end(), p.starts.begin(), p.starts.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic series

enum class InjectionType { level_shift, plateau, spike_train };

inline std::string_view to_string(InjectionType t) {
    switch (t) {
        case InjectionType::level_shift: return "level_shift";
        case InjectionType::plateau: return "plateau";
        case InjectionType::spike_train: return "spike_train";
    }
    return "?";
}

inline InjectionType injection_type_from_string(std::string_view s) {
    if (s == "level_shift") return InjectionType::level_shift;
    if (s == "plateau") return InjectionType::plateau;
    if (s == "spike_train") return InjectionType::spike_train;
    throw ArgumentError("unknown injection type '" + std::string(s) + "'");
}

struct Injection {
    InjectionType type = InjectionType::plateau;
    std::size_t start = 0;
    std::size_t duration = 0;
    double magnitude = 0.0;
};

struct SynthConfig {
    std::string building_id = "synthetic";
    std::size_t length = 8784;
    double base = 100.0;
    double daily_amplitude = 30.0;
    double weekly_amplitude = 10.0;
    double noise_scale = 2.0;
    // Each day's daily amplitude is scaled by 1 - daily_variation * U(0,1).
    double daily_variation = 0.0;
    std::uint64_t seed = 0;
    // Unix time of the first reading.
    std::int64_t start_epoch_seconds = 1451606400;  // 2016-01-01 00:00:00
    std::vector<Injection> injections;
};

// level_shift adds magnitude over the range; plateau holds the reading at
// base + magnitude (a stuck meter); spike_train adds magnitude every third hour.
inline RawSeries synth_series(const SynthConfig& cfg) {
    if (cfg.length == 0) throw ArgumentError("synth_series: length must be positive");
    if (!(cfg.daily_variation >= 0.0 && cfg.daily_variation < 1.0))
        throw ArgumentError("synth_series: daily_variation must be in [0, 1)");
    std::vector<Injection> inj = cfg.injections;
    std::sort(inj.begin(), inj.end(), [](const Injection& a, const Injection& b) { return a.start < b.start; });
    for (std::size_t i = 0; i < inj.size(); ++i) {
        if (inj[i].duration == 0) throw ArgumentError("synth_series: injection duration must be positive");
        if (inj[i].start + inj[i].duration > cfg.length) throw ArgumentError("synth_series: injection runs past the end of the series");
        if (i > 0 && inj[i].start < inj[i - 1].start + inj[i - 1].duration)
            throw ArgumentError("synth_series: overlapping injections at t=" + std::to_string(inj[i].start));
    }

    RawSeries s;
    s.building_id = cfg.building_id;
    s.timestamps.reserve(cfg.length);
    s.readings.reserve(cfg.length);
    s.labels.assign(cfg.length, false);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const Timestamp t0{std::chrono::seconds{cfg.start_epoch_seconds}};
    // separate stream so the noise is unchanged when daily_variation is zero
    std::mt19937_64 day_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double day_amplitude = cfg.daily_amplitude;
    for (std::size_t t = 0; t < cfg.length; ++t) {
        const double td = static_cast<double>(t);
        if (t % 24 == 0 && cfg.daily_variation > 0.0) day_amplitude = cfg.daily_amplitude * (1.0 - cfg.daily_variation * unit(day_rng));
        const double v = cfg.base + day_amplitude * std::sin(two_pi * td / 24.0) +
                         cfg.weekly_amplitude * std::sin(two_pi * td / 168.0) + cfg.noise_scale * noise(rng);
        s.timestamps.push_back(t0 + std::chrono::hours{t});
        s.readings.push_back(v);
    }
    for (const auto& a : inj) {
        for (std::size_t t = a.start; t < a.start + a.duration; ++t) {
            switch (a.type) {
                case InjectionType::level_shift: s.readings[t] += a.magnitude; break;
                case InjectionType::plateau: s.readings[t] = cfg.base + a.magnitude; break;
                case InjectionType::spike_train:
                    if ((t - a.start) % 3 == 0) s.readings[t] += a.magnitude;
                    break;
            }
            s.labels[t] = true;
        }
    }
    return s;
}

}  // namespace wattgan
