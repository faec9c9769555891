#pragma once

// Command-line pipeline: synth -> preprocess -> train -> detect -> eval.
// Every command reads one JSON run config (plus --set overrides), validates it
// completely, then touches the filesystem.
//
// Layout under work_dir:
//   preprocessed/<building>.json      cleaned series and segment table
//   models/<building>.ckpt            checkpoint
//   reports/<building>_train.csv      per-iteration losses
//   detections/<building>/segment_<i>.csv, scores_<i>.csv, summary.json
//   metrics.json

#include <atomic>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wattgan/checkpoint.hpp"
#include "wattgan/detect.hpp"
#include "wattgan/evalr.hpp"
#include "wattgan/invert.hpp"
#include "wattgan/series.hpp"
#include "wattgan/train.hpp"

namespace wattgan::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kConfigEnv = "WATTGAN_CONFIG";

enum ExitCode { kOk = 0, kFailure = 1, kConfigExit = 2, kDataExit = 3, kNumericalExit = 4 };

struct RunConfig {
    std::string data_csv = "data/lead.csv";
    std::string work_dir = "run";
    std::vector<std::string> buildings;  // empty: every building in the CSV
    int n_segments = 25;
    int threads = 1;
    std::vector<SynthConfig> synth;
    TrainConfig train;
    InvertConfig invert;
    ScoreWeights score;
    DetectionConfig detect;
    std::vector<std::int64_t> r_t{12, 24};

    void validate() const {
        if (data_csv.empty()) throw ConfigError("data_csv must not be empty");
        if (work_dir.empty()) throw ConfigError("work_dir must not be empty");
        if (n_segments < 1) throw ConfigError("n_segments must be >= 1");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        for (const auto& s : synth) {
            if (s.building_id.empty()) throw ConfigError("synth.building_id must not be empty");
            if (s.length == 0) throw ConfigError("synth.length must be positive (building " + s.building_id + ")");
        }
        train.validate();
        invert.validate();
        if (invert.bn_mode == BnMode::ASM && invert.max_batch == 1)
            throw ConfigError("invert.max_batch = 1 cannot be used with ASM batchnorm");
        score.validate();
        detect.validate();
        if (detect.w != kWindow) throw ConfigError("detect.w must equal the generator window (48)");
        if (r_t.empty()) throw ConfigError("eval.r_t must list at least one tolerance");
        for (auto r : r_t)
            if (r < 0) throw ConfigError("eval.r_t values must be >= 0");
    }
};

namespace detail {

// Reads fields of one JSON object and rejects keys it was not asked about.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + " has the wrong type");
        }
    }

    template <class F>
    void get_with(const char* key, F&& parse) {
        seen_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            parse(*it);
        } catch (const json::exception&) {
            throw ConfigError(where(key) + " has the wrong type");
        } catch (const ArgumentError& e) {
            throw ConfigError(where(key) + ": " + e.what());
        }
    }

    std::optional<Section> sub(const char* key) {
        seen_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return std::nullopt;
        return Section(*it, where(key));
    }

    const json* raw(const char* key) {
        seen_.push_back(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string where(const std::string& key = "") const {
        std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
        return p.empty() ? "config" : p;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
                throw ConfigError("unknown config key " + where(it.key()));
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

inline SynthConfig parse_synth(const json& j, const std::string& path) {
    SynthConfig s;
    Section sec(j, path);
    sec.get("building_id", s.building_id);
    sec.get("length", s.length);
    sec.get("base", s.base);
    sec.get("daily_amplitude", s.daily_amplitude);
    sec.get("weekly_amplitude", s.weekly_amplitude);
    sec.get("noise_scale", s.noise_scale);
    sec.get("daily_variation", s.daily_variation);
    sec.get("seed", s.seed);
    sec.get("start_epoch_seconds", s.start_epoch_seconds);
    if (const json* inj = sec.raw("injections")) {
        if (!inj->is_array()) throw ConfigError(sec.where("injections") + " must be an array");
        for (std::size_t i = 0; i < inj->size(); ++i) {
            Section is((*inj)[i], sec.where("injections") + "." + std::to_string(i));
            Injection in;
            is.get_with("type", [&](const json& v) { in.type = injection_type_from_string(v.get<std::string>()); });
            is.get("start", in.start);
            is.get("duration", in.duration);
            is.get("magnitude", in.magnitude);
            is.finish();
            s.injections.push_back(in);
        }
    }
    sec.finish();
    return s;
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
    RunConfig c;
    detail::Section root(j, "");
    root.get("data_csv", c.data_csv);
    root.get("work_dir", c.work_dir);
    root.get("buildings", c.buildings);
    root.get("n_segments", c.n_segments);
    root.get("threads", c.threads);
    if (const json* synth = root.raw("synth")) {
        const json& list = synth->is_object() && synth->contains("buildings") ? synth->at("buildings") : *synth;
        if (synth->is_object() && synth->size() != 1) throw ConfigError("synth may only contain \"buildings\"");
        if (!list.is_array()) throw ConfigError("synth.buildings must be an array");
        for (std::size_t i = 0; i < list.size(); ++i) c.synth.push_back(detail::parse_synth(list[i], "synth.buildings." + std::to_string(i)));
    }
    if (auto s = root.sub("train")) {
        s->get("lr", c.train.lr);
        s->get("beta1", c.train.beta1);
        s->get("beta2", c.train.beta2);
        s->get("ncritic", c.train.ncritic);
        s->get("clip_c", c.train.clip_c);
        s->get("batch_size", c.train.batch_size);
        s->get("epochs", c.train.epochs);
        s->get("seed", c.train.seed);
        s->finish();
    }
    if (auto s = root.sub("sdtw")) {
        s->get("gamma", c.invert.sdtw.gamma);
        s->finish();
    }
    if (auto s = root.sub("invert")) {
        s->get("steps", c.invert.steps);
        s->get("step_size", c.invert.step_size);
        s->get_with("loss", [&](const json& v) { c.invert.loss = recon_loss_from_string(v.get<std::string>()); });
        s->get_with("bn_mode", [&](const json& v) { c.invert.bn_mode = bn_mode_from_string(v.get<std::string>()); });
        s->get("seed", c.invert.seed);
        s->get_with("aggregate", [&](const json& v) { c.invert.aggregate = aggregate_from_string(v.get<std::string>()); });
        s->get("restarts", c.invert.restarts);
        s->get("max_batch", c.invert.max_batch);
        s->finish();
    }
    if (auto s = root.sub("score")) {
        s->get("alpha_w", c.score.alpha_w);
        s->get("beta_w", c.score.beta_w);
        s->finish();
    }
    if (auto s = root.sub("detect")) {
        s->get("w", c.detect.w);
        s->get("score_threshold", c.detect.score_threshold);
        s->get("bandwidth", c.detect.bandwidth);
        s->get("min_height", c.detect.min_height);
        s->finish();
    }
    if (auto s = root.sub("eval")) {
        s->get("r_t", c.r_t);
        s->finish();
    }
    root.finish();
    c.validate();
    return c;
}

// key is a dotted path; numeric parts index arrays. The value is parsed as
// JSON when possible, otherwise taken as a string.
inline void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &j;
    std::size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (part.empty()) throw ConfigError("--set: empty component in '" + key + "'");
        json* next = nullptr;
        if (node->is_array()) {
            std::size_t idx = 0;
            auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), idx);
            if (ec != std::errc{} || p != part.data() + part.size() || idx >= node->size())
                throw ConfigError("--set: no array element '" + part + "' in '" + key + "'");
            next = &(*node)[idx];
        } else {
            if (node->is_null()) *node = json::object();
            if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
            next = &(*node)[part];
        }
        if (dot == std::string::npos) {
            *next = value;
            return;
        }
        node = next;
        pos = dot + 1;
    }
}

// ---------------------------------------------------------------------------

struct Context {
    RunConfig cfg;
    fs::path base;  // relative paths in the config resolve against this
    std::ostream* out = &std::cout;
    std::ostream* log = &std::cerr;
    std::mutex log_mu;

    fs::path resolve(const std::string& p) const {
        fs::path path(p);
        return path.is_absolute() ? path : base / path;
    }
    fs::path work() const { return resolve(cfg.work_dir); }
    fs::path preprocessed(const std::string& b) const { return work() / "preprocessed" / (b + ".json"); }
    fs::path model(const std::string& b) const { return work() / "models" / (b + ".ckpt"); }
    fs::path detections(const std::string& b) const { return work() / "detections" / b; }

    void info(const std::string& msg) {
        std::lock_guard lock(log_mu);
        *log << msg << '\n';
    }
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure after all workers stop.
template <class F>
void parallel_for(std::size_t n, int threads, F&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::jthread> pool;
    for (int t = 0; t < std::min<int>(threads, static_cast<int>(n)); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
}

inline std::int64_t epoch_seconds(Timestamp t) { return t.time_since_epoch().count(); }
inline std::int64_t epoch_hours(Timestamp t) { return epoch_seconds(t) / 3600; }

inline void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw IoError(what + " not found: " + p.string());
}

inline json read_json(const fs::path& p) {
    json j = json::parse(read_file(p.string()), nullptr, false);
    if (j.is_discarded()) throw FormatError(p.string() + ": not valid JSON");
    return j;
}

inline void write_text(const fs::path& p, const std::string& text) { write_file_atomic(p.string(), text); }

}  // namespace detail

// Cleaned series plus its segmentation, as stored by `preprocess`.
struct Prepared {
    RawSeries series;
    std::vector<Segment> segments;  // normalized
    std::vector<bool> is_test;
};

inline json prepared_to_json(const Prepared& p) {
    json j;
    j["building_id"] = p.series.building_id;
    std::vector<std::int64_t> ts;
    for (auto t : p.series.timestamps) ts.push_back(detail::epoch_seconds(t));
    j["timestamps"] = ts;
    j["readings"] = p.series.readings;
    std::vector<int> labels;
    for (bool b : p.series.labels) labels.push_back(b ? 1 : 0);
    j["labels"] = labels;
    j["segments"] = json::array();
    for (std::size_t i = 0; i < p.segments.size(); ++i)
        j["segments"].push_back({{"index", i},
                                 {"origin", p.segments[i].origin},
                                 {"length", p.segments[i].size()},
                                 {"raw_min", p.segments[i].raw_min},
                                 {"raw_max", p.segments[i].raw_max},
                                 {"split", p.is_test[i] ? "test" : "train"}});
    return j;
}

inline Prepared prepared_from_json(const json& j, const std::string& source) {
    try {
        Prepared p;
        p.series.building_id = j.at("building_id").get<std::string>();
        for (auto s : j.at("timestamps").get<std::vector<std::int64_t>>()) p.series.timestamps.push_back(Timestamp{std::chrono::seconds{s}});
        p.series.readings = j.at("readings").get<std::vector<double>>();
        for (int b : j.at("labels").get<std::vector<int>>()) p.series.labels.push_back(b != 0);
        if (p.series.timestamps.size() != p.series.size() || p.series.labels.size() != p.series.size())
            throw FormatError(source + ": column lengths differ");
        for (const auto& s : j.at("segments")) {
            const auto origin = s.at("origin").get<std::size_t>(), len = s.at("length").get<std::size_t>();
            if (origin + len > p.series.size()) throw FormatError(source + ": segment runs past the series");
            Segment seg;
            seg.origin = origin;
            seg.values.assign(p.series.readings.begin() + origin, p.series.readings.begin() + origin + len);
            seg.labels.assign(p.series.labels.begin() + origin, p.series.labels.begin() + origin + len);
            p.segments.push_back(normalize(seg));
            p.is_test.push_back(s.at("split").get<std::string>() == "test");
        }
        return p;
    } catch (const json::exception& e) {
        throw FormatError(source + ": malformed preprocessed file (" + e.what() + ")");
    }
}

inline Prepared prepare(const RawSeries& raw, int n_segments) {
    Prepared p;
    p.series = drop_missing(raw);
    for (const auto& s : segmentize(p.series, n_segments)) {
        p.segments.push_back(normalize(s));
        p.is_test.push_back(s.has_anomaly());
    }
    split_train_test(p.segments);  // throws when nothing is clean
    return p;
}

inline std::vector<std::string> prepared_buildings(const Context& ctx) {
    if (!ctx.cfg.buildings.empty()) return ctx.cfg.buildings;
    std::vector<std::string> out;
    const fs::path dir = ctx.work() / "preprocessed";
    if (!fs::is_directory(dir)) throw IoError("no preprocessed data in " + dir.string() + " (run preprocess first)");
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw DataError("no preprocessed buildings in " + dir.string());
    return out;
}

inline Prepared load_prepared(const Context& ctx, const std::string& building) {
    const fs::path path = ctx.preprocessed(building);
    detail::require_file(path, "preprocessed data for building " + building);
    Prepared p = prepared_from_json(detail::read_json(path), path.string());
    if (p.series.building_id != building)
        throw DataError(path.string() + " holds building " + p.series.building_id + ", expected " + building);
    return p;
}

// ---------------------------------------------------------------------------

inline void cmd_synth(Context& ctx) {
    std::vector<SynthConfig> specs = ctx.cfg.synth;
    if (specs.empty()) specs.push_back(SynthConfig{});
    std::vector<RawSeries> series;
    for (const auto& s : specs) series.push_back(synth_series(s));
    std::ostringstream csv;
    write_lead_csv(csv, series);
    const fs::path out = ctx.resolve(ctx.cfg.data_csv);
    detail::write_text(out, csv.str());
    *ctx.out << "wrote " << out.string() << '\n';
    for (const auto& s : specs) {
        *ctx.out << s.building_id << ": " << s.length << " hours, " << s.injections.size() << " injection(s)\n";
        for (const auto& in : s.injections)
            *ctx.out << "  " << to_string(in.type) << " t=[" << in.start << ", " << in.start + in.duration - 1
                     << "] magnitude " << format_double(in.magnitude) << '\n';
    }
}

inline void cmd_preprocess(Context& ctx) {
    const fs::path in = ctx.resolve(ctx.cfg.data_csv);
    detail::require_file(in, "input CSV");
    auto all = load_lead_csv(in.string());
    std::vector<RawSeries> chosen;
    if (ctx.cfg.buildings.empty()) {
        chosen = std::move(all);
    } else {
        for (const auto& b : ctx.cfg.buildings) {
            auto it = std::find_if(all.begin(), all.end(), [&](const RawSeries& s) { return s.building_id == b; });
            if (it == all.end()) throw DataError("building " + b + " not found in " + in.string());
            chosen.push_back(*it);
        }
    }
    std::vector<Prepared> prepared;
    for (const auto& s : chosen) {
        try {
            prepared.push_back(prepare(s, ctx.cfg.n_segments));
        } catch (const ArgumentError& e) {
            throw DataError("building " + s.building_id + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("building " + s.building_id + ": " + e.what());
        }
    }
    for (const auto& p : prepared) {
        detail::write_text(ctx.preprocessed(p.series.building_id), prepared_to_json(p).dump());
        const auto n_test = std::count(p.is_test.begin(), p.is_test.end(), true);
        *ctx.out << p.series.building_id << ": " << p.series.size() << " readings, " << p.segments.size() - n_test
                 << " train / " << n_test << " test segments\n";
    }
}

inline WindowBatch training_windows(const Prepared& p) {
    std::vector<WindowBatch> parts;
    for (std::size_t i = 0; i < p.segments.size(); ++i)
        if (!p.is_test[i] && p.segments[i].size() >= static_cast<std::size_t>(kWindow)) parts.push_back(windows(p.segments[i], kWindow));
    return concat_windows(parts);
}

inline void cmd_train(Context& ctx) {
    const auto buildings = prepared_buildings(ctx);
    std::vector<Prepared> data;
    for (const auto& b : buildings) data.push_back(load_prepared(ctx, b));
    detail::parallel_for(data.size(), ctx.cfg.threads, [&](std::size_t i) {
        const std::string& b = buildings[i];
        WindowBatch wb = training_windows(data[i]);
        if (wb.count() == 0) throw DataError("building " + b + ": empty train split");
        ctx.info(b + ": training on " + std::to_string(wb.count()) + " windows");
        auto result = train(wb, ctx.cfg.train, [&](int epoch, const TrainReport& r) {
            std::ostringstream msg;
            msg << b << ": epoch " << epoch + 1 << "/" << ctx.cfg.train.epochs << " critic loss "
                << format_double(r.epoch_wasserstein.back());
            ctx.info(msg.str());
        });
        Checkpoint ck{b, ctx.cfg.train, config_hash(ctx.cfg.train), result.generator, result.critic};
        save_checkpoint(ctx.model(b).string(), ck);
        std::ostringstream report;
        write_train_report_csv(report, result.report);
        detail::write_text(ctx.work() / "reports" / (b + "_train.csv"), report.str());
    });
    for (const auto& b : buildings) *ctx.out << b << ": wrote " << ctx.model(b).string() << '\n';
}

inline Checkpoint load_model(const Context& ctx, const std::string& building) {
    const fs::path path = ctx.model(building);
    detail::require_file(path, "checkpoint for building " + building);
    Checkpoint ck = load_checkpoint(path.string());
    if (ck.building_id != building) throw VersionError(path.string() + " was trained for building " + ck.building_id);
    return ck;
}

inline void cmd_detect(Context& ctx) {
    const auto buildings = prepared_buildings(ctx);
    struct Job {
        std::size_t building, segment;
    };
    std::vector<Prepared> data;
    std::vector<Checkpoint> models;
    std::vector<Job> jobs;
    for (std::size_t b = 0; b < buildings.size(); ++b) {
        data.push_back(load_prepared(ctx, buildings[b]));
        models.push_back(load_model(ctx, buildings[b]));
        for (std::size_t s = 0; s < data[b].segments.size(); ++s)
            if (data[b].is_test[s]) jobs.push_back({b, s});
    }
    std::vector<SegmentDetection> results(jobs.size());
    detail::parallel_for(jobs.size(), ctx.cfg.threads, [&](std::size_t j) {
        const auto& [b, s] = jobs[j];
        const Segment& seg = data[b].segments[s];
        if (seg.size() < static_cast<std::size_t>(kWindow))
            throw DataError("building " + buildings[b] + " segment " + std::to_string(s) + " is shorter than one window");
        InvertConfig icfg = ctx.cfg.invert;
        icfg.seed = wattgan::detail::mix_seed(ctx.cfg.invert.seed, s);
        results[j] = detect_segment(seg, models[b].generator, icfg, ctx.cfg.score, ctx.cfg.detect);
        ctx.info(buildings[b] + ": segment " + std::to_string(s) + " -> " + std::to_string(results[j].predicted.size()) +
                 " predicted timestamps");
    });

    for (std::size_t b = 0; b < buildings.size(); ++b) {
        const fs::path dir = ctx.detections(buildings[b]);
        json summary;
        summary["building_id"] = buildings[b];
        summary["segments"] = json::array();
        std::vector<std::int64_t> all_hours;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (jobs[j].building != b) continue;
            const std::size_t s = jobs[j].segment;
            const Segment& seg = data[b].segments[s];
            const auto& det = results[j];
            std::ostringstream csv, scores;
            write_detection_csv(csv, data[b].series, seg, det);
            write_scores_csv(scores, s, det.scores);
            detail::write_text(dir / ("segment_" + std::to_string(s) + ".csv"), csv.str());
            detail::write_text(dir / ("scores_" + std::to_string(s) + ".csv"), scores.str());
            std::vector<std::string> stamps;
            std::vector<std::int64_t> hours;
            for (std::size_t p : det.predicted) {
                const Timestamp t = data[b].series.timestamps[seg.origin + p];
                stamps.push_back(format_timestamp(t));
                hours.push_back(detail::epoch_hours(t));
            }
            all_hours.insert(all_hours.end(), hours.begin(), hours.end());
            summary["segments"].push_back({{"index", s},
                                           {"origin", seg.origin},
                                           {"length", seg.size()},
                                           {"critical_points", det.critical_points},
                                           {"predicted", stamps},
                                           {"predicted_hours", hours}});
        }
        summary["predicted_hours"] = all_hours;
        detail::write_text(dir / "summary.json", summary.dump(2) + "\n");
        *ctx.out << buildings[b] << ": " << all_hours.size() << " predicted anomalous timestamps, report in " << dir.string()
                 << '\n';
    }
}

// Ground truth for evaluation: labelled hours inside test segments.
inline std::vector<std::int64_t> ground_truth_hours(const Prepared& p) {
    std::vector<std::int64_t> out;
    for (std::size_t s = 0; s < p.segments.size(); ++s) {
        if (!p.is_test[s]) continue;
        const auto& seg = p.segments[s];
        for (std::size_t t = 0; t < seg.size(); ++t)
            if (seg.labels[t]) out.push_back(detail::epoch_hours(p.series.timestamps[seg.origin + t]));
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline json metrics_json(const std::vector<std::string>& buildings, const std::vector<std::vector<MatchResult>>& per_building,
                         const std::vector<std::int64_t>& r_t) {
    json j;
    j["results"] = json::array();
    for (std::size_t b = 0; b < buildings.size(); ++b)
        for (std::size_t k = 0; k < r_t.size(); ++k) {
            const auto& m = per_building[b][k];
            j["results"].push_back({{"building_id", buildings[b]}, {"r_t", r_t[k]}, {"tp", m.tp}, {"fn", m.fn}, {"fp", m.fp},
                                    {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}});
        }
    j["aggregate"] = json::array();
    for (std::size_t k = 0; k < r_t.size(); ++k) {
        std::vector<MatchResult> col;
        for (const auto& row : per_building) col.push_back(row[k]);
        auto a = aggregate(col);
        j["aggregate"].push_back({{"r_t", r_t[k]}, {"buildings", a.count}, {"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}});
    }
    return j;
}

inline void cmd_eval(Context& ctx) {
    const auto buildings = prepared_buildings(ctx);
    std::vector<std::vector<MatchResult>> per_building;
    for (const auto& b : buildings) {
        const Prepared p = load_prepared(ctx, b);
        const fs::path summary_path = ctx.detections(b) / "summary.json";
        detail::require_file(summary_path, "detection summary for building " + b);
        const json summary = detail::read_json(summary_path);
        std::vector<std::int64_t> pred;
        try {
            if (summary.at("building_id").get<std::string>() != b)
                throw DataError(summary_path.string() + " holds predictions for building " +
                                summary.at("building_id").get<std::string>() + ", labels are for " + b);
            pred = summary.at("predicted_hours").get<std::vector<std::int64_t>>();
        } catch (const json::exception& e) {
            throw FormatError(summary_path.string() + ": malformed summary (" + e.what() + ")");
        }
        std::sort(pred.begin(), pred.end());
        pred.erase(std::unique(pred.begin(), pred.end()), pred.end());
        const auto gt = ground_truth_hours(p);
        std::vector<MatchResult> row;
        for (auto r : ctx.cfg.r_t) row.push_back(match(gt, pred, {r}));
        per_building.push_back(row);
    }
    const json j = metrics_json(buildings, per_building, ctx.cfg.r_t);
    const fs::path out = ctx.work() / "metrics.json";
    detail::write_text(out, j.dump(2) + "\n");
    for (const auto& a : j["aggregate"])
        *ctx.out << "r_t=" << a["r_t"].get<std::int64_t>() << ": precision " << format_double(a["precision"].get<double>())
                 << " recall " << format_double(a["recall"].get<double>()) << " f1 " << format_double(a["f1"].get<double>())
                 << '\n';
    *ctx.out << "wrote " << out.string() << '\n';
}

// ---------------------------------------------------------------------------

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) return kConfigExit;
    if (dynamic_cast<const NumericalError*>(&e)) return kNumericalExit;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
        dynamic_cast<const VersionError*>(&e))
        return kDataExit;
    return kFailure;
}

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"GAN-based anomaly detection for hourly meter readings", "wattgan"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::vector<std::string> overrides;
    const char* names[] = {"synth", "preprocess", "train", "detect", "eval"};
    const char* help[] = {"write a synthetic LEAD-format CSV", "clean, segment and split the input CSV",
                          "train one model per building", "score test segments and predict anomalous timestamps",
                          "match predictions against labels"};
    for (int i = 0; i < 5; ++i) {
        auto* sub = app.add_subcommand(names[i], help[i]);
        sub->add_option("--config", config_path, std::string("run config JSON (default: $") + kConfigEnv + ")");
        sub->add_option("--set", overrides, "override a config value, key=value with a dotted key")->take_all();
    }
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, er;
        const int rc = app.exit(e, o, er);
        out << o.str();
        err << er.str();
        return rc == 0 ? kOk : kConfigExit;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        if (config_path.empty()) {
            const char* env = std::getenv(kConfigEnv);
            if (!env || !*env) throw ConfigError(std::string("no --config given and ") + kConfigEnv + " is not set");
            config_path = env;
        }
        if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
        json j = json::parse(read_file(config_path), nullptr, false, true);
        if (j.is_discarded()) throw ConfigError(config_path + ": not valid JSON");
        for (const auto& o : overrides) apply_override(j, o);

        Context ctx;
        ctx.cfg = parse_run_config(j);
        ctx.base = fs::absolute(config_path).parent_path();
        ctx.out = &out;
        ctx.log = &err;
        if (command == "synth") cmd_synth(ctx);
        else if (command == "preprocess") cmd_preprocess(ctx);
        else if (command == "train") cmd_train(ctx);
        else if (command == "detect") cmd_detect(ctx);
        else cmd_eval(ctx);
        return kOk;
    } catch (const std::exception& e) {
        err << "wattgan " << command << ": " << e.what() << '\n';
        return exit_code_for(e);
    }
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(std::move(args));
}

}  // namespace wattgan::cli
