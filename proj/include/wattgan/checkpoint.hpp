#pragma once

// Model checkpoints as a single JSON document. Parameter arrays and running
// statistics are stored as base64 of their little-endian IEEE-754 bytes so a
// save/load cycle is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>

#include "json.hpp"
#include "wattgan/error.hpp"
#include "wattgan/net.hpp"
#include "wattgan/train.hpp"

namespace wattgan {

inline constexpr std::string_view kCheckpointFormat = "wattgan-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        const std::uint32_t b0 = data[i];
        const std::uint32_t b1 = i + 1 < len ? data[i + 1] : 0;
        const std::uint32_t b2 = i + 2 < len ? data[i + 2] : 0;
        const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < len ? kB64[(v >> 6) & 63] : '=';
        out += i + 2 < len ? kB64[v & 63] : '=';
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view s) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (s.size() % 4 != 0) throw FormatError("checkpoint: malformed base64 payload");
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            if (s[i + j] == '=') {
                v[j] = 0;
                ++pad;
            } else {
                v[j] = value(s[i + j]);
                if (v[j] < 0 || pad > 0) throw FormatError("checkpoint: malformed base64 payload");
            }
        }
        const std::uint32_t word = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(static_cast<unsigned char>(word >> 16));
        if (pad < 2) out.push_back(static_cast<unsigned char>((word >> 8) & 0xFF));
        if (pad < 1) out.push_back(static_cast<unsigned char>(word & 0xFF));
    }
    return out;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");
    return {{"rows", m.rows()},
            {"cols", m.cols()},
            {"data", base64_encode(reinterpret_cast<const unsigned char*>(m.data()), sizeof(Real) * static_cast<std::size_t>(m.size()))}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols)
        throw FormatError("checkpoint: " + what + " has shape " + std::to_string(j.at("rows").get<long>()) + "x" +
                          std::to_string(j.at("cols").get<long>()) + ", expected " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    auto bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != sizeof(Real) * static_cast<std::size_t>(rows * cols))
        throw FormatError("checkpoint: " + what + " payload has the wrong size");
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes.data(), bytes.size());
    return m;
}

inline nlohmann::json layer_to_json(const Layer& layer) {
    nlohmann::json j;
    j["kind"] = layer_kind(layer);
    std::visit(
        [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv1d> || std::is_same_v<L, ConvTranspose1d>) {
                j["in_ch"] = l.in_ch;
                j["out_ch"] = l.out_ch;
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                j["padding"] = l.padding;
                j["weight"] = matrix_to_json(l.weight);
                j["bias"] = matrix_to_json(l.bias);
            } else if constexpr (std::is_same_v<L, BatchNorm1d>) {
                j["channels"] = l.channels;
                j["momentum"] = l.momentum;
                j["eps"] = l.eps;
                j["gamma"] = matrix_to_json(l.gamma);
                j["beta"] = matrix_to_json(l.beta);
                j["running_mean"] = matrix_to_json(l.running_mean);
                j["running_var"] = matrix_to_json(l.running_var);
            } else if constexpr (std::is_same_v<L, LeakyReLU>) {
                j["slope"] = l.slope;
            }
        },
        layer);
    return j;
}

inline Layer layer_from_json(const nlohmann::json& j, const std::string& where) {
    const auto kind = j.at("kind").get<std::string>();
    auto conv_common = [&](auto& c) {
        c.in_ch = j.at("in_ch").get<int>();
        c.out_ch = j.at("out_ch").get<int>();
        c.kernel = j.at("kernel").get<int>();
        c.stride = j.at("stride").get<int>();
        c.padding = j.at("padding").get<int>();
        if (c.in_ch < 1 || c.out_ch < 1 || c.kernel < 1 || c.stride < 1 || c.padding < 0)
            throw FormatError("checkpoint: invalid layer geometry at " + where);
    };
    if (kind == "conv1d") {
        Conv1d c;
        conv_common(c);
        c.weight = matrix_from_json(j.at("weight"), c.out_ch, static_cast<Eigen::Index>(c.in_ch) * c.kernel, where + ".weight");
        c.bias = matrix_from_json(j.at("bias"), c.out_ch, 1, where + ".bias");
        return c;
    }
    if (kind == "convT1d") {
        ConvTranspose1d c;
        conv_common(c);
        c.weight = matrix_from_json(j.at("weight"), static_cast<Eigen::Index>(c.out_ch) * c.kernel, c.in_ch, where + ".weight");
        c.bias = matrix_from_json(j.at("bias"), c.out_ch, 1, where + ".bias");
        return c;
    }
    if (kind == "batchnorm1d") {
        BatchNorm1d bn;
        bn.channels = j.at("channels").get<int>();
        bn.momentum = j.at("momentum").get<Real>();
        bn.eps = j.at("eps").get<Real>();
        bn.gamma = matrix_from_json(j.at("gamma"), bn.channels, 1, where + ".gamma");
        bn.beta = matrix_from_json(j.at("beta"), bn.channels, 1, where + ".beta");
        bn.running_mean = matrix_from_json(j.at("running_mean"), bn.channels, 1, where + ".running_mean");
        bn.running_var = matrix_from_json(j.at("running_var"), bn.channels, 1, where + ".running_var");
        return bn;
    }
    if (kind == "relu") return ReLU{};
    if (kind == "leaky_relu") return LeakyReLU{j.at("slope").get<Real>()};
    if (kind == "tanh") return Tanh{};
    throw FormatError("checkpoint: unknown layer kind '" + kind + "' at " + where);
}

inline nlohmann::json network_to_json(const Network& net) {
    nlohmann::json j;
    j["name"] = net.name;
    j["in_channels"] = net.in_channels;
    j["in_length"] = net.in_length;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : net.layers) j["layers"].push_back(layer_to_json(l));
    return j;
}

inline void network_from_json(const nlohmann::json& j, Network& net) {
    net.name = j.at("name").get<std::string>();
    net.in_channels = j.at("in_channels").get<int>();
    net.in_length = j.at("in_length").get<int>();
    net.layers.clear();
    const auto& layers = j.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i)
        net.layers.push_back(layer_from_json(layers[i], net.name + ".layers[" + std::to_string(i) + "]"));
}

// FNV-1a over the bytes of a string.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},       {"beta1", c.beta1},       {"beta2", c.beta2},   {"ncritic", c.ncritic},
            {"clip_c", c.clip_c}, {"batch_size", c.batch_size}, {"epochs", c.epochs}, {"seed", c.seed}};
}

inline std::string config_hash(const TrainConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(to_json(c).dump())));
    return buf;
}

struct Checkpoint {
    std::string building_id;
    TrainConfig train_config;
    std::string config_hash;
    GeneratorNet generator;
    CriticNet critic;
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["real"] = sizeof(Real) == 8 ? "f64le" : "f32le";
    j["building_id"] = ck.building_id;
    j["train_config"] = to_json(ck.train_config);
    j["config_hash"] = ck.config_hash;
    j["generator"] = detail::network_to_json(ck.generator);
    j["critic"] = detail::network_to_json(ck.critic);
    return j.dump();
}

inline Checkpoint deserialize_checkpoint(std::string_view text, const std::string& source = "<memory>") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(source + ": not a JSON checkpoint (" + e.what() + ")");
    }
    try {
        if (j.value("format", "") != kCheckpointFormat) throw FormatError(source + ": not a wattgan checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw VersionError(source + ": checkpoint version " + std::to_string(j.at("version").get<int>()) +
                               " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
        const std::string real = sizeof(Real) == 8 ? "f64le" : "f32le";
        if (j.at("real").get<std::string>() != real)
            throw VersionError(source + ": checkpoint stores " + j.at("real").get<std::string>() + " but this build uses " + real);
        Checkpoint ck;
        ck.building_id = j.at("building_id").get<std::string>();
        const auto& tc = j.at("train_config");
        ck.train_config.lr = tc.at("lr").get<double>();
        ck.train_config.beta1 = tc.at("beta1").get<double>();
        ck.train_config.beta2 = tc.at("beta2").get<double>();
        ck.train_config.ncritic = tc.at("ncritic").get<int>();
        ck.train_config.clip_c = tc.at("clip_c").get<double>();
        ck.train_config.batch_size = tc.at("batch_size").get<int>();
        ck.train_config.epochs = tc.at("epochs").get<int>();
        ck.train_config.seed = tc.at("seed").get<std::uint64_t>();
        ck.config_hash = j.at("config_hash").get<std::string>();
        detail::network_from_json(j.at("generator"), ck.generator);
        detail::network_from_json(j.at("critic"), ck.critic);
        if (ck.generator.in_channels != kLatentDim || ck.critic.in_length != kWindow)
            throw VersionError(source + ": network geometry does not match this build");
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(source + ": malformed checkpoint (" + e.what() + ")");
    }
}

// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const std::string& path, std::string_view contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = fs::path(path + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path + ": " + ec.message());
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file_atomic(path, serialize_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path), path); }

}  // namespace wattgan
