#pragma once

// Model checkpoints: a directory holding model.json plus one raw
// little-endian float64 row-major file per (layer, channel, quantity), named
// layer<l>_<x|y>_<phi|a>.f64.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdnn/errors.hpp"
#include "mdnn/model.hpp"

namespace mdnn {

struct Checkpoint {
    NetworkModel model;
    std::vector<ChannelTask> tasks;
    double gain = 10.0;
    std::uint64_t seed = 1;
};

inline constexpr int checkpoint_format_version = 1;

namespace detail {

inline void write_f64(const std::filesystem::path& path, const std::vector<double>& values) {
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<double> read_f64(const std::filesystem::path& path, std::size_t count) {
    const auto bytes = read_file(path.string());
    if (bytes.size() != count * 8)
        throw ParseError(path.string() + ": expected " + std::to_string(count * 8) + " bytes, found " +
                             std::to_string(bytes.size()),
                         static_cast<long long>(bytes.size()));
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + b]} << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
    return values;
}

inline std::string layer_file(std::size_t l, Channel c, const char* quantity) {
    return "layer" + std::to_string(l) + "_" + to_string(c) + "_" + quantity + ".f64";
}

inline nlohmann::json task_to_json(const ChannelTask& t) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : t.detector.regions)
        regions.push_back({r.class_id, r.rect.row, r.rect.col, r.rect.height, r.rect.width});
    nlohmann::json j = {{"channel", to_string(t.channel)},
                        {"dataset", t.dataset_id},
                        {"encoding", to_string(t.encoding)},
                        {"max_phase", t.max_phase},
                        {"detector", {{"size_ratio", t.detector.size_ratio}, {"regions", regions}}}};
    j["binarize"] = t.binarize_threshold ? nlohmann::json(*t.binarize_threshold) : nlohmann::json(nullptr);
    return j;
}

inline Channel parse_channel(const std::string& s) {
    if (s == "x") return Channel::x;
    if (s == "y") return Channel::y;
    throw ConfigError("must be 'x' or 'y'", "channel");
}

inline Encoding parse_encoding(const std::string& s) {
    if (s == "amplitude") return Encoding::amplitude;
    if (s == "phase") return Encoding::phase;
    throw ConfigError("must be 'amplitude' or 'phase'", "encoding");
}

inline ChannelTask task_from_json(const nlohmann::json& j) {
    ChannelTask t;
    t.channel = parse_channel(j.at("channel").get<std::string>());
    t.dataset_id = j.at("dataset").get<std::string>();
    t.encoding = parse_encoding(j.at("encoding").get<std::string>());
    t.max_phase = j.at("max_phase").get<double>();
    if (j.contains("binarize") && !j.at("binarize").is_null()) t.binarize_threshold = j.at("binarize").get<double>();
    const auto& d = j.at("detector");
    t.detector.size_ratio = d.at("size_ratio").get<double>();
    for (const auto& r : d.at("regions"))
        t.detector.regions.push_back({r.at(0).get<int>(),
                                      Rect{r.at(1).get<std::size_t>(), r.at(2).get<std::size_t>(),
                                           r.at(3).get<std::size_t>(), r.at(4).get<std::size_t>()}});
    return t;
}

} // namespace detail

inline void save_checkpoint(const std::string& dir, const Checkpoint& ck) {
    namespace fs = std::filesystem;
    ck.model.validate();
    fs::create_directories(dir);
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : ck.tasks) tasks.push_back(detail::task_to_json(t));
    const nlohmann::json meta = {{"format_version", checkpoint_format_version},
                                 {"wavelength", ck.model.config.wavelength},
                                 {"pitch", ck.model.config.pitch},
                                 {"n", ck.model.config.grid_n},
                                 {"gaps", ck.model.gaps},
                                 {"layer_count", ck.model.layers.size()},
                                 {"tasks", tasks},
                                 {"gain", ck.gain},
                                 {"seed", ck.seed}};
    {
        std::ofstream out(fs::path(dir) / "model.json", std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint metadata in " + dir);
        out << meta.dump(2) << '\n';
    }
    for (std::size_t l = 0; l < ck.model.layers.size(); ++l)
        for (Channel c : {Channel::x, Channel::y}) {
            const auto& layer = ck.model.layers[l];
            detail::write_f64(fs::path(dir) / detail::layer_file(l, c, "phi"), layer.phase(c).pixels);
            detail::write_f64(fs::path(dir) / detail::layer_file(l, c, "a"), layer.amplitude(c).pixels);
        }
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto meta_path = fs::path(dir) / "model.json";
    std::ifstream in(meta_path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint metadata " + meta_path.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what(), 0);
    }
    Checkpoint ck;
    try {
        if (meta.at("format_version").get<int>() != checkpoint_format_version)
            throw ConfigError("unsupported checkpoint format version", "format_version");
        ck.model.config.wavelength = meta.at("wavelength").get<double>();
        ck.model.config.pitch = meta.at("pitch").get<double>();
        ck.model.config.grid_n = meta.at("n").get<std::size_t>();
        ck.model.gaps = meta.at("gaps").get<std::vector<double>>();
        const auto layers = meta.at("layer_count").get<std::size_t>();
        for (const auto& t : meta.at("tasks")) ck.tasks.push_back(detail::task_from_json(t));
        ck.gain = meta.at("gain").get<double>();
        ck.seed = meta.at("seed").get<std::uint64_t>();
        ck.model.config.validate();
        const std::size_t n = ck.model.config.grid_n;
        for (std::size_t l = 0; l < layers; ++l) {
            MetaLayer layer(n, ck.model.config.pitch);
            for (Channel c : {Channel::x, Channel::y}) {
                layer.phase(c) = RealGrid(n, detail::read_f64(fs::path(dir) / detail::layer_file(l, c, "phi"), n * n));
                layer.amplitude(c) = RealGrid(n, detail::read_f64(fs::path(dir) / detail::layer_file(l, c, "a"), n * n));
            }
            ck.model.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what(), 0);
    }
    ck.model.validate();
    validate_tasks(ck.tasks, ck.model.n());
    return ck;
}

} // namespace mdnn
