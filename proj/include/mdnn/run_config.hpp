#pragma once

// JSON run configuration for the command-line driver. Every field is checked
// before any computation starts; errors name the offending key.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdnn/checkpoint.hpp"
#include "mdnn/dataset.hpp"
#include "mdnn/errors.hpp"
#include "mdnn/metasurface.hpp"
#include "mdnn/model.hpp"
#include "mdnn/trainer.hpp"

namespace mdnn {

struct TaskConfig {
    ChannelTask task;
    std::vector<int> labels; // empty = keep all ten classes as-is
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t test_subset = 0;
};

struct BifocalConfig {
    Point3 focus_x{4e-6, 0.0, 40e-6};
    Point3 focus_y{-4e-6, 0.0, 40e-6};
    std::size_t n = 128;
};

struct RunConfig {
    OpticalConfig optics;
    std::size_t layer_count = 3;
    std::vector<double> gaps;
    std::vector<TaskConfig> tasks;
    TrainConfig train;
    std::string init = "random"; // random | zero
    std::string checkpoint_dir = "out/checkpoint";
    std::string report_dir = "out/reports";
    std::optional<std::string> library;
    std::size_t pgm_samples = 10;
    BifocalConfig bifocal;

    NetworkModel make_network() const {
        NetworkModel m = make_model(optics, layer_count);
        m.gaps = gaps;
        m.validate();
        return m;
    }
};

namespace detail {

class Reader {
public:
    Reader(const nlohmann::json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {}

    bool has(const char* key) const { return j_.is_object() && j_.contains(key) && !j_.at(key).is_null(); }

    std::string path(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    template <class T>
    T get(const char* key, T fallback) const {
        if (!has(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("has the wrong type", path(key));
        }
    }

    template <class T>
    T require(const char* key) const {
        if (!has(key)) throw ConfigError("is required", path(key));
        return get<T>(key, T{});
    }

    Reader sub(const char* key) const {
        static const nlohmann::json empty = nlohmann::json::object();
        if (!has(key)) return Reader(empty, path(key));
        if (!j_.at(key).is_object()) throw ConfigError("must be an object", path(key));
        return Reader(j_.at(key), path(key));
    }

    const nlohmann::json& raw() const { return j_; }

private:
    const nlohmann::json& j_;
    std::string prefix_;
};

inline Point3 read_point(const Reader& r, const char* key, Point3 fallback) {
    if (!r.has(key)) return fallback;
    const auto v = r.get<std::vector<double>>(key, {});
    if (v.size() != 3) throw ConfigError("must be [x, y, z] in meters", r.path(key));
    if (!(v[2] > 0.0)) throw ConfigError("focal distance z must be > 0", r.path(key));
    return {v[0], v[1], v[2]};
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

} // namespace detail

/// Parses and validates. Relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    using detail::Reader;
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object", "config");
    const Reader root(doc, "");
    RunConfig rc;

    const Reader optics = root.sub("optics");
    rc.optics.wavelength = optics.get<double>("wavelength", 532e-9);
    rc.optics.pitch = optics.get<double>("pitch", 400e-9);
    const long n = optics.get<long>("n", 28);
    if (!(rc.optics.wavelength > 0.0)) throw ConfigError("must be > 0", optics.path("wavelength"));
    if (!(rc.optics.pitch > 0.0)) throw ConfigError("must be > 0", optics.path("pitch"));
    if (n < 2) throw ConfigError("must be at least 2", optics.path("n"));
    rc.optics.grid_n = static_cast<std::size_t>(n);

    const Reader net = root.sub("network");
    const long layers = net.get<long>("layers", 3);
    if (layers < 0) throw ConfigError("must be >= 0", net.path("layers"));
    rc.layer_count = static_cast<std::size_t>(layers);
    if (net.has("gaps")) {
        rc.gaps = net.get<std::vector<double>>("gaps", {});
        if (rc.gaps.size() != rc.layer_count + 1)
            throw ConfigError("needs layers + 1 entries", net.path("gaps"));
    } else {
        const double input_gap = net.get<double>("input_gap", 0.0);
        const double gap = net.get<double>("gap", 100e-6);
        rc.gaps.assign(rc.layer_count + 1, gap);
        if (rc.layer_count > 0) rc.gaps.front() = input_gap;
    }
    for (std::size_t i = 0; i < rc.gaps.size(); ++i) {
        const bool first = i == 0 && rc.layer_count > 0;
        if (!(rc.gaps[i] >= 0.0) || (!first && rc.gaps[i] == 0.0))
            throw ConfigError("gap " + std::to_string(i) + " must be > 0 (the input gap may be 0)", net.path("gaps"));
    }

    const Reader tr = root.sub("train");
    rc.train.batch_size = tr.get<std::size_t>("batch_size", 10);
    rc.train.learning_rate = tr.get<double>("learning_rate", 0.1);
    rc.train.epochs = tr.get<std::size_t>("epochs", 30);
    rc.train.rng_seed = tr.get<std::uint64_t>("seed", 1);
    rc.train.train_subset = tr.get<std::size_t>("train_subset", 10000);
    rc.train.gain = tr.get<double>("gain", rc.train.gain);
    rc.train.workers = tr.get<std::size_t>("workers", 1);
    rc.train.curve_test = tr.get<bool>("curve_test", true);
    rc.train.curve_test_subset = tr.get<std::size_t>("curve_test_subset", 0);
    rc.init = tr.get<std::string>("init", "random");
    if (rc.init != "random" && rc.init != "zero") throw ConfigError("must be 'random' or 'zero'", tr.path("init"));
    try {
        rc.train.validate();
    } catch (const ConfigError& e) {
        throw ConfigError("invalid value", tr.path(e.field().c_str()));
    }

    if (root.has("tasks")) {
        const auto& tasks = doc.at("tasks");
        if (!tasks.is_array() || tasks.empty() || tasks.size() > 2)
            throw ConfigError("must list one or two channel tasks", "tasks");
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const std::string prefix = "tasks[" + std::to_string(i) + "]";
            const Reader t(tasks[i], prefix);
            TaskConfig tc;
            try {
                tc.task.channel = detail::parse_channel(t.get<std::string>("channel", i == 0 ? "x" : "y"));
            } catch (const ConfigError&) {
                throw ConfigError("must be 'x' or 'y'", t.path("channel"));
            }
            tc.task.dataset_id = t.get<std::string>("dataset", "mnist");
            try {
                tc.task.encoding = detail::parse_encoding(t.get<std::string>("encoding", "phase"));
            } catch (const ConfigError&) {
                throw ConfigError("must be 'amplitude' or 'phase'", t.path("encoding"));
            }
            tc.task.max_phase = t.get<double>("max_phase", std::numbers::pi);
            if (t.has("binarize")) tc.task.binarize_threshold = t.get<double>("binarize", 0.5);
            tc.labels = t.get<std::vector<int>>("labels", {});
            for (int l : tc.labels)
                if (l < 0 || l > 255) throw ConfigError("labels must be dataset class ids", t.path("labels"));
            const std::size_t classes = tc.labels.empty() ? t.get<std::size_t>("classes", 10) : tc.labels.size();
            const double ratio = t.get<double>("size_ratio", 0.8);
            if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("must lie in (0,1]", t.path("size_ratio"));
            try {
                tc.task.detector = default_layout(rc.optics.grid_n, classes, ratio);
            } catch (const ConfigError& e) {
                throw ConfigError(e.what(), t.path("size_ratio"));
            }
            tc.train_images = detail::resolve(base_dir, t.get<std::string>("train_images", ""));
            tc.train_labels = detail::resolve(base_dir, t.get<std::string>("train_labels", ""));
            tc.test_images = detail::resolve(base_dir, t.get<std::string>("test_images", ""));
            tc.test_labels = detail::resolve(base_dir, t.get<std::string>("test_labels", ""));
            tc.test_subset = t.get<std::size_t>("test_subset", 0);
            try {
                validate_tasks({tc.task}, rc.optics.grid_n);
            } catch (const ConfigError& e) {
                throw ConfigError(e.what(), prefix + "." + e.field());
            }
            rc.tasks.push_back(std::move(tc));
        }
        if (rc.tasks.size() == 2 && rc.tasks[0].task.channel == rc.tasks[1].task.channel)
            throw ConfigError("tasks must use distinct channels", "tasks[1].channel");
    }

    const Reader paths = root.sub("paths");
    rc.checkpoint_dir = detail::resolve(base_dir, paths.get<std::string>("checkpoint", "out/checkpoint"));
    rc.report_dir = detail::resolve(base_dir, paths.get<std::string>("reports", "out/reports"));
    if (paths.has("library")) rc.library = detail::resolve(base_dir, paths.get<std::string>("library", ""));
    rc.pgm_samples = root.sub("eval").get<std::size_t>("pgm_samples", 10);

    const Reader bf = root.sub("bifocal");
    rc.bifocal.focus_x = detail::read_point(bf, "focus_x", rc.bifocal.focus_x);
    rc.bifocal.focus_y = detail::read_point(bf, "focus_y", rc.bifocal.focus_y);
    const long bn = bf.get<long>("n", 128);
    if (bn < 2) throw ConfigError("must be at least 2", bf.path("n"));
    rc.bifocal.n = static_cast<std::size_t>(bn);
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open configuration file " + path, "config");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what(), "config");
    }
    return parse_run_config(doc, std::filesystem::path(path).parent_path());
}

/// Requires dataset files for the given split to exist.
inline void require_dataset_files(const RunConfig& rc, bool train_split, bool test_split) {
    namespace fs = std::filesystem;
    if (rc.tasks.empty()) throw ConfigError("at least one task is required", "tasks");
    for (std::size_t i = 0; i < rc.tasks.size(); ++i) {
        const auto& t = rc.tasks[i];
        const std::string prefix = "tasks[" + std::to_string(i) + "].";
        auto need = [&](const std::string& p, const char* key) {
            if (p.empty()) throw ConfigError("is required", prefix + key);
            if (!fs::exists(p)) throw ConfigError("file not found: " + p, prefix + key);
        };
        if (train_split) {
            need(t.train_images, "train_images");
            need(t.train_labels, "train_labels");
        }
        if (test_split) {
            need(t.test_images, "test_images");
            need(t.test_labels, "test_labels");
        }
    }
}

/// Loads one split of a task's data, applying the label selection.
inline LabeledImageSet load_task_split(const TaskConfig& t, bool train_split) {
    LabeledImageSet set = train_split ? load_idx(t.train_images, t.train_labels) : load_idx(t.test_images, t.test_labels);
    if (!t.labels.empty()) set = select_labels(set, t.labels);
    if (!train_split) set = take(set, t.test_subset);
    return set;
}

} // namespace mdnn
