#pragma once

// Mini-batch SGD over phase maps, evaluation metrics and report writers.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "mdnn/dataset.hpp"
#include "mdnn/errors.hpp"
#include "mdnn/metasurface.hpp"
#include "mdnn/model.hpp"
#include "mdnn/parallel.hpp"

namespace mdnn {

struct TrainConfig {
    std::size_t batch_size = 10;
    double learning_rate = 0.1;
    std::size_t epochs = 30;
    std::uint64_t rng_seed = 1;
    std::size_t train_subset = 10000; // 0 = all
    double gain = 10.0;
    std::size_t workers = 1;
    // Test samples used for the per-epoch curve (0 = full test set, and no
    // per-epoch test evaluation at all when curve_test is false).
    bool curve_test = true;
    std::size_t curve_test_subset = 0;

    void validate() const {
        if (batch_size < 1) throw ConfigError("must be at least 1", "batch_size");
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("must be a finite non-negative number", "learning_rate");
        if (epochs < 1) throw ConfigError("must be at least 1", "epochs");
        if (!(gain > 0.0) || !std::isfinite(gain)) throw ConfigError("must be positive", "gain");
        if (workers < 1) throw ConfigError("must be at least 1", "workers");
    }
};

/// A task together with its training and test data.
struct TaskData {
    ChannelTask task;
    LabeledImageSet train;
    LabeledImageSet test;
};

struct EpochRecord {
    std::size_t epoch = 0;
    Channel channel = Channel::x;
    double loss = 0.0;
    double train_acc = 0.0;
    double test_acc = -1.0; // negative when not evaluated
};

struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts; // row = true class, column = prediction

    explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}

    std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
    std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }

    std::size_t total() const {
        std::size_t t = 0;
        for (auto v : counts) t += v;
        return t;
    }
    std::size_t row_sum(std::size_t truth) const {
        std::size_t t = 0;
        for (std::size_t p = 0; p < classes; ++p) t += at(truth, p);
        return t;
    }
    double accuracy() const {
        const std::size_t t = total();
        if (t == 0) return 0.0;
        std::size_t diag = 0;
        for (std::size_t k = 0; k < classes; ++k) diag += at(k, k);
        return static_cast<double>(diag) / static_cast<double>(t);
    }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Per-class statistics of the energy fraction landing in the target region.
struct EnergyReport {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<std::size_t> count;
};

struct SampleRecord {
    std::size_t index = 0;
    int label = 0;
    int predicted = 0;
    std::vector<double> fractions;
};

struct EvalResult {
    ConfusionMatrix confusion;
    EnergyReport energy;
    std::vector<SampleRecord> samples;
};

inline EvalResult evaluate(const NetworkModel& model, const ChannelTask& task, const LabeledImageSet& data,
                           std::size_t workers = 1) {
    const std::size_t classes = task.detector.classes();
    data.validate(classes);
    EvalResult res{ConfusionMatrix(classes), {}, std::vector<SampleRecord>(data.size())};
    parallel_for(data.size(), workers, [&](std::size_t i) {
        const auto f = forward_channel(encode_input(task, data.images[i], model.config), model, task.channel);
        const auto e = region_energies(f.intensity, model.n(), model.config.pitch, task.detector);
        res.samples[i] = {i, data.labels[i], predict(e.energies), e.fractions};
    });
    std::vector<double> sum(classes, 0.0), sq(classes, 0.0);
    res.energy.count.assign(classes, 0);
    for (const auto& s : res.samples) {
        ++res.confusion.at(static_cast<std::size_t>(s.label), static_cast<std::size_t>(s.predicted));
        const auto k = static_cast<std::size_t>(s.label);
        const double f = s.fractions[k];
        sum[k] += f;
        sq[k] += f * f;
        ++res.energy.count[k];
    }
    res.energy.mean.assign(classes, 0.0);
    res.energy.stddev.assign(classes, 0.0);
    for (std::size_t k = 0; k < classes; ++k) {
        const auto c = static_cast<double>(res.energy.count[k]);
        if (c == 0) continue;
        const double m = sum[k] / c;
        res.energy.mean[k] = m;
        res.energy.stddev[k] = std::sqrt(std::max(0.0, sq[k] / c - m * m));
    }
    return res;
}

/// Elementwise (b - a) / total * 100.
inline std::vector<double> compare_confusions(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    if (a.classes != b.classes) throw ConfigError("confusion matrices differ in shape", "confusion");
    if (a.total() != b.total()) throw ConfigError("confusion matrices come from different test sets", "confusion");
    const double total = static_cast<double>(a.total());
    std::vector<double> out(a.counts.size(), 0.0);
    if (total == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (static_cast<double>(b.counts[i]) - static_cast<double>(a.counts[i])) / total * 100.0;
    return out;
}

/// Replaces every layer by its library realization (quantized phases plus
/// library amplitudes on both channels).
inline NetworkModel realize_model(const NetworkModel& model, const MetaUnitLibrary& lib, std::size_t workers = 1) {
    lib.check_compatible(model.config);
    NetworkModel out = model;
    for (auto& layer : out.layers) layer = realize(layer.phi_x, layer.phi_y, lib, model.config, workers).layer;
    return out;
}

inline EvalResult crosstalk_evaluate(const NetworkModel& model, const MetaUnitLibrary& lib, const ChannelTask& task,
                                     const LabeledImageSet& data, std::size_t workers = 1) {
    return evaluate(realize_model(model, lib, workers), task, data, workers);
}

/// Uniform phases in [0, 2pi) for the given channel of every layer.
inline void init_phases(NetworkModel& model, Channel channel, std::uint64_t seed) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        Rng rng(seed, 0x5eed0000u + 2 * l + static_cast<std::uint64_t>(channel));
        for (auto& v : model.layers[l].phase(channel).pixels) v = two_pi * rng.uniform();
    }
}

struct TrainResult {
    NetworkModel model;
    std::vector<EpochRecord> curves;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains each task's channel independently with plain SGD on the batch-mean
/// phase gradient. Per-sample gradients are summed in sample-index order, so
/// results do not depend on the worker count.
inline TrainResult train(NetworkModel model, const std::vector<TaskData>& tasks, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    model.validate();
    std::vector<ChannelTask> plain;
    for (const auto& t : tasks) plain.push_back(t.task);
    validate_tasks(plain, model.n());
    for (const auto& t : tasks) {
        t.train.validate(t.task.detector.classes());
        t.test.validate(t.task.detector.classes());
        if (t.train.size() == 0) throw ConfigError("training set is empty", "dataset");
    }

    std::vector<LabeledImageSet> train_sets, curve_sets;
    for (const auto& t : tasks) {
        train_sets.push_back(take(t.train, cfg.train_subset));
        if (cfg.curve_test) curve_sets.push_back(take(t.test, cfg.curve_test_subset));
    }

    TrainResult result;
    const std::size_t n = model.n(), layers = model.layers.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
            const TaskData& td = tasks[ti];
            const Channel ch = td.task.channel;
            const LabeledImageSet& train_set = train_sets[ti];
            const std::uint64_t seed = cfg.rng_seed * 2 + static_cast<std::uint64_t>(ch);
            double loss_sum = 0.0;
            std::size_t correct = 0;
            for (const auto& batch : batches(train_set.size(), cfg.batch_size, seed, epoch)) {
                std::vector<ChannelGradient> grads(batch.size());
                std::vector<int> preds(batch.size());
                parallel_for(batch.size(), cfg.workers, [&](std::size_t s) {
                    const std::size_t idx = batch[s];
                    const auto f = forward_channel(encode_input(td.task, train_set.images[idx], model.config), model, ch);
                    const auto e = region_energies(f.intensity, n, model.config.pitch, td.task.detector);
                    preds[s] = predict(e.energies);
                    grads[s] = backward(f, model, train_set.labels[idx], td.task.detector, cfg.gain);
                });
                const double scale = cfg.learning_rate / static_cast<double>(batch.size());
                for (std::size_t l = 0; l < layers; ++l) {
                    RealGrid sum(n, 0.0);
                    for (const auto& g : grads)
                        for (std::size_t i = 0; i < n * n; ++i) sum[i] += g.phase[l][i];
                    RealGrid& phi = model.layers[l].phase(ch);
                    for (std::size_t i = 0; i < n * n; ++i) phi[i] -= scale * sum[i];
                }
                for (std::size_t s = 0; s < batch.size(); ++s) {
                    loss_sum += grads[s].loss;
                    if (preds[s] == train_set.labels[batch[s]]) ++correct;
                }
            }
            EpochRecord rec;
            rec.epoch = epoch;
            rec.channel = ch;
            rec.loss = loss_sum / static_cast<double>(train_set.size());
            rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
            if (cfg.curve_test && curve_sets[ti].size() > 0)
                rec.test_acc = evaluate(model, td.task, curve_sets[ti], cfg.workers).confusion.accuracy();
            result.curves.push_back(rec);
            if (on_epoch) on_epoch(rec);
        }
    }
    result.model = std::move(model);
    return result;
}

// ---- report writers ---------------------------------------------------------

namespace detail {
inline std::ofstream open_report(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    return out;
}
} // namespace detail

inline void write_curves_csv(const std::string& path, const std::vector<EpochRecord>& curves) {
    auto out = detail::open_report(path);
    out << "epoch,channel,loss,train_acc,test_acc\n";
    for (const auto& r : curves)
        out << r.epoch << ',' << to_string(r.channel) << ',' << detail::format_double(r.loss) << ','
            << detail::format_double(r.train_acc) << ','
            << (r.test_acc < 0.0 ? std::string() : detail::format_double(r.test_acc)) << '\n';
}

inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& m) {
    auto out = detail::open_report(path);
    for (std::size_t t = 0; t < m.classes; ++t)
        for (std::size_t p = 0; p < m.classes; ++p) out << m.at(t, p) << (p + 1 == m.classes ? '\n' : ',');
}

inline void write_matrix_csv(const std::string& path, const std::vector<double>& values, std::size_t classes) {
    auto out = detail::open_report(path);
    for (std::size_t t = 0; t < classes; ++t)
        for (std::size_t p = 0; p < classes; ++p)
            out << detail::format_double(values[t * classes + p]) << (p + 1 == classes ? '\n' : ',');
}

inline void write_energy_csv(const std::string& path, const EnergyReport& r) {
    auto out = detail::open_report(path);
    out << "class,count,mean_target_fraction,std_target_fraction\n";
    for (std::size_t k = 0; k < r.mean.size(); ++k)
        out << k << ',' << r.count[k] << ',' << detail::format_double(r.mean[k]) << ','
            << detail::format_double(r.stddev[k]) << '\n';
}

/// Binary 16-bit PGM (P5, big-endian samples), scaled so the maximum maps to 65535.
inline void write_pgm16(const std::string& path, std::span<const double> values, std::size_t n) {
    if (values.size() != n * n) throw ConfigError("image must be n x n", "grid_n");
    double mx = 0.0;
    for (double v : values) mx = std::max(mx, v);
    auto out = detail::open_report(path);
    out << "P5\n" << n << ' ' << n << "\n65535\n";
    for (double v : values) {
        const auto q = static_cast<unsigned>(mx > 0.0 ? std::lround(std::clamp(v / mx, 0.0, 1.0) * 65535.0) : 0);
        out.put(static_cast<char>(q >> 8));
        out.put(static_cast<char>(q & 0xff));
    }
}

} // namespace mdnn
