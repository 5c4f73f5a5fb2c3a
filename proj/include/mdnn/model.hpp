#pragma once

// Multi-channel diffractive network: alternating free-space propagation and
// phase layers, detector-region readout, softmax cross-entropy on region
// energy fractions and its analytic phase gradient.
//
// Per channel the forward model is
//   v_0 = P_0 u_in,  w_l = t_l * v_l,  v_{l+1} = P_{l+1} w_l,  out = P_L w_{L-1}
// with t_l = a_l exp(j phi_l) and I = |out|^2. Gradients flow back through
// the adjoint propagators and the conjugated transmissions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mdnn/dataset.hpp"
#include "mdnn/errors.hpp"
#include "mdnn/field.hpp"
#include "mdnn/metasurface.hpp"
#include "mdnn/propagation.hpp"

namespace mdnn {

struct NetworkModel {
    OpticalConfig config;
    std::vector<MetaLayer> layers;
    std::vector<double> gaps; // input->L1, L_i->L_{i+1}, L_last->detector

    std::size_t n() const { return config.grid_n; }

    void validate() const {
        config.validate();
        if (gaps.size() != layers.size() + 1)
            throw ConfigError("need exactly one more gap than layers", "gaps");
        for (std::size_t i = 0; i < gaps.size(); ++i) {
            const bool first = i == 0 && !layers.empty();
            if (!std::isfinite(gaps[i]) || gaps[i] < 0.0 || (!first && gaps[i] == 0.0))
                throw ConfigError("gap " + std::to_string(i) + " must be > 0 (the first may be 0)", "gaps");
        }
        for (const auto& l : layers) {
            if (l.n != config.grid_n || l.pitch != config.pitch)
                throw ConfigError("layer geometry differs from the optical configuration", "layers");
            l.validate();
        }
    }

    friend bool operator==(const NetworkModel&, const NetworkModel&) = default;
};

/// Builds a model with `layer_count` layers, the first gap `input_gap` and all
/// later gaps `gap`. Phases start at zero.
inline NetworkModel make_model(const OpticalConfig& cfg, std::size_t layer_count, double input_gap = 0.0,
                               double gap = 100e-6) {
    NetworkModel m;
    m.config = cfg;
    m.layers.assign(layer_count, MetaLayer(cfg.grid_n, cfg.pitch));
    m.gaps.assign(layer_count + 1, gap);
    if (layer_count > 0) m.gaps.front() = input_gap;
    m.validate();
    return m;
}

struct Rect {
    std::size_t row = 0, col = 0, height = 0, width = 0;

    bool overlaps(const Rect& o) const {
        return row < o.row + o.height && o.row < row + height && col < o.col + o.width && o.col < col + width;
    }
    bool contains(std::size_t r, std::size_t c) const {
        return r >= row && r < row + height && c >= col && c < col + width;
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

struct DetectorRegion {
    int class_id = 0;
    Rect rect;
    friend bool operator==(const DetectorRegion&, const DetectorRegion&) = default;
};

/// Output-plane regions for one channel; regions are indexed by class id.
struct DetectorLayout {
    std::vector<DetectorRegion> regions;
    double size_ratio = 0.8;

    std::size_t classes() const { return regions.size(); }

    void validate(std::size_t n) const {
        if (regions.empty()) throw ConfigError("detector layout has no regions", "detector");
        if (!(size_ratio > 0.0 && size_ratio <= 1.0)) throw ConfigError("must lie in (0,1]", "size_ratio");
        std::vector<bool> seen(regions.size(), false);
        for (std::size_t i = 0; i < regions.size(); ++i) {
            const auto& r = regions[i];
            if (r.rect.height == 0 || r.rect.width == 0) throw ConfigError("empty detector region", "detector");
            if (r.rect.row + r.rect.height > n || r.rect.col + r.rect.width > n)
                throw ConfigError("detector region outside the grid", "detector");
            if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= regions.size() || seen[r.class_id])
                throw ConfigError("class ids must be unique and cover 0..C-1", "detector");
            seen[r.class_id] = true;
            for (std::size_t j = 0; j < i; ++j)
                if (r.rect.overlaps(regions[j].rect)) throw ConfigError("detector regions overlap", "detector");
        }
    }

    friend bool operator==(const DetectorLayout&, const DetectorLayout&) = default;
};

/// Centered square regions of side size_ratio * n / 5. Ten classes use rows of
/// 3/4/3; other counts fill rows of at most ceil(sqrt(C)) regions. Region
/// centers sit n/4 apart.
inline DetectorLayout default_layout(std::size_t n, std::size_t classes, double size_ratio = 0.8) {
    if (classes == 0) throw ConfigError("need at least one class", "classes");
    if (!(size_ratio > 0.0 && size_ratio <= 1.0)) throw ConfigError("must lie in (0,1]", "size_ratio");
    std::vector<std::size_t> rows;
    if (classes == 10) {
        rows = {3, 4, 3};
    } else {
        const auto per_row = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(classes))));
        for (std::size_t left = classes; left > 0; left -= std::min(left, per_row)) rows.push_back(std::min(left, per_row));
    }
    const double nd = static_cast<double>(n);
    const double spacing = nd / 4.0;
    const auto side = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(size_ratio * nd / 5.0)));
    auto origin = [&](double center) {
        const double o = std::floor(center - static_cast<double>(side) / 2.0 + 0.5);
        return static_cast<std::size_t>(std::clamp(o, 0.0, nd - static_cast<double>(side)));
    };
    DetectorLayout layout;
    layout.size_ratio = size_ratio;
    int cls = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double cy = nd / 2.0 + (static_cast<double>(r) - (static_cast<double>(rows.size()) - 1.0) / 2.0) * spacing;
        for (std::size_t c = 0; c < rows[r]; ++c) {
            const double cx = nd / 2.0 + (static_cast<double>(c) - (static_cast<double>(rows[r]) - 1.0) / 2.0) * spacing;
            layout.regions.push_back({cls++, Rect{origin(cy), origin(cx), side, side}});
        }
    }
    std::sort(layout.regions.begin(), layout.regions.end(),
              [](const auto& a, const auto& b) { return a.class_id < b.class_id; });
    layout.validate(n);
    return layout;
}

enum class Encoding { amplitude, phase };

inline const char* to_string(Encoding e) { return e == Encoding::amplitude ? "amplitude" : "phase"; }

/// One classification task bound to a polarization channel.
struct ChannelTask {
    Channel channel = Channel::x;
    std::string dataset_id = "mnist"; // mnist | fashion-mnist | custom
    Encoding encoding = Encoding::phase;
    double max_phase = std::numbers::pi;
    std::optional<double> binarize_threshold;
    DetectorLayout detector;

    friend bool operator==(const ChannelTask&, const ChannelTask&) = default;
};

inline void validate_tasks(const std::vector<ChannelTask>& tasks, std::size_t n) {
    if (tasks.empty() || tasks.size() > 2) throw ConfigError("need one or two channel tasks", "tasks");
    if (tasks.size() == 2 && tasks[0].channel == tasks[1].channel)
        throw ConfigError("tasks must use distinct channels", "tasks");
    for (const auto& t : tasks) {
        if (t.dataset_id != "mnist" && t.dataset_id != "fashion-mnist" && t.dataset_id != "custom")
            throw ConfigError("unknown dataset id '" + t.dataset_id + "'", "dataset");
        if (t.encoding == Encoding::phase && !(t.max_phase > 0.0 && t.max_phase <= two_pi))
            throw ConfigError("must lie in (0, 2pi]", "max_phase");
        if (t.binarize_threshold && !(*t.binarize_threshold > 0.0 && *t.binarize_threshold < 1.0))
            throw ConfigError("must lie in (0,1)", "binarize");
        t.detector.validate(n);
    }
}

/// Maps a dataset image onto the channel's input field.
inline ComplexGrid encode_input(const ChannelTask& task, const Image& img, const OpticalConfig& cfg) {
    Image fitted = img.n == cfg.grid_n ? img : fit_image(img, cfg.grid_n);
    if (task.binarize_threshold) fitted = binarize(fitted, *task.binarize_threshold);
    return task.encoding == Encoding::amplitude ? encode_amplitude(fitted, cfg.pitch)
                                                : encode_phase(fitted, cfg.pitch, task.max_phase);
}

/// Fields retained by a forward pass for the reverse sweep.
struct ChannelForward {
    Channel channel = Channel::x;
    std::vector<ComplexGrid> pre;  // field arriving at layer l
    std::vector<ComplexGrid> post; // field leaving layer l
    ComplexGrid out;               // detector-plane field
    std::vector<double> intensity; // |out|^2

    bool empty() const { return intensity.empty(); }
};

namespace detail {
inline PropagationSpec gap_spec(const NetworkModel& m, std::size_t i) { return {m.gaps[i], m.config}; }

inline ComplexGrid propagate_gap(const ComplexGrid& u, const NetworkModel& m, std::size_t i) {
    return m.gaps[i] == 0.0 ? u : propagate_fft(u, gap_spec(m, i));
}

inline ComplexGrid propagate_gap_adjoint(const ComplexGrid& g, const NetworkModel& m, std::size_t i) {
    return m.gaps[i] == 0.0 ? g : propagate_adjoint(g, gap_spec(m, i));
}
} // namespace detail

inline ChannelForward forward_channel(const ComplexGrid& input, const NetworkModel& model, Channel channel) {
    if (input.n() != model.n() || input.pitch() != model.config.pitch)
        throw ConfigError("input field does not match the model geometry", "grid_n");
    ChannelForward f;
    f.channel = channel;
    f.pre.reserve(model.layers.size());
    f.post.reserve(model.layers.size());
    ComplexGrid u = input;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        f.pre.push_back(detail::propagate_gap(u, model, l));
        f.post.push_back(apply_channel(f.pre.back(), model.layers[l], channel));
        u = f.post.back();
    }
    f.out = detail::propagate_gap(u, model, model.layers.size());
    f.intensity = intensity(f.out);
    return f;
}

struct ForwardResult {
    ChannelForward x, y;
    const ChannelForward& channel(Channel c) const { return c == Channel::x ? x : y; }
};

inline ForwardResult forward(const PolarizedField& input, const NetworkModel& model) {
    return {forward_channel(input.x, model, Channel::x), forward_channel(input.y, model, Channel::y)};
}

struct RegionEnergies {
    std::vector<double> energies;  // E_k, indexed by class id
    std::vector<double> fractions; // E_k / total plane energy
    double total = 0.0;            // whole detector plane
    bool degenerate = false;       // total == 0; fractions reported as 0
};

inline RegionEnergies region_energies(std::span<const double> intensity, std::size_t n, double pitch,
                                      const DetectorLayout& layout) {
    if (intensity.size() != n * n) throw ConfigError("intensity map must be n x n", "grid_n");
    RegionEnergies out;
    out.energies.assign(layout.classes(), 0.0);
    out.fractions.assign(layout.classes(), 0.0);
    const double area = pitch * pitch;
    for (const auto& reg : layout.regions) {
        if (reg.rect.height == 0 || reg.rect.width == 0) throw ConfigError("empty detector region", "detector");
        if (reg.rect.row + reg.rect.height > n || reg.rect.col + reg.rect.width > n)
            throw ConfigError("detector region outside the grid", "detector");
        double acc = 0.0;
        for (std::size_t r = reg.rect.row; r < reg.rect.row + reg.rect.height; ++r)
            for (std::size_t c = reg.rect.col; c < reg.rect.col + reg.rect.width; ++c) acc += intensity[r * n + c];
        out.energies[static_cast<std::size_t>(reg.class_id)] = acc * area;
    }
    out.total = total_energy(intensity, pitch);
    out.degenerate = !(out.total > 0.0);
    if (!out.degenerate)
        for (std::size_t k = 0; k < out.energies.size(); ++k) out.fractions[k] = out.energies[k] / out.total;
    return out;
}

/// Index of the largest value; ties go to the lowest index.
inline int predict(std::span<const double> energies) {
    if (energies.empty()) throw ConfigError("no class energies", "detector");
    std::size_t best = 0;
    for (std::size_t k = 1; k < energies.size(); ++k)
        if (energies[k] > energies[best]) best = k;
    return static_cast<int>(best);
}

namespace detail {
inline std::vector<double> softmax(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) z += (p[k] = std::exp(logits[k] - mx));
    for (auto& v : p) v /= z;
    return p;
}

inline void check_loss_inputs(const RegionEnergies& e, int label) {
    if (e.degenerate || !(e.total > 0.0)) throw InputError("cross-entropy undefined: detector plane energy is zero");
    for (double v : e.energies)
        if (v < 0.0) throw InputError("negative region energy");
    if (label < 0 || static_cast<std::size_t>(label) >= e.energies.size())
        throw InputError("label " + std::to_string(label) + " outside the class range");
}
} // namespace detail

/// Softmax cross-entropy with logits gain * (E_k / total plane energy).
inline double loss_ce(const RegionEnergies& e, int label, double gain) {
    detail::check_loss_inputs(e, label);
    std::vector<double> logits(e.fractions.size());
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = gain * e.fractions[k];
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double s : logits) z += std::exp(s - mx);
    return -(logits[static_cast<std::size_t>(label)] - mx - std::log(z));
}

struct ChannelGradient {
    Channel channel = Channel::x;
    double loss = 0.0;
    std::vector<RealGrid> phase; // dL/dphi per layer
};

/// Reverse sweep over cached fields. Amplitudes are held fixed.
inline ChannelGradient backward(const ChannelForward& cache, const NetworkModel& model, int label,
                                const DetectorLayout& layout, double gain) {
    const std::size_t n = model.n();
    if (cache.empty() || cache.pre.size() != model.layers.size() || cache.post.size() != model.layers.size())
        throw UsageError("backward() needs the caches of a forward pass through this model");

    const RegionEnergies e = region_energies(cache.intensity, n, model.config.pitch, layout);
    ChannelGradient grad;
    grad.channel = cache.channel;
    grad.loss = loss_ce(e, label, gain);

    std::vector<double> logits(e.fractions.size());
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = gain * e.fractions[k];
    std::vector<double> g = detail::softmax(logits); // dL/ds_k
    g[static_cast<std::size_t>(label)] -= 1.0;

    // dL/dI_p = area * gain * (g_{k(p)} / T - sum_k g_k E_k / T^2)
    const double area = model.config.pitch * model.config.pitch;
    double weighted = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) weighted += g[k] * e.energies[k];
    const double background = -area * gain * weighted / (e.total * e.total);
    std::vector<double> dI(n * n, background);
    for (const auto& reg : layout.regions)
        for (std::size_t r = reg.rect.row; r < reg.rect.row + reg.rect.height; ++r)
            for (std::size_t c = reg.rect.col; c < reg.rect.col + reg.rect.width; ++c)
                dI[r * n + c] += area * gain * g[static_cast<std::size_t>(reg.class_id)] / e.total;

    // Wirtinger gradient 2 dL/d(conj out) with dL = Re(sum conj(G) d out).
    ComplexGrid G(n, model.config.pitch);
    for (std::size_t i = 0; i < n * n; ++i) G[i] = 2.0 * dI[i] * cache.out[i];

    grad.phase.assign(model.layers.size(), RealGrid(n, 0.0));
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const ComplexGrid Gw = detail::propagate_gap_adjoint(G, model, l + 1);
        const MetaLayer& layer = model.layers[l];
        const RealGrid& a = layer.amplitude(cache.channel);
        const RealGrid& phi = layer.phase(cache.channel);
        const ComplexGrid& w = cache.post[l];
        RealGrid& dphi = grad.phase[l];
        ComplexGrid Gv(n, model.config.pitch);
        for (std::size_t i = 0; i < n * n; ++i) {
            dphi[i] = -std::imag(std::conj(Gw[i]) * w[i]);
            Gv[i] = std::conj(std::polar(a[i], phi[i])) * Gw[i];
        }
        G = std::move(Gv);
    }
    return grad;
}

/// Forward then backward for one channel.
inline ChannelGradient loss_gradient(const ComplexGrid& input, const NetworkModel& model, Channel channel,
                                     int label, const DetectorLayout& layout, double gain) {
    return backward(forward_channel(input, model, channel), model, label, layout, gain);
}

inline double channel_loss(const ComplexGrid& input, const NetworkModel& model, Channel channel, int label,
                           const DetectorLayout& layout, double gain) {
    const auto f = forward_channel(input, model, channel);
    return loss_ce(region_energies(f.intensity, model.n(), model.config.pitch, layout), label, gain);
}

} // namespace mdnn
