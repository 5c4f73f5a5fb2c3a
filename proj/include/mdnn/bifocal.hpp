#pragma once

// Polarization-multiplexed bifocal metalens: each channel focuses a normally
// incident plane wave to its own point.

#include <optional>
#include <vector>

#include "mdnn/metasurface.hpp"
#include "mdnn/propagation.hpp"

namespace mdnn {

struct FocusReport {
    Channel channel = Channel::x;
    Point3 designed;
    std::size_t peak_row = 0, peak_col = 0;
    double peak_x = 0.0, peak_y = 0.0; // m, on-axis origin
    double peak_intensity = 0.0;
    // Intensity of the orthogonal channel at this channel's designed focus,
    // relative to this channel's peak.
    double cross_ratio = 0.0;
    std::vector<double> intensity; // focal-plane map of this channel
};

struct BifocalResult {
    MetaLayer layer;
    FocusReport x, y;
};

namespace detail {
inline std::pair<std::size_t, std::size_t> argmax2d(const std::vector<double>& v, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return {best / n, best % n};
}

inline std::size_t nearest_index(double coord, std::size_t n, double pitch) {
    const double idx = std::round(coord / pitch) + static_cast<double>(n / 2);
    return static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(n - 1)));
}
} // namespace detail

/// Designs the bifocal layer (optionally compiled through a library),
/// illuminates it with unit plane waves in both channels and locates each
/// focal spot in the plane z = focus.z of that channel.
inline BifocalResult run_bifocal(const Point3& focus_x, const Point3& focus_y, const OpticalConfig& cfg,
                                 std::size_t n, const MetaUnitLibrary* library = nullptr) {
    cfg.validate();
    auto [phi_x, phi_y] = bifocal_phases(focus_x, focus_y, cfg, n);
    BifocalResult res;
    if (library) {
        res.layer = realize(phi_x, phi_y, *library, cfg).layer;
    } else {
        res.layer = MetaLayer(n, cfg.pitch);
        res.layer.phi_x = std::move(phi_x);
        res.layer.phi_y = std::move(phi_y);
    }
    ComplexGrid plane(n, cfg.pitch);
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = 1.0;
    const PolarizedField lit = apply_layer(PolarizedField(plane, plane), res.layer);

    auto report = [&](Channel c, const Point3& focus) {
        FocusReport r;
        r.channel = c;
        r.designed = focus;
        const PropagationSpec spec{focus.z, cfg};
        r.intensity = intensity(propagate_fft(channel_of(lit, c), spec));
        const auto other = intensity(propagate_fft(channel_of(lit, c == Channel::x ? Channel::y : Channel::x), spec));
        std::tie(r.peak_row, r.peak_col) = detail::argmax2d(r.intensity, n);
        r.peak_x = grid_coord(r.peak_col, n, cfg.pitch);
        r.peak_y = grid_coord(r.peak_row, n, cfg.pitch);
        r.peak_intensity = r.intensity[r.peak_row * n + r.peak_col];
        const std::size_t fr = detail::nearest_index(focus.y, n, cfg.pitch);
        const std::size_t fc = detail::nearest_index(focus.x, n, cfg.pitch);
        r.cross_ratio = other[fr * n + fc] / r.peak_intensity;
        return r;
    };
    res.x = report(Channel::x, focus_x);
    res.y = report(Channel::y, focus_y);
    return res;
}

} // namespace mdnn
