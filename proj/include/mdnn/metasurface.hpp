#pragma once

// Polarization-multiplexed metasurface layers. With the birefringent axes
// aligned to x/y (rotation angle 0) the Jones matrix of every meta-unit is
// diag(a_x e^{j phi_x}, a_y e^{j phi_y}), so the two channels never mix.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mdnn/errors.hpp"
#include "mdnn/field.hpp"
#include "mdnn/parallel.hpp"

namespace mdnn {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Wraps a phase into [0, 2pi).
inline double wrap_phase(double phi) {
    double w = std::fmod(phi, two_pi);
    if (w < 0.0) w += two_pi;
    if (w >= two_pi) w = 0.0;
    return w;
}

/// Signed circular difference a - b mapped into [-pi, pi].
inline double circular_diff(double a, double b) { return std::remainder(a - b, two_pi); }

/// One hidden layer of meta-neurons. Phases are stored unwrapped.
struct MetaLayer {
    std::size_t n = 0;
    double pitch = 0.0;
    RealGrid a_x, a_y, phi_x, phi_y;

    MetaLayer() = default;
    MetaLayer(std::size_t side, double p)
        : n(side), pitch(p), a_x(side, 1.0), a_y(side, 1.0), phi_x(side, 0.0), phi_y(side, 0.0) {}

    RealGrid& amplitude(Channel c) { return c == Channel::x ? a_x : a_y; }
    const RealGrid& amplitude(Channel c) const { return c == Channel::x ? a_x : a_y; }
    RealGrid& phase(Channel c) { return c == Channel::x ? phi_x : phi_y; }
    const RealGrid& phase(Channel c) const { return c == Channel::x ? phi_x : phi_y; }

    void validate() const {
        for (const RealGrid* g : {&a_x, &a_y, &phi_x, &phi_y})
            if (g->n != n || g->size() != n * n) throw ConfigError("layer maps must all be n x n", "layer");
        for (const RealGrid* g : {&a_x, &a_y})
            for (double v : g->pixels)
                if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("amplitudes must lie in [0,1]", "layer");
        for (const RealGrid* g : {&phi_x, &phi_y})
            for (double v : g->pixels)
                if (!std::isfinite(v)) throw ConfigError("phases must be finite", "layer");
    }

    friend bool operator==(const MetaLayer&, const MetaLayer&) = default;
};

/// Multiplies one channel by a e^{j phi} pixel-wise.
inline ComplexGrid apply_channel(const ComplexGrid& field, const MetaLayer& layer, Channel c) {
    if (field.n() != layer.n) throw ConfigError("field and layer sizes differ", "grid_n");
    const RealGrid& a = layer.amplitude(c);
    const RealGrid& phi = layer.phase(c);
    ComplexGrid out(field.n(), field.pitch());
    for (std::size_t i = 0; i < field.size(); ++i) out[i] = field[i] * std::polar(a[i], phi[i]);
    return out;
}

inline PolarizedField apply_layer(const PolarizedField& field, const MetaLayer& layer) {
    if (field.x.n() != layer.n || field.y.n() != layer.n || field.x.pitch() != layer.pitch)
        throw ConfigError("field and layer geometry differ", "grid_n");
    return PolarizedField(apply_channel(field.x, layer, Channel::x), apply_channel(field.y, layer, Channel::y));
}

struct MetaUnit {
    double dx_nm = 0.0, dy_nm = 0.0;
    double t_xx = 1.0, t_yy = 1.0;
    double phi_xx = 0.0, phi_yy = 0.0;

    friend bool operator==(const MetaUnit&, const MetaUnit&) = default;
};

struct MetaUnitLibrary {
    std::vector<MetaUnit> entries;
    double pitch_nm = 400.0;
    double height_nm = 600.0;
    double wavelength_nm = 532.0;

    /// Row index (0-based) of the first violating entry, or throws ConfigError
    /// for metadata problems.
    void validate() const {
        if (entries.empty()) throw ConfigError("library is empty", "library");
        if (!(pitch_nm > 0.0) || !(height_nm > 0.0) || !(wavelength_nm > 0.0))
            throw ConfigError("library metadata must be positive", "library");
        std::set<std::pair<double, double>> seen;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            auto fail = [&](const std::string& what) {
                throw ParseError("library row " + std::to_string(i + 1) + ": " + what, static_cast<long long>(i + 1));
            };
            if (!(e.dx_nm > 0.0 && e.dx_nm < pitch_nm) || !(e.dy_nm > 0.0 && e.dy_nm < pitch_nm))
                fail("pillar size outside (0, pitch)");
            if (!(e.t_xx >= 0.0 && e.t_xx <= 1.0) || !(e.t_yy >= 0.0 && e.t_yy <= 1.0))
                fail("transmission outside [0,1]");
            if (!(e.phi_xx >= 0.0 && e.phi_xx < two_pi) || !(e.phi_yy >= 0.0 && e.phi_yy < two_pi))
                fail("phase outside [0, 2pi)");
            if (!seen.emplace(e.dx_nm, e.dy_nm).second) fail("duplicate (dx, dy) geometry");
        }
    }

    /// Refuses optics the library responses were not computed for.
    void check_compatible(const OpticalConfig& cfg, double rel_tol = 1e-6) const {
        auto close = [&](double a, double b) { return std::abs(a - b) <= rel_tol * std::abs(b); };
        if (!close(wavelength_nm * 1e-9, cfg.wavelength))
            throw ConfigError("library wavelength " + std::to_string(wavelength_nm) +
                                  " nm does not match the optical configuration",
                              "wavelength");
        if (!close(pitch_nm * 1e-9, cfg.pitch))
            throw ConfigError("library pitch " + std::to_string(pitch_nm) + " nm does not match the optical configuration",
                              "pitch");
    }
};

namespace detail {

inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
        if (i == line.size() || line[i] == ',') {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

} // namespace detail

inline constexpr std::string_view library_header = "dx_nm,dy_nm,t_xx,t_yy,phi_xx_rad,phi_yy_rad";

/// Library CSV: `# key=value` metadata lines (pitch_nm, height_nm,
/// wavelength_nm), the fixed header, then one entry per row.
inline MetaUnitLibrary parse_library(std::istream& in) {
    MetaUnitLibrary lib;
    bool have_pitch = false, have_height = false, have_wavelength = false, have_header = false;
    std::string line;
    long long line_no = 0, row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            std::string_view kv(line);
            kv.remove_prefix(1);
            while (!kv.empty() && kv.front() == ' ') kv.remove_prefix(1);
            const auto eq = kv.find('=');
            if (eq == std::string_view::npos) continue;
            const auto key = kv.substr(0, eq);
            double v = 0.0;
            if (!detail::parse_double(kv.substr(eq + 1), v))
                throw ParseError("bad metadata value on line " + std::to_string(line_no), line_no);
            if (key == "pitch_nm") lib.pitch_nm = v, have_pitch = true;
            else if (key == "height_nm") lib.height_nm = v, have_height = true;
            else if (key == "wavelength_nm") lib.wavelength_nm = v, have_wavelength = true;
            continue;
        }
        if (!have_header) {
            if (line != library_header)
                throw ParseError("expected header '" + std::string(library_header) + "'", line_no);
            have_header = true;
            continue;
        }
        ++row;
        const auto cols = detail::split_csv(line);
        if (cols.size() != 6)
            throw ParseError("library row " + std::to_string(row) + ": expected 6 columns", row);
        std::array<double, 6> v{};
        for (std::size_t i = 0; i < 6; ++i)
            if (!detail::parse_double(cols[i], v[i]))
                throw ParseError("library row " + std::to_string(row) + ": bad number in column " + std::to_string(i + 1),
                                 row);
        lib.entries.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
    }
    if (!have_header) throw ParseError("missing library header", line_no);
    if (!have_pitch || !have_height || !have_wavelength)
        throw ParseError("library metadata must define pitch_nm, height_nm and wavelength_nm", 0);
    lib.validate();
    return lib;
}

inline MetaUnitLibrary load_library(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open library file " + path);
    return parse_library(in);
}

inline void write_library(std::ostream& out, const MetaUnitLibrary& lib) {
    using detail::format_double;
    out << "# pitch_nm=" << format_double(lib.pitch_nm) << '\n'
        << "# height_nm=" << format_double(lib.height_nm) << '\n'
        << "# wavelength_nm=" << format_double(lib.wavelength_nm) << '\n'
        << library_header << '\n';
    for (const auto& e : lib.entries)
        out << format_double(e.dx_nm) << ',' << format_double(e.dy_nm) << ',' << format_double(e.t_xx) << ','
            << format_double(e.t_yy) << ',' << format_double(e.phi_xx) << ',' << format_double(e.phi_yy) << '\n';
}

inline void save_library(const std::string& path, const MetaUnitLibrary& lib) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write library file " + path);
    write_library(out, lib);
    if (!out) throw IoError("write failed for " + path);
}

/// Ideal library: steps x steps pillars over dx, dy in [50, 350] nm with phases
/// linear in size over a full 2pi turn and unit transmission.
inline MetaUnitLibrary synth_library(std::size_t steps) {
    if (steps < 2) throw ConfigError("must be at least 2", "steps");
    MetaUnitLibrary lib;
    lib.entries.reserve(steps * steps);
    const double span = static_cast<double>(steps - 1);
    for (std::size_t i = 0; i < steps; ++i)
        for (std::size_t j = 0; j < steps; ++j) {
            const double fx = static_cast<double>(i) / span, fy = static_cast<double>(j) / span;
            MetaUnit u;
            u.dx_nm = 50.0 + 300.0 * fx;
            u.dy_nm = 50.0 + 300.0 * fy;
            u.phi_xx = wrap_phase(two_pi * fx);
            u.phi_yy = wrap_phase(two_pi * fy);
            lib.entries.push_back(u);
        }
    return lib;
}

struct GeometryMap {
    std::size_t n = 0;
    std::vector<std::size_t> index; // library entry per pixel, row-major
    std::vector<MetaUnit> cells;    // copy of the selected entry per pixel
    RealGrid err_x, err_y;          // realized minus target, circular, in [-pi, pi]

    friend bool operator==(const GeometryMap&, const GeometryMap&) = default;
};

/// Exact nearest-neighbour search on the (phi_xx, phi_yy) torus with a
/// uniform bucket grid. Distance is the sum of squared circular differences;
/// ties resolve to the lowest entry index.
class PhaseLookup {
public:
    explicit PhaseLookup(const MetaUnitLibrary& lib) : lib_(&lib) {
        const std::size_t count = lib.entries.size();
        bins_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(count) / 2.0)));
        width_ = two_pi / static_cast<double>(bins_);
        buckets_.assign(bins_ * bins_, {});
        for (std::size_t i = 0; i < count; ++i) {
            const auto& e = lib.entries[i];
            buckets_[bin(e.phi_xx) * bins_ + bin(e.phi_yy)].push_back(i);
        }
    }

    /// Returns (entry index, squared distance).
    std::pair<std::size_t, double> nearest(double target_x, double target_y) const {
        const double tx = wrap_phase(target_x), ty = wrap_phase(target_y);
        const long bx = static_cast<long>(bin(tx)), by = static_cast<long>(bin(ty));
        const long nb = static_cast<long>(bins_);
        std::size_t best = std::numeric_limits<std::size_t>::max();
        double best_d2 = std::numeric_limits<double>::infinity();
        auto consider = [&](std::size_t i) {
            const auto& e = lib_->entries[i];
            const double ex = circular_diff(e.phi_xx, tx), ey = circular_diff(e.phi_yy, ty);
            const double d2 = ex * ex + ey * ey;
            if (d2 < best_d2 || (d2 == best_d2 && i < best)) best_d2 = d2, best = i;
        };
        for (long r = 0;; ++r) {
            if (2 * r + 1 >= nb) {
                for (std::size_t i = 0; i < lib_->entries.size(); ++i) consider(i);
                return {best, best_d2};
            }
            for (long dx = -r; dx <= r; ++dx)
                for (long dy = -r; dy <= r; ++dy) {
                    if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
                    const long cx = ((bx + dx) % nb + nb) % nb, cy = ((by + dy) % nb + nb) % nb;
                    for (std::size_t i : buckets_[static_cast<std::size_t>(cx * nb + cy)]) consider(i);
                }
            // Unvisited buckets lie at least r bin widths away along one axis.
            const double bound = static_cast<double>(r) * width_ * (1.0 - 1e-12);
            if (best_d2 < bound * bound) return {best, best_d2};
        }
    }

private:
    std::size_t bin(double phi) const {
        return std::min(bins_ - 1, static_cast<std::size_t>(phi / width_));
    }

    const MetaUnitLibrary* lib_;
    std::size_t bins_;
    double width_;
    std::vector<std::vector<std::size_t>> buckets_;
};

struct Realization {
    GeometryMap geometry;
    MetaLayer layer; // library amplitudes and quantized phases
};

/// Compiles target phase maps to library pillars, pixel by pixel.
inline Realization realize(const PhaseMap& target_x, const PhaseMap& target_y, const MetaUnitLibrary& lib,
                           double pitch, std::size_t workers = 1) {
    lib.validate();
    if (target_x.n != target_y.n) throw ConfigError("phase maps differ in size", "grid_n");
    const std::size_t n = target_x.n;
    const PhaseLookup lookup(lib);
    Realization out;
    out.geometry.n = n;
    out.geometry.index.assign(n * n, 0);
    out.geometry.cells.assign(n * n, {});
    out.geometry.err_x = RealGrid(n, 0.0);
    out.geometry.err_y = RealGrid(n, 0.0);
    out.layer = MetaLayer(n, pitch);
    parallel_for(n * n, workers, [&](std::size_t p) {
        const auto [idx, d2] = lookup.nearest(target_x[p], target_y[p]);
        const MetaUnit& e = lib.entries[idx];
        out.geometry.index[p] = idx;
        out.geometry.cells[p] = e;
        out.geometry.err_x[p] = circular_diff(e.phi_xx, target_x[p]);
        out.geometry.err_y[p] = circular_diff(e.phi_yy, target_y[p]);
        out.layer.a_x[p] = e.t_xx;
        out.layer.a_y[p] = e.t_yy;
        out.layer.phi_x[p] = e.phi_xx;
        out.layer.phi_y[p] = e.phi_yy;
    });
    return out;
}

inline Realization realize(const PhaseMap& target_x, const PhaseMap& target_y, const MetaUnitLibrary& lib,
                           const OpticalConfig& cfg, std::size_t workers = 1) {
    lib.check_compatible(cfg);
    return realize(target_x, target_y, lib, cfg.pitch, workers);
}

inline constexpr std::string_view layout_header = "ix,iy,x_nm,y_nm,dx_nm,dy_nm";

/// Fabrication layout: one row per cell, row-major, cell origin at ix * pitch.
inline void write_layout(std::ostream& out, const GeometryMap& geom, const OpticalConfig& cfg) {
    using detail::format_double;
    const double pitch_nm = cfg.pitch * 1e9;
    out << layout_header << '\n';
    for (std::size_t iy = 0; iy < geom.n; ++iy)
        for (std::size_t ix = 0; ix < geom.n; ++ix) {
            const MetaUnit& u = geom.cells[iy * geom.n + ix];
            out << ix << ',' << iy << ',' << format_double(static_cast<double>(ix) * pitch_nm) << ','
                << format_double(static_cast<double>(iy) * pitch_nm) << ',' << format_double(u.dx_nm) << ','
                << format_double(u.dy_nm) << '\n';
        }
}

inline void export_layout(const GeometryMap& geom, const OpticalConfig& cfg, const std::string& path) {
    if (geom.cells.size() != geom.n * geom.n) throw ConfigError("geometry map is incomplete", "geometry");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write layout file " + path);
    write_layout(out, geom, cfg);
    if (!out) throw IoError("write failed for " + path);
}

struct Point3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

/// Transverse coordinate of grid index i; index n/2 sits on the optical axis.
inline double grid_coord(std::size_t i, std::size_t n, double pitch) {
    return (static_cast<double>(i) - static_cast<double>(n / 2)) * pitch;
}

/// Hyperbolic lens phase focusing a normally incident plane wave at `focus`,
/// wrapped to [0, 2pi).
inline PhaseMap focusing_phase(const Point3& focus, const OpticalConfig& cfg, std::size_t n) {
    if (!(focus.z > 0.0)) throw DomainError("focal distance must be > 0");
    const double k = cfg.wavenumber();
    PhaseMap phi(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            const double x = grid_coord(c, n, cfg.pitch) - focus.x;
            const double y = grid_coord(r, n, cfg.pitch) - focus.y;
            phi(r, c) = wrap_phase(-k * (std::sqrt(x * x + y * y + focus.z * focus.z) - focus.z));
        }
    return phi;
}

/// Independent focusing phases for the x- and y-polarized channels.
inline std::pair<PhaseMap, PhaseMap> bifocal_phases(const Point3& focus_x, const Point3& focus_y,
                                                    const OpticalConfig& cfg, std::size_t n) {
    return {focusing_phase(focus_x, cfg, n), focusing_phase(focus_y, cfg, n)};
}

} // namespace mdnn
