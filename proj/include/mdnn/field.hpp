#pragma once

// Complex field grids, input encodings and energy accounting.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "mdnn/errors.hpp"

namespace mdnn {

using cplx = std::complex<double>;

struct OpticalConfig {
    double wavelength = 532e-9; // m
    double pitch = 400e-9;      // m
    std::size_t grid_n = 28;

    double wavenumber() const { return 2.0 * std::numbers::pi / wavelength; }

    void validate() const {
        if (!(wavelength > 0.0) || !std::isfinite(wavelength))
            throw ConfigError("must be a positive finite length", "wavelength");
        if (!(pitch > 0.0) || !std::isfinite(pitch))
            throw ConfigError("must be a positive finite length", "pitch");
        if (grid_n < 2)
            throw ConfigError("must be at least 2", "grid_n");
    }

    friend bool operator==(const OpticalConfig&, const OpticalConfig&) = default;
};

/// Square, row-major grid of complex samples with a physical pitch.
class ComplexGrid {
public:
    ComplexGrid() = default;
    ComplexGrid(std::size_t n, double pitch) : n_(n), pitch_(pitch), data_(n * n) {}
    ComplexGrid(std::size_t n, double pitch, std::vector<cplx> data)
        : n_(n), pitch_(pitch), data_(std::move(data)) {
        if (data_.size() != n_ * n_)
            throw ConfigError("grid data length must equal n*n");
    }

    std::size_t n() const { return n_; }
    double pitch() const { return pitch_; }
    std::size_t size() const { return data_.size(); }

    cplx& operator()(std::size_t row, std::size_t col) { return data_[row * n_ + col]; }
    const cplx& operator()(std::size_t row, std::size_t col) const { return data_[row * n_ + col]; }
    cplx& operator[](std::size_t i) { return data_[i]; }
    const cplx& operator[](std::size_t i) const { return data_[i]; }

    std::span<cplx> data() { return data_; }
    std::span<const cplx> data() const { return data_; }

    bool same_geometry(const ComplexGrid& o) const { return n_ == o.n_ && pitch_ == o.pitch_; }

    bool all_finite() const {
        for (const auto& v : data_)
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
        return true;
    }

    friend bool operator==(const ComplexGrid&, const ComplexGrid&) = default;

private:
    std::size_t n_ = 0;
    double pitch_ = 0.0;
    std::vector<cplx> data_;
};

/// Jones-vector field: independent x- and y-polarized components.
struct PolarizedField {
    ComplexGrid x;
    ComplexGrid y;

    PolarizedField() = default;
    PolarizedField(ComplexGrid x_channel, ComplexGrid y_channel)
        : x(std::move(x_channel)), y(std::move(y_channel)) {
        if (!x.same_geometry(y))
            throw ConfigError("polarization channels must share n and pitch");
    }
};

enum class Channel { x = 0, y = 1 };

inline const char* to_string(Channel c) { return c == Channel::x ? "x" : "y"; }

inline ComplexGrid& channel_of(PolarizedField& f, Channel c) { return c == Channel::x ? f.x : f.y; }
inline const ComplexGrid& channel_of(const PolarizedField& f, Channel c) {
    return c == Channel::x ? f.x : f.y;
}

/// Square row-major real map: input images (values in [0,1]), phase maps,
/// amplitude maps.
struct RealGrid {
    std::size_t n = 0;
    std::vector<double> pixels;

    RealGrid() = default;
    RealGrid(std::size_t side, std::vector<double> px) : n(side), pixels(std::move(px)) {
        if (pixels.size() != n * n) throw ConfigError("map data length must equal n*n");
    }
    explicit RealGrid(std::size_t side, double fill = 0.0) : n(side), pixels(side * side, fill) {}

    double operator()(std::size_t r, std::size_t c) const { return pixels[r * n + c]; }
    double& operator()(std::size_t r, std::size_t c) { return pixels[r * n + c]; }
    double& operator[](std::size_t i) { return pixels[i]; }
    double operator[](std::size_t i) const { return pixels[i]; }
    std::size_t size() const { return pixels.size(); }
    friend bool operator==(const RealGrid&, const RealGrid&) = default;
};

using Image = RealGrid;
using PhaseMap = RealGrid;

namespace detail {
inline void check_unit_range(const Image& img) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double v = img.pixels[i];
        if (!(v >= 0.0 && v <= 1.0))
            throw InputError("pixel " + std::to_string(i) + " outside [0,1]: " + std::to_string(v));
    }
}
} // namespace detail

/// Amplitude encoding: each pixel value becomes a real, zero-phase amplitude.
inline ComplexGrid encode_amplitude(const Image& img, double pitch) {
    detail::check_unit_range(img);
    ComplexGrid g(img.n, pitch);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) g[i] = cplx(img.pixels[i], 0.0);
    return g;
}

/// Phase encoding: pixel v becomes exp(j * max_phase * v) at unit amplitude.
inline ComplexGrid encode_phase(const Image& img, double pitch, double max_phase = std::numbers::pi) {
    if (!(max_phase > 0.0 && max_phase <= 2.0 * std::numbers::pi))
        throw ConfigError("must lie in (0, 2pi]", "max_phase");
    detail::check_unit_range(img);
    ComplexGrid g(img.n, pitch);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) g[i] = std::polar(1.0, max_phase * img.pixels[i]);
    return g;
}

/// Replicates each sample into a factor x factor block. Pitch is unchanged,
/// so the physical extent grows with the neuron count.
inline ComplexGrid upsample_nearest(const ComplexGrid& grid, std::size_t factor) {
    if (factor == 0) throw ConfigError("must be at least 1", "upsample_factor");
    const std::size_t n = grid.n(), m = n * factor;
    ComplexGrid out(m, grid.pitch());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < m; ++c) out(r, c) = grid(r / factor, c / factor);
    return out;
}

/// Block-average inverse of upsample_nearest.
inline ComplexGrid downsample_average(const ComplexGrid& grid, std::size_t factor) {
    if (factor == 0 || grid.n() % factor != 0)
        throw ConfigError("factor must divide the grid size", "downsample_factor");
    const std::size_t m = grid.n() / factor;
    ComplexGrid out(m, grid.pitch());
    const double norm = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < m; ++c) {
            cplx acc{};
            for (std::size_t i = 0; i < factor; ++i)
                for (std::size_t j = 0; j < factor; ++j) acc += grid(r * factor + i, c * factor + j);
            out(r, c) = acc * norm;
        }
    return out;
}

namespace detail {
// Overlap of source cell [i, i+1) with the scaled target cell [lo, hi).
inline double overlap(std::size_t i, double lo, double hi) {
    return std::max(0.0, std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i)));
}
} // namespace detail

/// Area-weighted box resampling to a smaller side. Preserves the mean value.
inline Image shrink_image(const Image& img, std::size_t target_n) {
    if (target_n == 0 || target_n > img.n) throw ConfigError("target must be in [1, image side]", "grid_n");
    const double s = static_cast<double>(img.n) / static_cast<double>(target_n);
    Image out(target_n, 0.0);
    for (std::size_t r = 0; r < target_n; ++r) {
        const double r0 = static_cast<double>(r) * s, r1 = r0 + s;
        for (std::size_t c = 0; c < target_n; ++c) {
            const double c0 = static_cast<double>(c) * s, c1 = c0 + s;
            double acc = 0.0;
            for (auto i = static_cast<std::size_t>(r0); i < img.n && static_cast<double>(i) < r1; ++i) {
                const double wr = detail::overlap(i, r0, r1);
                for (auto j = static_cast<std::size_t>(c0); j < img.n && static_cast<double>(j) < c1; ++j)
                    acc += wr * detail::overlap(j, c0, c1) * img(i, j);
            }
            out(r, c) = acc / (s * s);
        }
    }
    return out;
}

/// Maps a dataset image onto a target grid. Larger grids get nearest-neighbour
/// upscaling plus centered zero padding (28x28 digits onto 280x280 devices);
/// smaller grids get area-weighted shrinking.
inline Image fit_image(const Image& img, std::size_t target_n) {
    if (target_n < img.n) return shrink_image(img, target_n);
    const std::size_t factor = target_n / img.n;
    const std::size_t side = img.n * factor;
    const std::size_t off = (target_n - side) / 2;
    Image out(target_n, 0.0);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) out(r + off, c + off) = img(r / factor, c / factor);
    return out;
}

/// Sum of |u|^2 * pitch^2 over the grid.
inline double total_energy(const ComplexGrid& grid) {
    double acc = 0.0;
    for (const auto& v : grid.data()) acc += std::norm(v);
    return acc * grid.pitch() * grid.pitch();
}

inline double total_energy(std::span<const double> intensity, double pitch) {
    double acc = 0.0;
    for (double v : intensity) acc += v;
    return acc * pitch * pitch;
}

inline std::vector<double> intensity(const ComplexGrid& grid) {
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = std::norm(grid[i]);
    return out;
}

} // namespace mdnn
