#pragma once

// Free-space propagation between parallel, co-axial planes with the first
// Rayleigh-Sommerfeld impulse response
//
//   h(x, y) = 1/(2 pi) * dz/R * (1/R - j k) * exp(j k R) / R,
//   R = sqrt(x^2 + y^2 + dz^2).
//
// propagate_direct() is the literal double sum and serves as the oracle for the
// FFT path. Input and output planes share size, pitch and optical axis.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <shared_mutex>
#include <tuple>
#include <vector>

#include "mdnn/errors.hpp"
#include "mdnn/field.hpp"

namespace mdnn {

struct PropagationSpec {
    double dz = 100e-6; // m
    OpticalConfig config;

    void validate() const {
        config.validate();
        if (!(dz > 0.0) || !std::isfinite(dz))
            throw DomainError("propagation distance dz must be > 0");
    }
};

/// Impulse response at transverse offset (x, y).
inline cplx rs_impulse(double x, double y, double dz, double k) {
    const double r = std::sqrt(x * x + y * y + dz * dz);
    const cplx radial = cplx(1.0 / r, -k);
    return (1.0 / (2.0 * std::numbers::pi)) * (dz / r) * radial * std::polar(1.0 / r, k * r);
}

/// Kernel sampled on a centered support_n x support_n lattice of offsets
/// (m * pitch, n * pitch), m, n in [-(support_n-1)/2, (support_n-1)/2].
inline ComplexGrid rs_kernel(const PropagationSpec& spec, std::size_t support_n) {
    spec.validate();
    if (support_n % 2 == 0) throw ConfigError("kernel support must be odd", "support_n");
    const double p = spec.config.pitch, k = spec.config.wavenumber();
    const long half = static_cast<long>(support_n / 2);
    ComplexGrid h(support_n, p);
    for (long r = -half; r <= half; ++r)
        for (long c = -half; c <= half; ++c)
            h(static_cast<std::size_t>(r + half), static_cast<std::size_t>(c + half)) =
                rs_impulse(static_cast<double>(c) * p, static_cast<double>(r) * p, spec.dz, k);
    return h;
}

namespace detail {
inline void check_field(const ComplexGrid& field, const PropagationSpec& spec) {
    spec.validate();
    if (field.pitch() != spec.config.pitch)
        throw ConfigError("field pitch does not match the optical configuration", "pitch");
}
} // namespace detail

/// Literal double summation: out(p) = sum_i field(i) h(p - i) pitch^2.
inline ComplexGrid propagate_direct(const ComplexGrid& field, const PropagationSpec& spec) {
    detail::check_field(field, spec);
    const std::size_t n = field.n();
    const long half = static_cast<long>(n) - 1;
    const ComplexGrid h = rs_kernel(spec, 2 * n - 1);
    const double area = spec.config.pitch * spec.config.pitch;
    ComplexGrid out(n, field.pitch());
    for (std::size_t pr = 0; pr < n; ++pr)
        for (std::size_t pc = 0; pc < n; ++pc) {
            cplx acc{};
            for (std::size_t sr = 0; sr < n; ++sr)
                for (std::size_t sc = 0; sc < n; ++sc) {
                    const long dr = static_cast<long>(pr) - static_cast<long>(sr) + half;
                    const long dc = static_cast<long>(pc) - static_cast<long>(sc) + half;
                    acc += field(sr, sc) * h(static_cast<std::size_t>(dr), static_cast<std::size_t>(dc));
                }
            out(pr, pc) = acc * area;
        }
    return out;
}

/// Literal adjoint: out(i) = sum_p conj(h(p - i)) field(p) pitch^2.
inline ComplexGrid propagate_adjoint_direct(const ComplexGrid& field, const PropagationSpec& spec) {
    detail::check_field(field, spec);
    const std::size_t n = field.n();
    const long half = static_cast<long>(n) - 1;
    const ComplexGrid h = rs_kernel(spec, 2 * n - 1);
    const double area = spec.config.pitch * spec.config.pitch;
    ComplexGrid out(n, field.pitch());
    for (std::size_t sr = 0; sr < n; ++sr)
        for (std::size_t sc = 0; sc < n; ++sc) {
            cplx acc{};
            for (std::size_t pr = 0; pr < n; ++pr)
                for (std::size_t pc = 0; pc < n; ++pc) {
                    const long dr = static_cast<long>(pr) - static_cast<long>(sr) + half;
                    const long dc = static_cast<long>(pc) - static_cast<long>(sc) + half;
                    acc += std::conj(h(static_cast<std::size_t>(dr), static_cast<std::size_t>(dc))) * field(pr, pc);
                }
            out(sr, sc) = acc * area;
        }
    return out;
}

struct SamplingDiagnostics {
    double pitch_over_wavelength; // < 0.5 means the lattice resolves all propagating waves
    double fresnel_number;        // (aperture half-width)^2 / (wavelength * dz)
    bool subwavelength_pitch;
};

inline SamplingDiagnostics sampling_diagnostics(const PropagationSpec& spec, std::size_t n) {
    const double half_width = 0.5 * static_cast<double>(n) * spec.config.pitch;
    return {spec.config.pitch / spec.config.wavelength,
            half_width * half_width / (spec.config.wavelength * spec.dz),
            spec.config.pitch < spec.config.wavelength};
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// Smallest 7-smooth integer >= v.
inline std::size_t smooth_size(std::size_t v) {
    for (std::size_t m = v;; ++m) {
        std::size_t r = m;
        for (std::size_t f : {2u, 3u, 5u, 7u})
            while (r % f == 0) r /= f;
        if (r == 1) return m;
    }
}

struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;

    explicit FftPlans(int m) {
        std::vector<cplx> scratch(static_cast<std::size_t>(m) * m);
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        // FFTW_UNALIGNED keeps codelet choice independent of buffer addresses,
        // so results are bit-reproducible across allocations and threads.
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        std::lock_guard lock(fftw_planner_mutex());
        forward = fftw_plan_dft_2d(m, m, buf, buf, FFTW_FORWARD, flags);
        backward = fftw_plan_dft_2d(m, m, buf, buf, FFTW_BACKWARD, flags);
    }
    ~FftPlans() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
    }
    FftPlans(const FftPlans&) = delete;
    FftPlans& operator=(const FftPlans&) = delete;
};

} // namespace detail

/// FFT-based propagator for a fixed (n, dz, optics). The kernel is sampled on
/// the full (2n-1)^2 offset support and zero padded to m >= 2n-1, so the
/// circular convolution equals the linear one exactly. Immutable after
/// construction; apply() and adjoint() are safe to call concurrently.
class Propagator {
public:
    Propagator(std::size_t n, const PropagationSpec& spec)
        : n_(n), spec_(spec), m_(detail::smooth_size(2 * n - 1)),
          plans_(std::make_shared<detail::FftPlans>(static_cast<int>(m_))) {
        spec.validate();
        if (n < 1) throw ConfigError("grid must be non-empty", "grid_n");
        const ComplexGrid h = rs_kernel(spec, 2 * n - 1);
        const long half = static_cast<long>(n) - 1;
        const double area = spec.config.pitch * spec.config.pitch;
        spectrum_.assign(m_ * m_, cplx{});
        for (long r = -half; r <= half; ++r)
            for (long c = -half; c <= half; ++c) {
                const std::size_t wr = static_cast<std::size_t>((r + static_cast<long>(m_)) % static_cast<long>(m_));
                const std::size_t wc = static_cast<std::size_t>((c + static_cast<long>(m_)) % static_cast<long>(m_));
                spectrum_[wr * m_ + wc] =
                    h(static_cast<std::size_t>(r + half), static_cast<std::size_t>(c + half)) * area;
            }
        fftw_execute_dft(plans_->forward, reinterpret_cast<fftw_complex*>(spectrum_.data()),
                         reinterpret_cast<fftw_complex*>(spectrum_.data()));
        const double inv = 1.0 / static_cast<double>(m_ * m_);
        for (auto& v : spectrum_) v *= inv;
    }

    std::size_t n() const { return n_; }
    std::size_t padded_size() const { return m_; }
    const PropagationSpec& spec() const { return spec_; }

    ComplexGrid apply(const ComplexGrid& field) const { return run(field, false); }
    ComplexGrid adjoint(const ComplexGrid& field) const { return run(field, true); }

private:
    ComplexGrid run(const ComplexGrid& field, bool conjugate) const {
        detail::check_field(field, spec_);
        if (field.n() != n_) throw ConfigError("field size does not match propagator", "grid_n");
        std::vector<cplx> buf(m_ * m_);
        for (std::size_t r = 0; r < n_; ++r)
            for (std::size_t c = 0; c < n_; ++c) buf[r * m_ + c] = field(r, c);
        auto* raw = reinterpret_cast<fftw_complex*>(buf.data());
        fftw_execute_dft(plans_->forward, raw, raw);
        if (conjugate)
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] *= std::conj(spectrum_[i]);
        else
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] *= spectrum_[i];
        fftw_execute_dft(plans_->backward, raw, raw);
        ComplexGrid out(n_, field.pitch());
        for (std::size_t r = 0; r < n_; ++r)
            for (std::size_t c = 0; c < n_; ++c) out(r, c) = buf[r * m_ + c];
        return out;
    }

    std::size_t n_;
    PropagationSpec spec_;
    std::size_t m_;
    std::shared_ptr<detail::FftPlans> plans_;
    std::vector<cplx> spectrum_;
};

/// Process-wide cache of propagators keyed by geometry and distance.
class PropagatorCache {
public:
    static PropagatorCache& instance() {
        static PropagatorCache cache;
        return cache;
    }

    std::shared_ptr<const Propagator> get(std::size_t n, const PropagationSpec& spec) {
        const Key key{n, spec.dz, spec.config.wavelength, spec.config.pitch};
        {
            std::shared_lock lock(mutex_);
            if (auto it = entries_.find(key); it != entries_.end()) return it->second;
        }
        auto p = std::make_shared<const Propagator>(n, spec);
        std::unique_lock lock(mutex_);
        return entries_.try_emplace(key, std::move(p)).first->second;
    }

private:
    using Key = std::tuple<std::size_t, double, double, double>;
    std::shared_mutex mutex_;
    std::map<Key, std::shared_ptr<const Propagator>> entries_;
};

inline ComplexGrid propagate_fft(const ComplexGrid& field, const PropagationSpec& spec) {
    detail::check_field(field, spec);
    return PropagatorCache::instance().get(field.n(), spec)->apply(field);
}

/// Conjugate transpose of propagate_fft: correlation with the conjugated kernel.
inline ComplexGrid propagate_adjoint(const ComplexGrid& field, const PropagationSpec& spec) {
    detail::check_field(field, spec);
    return PropagatorCache::instance().get(field.n(), spec)->adjoint(field);
}

} // namespace mdnn
