#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "blindscope/errors.hpp"
#include "blindscope/rng.hpp"

namespace blindscope {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;

namespace detail {

inline void fft_radix2_inplace(cvec& x, bool inverse) {
    const std::size_t n = x.size();
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        const cplx wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx u = x[i + k];
                const cplx v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline cvec dft_direct(std::span<const cplx> x, bool inverse) {
    const std::size_t n = x.size();
    const double sign = inverse ? 1.0 : -1.0;
    cvec out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (std::size_t m = 0; m < n; ++m) {
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k * m % n) / static_cast<double>(n);
            acc += x[m] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

} // namespace detail

// Forward X[k] = sum_n x[n] e^{-j2pi nk/N}; inverse carries the 1/N so that
// dft(dft(x), inverse) == x. Radix-2 in-place for power-of-two lengths,
// direct evaluation otherwise.
inline cvec dft(std::span<const cplx> x, bool inverse = false) {
    if (x.empty()) throw std::invalid_argument("dft: empty input");
    cvec out;
    if (std::has_single_bit(x.size())) {
        out.assign(x.begin(), x.end());
        detail::fft_radix2_inplace(out, inverse);
    } else {
        out = detail::dft_direct(x, inverse);
    }
    if (inverse) {
        const double scale = 1.0 / static_cast<double>(out.size());
        for (auto& v : out) v *= scale;
    }
    return out;
}

inline cvec dft(const cvec& x, bool inverse = false) { return dft(std::span<const cplx>(x), inverse); }

struct DelayedCorrelation {
    cvec raw;               // (r * y)[p], y = r delayed by d, conjugated
    std::vector<double> normalized; // |raw[p]| over geometric mean of window energies
};

// Delayed self-correlation c[p] = sum_{n=p+d}^{Z-1} r[n] * conj(r[n-p-d]).
// The normalized variant divides each magnitude by
// sqrt(sum |r[n]|^2 * sum |r[n-p-d]|^2) over the same window, so it lives in
// [0, 1] by Cauchy-Schwarz and peak picking needs no absolute threshold.
inline DelayedCorrelation delayed_autocorrelation(std::span<const cplx> r, std::size_t d, std::size_t max_lag) {
    const std::size_t z = r.size();
    if (d < 1) throw std::invalid_argument("delayed_autocorrelation: delay must be >= 1");
    if (d + max_lag >= z)
        throw std::invalid_argument("delayed_autocorrelation: max lag exceeds available overlap");

    // prefix sums of |r|^2 for O(1) window energies
    std::vector<double> energy(z + 1, 0.0);
    for (std::size_t n = 0; n < z; ++n) energy[n + 1] = energy[n] + std::norm(r[n]);

    DelayedCorrelation out;
    out.raw.resize(max_lag + 1);
    out.normalized.resize(max_lag + 1);
    for (std::size_t p = 0; p <= max_lag; ++p) {
        const std::size_t shift = d + p;
        cplx acc(0.0, 0.0);
        for (std::size_t n = shift; n < z; ++n) acc += r[n] * std::conj(r[n - shift]);
        out.raw[p] = acc;
        const double e_late = energy[z] - energy[shift];
        const double e_early = energy[z - shift];
        const double denom = std::sqrt(e_late * e_early);
        out.normalized[p] = denom > 0.0 ? std::abs(acc) / denom : 0.0;
    }
    return out;
}

// n i.i.d. circularly-symmetric complex Gaussian samples with E|w|^2 = variance.
inline cvec gaussian_noise(std::size_t n, double variance, Rng& rng) {
    if (variance < 0.0) throw std::invalid_argument("gaussian_noise: negative variance");
    cvec out(n);
    if (variance == 0.0) return out;
    for (auto& w : out) w = rng.complex_normal(variance);
    return out;
}

inline double mean_power(std::span<const cplx> x) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& v : x) acc += std::norm(v);
    return acc / static_cast<double>(x.size());
}

// y[k] = x[k] * e^{j(2pi freq_hz k / sample_rate_hz + phase0)}. The per-sample
// argument is evaluated directly so a mix by +f followed by -f cancels to
// round-off, not to an accumulated drift.
inline cvec mix_frequency(std::span<const cplx> x, double freq_hz, double sample_rate_hz, double phase0 = 0.0) {
    if (sample_rate_hz <= 0.0) throw std::invalid_argument("mix_frequency: sample rate must be positive");
    const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
    cvec out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k)
        out[k] = x[k] * std::polar(1.0, w * static_cast<double>(k) + phase0);
    return out;
}

} // namespace blindscope
