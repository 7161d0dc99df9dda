#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "blindscope/errors.hpp"
#include "blindscope/numerics.hpp"
#include "blindscope/waveform.hpp"

namespace blindscope {

// A candidate subcarrier count d needs about six symbol periods of signal
// (with CP margin) before its lag-d correlation is worth trusting.
inline constexpr double kMinPeriodsForCount = 6.0;
inline constexpr double kCpMarginFactor = 1.0 + kCpFractionMax;

inline std::size_t min_samples_for_candidate(std::size_t d) {
    return static_cast<std::size_t>(std::ceil(kMinPeriodsForCount * kCpMarginFactor * static_cast<double>(d)));
}

// Normalized autocorrelation at the winning lag lands well above this for any
// cyclic-prefixed stream at usable SNR; white noise stays well below it.
inline constexpr double kOfdmDetectionFloor = 0.04;

struct SubcarrierEstimate {
    std::size_t n_hat = 0;
    double f_ss_hat = 0.0;
    double peak_score = 0.0;  // normalized correlation magnitude of the winner
};

struct CpTimingEstimate {
    std::size_t ncp_hat = 0;
    std::size_t shift_hat = 0;  // samples from stream start to the first CP start
    double score = 0.0;         // sum of 5 per-window normalized correlations, in [0, 5]
};

struct SyncEstimate {
    std::size_t n_hat = 0;
    std::size_t ncp_hat = 0;
    std::size_t shift_hat = 0;
    double f_ss_hat = 0.0;
    double f_frac_hat = 0.0;
    double peak_score = 0.0;
};

// Stage one: which candidate lag d makes the stream most self-similar? The
// cyclic prefix repeats the symbol tail exactly N samples later, so the true
// subcarrier count shows up as the strongest normalized lag-d correlation.
// Candidates the capture is too short to judge are skipped; if none fit the
// capture, there is nothing to estimate. The spacing estimate follows from
// dividing the monitored bandwidth by the winning count.
inline SubcarrierEstimate estimate_num_subcarriers(std::span<const cplx> r,
                                                   std::span<const std::size_t> candidates,
                                                   double bandwidth_hz) {
    if (bandwidth_hz <= 0.0) throw std::invalid_argument("estimate_num_subcarriers: bandwidth must be positive");
    SubcarrierEstimate best;
    bool any = false;
    for (std::size_t d : candidates) {
        if (d < 1 || r.size() < min_samples_for_candidate(d)) continue;
        const double score = delayed_autocorrelation(r, d, 0).normalized[0];
        if (!any || score > best.peak_score) {
            best.n_hat = d;
            best.peak_score = score;
            any = true;
        }
    }
    if (!any)
        throw InsufficientDataError("estimate_num_subcarriers: capture too short for every candidate count");
    best.f_ss_hat = bandwidth_hz / static_cast<double>(best.n_hat);
    return best;
}

// Stage two: joint search over CP size c and window shift s. Five windows of
// length c are placed one hypothesized symbol period (N+c) apart starting at
// s, and each is correlated against the samples N later. Only the true (c, s)
// keeps all five windows on CP/tail replica pairs: a wrong c makes the stride
// drift off alignment within a few symbols. Score is the sum of per-window
// normalized magnitudes; ties break toward smaller c, then smaller s.
inline CpTimingEstimate estimate_cp_and_timing(std::span<const cplx> r, std::size_t n_hat) {
    constexpr std::size_t kWindows = 5;
    const std::size_t z = r.size();
    if (n_hat < 2 || z <= n_hat)
        throw InsufficientDataError("estimate_cp_and_timing: capture shorter than one symbol body");

    // Prefix sums of the lag-N products and of |r|^2, so any window reduces to
    // two lookups.
    const std::size_t qlen = z - n_hat;
    std::vector<cplx> qsum(qlen + 1, cplx{0.0, 0.0});
    std::vector<double> esum(z + 1, 0.0);
    for (std::size_t j = 0; j < qlen; ++j) qsum[j + 1] = qsum[j] + std::conj(r[j]) * r[j + n_hat];
    for (std::size_t j = 0; j < z; ++j) esum[j + 1] = esum[j] + std::norm(r[j]);

    const auto cp_min = static_cast<std::size_t>(std::lround(kCpFractionMin * static_cast<double>(n_hat)));
    const auto cp_max = static_cast<std::size_t>(std::lround(kCpFractionMax * static_cast<double>(n_hat)));
    const std::size_t cp_step = n_hat <= 512 ? 1 : 2;  // coarser grid where the search plane is large

    CpTimingEstimate best;
    bool any = false;
    for (std::size_t c = std::max<std::size_t>(cp_min, 1); c <= cp_max; c += cp_step) {
        const std::size_t stride = n_hat + c;
        for (std::size_t s = 0; s < stride; ++s) {
            const std::size_t last_end = s + (kWindows - 1) * stride + c;
            if (last_end > qlen) break;  // later shifts only run further past the capture
            double score = 0.0;
            for (std::size_t m = 0; m < kWindows; ++m) {
                const std::size_t a = s + m * stride;
                const cplx corr = qsum[a + c] - qsum[a];
                const double e_early = esum[a + c] - esum[a];
                const double e_late = esum[a + n_hat + c] - esum[a + n_hat];
                const double denom = std::sqrt(e_early * e_late);
                if (denom > 0.0) score += std::abs(corr) / denom;
            }
            if (!any || score > best.score) {
                best.ncp_hat = c;
                best.shift_hat = s;
                best.score = score;
                any = true;
            }
        }
    }
    if (!any)
        throw InsufficientDataError("estimate_cp_and_timing: capture too short for a five-window search");
    return best;
}

// Stage three: a residual frequency offset rotates the CP against its replica
// by 2*pi*f_frac/f_ss (the replica sits exactly 1/f_ss seconds later). The
// angle of the pooled CP-to-replica correlation therefore reads the
// fractional offset directly. The first eighth of each CP is skipped; under
// multipath those samples carry inter-symbol leakage.
inline double estimate_frac_cfo(std::span<const cplx> r, std::size_t n_hat, std::size_t ncp_hat,
                                std::size_t shift_hat, double f_ss_hat) {
    if (ncp_hat == 0) throw std::invalid_argument("estimate_frac_cfo: CP length must be positive");
    const std::size_t z = r.size();
    if (z <= n_hat) throw InsufficientDataError("estimate_frac_cfo: capture shorter than one symbol body");
    const std::size_t qlen = z - n_hat;
    const std::size_t period = n_hat + ncp_hat;
    const std::size_t guard = ncp_hat / 8;

    cplx acc{0.0, 0.0};
    std::size_t windows = 0;
    for (std::size_t start = shift_hat; start + ncp_hat <= qlen; start += period) {
        for (std::size_t k = start + guard; k < start + ncp_hat; ++k) acc += std::conj(r[k]) * r[k + n_hat];
        ++windows;
    }
    if (windows == 0)
        throw InsufficientDataError("estimate_frac_cfo: no complete CP window after the given shift");
    if (acc == cplx{0.0, 0.0}) return 0.0;
    double f = std::arg(acc) * f_ss_hat / (2.0 * std::numbers::pi);
    if (f >= f_ss_hat / 2.0) f -= f_ss_hat;  // fold the arg() == pi edge into [-f_ss/2, f_ss/2)
    return f;
}

// Counter-rotates the stream by the estimated offset.
inline cvec remove_cfo(std::span<const cplx> r, double f_hat, double sample_rate_hz) {
    return mix_frequency(r, -f_hat, sample_rate_hz);
}

// All three stages in order. No detection gate here: callers judge peak_score
// against their own floor (kOfdmDetectionFloor by default).
inline SyncEstimate run_blind_sync(std::span<const cplx> r, std::span<const std::size_t> candidates,
                                   double bandwidth_hz) {
    const SubcarrierEstimate sub = estimate_num_subcarriers(r, candidates, bandwidth_hz);
    const CpTimingEstimate cp = estimate_cp_and_timing(r, sub.n_hat);
    const double f_frac = estimate_frac_cfo(r, sub.n_hat, cp.ncp_hat, cp.shift_hat, sub.f_ss_hat);
    return SyncEstimate{sub.n_hat, cp.ncp_hat, cp.shift_hat, sub.f_ss_hat, f_frac, sub.peak_score};
}

} // namespace blindscope
