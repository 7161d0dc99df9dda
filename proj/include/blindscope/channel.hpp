#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "blindscope/errors.hpp"
#include "blindscope/numerics.hpp"
#include "blindscope/rng.hpp"
#include "blindscope/waveform.hpp"

namespace blindscope {

// SUI-1 style power-delay profile. Excess delays in microseconds with the
// matching mean tap powers in dB; all taps Rayleigh-faded.
struct MultipathProfile {
    std::vector<double> delays_us = {0.0, 0.4, 0.9};
    std::vector<double> powers_db = {0.0, -15.0, -20.0};
};

struct ChannelRealization {
    std::vector<cplx> taps;               // h[l], one per entry of tap_delays
    std::vector<std::size_t> tap_delays;  // sample offsets, ascending
    std::size_t tau = 0;                  // bulk timing offset in samples

    std::size_t max_delay() const {
        std::size_t d = 0;
        for (std::size_t v : tap_delays) d = std::max(d, v);
        return d;
    }
};

// A flat h=[1], tau=0 channel, useful for AWGN-only experiments.
inline ChannelRealization identity_channel() {
    return ChannelRealization{{cplx{1.0, 0.0}}, {0}, 0};
}

// Draws one channel realization: taps at the profile delays (rounded to whole
// samples at f_s), complex Gaussian amplitudes scaled to the profile powers,
// then renormalized so sum |h|^2 == 1 for this draw. The bulk offset tau is
// uniform over one symbol period.
inline ChannelRealization draw_channel(const OfdmConfig& cfg, Rng& rng,
                                       const MultipathProfile& profile = MultipathProfile{}) {
    if (profile.delays_us.size() != profile.powers_db.size() || profile.delays_us.empty())
        throw ConfigError("channel.profile", "delay and power lists must be non-empty and equal length");
    const double fs = cfg.sample_rate_hz();
    ChannelRealization ch;
    ch.taps.reserve(profile.delays_us.size());
    ch.tap_delays.reserve(profile.delays_us.size());
    double total = 0.0;
    for (std::size_t i = 0; i < profile.delays_us.size(); ++i) {
        const auto d = static_cast<std::size_t>(std::lround(profile.delays_us[i] * 1e-6 * fs));
        if (d + 1 > cfg.cp_len)
            throw ConfigError("channel.profile", "tap delay of " + std::to_string(d) +
                                                     " samples exceeds the cyclic prefix of " +
                                                     std::to_string(cfg.cp_len));
        const double power = std::pow(10.0, profile.powers_db[i] / 10.0);
        const cplx h = rng.complex_normal(power);
        ch.tap_delays.push_back(d);
        ch.taps.push_back(h);
        total += std::norm(h);
    }
    const double scale = 1.0 / std::sqrt(total);
    for (auto& h : ch.taps) h *= scale;
    ch.tau = rng.uniform_int(cfg.symbol_len());
    return ch;
}

// Linear convolution with sparse taps followed by a zero-prefix delay of tau.
// Output length = input length + tau + max tap delay.
inline cvec apply_channel(std::span<const cplx> x, const ChannelRealization& ch) {
    if (ch.taps.size() != ch.tap_delays.size())
        throw std::invalid_argument("apply_channel: tap/delay count mismatch");
    cvec y(x.size() + ch.tau + ch.max_delay(), cplx{0.0, 0.0});
    for (std::size_t l = 0; l < ch.taps.size(); ++l) {
        const std::size_t off = ch.tau + ch.tap_delays[l];
        const cplx h = ch.taps[l];
        for (std::size_t n = 0; n < x.size(); ++n) y[n + off] += h * x[n];
    }
    return y;
}

inline cvec apply_channel(const TxStream& tx, const ChannelRealization& ch) {
    if (ch.max_delay() + 1 > tx.cfg.cp_len)
        throw std::invalid_argument("apply_channel: channel impulse response longer than cyclic prefix");
    return apply_channel(std::span<const cplx>{tx.samples}, ch);
}

// x[k] * e^{j(2pi cfo_hz k / f_s + phi)}
inline cvec apply_cfo(std::span<const cplx> x, double cfo_hz, double phi, double sample_rate_hz) {
    return mix_frequency(x, cfo_hz, sample_rate_hz, phi);
}

// Sentinel for a noiseless stream.
inline constexpr double kNoiselessSnrDb = std::numeric_limits<double>::infinity();

inline cvec add_awgn(std::span<const cplx> x, double snr_db, Rng& rng) {
    if (x.empty()) throw std::invalid_argument("add_awgn: empty input");
    cvec y(x.begin(), x.end());
    if (std::isinf(snr_db) && snr_db > 0.0) return y;
    const double p = mean_power(x);
    if (p == 0.0) throw std::invalid_argument("add_awgn: SNR undefined for all-zero input");
    const double variance = p / std::pow(10.0, snr_db / 10.0);
    for (auto& v : y) v += rng.complex_normal(variance);
    return y;
}

struct ImpairmentConfig {
    double cfo_ppm = 0.0;   // relative to the carrier
    double phi = 0.0;       // radians
    double snr_db = kNoiselessSnrDb;
    MultipathProfile profile{};
};

// Everything the generator knew. Blind estimation paths never see this; it is
// serialized to a sidecar, not into the capture itself.
struct StreamTruth {
    OfdmConfig cfg;
    std::vector<ModScheme> per_symbol_mod;
    ChannelRealization channel;
    double f_int_hz = 0.0;   // integer part, a multiple of the subcarrier spacing
    double f_frac_hz = 0.0;  // remainder in [-f_ss/2, f_ss/2)
    double phi = 0.0;
    double snr_db = kNoiselessSnrDb;
};

struct ImpairedStream {
    cvec samples;
    StreamTruth truth;
};

// Splits a CFO into the nearest whole number of subcarrier spacings plus a
// fractional remainder in [-f_ss/2, f_ss/2). The two parts sum back exactly.
inline std::pair<double, double> split_cfo(double cfo_hz, double f_ss) {
    const double bins = std::floor(cfo_hz / f_ss + 0.5);
    const double f_int = bins * f_ss;
    return {f_int, cfo_hz - f_int};
}

inline ImpairedStream impair(const TxStream& tx, const ImpairmentConfig& imp,
                             const ChannelRealization& ch, Rng& rng) {
    const double fs = tx.cfg.sample_rate_hz();
    const double cfo_hz = imp.cfo_ppm * 1e-6 * tx.cfg.carrier_hz;

    ImpairedStream out;
    out.samples = apply_channel(tx, ch);
    out.samples = apply_cfo(out.samples, cfo_hz, imp.phi, fs);
    out.samples = add_awgn(out.samples, imp.snr_db, rng);

    out.truth.cfg = tx.cfg;
    out.truth.per_symbol_mod = tx.per_symbol_mod;
    out.truth.channel = ch;
    std::tie(out.truth.f_int_hz, out.truth.f_frac_hz) = split_cfo(cfo_hz, tx.cfg.subcarrier_spacing_hz);
    out.truth.phi = imp.phi;
    out.truth.snr_db = imp.snr_db;
    return out;
}

inline ImpairedStream impair(const TxStream& tx, const ImpairmentConfig& imp, Rng& rng) {
    return impair(tx, imp, draw_channel(tx.cfg, rng, imp.profile), rng);
}

} // namespace blindscope
