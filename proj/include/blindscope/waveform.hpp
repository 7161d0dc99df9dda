#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "blindscope/errors.hpp"
#include "blindscope/modulation.hpp"
#include "blindscope/numerics.hpp"
#include "blindscope/rng.hpp"

namespace blindscope {

inline constexpr std::array<std::size_t, 5> kSupportedSubcarrierCounts = {128, 256, 512, 1024, 2048};

inline constexpr double kCpFractionMin = 0.06;
inline constexpr double kCpFractionMax = 0.15;

struct OfdmConfig {
    std::size_t n = 128;                    // subcarrier count
    std::size_t cp_len = 16;                // cyclic prefix length in samples
    double subcarrier_spacing_hz = 15e3;    // f_ss
    double carrier_hz = 2e9;                // f_c
    std::size_t num_symbols = 1;

    double sample_rate_hz() const { return static_cast<double>(n) * subcarrier_spacing_hz; }
    std::size_t symbol_len() const { return n + cp_len; } // R = N + N_cp

    std::size_t cp_len_min() const { return static_cast<std::size_t>(std::lround(kCpFractionMin * static_cast<double>(n))); }
    std::size_t cp_len_max() const { return static_cast<std::size_t>(std::lround(kCpFractionMax * static_cast<double>(n))); }

    void validate() const {
        bool known = false;
        for (std::size_t c : kSupportedSubcarrierCounts) known |= (c == n);
        if (!known) throw ConfigError("ofdm.n", "subcarrier count " + std::to_string(n) + " outside supported set");
        if (cp_len < cp_len_min() || cp_len > cp_len_max())
            throw ConfigError("ofdm.cp_len", "CP length " + std::to_string(cp_len) + " outside [" +
                                                 std::to_string(cp_len_min()) + ", " + std::to_string(cp_len_max()) + "]");
        if (subcarrier_spacing_hz <= 0.0) throw ConfigError("ofdm.subcarrier_spacing_hz", "must be positive");
        if (num_symbols < 1) throw ConfigError("ofdm.num_symbols", "must be >= 1");
    }
};

struct TxStream {
    OfdmConfig cfg;
    cvec samples;                          // num_symbols * (N + N_cp)
    std::vector<ModScheme> per_symbol_mod;
    std::vector<cvec> per_symbol_freq;     // the S_m[n] grids, kept as ground truth
};

// One OFDM symbol: IDFT of the subcarrier grid scaled by sqrt(N) (so unit-
// energy constellations give unit-power time samples), cyclic prefix copied
// from the tail. CP equality is exact sample duplication.
inline cvec build_ofdm_symbol(std::span<const cplx> freq_data, const OfdmConfig& cfg) {
    if (freq_data.size() != cfg.n)
        throw std::invalid_argument("build_ofdm_symbol: freq_data length != N");
    cvec body = dft(freq_data, /*inverse=*/true);
    const double scale = std::sqrt(static_cast<double>(cfg.n));
    for (auto& v : body) v *= scale;
    cvec symbol;
    symbol.reserve(cfg.symbol_len());
    symbol.insert(symbol.end(), body.end() - static_cast<std::ptrdiff_t>(cfg.cp_len), body.end());
    symbol.insert(symbol.end(), body.begin(), body.end());
    return symbol;
}

inline std::vector<std::uint8_t> random_bits(std::size_t count, Rng& rng) {
    std::vector<std::uint8_t> bits(count);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next_u64() & 1u);
    return bits;
}

// Stream with a caller-chosen modulation per symbol; payload bits uniform.
inline TxStream generate_stream_with_schemes(const OfdmConfig& cfg, std::vector<ModScheme> schemes, Rng& rng) {
    cfg.validate();
    if (schemes.size() != cfg.num_symbols)
        throw std::invalid_argument("generate_stream_with_schemes: one scheme per symbol required");
    TxStream out;
    out.cfg = cfg;
    out.per_symbol_mod = std::move(schemes);
    out.samples.reserve(cfg.num_symbols * cfg.symbol_len());
    out.per_symbol_freq.reserve(cfg.num_symbols);
    for (std::size_t m = 0; m < cfg.num_symbols; ++m) {
        const ModScheme s = out.per_symbol_mod[m];
        const auto bits = random_bits(cfg.n * static_cast<std::size_t>(bits_per_symbol(s)), rng);
        cvec grid = map_bits(bits, s);
        cvec symbol = build_ofdm_symbol(grid, cfg);
        out.samples.insert(out.samples.end(), symbol.begin(), symbol.end());
        out.per_symbol_freq.push_back(std::move(grid));
    }
    return out;
}

// Modulation drawn uniformly and independently for every symbol.
inline TxStream generate_stream(const OfdmConfig& cfg, Rng& rng) {
    std::vector<ModScheme> schemes(cfg.num_symbols);
    for (auto& s : schemes) s = kAllSchemes[rng.uniform_int(kAllSchemes.size())];
    return generate_stream_with_schemes(cfg, std::move(schemes), rng);
}

} // namespace blindscope
