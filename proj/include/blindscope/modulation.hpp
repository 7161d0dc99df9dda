#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blindscope/numerics.hpp"

namespace blindscope {

enum class ModScheme : std::uint8_t { BPSK, QPSK, QAM16, QAM64, QAM256, QAM1024 };

inline constexpr std::array<ModScheme, 6> kAllSchemes = {
    ModScheme::BPSK,  ModScheme::QPSK,   ModScheme::QAM16,
    ModScheme::QAM64, ModScheme::QAM256, ModScheme::QAM1024};

inline constexpr int bits_per_symbol(ModScheme s) {
    switch (s) {
        case ModScheme::BPSK: return 1;
        case ModScheme::QPSK: return 2;
        case ModScheme::QAM16: return 4;
        case ModScheme::QAM64: return 6;
        case ModScheme::QAM256: return 8;
        case ModScheme::QAM1024: return 10;
    }
    return 0;
}

inline constexpr std::size_t constellation_size(ModScheme s) {
    return std::size_t{1} << bits_per_symbol(s);
}

inline std::string mod_name(ModScheme s) {
    switch (s) {
        case ModScheme::BPSK: return "BPSK";
        case ModScheme::QPSK: return "QPSK";
        case ModScheme::QAM16: return "16QAM";
        case ModScheme::QAM64: return "64QAM";
        case ModScheme::QAM256: return "256QAM";
        case ModScheme::QAM1024: return "1024QAM";
    }
    return "?";
}

inline ModScheme mod_from_name(const std::string& name) {
    for (ModScheme s : kAllSchemes)
        if (mod_name(s) == name) return s;
    throw std::invalid_argument("unknown modulation name: " + name);
}

namespace detail {

inline std::uint32_t gray_to_binary(std::uint32_t g) {
    g ^= g >> 16;
    g ^= g >> 8;
    g ^= g >> 4;
    g ^= g >> 2;
    g ^= g >> 1;
    return g;
}

} // namespace detail

// Constellation indexed by symbol value (bit group read MSB first). Square
// QAM uses per-axis Gray coding, first half of the bits on I, second half on
// Q, and every alphabet is normalized to unit average energy.
inline const cvec& constellation(ModScheme s) {
    static const std::array<cvec, 6> tables = [] {
        std::array<cvec, 6> t;
        for (ModScheme s : kAllSchemes) {
            const int bps = bits_per_symbol(s);
            const std::size_t m = std::size_t{1} << bps;
            cvec pts(m);
            if (s == ModScheme::BPSK) {
                pts[0] = {1.0, 0.0};
                pts[1] = {-1.0, 0.0};
            } else {
                const int half = bps / 2;
                const std::uint32_t k = 1u << half; // levels per axis
                const double scale = 1.0 / std::sqrt(2.0 * (static_cast<double>(k) * k - 1.0) / 3.0);
                for (std::uint32_t idx = 0; idx < m; ++idx) {
                    const std::uint32_t gi = idx >> half;
                    const std::uint32_t gq = idx & (k - 1);
                    const double ai = 2.0 * detail::gray_to_binary(gi) - (k - 1.0);
                    const double aq = 2.0 * detail::gray_to_binary(gq) - (k - 1.0);
                    pts[idx] = cplx(ai * scale, aq * scale);
                }
            }
            t[static_cast<std::size_t>(s)] = std::move(pts);
        }
        return t;
    }();
    return tables[static_cast<std::size_t>(s)];
}

// Bits (0/1 values, MSB of each group first) to constellation points.
inline cvec map_bits(std::span<const std::uint8_t> bits, ModScheme s) {
    const int bps = bits_per_symbol(s);
    if (bits.size() % static_cast<std::size_t>(bps) != 0)
        throw std::invalid_argument("map_bits: bit count not divisible by bits per symbol");
    const cvec& table = constellation(s);
    cvec out;
    out.reserve(bits.size() / bps);
    for (std::size_t i = 0; i < bits.size(); i += bps) {
        std::uint32_t idx = 0;
        for (int b = 0; b < bps; ++b) idx = (idx << 1) | (bits[i + b] & 1u);
        out.push_back(table[idx]);
    }
    return out;
}

// Nearest-point hard decision back to bits; exact inverse of map_bits on
// noiseless input.
inline std::vector<std::uint8_t> demap_nearest(std::span<const cplx> points, ModScheme s) {
    const int bps = bits_per_symbol(s);
    const cvec& table = constellation(s);
    std::vector<std::uint8_t> bits;
    bits.reserve(points.size() * bps);
    for (const cplx& p : points) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < table.size(); ++i) {
            const double d = std::norm(p - table[i]);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        for (int b = bps - 1; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((best >> b) & 1u));
    }
    return bits;
}

} // namespace blindscope
