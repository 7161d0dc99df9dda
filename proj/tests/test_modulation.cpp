#include <bit>
#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "blindscope/modulation.hpp"
#include "blindscope/rng.hpp"

namespace {

using namespace blindscope;

TEST(Modulation, BitsPerSymbolAndSizes) {
    EXPECT_EQ(bits_per_symbol(ModScheme::BPSK), 1);
    EXPECT_EQ(bits_per_symbol(ModScheme::QPSK), 2);
    EXPECT_EQ(bits_per_symbol(ModScheme::QAM16), 4);
    EXPECT_EQ(bits_per_symbol(ModScheme::QAM64), 6);
    EXPECT_EQ(bits_per_symbol(ModScheme::QAM256), 8);
    EXPECT_EQ(bits_per_symbol(ModScheme::QAM1024), 10);
    EXPECT_EQ(constellation_size(ModScheme::QAM1024), 1024u);
}

TEST(Modulation, NamesRoundTrip) {
    for (ModScheme s : kAllSchemes) EXPECT_EQ(mod_from_name(mod_name(s)), s);
    EXPECT_THROW(mod_from_name("zam"), std::invalid_argument);
}

TEST(Modulation, UnitMeanEnergyAndDistinctPoints) {
    for (ModScheme s : kAllSchemes) {
        const cvec& table = constellation(s);
        ASSERT_EQ(table.size(), constellation_size(s));
        double e = 0.0;
        std::set<std::pair<double, double>> seen;
        for (const auto& p : table) {
            e += std::norm(p);
            seen.insert({p.real(), p.imag()});
        }
        EXPECT_NEAR(e / static_cast<double>(table.size()), 1.0, 1e-12) << mod_name(s);
        EXPECT_EQ(seen.size(), table.size()) << mod_name(s);
    }
}

// Gray labeling: the nearest horizontal and vertical neighbors of every
// constellation point differ in exactly one bit.
TEST(Modulation, SquareQamIsGrayLabeled) {
    for (ModScheme s : {ModScheme::QPSK, ModScheme::QAM16, ModScheme::QAM64, ModScheme::QAM256, ModScheme::QAM1024}) {
        const cvec& table = constellation(s);
        // Recover the grid pitch as the minimum nonzero coordinate gap.
        std::set<double> res;
        for (const auto& p : table) res.insert(p.real());
        auto it = res.begin();
        const double lo = *it++;
        const double pitch = res.size() > 1 ? *it - lo : 1.0;

        std::map<std::pair<long, long>, std::uint32_t> by_cell;
        for (std::uint32_t i = 0; i < table.size(); ++i) {
            const auto gx = std::lround((table[i].real() - lo) / pitch);
            const auto gy = std::lround((table[i].imag() - lo) / pitch);
            by_cell[{gx, gy}] = i;
        }
        for (const auto& [cell, idx] : by_cell) {
            for (const auto& [dx, dy] : {std::pair{1L, 0L}, std::pair{0L, 1L}}) {
                const auto nb = by_cell.find({cell.first + dx, cell.second + dy});
                if (nb == by_cell.end()) continue;
                const auto diff = static_cast<std::uint32_t>(idx ^ nb->second);
                EXPECT_EQ(std::popcount(diff), 1) << mod_name(s);
            }
        }
    }
}

TEST(Modulation, MapDemapRoundTripAllPoints) {
    for (ModScheme s : kAllSchemes) {
        const int bps = bits_per_symbol(s);
        std::vector<std::uint8_t> bits;
        for (std::size_t v = 0; v < constellation_size(s); ++v)
            for (int b = bps - 1; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((v >> b) & 1u));
        const cvec pts = map_bits(bits, s);
        ASSERT_EQ(pts.size(), constellation_size(s));
        EXPECT_EQ(demap_nearest(pts, s), bits) << mod_name(s);
    }
}

TEST(Modulation, DemapSurvivesSmallNoise) {
    Rng rng(77);
    const ModScheme s = ModScheme::QAM64;
    std::vector<std::uint8_t> bits;
    for (int i = 0; i < 6 * 200; ++i) bits.push_back(static_cast<std::uint8_t>(rng.next_u64() & 1u));
    cvec pts = map_bits(bits, s);
    for (auto& p : pts) p += cplx{rng.normal(), rng.normal()} * 0.01;
    EXPECT_EQ(demap_nearest(pts, s), bits);
}

TEST(Modulation, MapRejectsRaggedBitCount) {
    const std::vector<std::uint8_t> bits{1, 0, 1};
    EXPECT_THROW(map_bits(bits, ModScheme::QPSK), std::invalid_argument);
}

} // namespace
