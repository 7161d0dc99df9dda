#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "blindscope/numerics.hpp"
#include "blindscope/rng.hpp"

namespace {

using namespace blindscope;

cvec random_vec(std::size_t n, Rng& rng) {
    cvec x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    return x;
}

// O(n^2) reference transform, written independently of the library's
// direct-evaluation path (no modular angle folding).
cvec dft_reference(const cvec& x, bool inverse) {
    const std::size_t n = x.size();
    const double sign = inverse ? 1.0 : -1.0;
    cvec out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc{0.0, 0.0};
        for (std::size_t m = 0; m < n; ++m) {
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) *
                               static_cast<double>(m) / static_cast<double>(n);
            acc += x[m] * std::polar(1.0, ang);
        }
        out[k] = inverse ? acc / static_cast<double>(n) : acc;
    }
    return out;
}

double max_rel_err(const cvec& a, const cvec& b) {
    EXPECT_EQ(a.size(), b.size());
    double ref = 1e-300;
    for (const auto& v : b) ref = std::max(ref, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / ref);
    return worst;
}

TEST(Dft, MatchesReferenceOnMixedSizes) {
    Rng rng(11);
    for (std::size_t n : {1u, 2u, 3u, 5u, 8u, 12u, 16u, 27u, 64u, 100u}) {
        const cvec x = random_vec(n, rng);
        EXPECT_LT(max_rel_err(dft(x), dft_reference(x, false)), 1e-9) << "n=" << n;
        EXPECT_LT(max_rel_err(dft(x, true), dft_reference(x, true)), 1e-9) << "n=" << n;
    }
}

TEST(Dft, RoundTripUpTo4096) {
    Rng rng(12);
    for (std::size_t n : {1u, 2u, 4u, 30u, 128u, 1000u, 2048u, 4096u}) {
        const cvec x = random_vec(n, rng);
        const cvec y = dft(dft(x), true);
        EXPECT_LT(max_rel_err(y, x), 1e-9) << "n=" << n;
    }
}

TEST(Dft, Parseval) {
    Rng rng(13);
    for (std::size_t n : {64u, 333u, 4096u}) {
        const cvec x = random_vec(n, rng);
        const cvec X = dft(x);
        double time_e = 0.0, freq_e = 0.0;
        for (const auto& v : x) time_e += std::norm(v);
        for (const auto& v : X) freq_e += std::norm(v);
        freq_e /= static_cast<double>(n);
        EXPECT_NEAR(freq_e / time_e, 1.0, 1e-9) << "n=" << n;
    }
}

TEST(Dft, ImpulseIsFlatAndLinear) {
    cvec x(16, cplx{0.0, 0.0});
    x[0] = {1.0, 0.0};
    for (const auto& v : dft(x)) EXPECT_LT(std::abs(v - cplx{1.0, 0.0}), 1e-12);

    Rng rng(14);
    const cvec a = random_vec(32, rng);
    const cvec b = random_vec(32, rng);
    const cplx ca{0.7, -1.3}, cb{-0.2, 0.5};
    cvec mix(32);
    for (std::size_t i = 0; i < 32; ++i) mix[i] = ca * a[i] + cb * b[i];
    const cvec lhs = dft(mix);
    const cvec fa = dft(a), fb = dft(b);
    for (std::size_t i = 0; i < 32; ++i)
        EXPECT_LT(std::abs(lhs[i] - (ca * fa[i] + cb * fb[i])), 1e-9);
}

TEST(Dft, CircularShiftTheorem) {
    Rng rng(15);
    const std::size_t n = 64;
    const cvec x = random_vec(n, rng);
    cvec shifted(n);
    for (std::size_t i = 0; i < n; ++i) shifted[i] = x[(i + n - 3) % n];  // delay by 3
    const cvec X = dft(x);
    const cvec Y = dft(shifted);
    for (std::size_t k = 0; k < n; ++k) {
        const cplx ramp = std::polar(1.0, -2.0 * std::numbers::pi * 3.0 * static_cast<double>(k) / n);
        EXPECT_LT(std::abs(Y[k] - X[k] * ramp), 1e-9);
    }
}

TEST(Dft, EmptyInputRejected) { EXPECT_THROW(dft(cvec{}), std::invalid_argument); }

TEST(DelayedAutocorrelation, MatchesDirectSumExhaustively) {
    // Every stream length Z <= 64, every delay d and lag p that fit.
    Rng rng(21);
    for (std::size_t z = 2; z <= 64; ++z) {
        const cvec r = random_vec(z, rng);
        for (std::size_t d = 1; d < z; ++d) {
            const std::size_t max_lag = (z - 1 - d) >= 3 ? 3 : (z - 1 - d);
            const auto out = delayed_autocorrelation(r, d, max_lag);
            ASSERT_EQ(out.raw.size(), max_lag + 1);
            for (std::size_t p = 0; p <= max_lag; ++p) {
                cplx acc{0.0, 0.0};
                double e_late = 0.0, e_early = 0.0;
                for (std::size_t n = d + p; n < z; ++n) {
                    acc += r[n] * std::conj(r[n - d - p]);
                    e_late += std::norm(r[n]);
                    e_early += std::norm(r[n - d - p]);
                }
                EXPECT_LT(std::abs(out.raw[p] - acc), 1e-10);
                const double denom = std::sqrt(e_late * e_early);
                EXPECT_NEAR(out.normalized[p], denom > 0 ? std::abs(acc) / denom : 0.0, 1e-12);
            }
        }
    }
}

TEST(DelayedAutocorrelation, NormalizedIsBoundedByOne) {
    Rng rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        const cvec r = random_vec(100, rng);
        const auto out = delayed_autocorrelation(r, 7, 20);
        for (double v : out.normalized) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0 + 1e-12);
        }
    }
}

TEST(DelayedAutocorrelation, RejectsBadArguments) {
    Rng rng(23);
    const cvec r = random_vec(10, rng);
    EXPECT_THROW(delayed_autocorrelation(r, 0, 0), std::invalid_argument);
    EXPECT_THROW(delayed_autocorrelation(r, 5, 5), std::invalid_argument);
}

TEST(MixFrequency, MagnitudePreservingAndInvertible) {
    Rng rng(31);
    const cvec x = random_vec(500, rng);
    const double fs = 1.92e6;
    const cvec y = mix_frequency(x, 31250.0, fs, 0.4);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(std::abs(y[i]), std::abs(x[i]), 1e-12);
    const cvec back = mix_frequency(y, -31250.0, fs, -0.4);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(std::abs(back[i] - x[i]), 1e-12);
}

TEST(MixFrequency, OneSpacingMovesToneByOneBin) {
    const std::size_t n = 128;
    const double f_ss = 15e3;
    const double fs = static_cast<double>(n) * f_ss;
    cvec x(n);
    const std::size_t k0 = 5;
    for (std::size_t t = 0; t < n; ++t)
        x[t] = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(k0 * t) / n);
    const cvec y = mix_frequency(x, f_ss, fs);
    const cvec Y = dft(y);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
        if (std::abs(Y[k]) > std::abs(Y[arg])) arg = k;
    EXPECT_EQ(arg, k0 + 1);
    EXPECT_NEAR(std::abs(Y[arg]), static_cast<double>(n), 1e-9);
}

TEST(Noise, PowerAndMeanPower) {
    Rng rng(41);
    const cvec w = gaussian_noise(100000, 0.25, rng);
    EXPECT_NEAR(mean_power(w), 0.25, 0.25 * 0.02);

    const cvec z{{3.0, 4.0}, {0.0, 0.0}};
    EXPECT_DOUBLE_EQ(mean_power(z), 12.5);
    EXPECT_DOUBLE_EQ(mean_power(cvec{}), 0.0);
    EXPECT_THROW(gaussian_noise(4, -1.0, rng), std::invalid_argument);
    EXPECT_TRUE(gaussian_noise(4, 0.0, rng) == cvec(4, cplx{0.0, 0.0}));
}

TEST(Rng, DeterministicAndSplitIndependent) {
    Rng a(99, 7), b(99, 7);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());

    // split(id) is a pure function of (seed, stream, id), not of consumption
    Rng parent1(5), parent2(5);
    (void)parent2.next_u64();
    Rng c1 = parent1.split(3), c2 = parent2.split(3);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(c1.next_u64(), c2.next_u64());

    Rng u(1);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform(2.0, 3.0);
        EXPECT_GE(v, 2.0);
        EXPECT_LT(v, 3.0);
        EXPECT_LT(u.uniform_int(17), 17u);
    }
}

} // namespace
