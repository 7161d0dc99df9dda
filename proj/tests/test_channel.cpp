#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "blindscope/channel.hpp"
#include "blindscope/waveform.hpp"

namespace {

using namespace blindscope;

OfdmConfig make_cfg(std::size_t n, std::size_t cp, std::size_t symbols = 3) {
    OfdmConfig cfg;
    cfg.n = n;
    cfg.cp_len = cp;
    cfg.num_symbols = symbols;
    return cfg;
}

TEST(SplitCfo, PinnedExampleAndLosslessness) {
    // 200 kHz against a 15 kHz spacing: 13 whole bins (195 kHz) plus 5 kHz.
    const auto [f_int, f_frac] = split_cfo(200e3, 15e3);
    EXPECT_DOUBLE_EQ(f_int, 195e3);
    EXPECT_DOUBLE_EQ(f_frac, 5e3);

    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        const double cfo = rng.uniform(100.0, 500.0) * 1e-6 * 2e9;
        const auto [fi, ff] = split_cfo(cfo, 15e3);
        EXPECT_EQ(fi + ff, cfo);  // the decomposition is exact, not approximate
        EXPECT_GE(ff, -7.5e3);
        EXPECT_LT(ff, 7.5e3);
        EXPECT_DOUBLE_EQ(std::round(fi / 15e3) * 15e3, fi);
    }
}

TEST(DrawChannel, Sui1DelaysRoundToSamples) {
    Rng rng(2);
    const auto ch_small = draw_channel(make_cfg(128, 16), rng);   // f_s = 1.92 MHz
    EXPECT_EQ(ch_small.tap_delays, (std::vector<std::size_t>{0, 1, 2}));
    const auto ch_big = draw_channel(make_cfg(2048, 144), rng);   // f_s = 30.72 MHz
    EXPECT_EQ(ch_big.tap_delays, (std::vector<std::size_t>{0, 12, 28}));
}

TEST(DrawChannel, UnitEnergyAndTauRange) {
    Rng rng(3);
    const OfdmConfig cfg = make_cfg(256, 20);
    for (int i = 0; i < 200; ++i) {
        const auto ch = draw_channel(cfg, rng);
        double e = 0.0;
        for (const auto& h : ch.taps) e += std::norm(h);
        EXPECT_NEAR(e, 1.0, 1e-12);
        EXPECT_LT(ch.tau, cfg.symbol_len());
    }
}

TEST(DrawChannel, TapPowersFollowTheProfile) {
    // Mean-of-ratios and ratio-of-means are both biased here: the per-draw
    // unit-energy rescale couples the taps, and E[X/Y] diverges for iid
    // exponential gains. Within one draw the rescale cancels, and
    // ln(|h_k|^2 / |h_0|^2) = ln(g_k/g_0) + ln(X_k/X_0) with the second term
    // symmetric about zero, so the mean log ratio is an exact oracle for the
    // -15 dB and -20 dB profile levels. Var(ln X_k - ln X_0) = pi^2/3, so
    // 20000 draws put the sample mean within ~0.013 nats; 0.06 is > 4 sigma.
    Rng rng(4);
    const OfdmConfig cfg = make_cfg(512, 40);
    double lr1 = 0.0, lr2 = 0.0;
    const int trials = 20000;
    for (int i = 0; i < trials; ++i) {
        const auto ch = draw_channel(cfg, rng);
        lr1 += std::log(std::norm(ch.taps[1]) / std::norm(ch.taps[0]));
        lr2 += std::log(std::norm(ch.taps[2]) / std::norm(ch.taps[0]));
    }
    const double ln10 = std::log(10.0);
    EXPECT_NEAR(lr1 / trials, -1.5 * ln10, 0.06);
    EXPECT_NEAR(lr2 / trials, -2.0 * ln10, 0.06);
}

TEST(DrawChannel, CirLongerThanCpRejected) {
    Rng rng(5);
    OfdmConfig cfg = make_cfg(2048, 123);
    cfg.subcarrier_spacing_hz = 70e3;  // f_s = 143.36 MHz puts the last tap at 129 samples
    EXPECT_THROW(draw_channel(cfg, rng), ConfigError);
}

TEST(ApplyChannel, MatchesDirectConvolutionWithDelay) {
    Rng rng(6);
    cvec x(50);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    ChannelRealization ch;
    ch.taps = {cplx{0.8, -0.1}, cplx{0.0, 0.3}};
    ch.tap_delays = {0, 4};
    ch.tau = 7;

    const cvec y = apply_channel(x, ch);
    ASSERT_EQ(y.size(), x.size() + ch.tau + 4);
    for (std::size_t n = 0; n < y.size(); ++n) {
        cplx ref{0.0, 0.0};
        for (std::size_t l = 0; l < ch.taps.size(); ++l) {
            const std::size_t off = ch.tau + ch.tap_delays[l];
            if (n >= off && n - off < x.size()) ref += ch.taps[l] * x[n - off];
        }
        EXPECT_LT(std::abs(y[n] - ref), 1e-12);
    }
    // zero prefix of length tau
    for (std::size_t n = 0; n < ch.tau; ++n) EXPECT_EQ(y[n], (cplx{0.0, 0.0}));
}

TEST(ApplyChannel, IdentityIsPureDelayAndTxGuard) {
    Rng rng(7);
    const OfdmConfig cfg = make_cfg(128, 10);
    const TxStream tx = generate_stream(cfg, rng);
    ChannelRealization id = identity_channel();
    id.tau = 13;
    const cvec y = apply_channel(tx, id);
    ASSERT_EQ(y.size(), tx.samples.size() + 13);
    for (std::size_t i = 0; i < tx.samples.size(); ++i) EXPECT_EQ(y[i + 13], tx.samples[i]);

    ChannelRealization long_cir = identity_channel();
    long_cir.taps = {cplx{1.0, 0.0}, cplx{0.1, 0.0}};
    long_cir.tap_delays = {0, cfg.cp_len};  // needs cp_len + 1 samples of guard
    EXPECT_THROW(apply_channel(tx, long_cir), std::invalid_argument);
}

TEST(ApplyCfo, PreservesMagnitudeAndStartsAtPhi) {
    Rng rng(8);
    cvec x(300);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    const double fs = 1.92e6;
    const cvec y = apply_cfo(x, 5e3, 0.7, fs);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(std::abs(y[i]), std::abs(x[i]), 1e-12);
    EXPECT_LT(std::abs(y[0] - x[0] * std::polar(1.0, 0.7)), 1e-12);
}

TEST(AddAwgn, SentinelAndDegenerateInputs) {
    Rng rng(9);
    cvec x(64, cplx{1.0, -1.0});
    const cvec clean = add_awgn(x, kNoiselessSnrDb, rng);
    EXPECT_TRUE(clean == x);  // +inf dB leaves the stream untouched

    EXPECT_THROW(add_awgn(cvec{}, 10.0, rng), std::invalid_argument);
    const cvec zeros(16, cplx{0.0, 0.0});
    EXPECT_THROW(add_awgn(zeros, 10.0, rng), std::invalid_argument);
    EXPECT_TRUE(add_awgn(zeros, kNoiselessSnrDb, rng) == zeros);  // noiseless zeros are fine
}

TEST(AddAwgn, HitsTheTargetSnr) {
    Rng rng(10);
    cvec x(100000);
    for (auto& v : x) v = std::polar(1.0, rng.uniform(0.0, 2.0 * std::numbers::pi));
    for (double target : {0.0, 10.0, 20.0}) {
        const cvec y = add_awgn(x, target, rng);
        double noise_p = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) noise_p += std::norm(y[i] - x[i]);
        noise_p /= static_cast<double>(x.size());
        const double measured = 10.0 * std::log10(mean_power(x) / noise_p);
        EXPECT_NEAR(measured, target, 0.2);
    }
}

TEST(Impair, TruthRecordsTheDraws) {
    Rng rng(11);
    const OfdmConfig cfg = make_cfg(256, 18, 4);
    const TxStream tx = generate_stream(cfg, rng);
    ImpairmentConfig imp;
    imp.cfo_ppm = 321.0;
    imp.phi = 1.2;
    imp.snr_db = 17.0;
    const ImpairedStream rx = impair(tx, imp, rng);

    const double cfo_hz = 321.0 * 1e-6 * cfg.carrier_hz;
    EXPECT_EQ(rx.truth.f_int_hz + rx.truth.f_frac_hz, cfo_hz);
    EXPECT_DOUBLE_EQ(rx.truth.phi, 1.2);
    EXPECT_DOUBLE_EQ(rx.truth.snr_db, 17.0);
    EXPECT_EQ(rx.truth.per_symbol_mod, tx.per_symbol_mod);
    EXPECT_EQ(rx.samples.size(), tx.samples.size() + rx.truth.channel.tau + rx.truth.channel.max_delay());
}

TEST(Impair, NoiselessIdentityChannelIsInvertible) {
    // With h = [1], no noise and a known CFO, undoing the rotation and delay
    // recovers the transmitted samples to round-off.
    Rng rng(12);
    const OfdmConfig cfg = make_cfg(128, 16, 3);
    const TxStream tx = generate_stream(cfg, rng);
    ImpairmentConfig imp;
    imp.cfo_ppm = 250.0;
    imp.phi = 0.9;
    ChannelRealization id = identity_channel();
    id.tau = 40;
    const ImpairedStream rx = impair(tx, imp, id, rng);

    const double fs = cfg.sample_rate_hz();
    const double cfo_hz = 250.0 * 1e-6 * cfg.carrier_hz;
    const cvec undone = mix_frequency(rx.samples, -cfo_hz, fs, -imp.phi);
    for (std::size_t i = 0; i < tx.samples.size(); ++i)
        EXPECT_LT(std::abs(undone[i + 40] - tx.samples[i]), 1e-9);
}

} // namespace
