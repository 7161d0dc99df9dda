// Instantiates every public header and the main templates once, so interface
// breaks surface here before the deeper suites run.

#include <gtest/gtest.h>

#include "blindscope/blindsync.hpp"
#include "blindscope/channel.hpp"
#include "blindscope/classifier.hpp"
#include "blindscope/config.hpp"
#include "blindscope/errors.hpp"
#include "blindscope/evalpipe.hpp"
#include "blindscope/featurize.hpp"
#include "blindscope/io.hpp"
#include "blindscope/modulation.hpp"
#include "blindscope/nn.hpp"
#include "blindscope/numerics.hpp"
#include "blindscope/rng.hpp"
#include "blindscope/waveform.hpp"

namespace {

using namespace blindscope;

ModelConfig tiny_model_config() {
    ModelConfig mc;
    mc.input_resolution = 16;
    mc.stem_channels = 2;
    mc.stage_widths = {2, 4};
    mc.blocks_per_stage = 1;
    mc.stem_pool = false;
    return mc;
}

TEST(Smoke, EndToEndTemplates) {
    OfdmConfig cfg;
    cfg.n = 128;
    cfg.cp_len = 16;
    cfg.num_symbols = 8;
    Rng rng(7);
    const TxStream tx = generate_stream(cfg, rng);
    ImpairmentConfig imp;
    imp.snr_db = 20.0;
    const ImpairedStream rx = impair(tx, imp, rng);
    EXPECT_GT(rx.samples.size(), tx.samples.size() - 1);

    const SyncEstimate sync = run_blind_sync(rx.samples, kSupportedSubcarrierCounts, cfg.sample_rate_hz());
    EXPECT_GT(sync.n_hat, 0u);

    Model<float> mf(tiny_model_config());
    Model<double> md(tiny_model_config());
    DatasetSpec spec;
    spec.n_values = {128};
    spec.resolution = 16;
    const ConstellationImage img = make_record(spec, 0, rng);
    EXPECT_EQ(img.grid.size(), 16u * 16u);
    const Prediction p = predict(mf, img);
    EXPECT_GE(p.label, 0);
    (void)forward(md, img);
}

} // namespace
