#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include <gtest/gtest.h>

#include "blindscope/classifier.hpp"

namespace {

namespace fs = std::filesystem;
using namespace blindscope;

ModelConfig tiny_config() {
    ModelConfig mc;
    mc.input_resolution = 16;
    mc.stem_channels = 2;
    mc.stage_widths = {2, 4};
    mc.blocks_per_stage = 1;
    mc.seed = 99;
    return mc;  // downsample factor 8, so 16x16 input is fine
}

template <typename T>
nn::Tensor4<T> random_batch(std::size_t count, std::size_t res, Rng rng) {
    nn::Tensor4<T> x(count, 1, res, res);
    for (auto& v : x.v) v = static_cast<T>(rng.uniform());
    return x;
}

TEST(ModelConfigTest, ValidatesShapeConstraints) {
    ModelConfig mc;  // defaults: res 128, three stages, no stem pool
    EXPECT_NO_THROW(mc.validate());

    mc.input_resolution = 100;  // not divisible by 8
    EXPECT_THROW(mc.validate(), ConfigError);
    mc.input_resolution = 8;
    EXPECT_THROW(mc.validate(), ConfigError);
    mc = ModelConfig{};

    mc.num_classes = 7;
    EXPECT_THROW(mc.validate(), ConfigError);
    mc = ModelConfig{};

    mc.stage_widths.clear();
    EXPECT_THROW(mc.validate(), ConfigError);
    mc = ModelConfig{};

    mc.blocks_per_stage = 0;
    EXPECT_THROW(mc.validate(), ConfigError);
    mc = ModelConfig{};

    mc.stem_channels = 0;
    EXPECT_THROW(mc.validate(), ConfigError);

    // adding the stem pool doubles the required divisor
    ModelConfig np = tiny_config();
    np.stage_widths = {2, 4, 8};
    np.input_resolution = 24;
    EXPECT_NO_THROW(np.validate());  // divisor 8 without the pool
    np.stem_pool = true;
    EXPECT_THROW(np.validate(), ConfigError);  // now needs multiples of 16
}

TEST(ModelConfigTest, JsonRoundTrip) {
    ModelConfig mc = tiny_config();
    mc.affine_only_norm = true;
    mc.stem_pool = false;
    const nlohmann::json j = mc;
    const auto back = j.get<ModelConfig>();
    EXPECT_EQ(back.input_resolution, mc.input_resolution);
    EXPECT_EQ(back.stem_channels, mc.stem_channels);
    EXPECT_EQ(back.stage_widths, mc.stage_widths);
    EXPECT_EQ(back.blocks_per_stage, mc.blocks_per_stage);
    EXPECT_EQ(back.affine_only_norm, mc.affine_only_norm);
    EXPECT_EQ(back.stem_pool, mc.stem_pool);
    EXPECT_EQ(back.seed, mc.seed);
}

TEST(ModelTest, InitIsSeedDeterministic) {
    Model<float> a(tiny_config());
    Model<float> b(tiny_config());
    ModelConfig other = tiny_config();
    other.seed = 100;
    Model<float> c(other);

    const auto pa = a.params(), pb = b.params(), pc = c.params();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(*pa[i].value, *pb[i].value) << pa[i].name;
        if (*pa[i].value != *pc[i].value) any_differs = true;
    }
    EXPECT_TRUE(any_differs);

    // every tensor has a distinct name so checkpoints can report mismatches
    std::set<std::string> names;
    for (const auto& p : pa) names.insert(p.name);
    for (const auto& b2 : a.buffers()) names.insert(b2.name);
    EXPECT_EQ(names.size(), pa.size() + a.buffers().size());
}

TEST(ModelTest, EvalLogitsDoNotDependOnBatchCompany) {
    Model<float> model(tiny_config());
    const auto x3 = random_batch<float>(3, 16, Rng(7));

    nn::Tensor4<float> perm(3, 1, 16, 16);
    const std::size_t px = 16 * 16;
    const std::size_t order[3] = {2, 0, 1};
    for (std::size_t i = 0; i < 3; ++i)
        std::copy_n(x3.v.data() + order[i] * px, px, perm.v.data() + i * px);

    const nn::Mat<float> y = model.forward_eval(x3);
    const nn::Mat<float> yp = model.forward_eval(perm);
    for (std::size_t i = 0; i < 3; ++i)
        for (int j = 0; j < kNumClasses; ++j)
            EXPECT_NEAR(yp(static_cast<Eigen::Index>(i), j), y(static_cast<Eigen::Index>(order[i]), j), 1e-4f);

    // single-image helper agrees with the batched path
    ConstellationImage img;
    img.resolution = 16;
    img.axis_range = 2.0;
    img.grid.assign(x3.v.begin(), x3.v.begin() + static_cast<std::ptrdiff_t>(px));
    const auto logits = forward(model, img);
    for (int j = 0; j < kNumClasses; ++j) EXPECT_NEAR(logits[static_cast<std::size_t>(j)], y(0, j), 1e-4);
}

TEST(ModelTest, PredictBreaksTiesTowardTheSmallestLabel) {
    Model<float> model(tiny_config());
    std::fill(model.head().w.begin(), model.head().w.end(), 0.0f);
    std::fill(model.head().b.begin(), model.head().b.end(), 0.0f);

    ConstellationImage img;
    img.resolution = 16;
    img.axis_range = 2.0;
    img.grid.assign(16 * 16, 0.25f);
    const Prediction p = predict(model, img);
    EXPECT_EQ(p.label, 0);
    EXPECT_NEAR(p.confidence, 1.0 / kNumClasses, 1e-9);
    double sum = 0.0;
    for (double v : p.probs) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(ModelTest, AnalyticGradientsMatchFiniteDifferences) {
    ModelConfig mc;
    mc.input_resolution = 16;
    mc.stem_channels = 2;
    mc.stage_widths = {3};
    mc.blocks_per_stage = 1;
    mc.seed = 5;
    Model<double> model(mc);

    const auto x = random_batch<double>(2, 16, Rng(11));
    const std::vector<int> labels = {2, 5};

    model.zero_grads();
    model.loss_and_grad(x, labels);
    std::vector<std::vector<double>> analytic;
    for (const auto& p : model.params()) analytic.push_back(*p.grad);

    auto loss_at = [&]() {
        model.zero_grads();
        return model.loss_and_grad(x, labels);
    };

    const double eps = 1e-5;
    auto params = model.params();
    for (std::size_t t = 0; t < params.size(); ++t) {
        std::vector<double>& v = *params[t].value;
        std::set<std::size_t> picks = {0, v.size() / 2, v.size() - 1};
        for (std::size_t i : picks) {
            const double keep = v[i];
            v[i] = keep + eps;
            const double lp = loss_at();
            v[i] = keep - eps;
            const double lm = loss_at();
            v[i] = keep;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double got = analytic[t][i];
            EXPECT_LE(std::abs(got - numeric), std::max(1e-6, 1e-4 * std::abs(numeric)))
                << params[t].name << "[" << i << "]: analytic " << got << " numeric " << numeric;
        }
    }
}

// Synthetic two-class set the network can separate by local statistics:
// dense bright images against sparse dotted ones. (Global average pooling
// makes absolute position useless, so the classes must differ in texture.)
io::Dataset blob_dataset(std::size_t count, std::size_t res) {
    io::Dataset ds;
    ds.resolution = res;
    ds.axis_range = 2.0;
    Rng rng(21);
    for (std::size_t i = 0; i < count; ++i) {
        const bool dense = (i % 2 == 0);
        std::vector<float> img(res * res, 0.0f);
        for (std::size_t y = 0; y < res; ++y)
            for (std::size_t x = 0; x < res; ++x) {
                if (dense)
                    img[y * res + x] = 0.5f + 0.5f * static_cast<float>(rng.uniform());
                else if (y % 4 == 0 && x % 4 == 0)
                    img[y * res + x] = 1.0f;
            }
        ds.images.insert(ds.images.end(), img.begin(), img.end());
        ds.labels.push_back(dense ? 0 : 3);
    }
    return ds;
}

TEST(TrainTest, LearnsASeparableToyProblemAndReportsEveryEpoch) {
    const io::Dataset ds = blob_dataset(64, 16);
    ModelConfig mc = tiny_config();
    Hyper hp;
    hp.batch_size = 8;
    hp.lr = 3e-3;
    hp.epochs = 20;  // the toy task clicks around epoch 12 with this lr/seed
    hp.val_fraction = 0.25;
    hp.seed = 4;
    hp.require_all_classes = false;

    auto [model, report] = train<float>(ds, mc, hp);
    ASSERT_EQ(report.train_loss.size(), hp.epochs);  // one entry per epoch, no early exit
    ASSERT_EQ(report.val_accuracy.size(), hp.epochs);
    EXPECT_LT(report.best_epoch, hp.epochs);
    EXPECT_GT(report.wall_seconds, 0.0);
    EXPECT_LT(report.train_loss.back(), report.train_loss.front());

    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.count(); ++i) {
        ConstellationImage img;
        img.resolution = 16;
        img.axis_range = 2.0;
        img.grid.assign(ds.image(i), ds.image(i) + ds.pixels());
        if (predict(model, img).label == ds.labels[i]) ++correct;
    }
    EXPECT_GE(correct, ds.count() * 9 / 10);
}

TEST(TrainTest, RejectsBadInputs) {
    const io::Dataset ds = blob_dataset(16, 16);
    ModelConfig mc = tiny_config();
    Hyper hp;
    hp.epochs = 1;
    hp.require_all_classes = false;

    io::Dataset empty;
    empty.resolution = 16;
    EXPECT_THROW((train<float>(empty, mc, hp)), std::invalid_argument);

    ModelConfig wrong = mc;
    wrong.input_resolution = 32;
    EXPECT_THROW((train<float>(ds, wrong, hp)), std::invalid_argument);

    Hyper strict = hp;
    strict.require_all_classes = true;  // blob set only has labels 0 and 3
    try {
        train<float>(ds, mc, strict);
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("CP_included"), std::string::npos);  // first missing class
    }
}

class CheckpointTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("blindscope_ckpt_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string read_bytes(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    fs::path dir_;
};

TEST_F(CheckpointTest, RoundTripPreservesEveryTensorAndTheOutputs) {
    Model<float> model(tiny_config());
    // make running stats non-trivial so buffers are exercised too
    Model<float>::ForwardCache fc;
    model.forward_train(random_batch<float>(4, 16, Rng(31)), fc);

    const fs::path p = dir_ / "m.bscp";
    save_model(model, p);
    Model<float> back = load_model<float>(p);

    const auto pa = model.params(), pb = back.params();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].value, *pb[i].value) << pa[i].name;
    const auto ba = model.buffers(), bb = back.buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(*ba[i].value, *bb[i].value) << ba[i].name;

    const auto x = random_batch<float>(2, 16, Rng(32));
    const nn::Mat<float> ya = model.forward_eval(x);
    const nn::Mat<float> yb = back.forward_eval(x);
    for (Eigen::Index i = 0; i < ya.rows(); ++i)
        for (Eigen::Index j = 0; j < ya.cols(); ++j) EXPECT_EQ(ya(i, j), yb(i, j));
}

TEST_F(CheckpointTest, SavesAreByteIdentical) {
    Model<float> model(tiny_config());
    save_model(model, dir_ / "a.bscp");
    save_model(model, dir_ / "b.bscp");
    EXPECT_EQ(read_bytes(dir_ / "a.bscp"), read_bytes(dir_ / "b.bscp"));
}

TEST_F(CheckpointTest, FormatErrorsNameTensorAndByte) {
    Model<float> model(tiny_config());
    const fs::path p = dir_ / "m.bscp";
    save_model(model, p);
    std::string bytes = read_bytes(p);

    {  // corrupt the first tensor's element count, just past the config block
        const std::uint32_t clen = static_cast<std::uint8_t>(bytes[8]) |
                                   (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[9])) << 8) |
                                   (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[10])) << 16) |
                                   (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[11])) << 24);
        const std::size_t count_at = 12 + clen;
        std::string bad = bytes;
        bad[count_at] = static_cast<char>(static_cast<std::uint8_t>(bad[count_at]) + 1);
        std::ofstream out(dir_ / "bad.bscp", std::ios::binary);
        out << bad;
        out.close();
        try {
            load_model<float>(dir_ / "bad.bscp");
            FAIL() << "expected FormatError";
        } catch (const FormatError& e) {
            EXPECT_EQ(e.byte_offset(), count_at);
            EXPECT_NE(std::string(e.what()).find("size mismatch"), std::string::npos);
            EXPECT_NE(std::string(e.what()).find("stem"), std::string::npos);  // names the tensor
        }
    }

    {  // truncated file
        std::ofstream out(dir_ / "trunc.bscp", std::ios::binary);
        out << bytes.substr(0, bytes.size() - 3);
    }
    EXPECT_THROW(load_model<float>(dir_ / "trunc.bscp"), FormatError);

    {  // wrong magic
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream out(dir_ / "magic.bscp", std::ios::binary);
        out << bad;
    }
    try {
        load_model<float>(dir_ / "magic.bscp");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.byte_offset(), 0u);
    }

    {  // trailing garbage
        std::ofstream out(dir_ / "trail.bscp", std::ios::binary);
        out << bytes << "zz";
    }
    EXPECT_THROW(load_model<float>(dir_ / "trail.bscp"), FormatError);
}

TEST(ImageToTensorTest, CopiesPixelsInRowMajorOrder) {
    ConstellationImage img;
    img.resolution = 4;
    img.axis_range = 2.0;
    img.grid.resize(16);
    for (std::size_t i = 0; i < 16; ++i) img.grid[i] = static_cast<float>(i) / 16.0f;
    const auto x = image_to_tensor<float>(img);
    EXPECT_EQ(x.n, 1u);
    EXPECT_EQ(x.c, 1u);
    EXPECT_EQ(x.h, 4u);
    EXPECT_EQ(x.w, 4u);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(x.v[i], img.grid[i]);
}

} // namespace
