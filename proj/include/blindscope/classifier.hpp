#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "blindscope/errors.hpp"
#include "blindscope/featurize.hpp"
#include "blindscope/io.hpp"
#include "blindscope/nn.hpp"
#include "blindscope/rng.hpp"

namespace blindscope {

struct ModelConfig {
    std::size_t input_resolution = 128;
    std::size_t stem_channels = 12;
    std::vector<std::size_t> stage_widths = {16, 32, 64};
    std::size_t blocks_per_stage = 2;
    std::size_t num_classes = kNumClasses;
    bool affine_only_norm = false;  // statistics-free normalization, batch-size independent
    // No pool after the stem: at 128x128 the 256QAM and 1024QAM lattice
    // pitches are ~5 and ~2.5 pixels, and one more halving would push both
    // below what any 3x3 filter in stage one can resolve. Telling those two
    // apart is the hardest part of the task; cheap early downsampling is
    // exactly the wrong place to save time.
    bool stem_pool = false;
    std::uint64_t seed = 0xb11d;

    void validate() const {
        if (num_classes != static_cast<std::size_t>(kNumClasses))
            throw ConfigError("model.num_classes", "fixed at " + std::to_string(kNumClasses));
        if (stage_widths.empty()) throw ConfigError("model.stage_widths", "need at least one stage");
        if (blocks_per_stage < 1) throw ConfigError("model.blocks_per_stage", "need at least one block");
        if (stem_channels < 1) throw ConfigError("model.stem_channels", "need at least one channel");
        // Each downsampling halves the grid: stem conv, optional stem pool,
        // then one stride-2 block entering every stage after the first.
        std::size_t div = 2 * (stem_pool ? 2 : 1) << (stage_widths.size() - 1);
        if (input_resolution < 16 || input_resolution % div != 0)
            throw ConfigError("model.input_resolution",
                              "must be >= 16 and divisible by " + std::to_string(div));
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"input_resolution", c.input_resolution},
                       {"stem_channels", c.stem_channels},
                       {"stage_widths", c.stage_widths},
                       {"blocks_per_stage", c.blocks_per_stage},
                       {"num_classes", c.num_classes},
                       {"affine_only_norm", c.affine_only_norm},
                       {"stem_pool", c.stem_pool},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("input_resolution").get_to(c.input_resolution);
    j.at("stem_channels").get_to(c.stem_channels);
    j.at("stage_widths").get_to(c.stage_widths);
    j.at("blocks_per_stage").get_to(c.blocks_per_stage);
    j.at("num_classes").get_to(c.num_classes);
    j.at("affine_only_norm").get_to(c.affine_only_norm);
    j.at("stem_pool").get_to(c.stem_pool);
    j.at("seed").get_to(c.seed);
}

// The residual classifier: stem conv (stride 2) + optional pool, then stages
// of residual blocks with stride-2 transitions, global average pool and a
// linear head.
template <typename T = float>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        stem_conv_ = nn::Conv2d<T>(1, cfg.stem_channels, 3, 2, 1);
        stem_bn_ = nn::BatchNorm2d<T>(cfg.stem_channels, cfg.affine_only_norm);
        std::size_t in_c = cfg.stem_channels;
        for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
            const std::size_t width = cfg.stage_widths[s];
            for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
                const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
                blocks_.emplace_back(in_c, width, stride, cfg.affine_only_norm);
                in_c = width;
            }
        }
        head_ = nn::Linear<T>(in_c, cfg.num_classes);

        Rng rng(cfg.seed, 0x1417);
        std::uint64_t idx = 0;
        stem_conv_.init(rng.split(idx++));
        for (auto& blk : blocks_) {
            blk.conv1.init(rng.split(idx++));
            blk.conv2.init(rng.split(idx++));
            if (blk.has_proj) blk.proj.init(rng.split(idx++));
        }
        head_.init(rng.split(idx++));
    }

    const ModelConfig& config() const { return cfg_; }

    struct ForwardCache {
        typename nn::Conv2d<T>::Cache stem_conv;
        typename nn::BatchNorm2d<T>::Cache stem_bn;
        typename nn::Relu<T>::Cache stem_relu;
        typename nn::MaxPool2<T>::Cache stem_pool;
        std::vector<typename nn::ResidualBlock<T>::Cache> blocks;
        typename nn::GlobalAvgPool<T>::Cache gap;
        typename nn::Linear<T>::Cache head;
        std::size_t feat_channels = 0;
    };

    nn::Mat<T> forward_train(const nn::Tensor4<T>& x, ForwardCache& fc) {
        check_input(x);
        fc.blocks.resize(blocks_.size());
        nn::Tensor4<T> h = stem_conv_.forward(x, &fc.stem_conv);
        h = stem_bn_.forward_train(h, fc.stem_bn);
        relu_.forward_inplace(h, &fc.stem_relu);
        if (cfg_.stem_pool) h = pool_.forward(h, &fc.stem_pool);
        for (std::size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i].forward_train(h, fc.blocks[i]);
        fc.feat_channels = h.c;
        nn::Mat<T> f = gap_.forward(h, &fc.gap);
        return head_.forward(f, &fc.head);
    }

    nn::Mat<T> forward_eval(const nn::Tensor4<T>& x) const {
        check_input(x);
        nn::Tensor4<T> h = stem_conv_.forward(x, nullptr);
        h = stem_bn_.forward_eval(h);
        relu_.forward_inplace(h, nullptr);
        if (cfg_.stem_pool) h = pool_.forward(h, nullptr);
        for (const auto& blk : blocks_) h = blk.forward_eval(h);
        nn::Mat<T> f = gap_.forward(h, nullptr);
        return head_.forward(f, nullptr);
    }

    void backward(ForwardCache& fc, const nn::Mat<T>& dlogits) {
        nn::Mat<T> df = head_.backward(fc.head, dlogits);
        nn::Tensor4<T> dh = gap_.backward(fc.gap, fc.feat_channels, df);
        for (std::size_t i = blocks_.size(); i-- > 0;) dh = blocks_[i].backward(fc.blocks[i], dh);
        if (cfg_.stem_pool) dh = pool_.backward(fc.stem_pool, dh);
        dh = relu_.backward(fc.stem_relu, dh);
        dh = stem_bn_.backward(fc.stem_bn, dh);
        stem_conv_.backward(fc.stem_conv, dh);
    }

    // Mean cross-entropy over the batch; leaves gradients accumulated.
    T loss_and_grad(const nn::Tensor4<T>& x, std::span<const int> labels) {
        if (x.n == 0) throw std::invalid_argument("loss_and_grad: empty batch");
        ForwardCache fc;
        const nn::Mat<T> logits = forward_train(x, fc);
        nn::Mat<T> dlogits;
        const T loss = nn::cross_entropy(logits, labels, &dlogits);
        backward(fc, dlogits);
        return loss;
    }

    void zero_grads() {
        for (auto& p : params())
            if (p.grad) std::fill(p.grad->begin(), p.grad->end(), T(0));
    }

    std::vector<nn::ParamRef<T>> params() {
        std::vector<nn::ParamRef<T>> out;
        visit(*this, [&](const std::string& name, std::vector<T>& v, std::vector<T>& g) {
            out.push_back({name, &v, &g});
        });
        return out;
    }

    std::vector<nn::ParamRef<T>> params() const {
        std::vector<nn::ParamRef<T>> out;
        visit(const_cast<Model&>(*this), [&](const std::string& name, std::vector<T>& v, std::vector<T>& g) {
            out.push_back({name, &v, &g});
        });
        return out;
    }

    // Running statistics and other non-gradient state, in declared order.
    std::vector<nn::ParamRef<T>> buffers() {
        std::vector<nn::ParamRef<T>> out;
        visit_buffers(*this, [&](const std::string& name, std::vector<T>& v) {
            out.push_back({name, &v, nullptr});
        });
        return out;
    }

    std::vector<nn::ParamRef<T>> buffers() const {
        std::vector<nn::ParamRef<T>> out;
        visit_buffers(const_cast<Model&>(*this),
                      [&](const std::string& name, std::vector<T>& v) { out.push_back({name, &v, nullptr}); });
        return out;
    }

    nn::Linear<T>& head() { return head_; }

private:
    void check_input(const nn::Tensor4<T>& x) const {
        if (x.c != 1 || x.h != cfg_.input_resolution || x.w != cfg_.input_resolution)
            throw std::invalid_argument("Model: input shape does not match the configured resolution");
    }

    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        f("stem.conv.w", self.stem_conv_.w, self.stem_conv_.gw);
        f("stem.bn.gamma", self.stem_bn_.gamma, self.stem_bn_.ggamma);
        f("stem.bn.beta", self.stem_bn_.beta, self.stem_bn_.gbeta);
        for (std::size_t i = 0; i < self.blocks_.size(); ++i)
            nn::ResidualBlock<T>::visit(self.blocks_[i], "block" + std::to_string(i), f);
        f("head.w", self.head_.w, self.head_.gw);
        f("head.b", self.head_.b, self.head_.gb);
    }

    template <typename Self, typename F>
    static void visit_buffers(Self& self, F&& f) {
        f("stem.bn.run_mean", self.stem_bn_.run_mean);
        f("stem.bn.run_var", self.stem_bn_.run_var);
        for (std::size_t i = 0; i < self.blocks_.size(); ++i)
            nn::ResidualBlock<T>::visit_buffers(self.blocks_[i], "block" + std::to_string(i), f);
    }

    ModelConfig cfg_;
    nn::Conv2d<T> stem_conv_;
    nn::BatchNorm2d<T> stem_bn_;
    nn::Relu<T> relu_;
    nn::MaxPool2<T> pool_;
    std::vector<nn::ResidualBlock<T>> blocks_;
    nn::GlobalAvgPool<T> gap_;
    nn::Linear<T> head_;
};

template <typename T>
inline nn::Tensor4<T> image_to_tensor(const ConstellationImage& img) {
    nn::Tensor4<T> x(1, 1, img.resolution, img.resolution);
    for (std::size_t i = 0; i < img.grid.size(); ++i) x.v[i] = static_cast<T>(img.grid[i]);
    return x;
}

template <typename T>
inline std::array<double, kNumClasses> forward(const Model<T>& model, const ConstellationImage& img) {
    const nn::Mat<T> logits = model.forward_eval(image_to_tensor<T>(img));
    std::array<double, kNumClasses> out{};
    for (int j = 0; j < kNumClasses; ++j) out[static_cast<std::size_t>(j)] = static_cast<double>(logits(0, j));
    return out;
}

struct Prediction {
    int label = 0;
    double confidence = 0.0;
    std::array<double, kNumClasses> probs{};
};

template <typename T>
inline Prediction predict(const Model<T>& model, const ConstellationImage& img) {
    const auto logits = forward(model, img);
    Prediction p;
    double m = logits[0];
    for (int j = 1; j < kNumClasses; ++j)
        if (logits[static_cast<std::size_t>(j)] > m) {
            m = logits[static_cast<std::size_t>(j)];
            p.label = j;  // strict '>' keeps the smallest label on ties
        }
    double sum = 0.0;
    for (int j = 0; j < kNumClasses; ++j) {
        p.probs[static_cast<std::size_t>(j)] = std::exp(logits[static_cast<std::size_t>(j)] - m);
        sum += p.probs[static_cast<std::size_t>(j)];
    }
    for (auto& v : p.probs) v /= sum;
    p.confidence = p.probs[static_cast<std::size_t>(p.label)];
    return p;
}

struct Hyper {
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::size_t epochs = 30;
    double val_fraction = 0.1;   // carved from the training set for checkpoint selection
    std::uint64_t seed = 1;
    bool require_all_classes = true;
};

struct TrainReport {
    std::vector<double> train_loss;    // per epoch
    std::vector<double> val_accuracy;  // per epoch (empty if no validation split)
    std::size_t best_epoch = 0;
    double wall_seconds = 0.0;
};

namespace detail {

template <typename T>
inline nn::Tensor4<T> gather_batch(const io::Dataset& ds, std::span<const std::size_t> idx) {
    const std::size_t px = ds.pixels();
    nn::Tensor4<T> x(idx.size(), 1, ds.resolution, ds.resolution);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* src = ds.image(idx[i]);
        T* dst = x.v.data() + i * px;
        for (std::size_t p = 0; p < px; ++p) dst[p] = static_cast<T>(src[p]);
    }
    return x;
}

template <typename T>
inline double accuracy_on(const Model<T>& model, const io::Dataset& ds, std::span<const std::size_t> idx,
                          std::size_t batch_size = 64) {
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t at = 0; at < idx.size(); at += batch_size) {
        const std::size_t take = std::min(batch_size, idx.size() - at);
        const nn::Tensor4<T> x = gather_batch<T>(ds, idx.subspan(at, take));
        const nn::Mat<T> logits = model.forward_eval(x);
        for (std::size_t i = 0; i < take; ++i) {
            Eigen::Index arg = 0;
            T best = logits(static_cast<Eigen::Index>(i), 0);
            for (Eigen::Index j = 1; j < logits.cols(); ++j)
                if (logits(static_cast<Eigen::Index>(i), j) > best) {
                    best = logits(static_cast<Eigen::Index>(i), j);
                    arg = j;
                }
            if (arg == ds.labels[idx[at + i]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

template <typename T>
inline std::vector<std::vector<T>> snapshot_state(const Model<T>& model) {
    std::vector<std::vector<T>> out;
    for (const auto& p : model.params()) out.push_back(*p.value);
    for (const auto& b : model.buffers()) out.push_back(*b.value);
    return out;
}

template <typename T>
inline void restore_state(Model<T>& model, const std::vector<std::vector<T>>& state) {
    std::size_t i = 0;
    for (auto& p : model.params()) *p.value = state[i++];
    for (auto& b : model.buffers()) *b.value = state[i++];
}

} // namespace detail

// Minibatch training with a fixed shuffle stream per epoch. Returns the
// parameters from the epoch with the best validation accuracy (final epoch
// when no validation split is requested).
template <typename T = float>
inline std::pair<Model<T>, TrainReport> train(const io::Dataset& ds, const ModelConfig& mc, const Hyper& hp) {
    if (ds.count() == 0) throw std::invalid_argument("train: empty dataset");
    if (ds.resolution != mc.input_resolution)
        throw std::invalid_argument("train: dataset resolution does not match the model config");
    if (hp.require_all_classes) {
        std::array<std::size_t, kNumClasses> seen{};
        for (auto l : ds.labels) seen[l]++;
        for (int k = 0; k < kNumClasses; ++k)
            if (seen[static_cast<std::size_t>(k)] == 0)
                throw std::invalid_argument(std::string("train: dataset lacks class ") + label_name(k));
    }

    const auto t0 = std::chrono::steady_clock::now();
    Model<T> model(mc);
    nn::Adam<T> opt;
    opt.lr = hp.lr;

    std::vector<std::size_t> order(ds.count());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_base(hp.seed, 0x5487);
    {
        Rng r = shuffle_base.split(0);  // split stream: one fixed permutation
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[r.uniform_int(i)]);
    }
    const auto val_count = static_cast<std::size_t>(hp.val_fraction * static_cast<double>(ds.count()));
    std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(val_count), order.end());
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(val_count));
    if (train_idx.empty()) throw std::invalid_argument("train: validation split leaves no training data");

    TrainReport report;
    double best_acc = -1.0;
    std::vector<std::vector<T>> best_state;
    std::vector<int> labels;
    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        // Step schedule: the final third runs at a tenth of the step size.
        // The best-validation snapshot should come from a settled model, not
        // from a lucky bounce while the step size is still exploratory.
        opt.lr = hp.lr * (3 * epoch >= 2 * hp.epochs ? 0.1 : 1.0);
        Rng r = shuffle_base.split(epoch + 1);
        for (std::size_t i = train_idx.size(); i > 1; --i)
            std::swap(train_idx[i - 1], train_idx[r.uniform_int(i)]);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < train_idx.size(); at += hp.batch_size) {
            const std::size_t take = std::min(hp.batch_size, train_idx.size() - at);
            const std::span<const std::size_t> idx(train_idx.data() + at, take);
            const nn::Tensor4<T> x = detail::gather_batch<T>(ds, idx);
            labels.resize(take);
            for (std::size_t i = 0; i < take; ++i) labels[i] = ds.labels[idx[i]];
            model.zero_grads();
            loss_sum += static_cast<double>(model.loss_and_grad(x, labels));
            auto params = model.params();
            opt.step(params);
            ++batches;
        }
        report.train_loss.push_back(loss_sum / static_cast<double>(batches));

        if (!val_idx.empty()) {
            const double acc = detail::accuracy_on(model, ds, val_idx);
            report.val_accuracy.push_back(acc);
            if (acc > best_acc) {
                best_acc = acc;
                report.best_epoch = epoch;
                best_state = detail::snapshot_state(model);
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if (!best_state.empty()) detail::restore_state(model, best_state);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Checkpoints: "BSCP", u32 version, u32 config length, ModelConfig JSON, then
// for each parameter tensor and each buffer in declared order a u32 element
// count followed by that many little-endian float32 values.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'B', 'S', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
inline void save_model(const Model<T>& model, const std::filesystem::path& path) {
    auto out = io::detail::open_out(path);
    const std::string ctext = nlohmann::json(model.config()).dump();
    out.write(kCheckpointMagic, 4);
    io::detail::put_u32(out, kCheckpointVersion);
    io::detail::put_u32(out, static_cast<std::uint32_t>(ctext.size()));
    out.write(ctext.data(), static_cast<std::streamsize>(ctext.size()));
    auto dump = [&](const std::vector<T>& v) {
        io::detail::put_u32(out, static_cast<std::uint32_t>(v.size()));
        for (T x : v) io::detail::put_f32(out, static_cast<float>(x));
    };
    for (const auto& p : model.params()) dump(*p.value);
    for (const auto& b : model.buffers()) dump(*b.value);
}

template <typename T = float>
inline Model<T> load_model(const std::filesystem::path& path) {
    auto in = io::detail::open_in(path);
    io::detail::ByteReader r(in, path.string());
    char magic[4];
    r.read_exact(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(path.string() + ": bad checkpoint magic", 0);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version), 4);
    const std::uint32_t clen = r.u32();
    const std::uint64_t config_at = r.offset();
    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(r.bytes(clen)).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid config block (" + e.what() + ")", config_at);
    }
    Model<T> model(cfg);
    auto fill = [&](std::vector<T>& v, const std::string& name) {
        const std::uint64_t at = r.offset();
        const std::uint32_t count = r.u32();
        if (count != v.size())
            throw FormatError(path.string() + ": size mismatch for " + name + " (have " + std::to_string(count) +
                                  ", expect " + std::to_string(v.size()) + ")",
                              at);
        for (auto& x : v) x = static_cast<T>(r.f32());
    };
    for (auto& p : model.params()) fill(*p.value, p.name);
    for (auto& b : model.buffers()) fill(*b.value, b.name);
    if (!r.at_eof()) throw FormatError(path.string() + ": trailing bytes", r.offset());
    return model;
}

} // namespace blindscope
