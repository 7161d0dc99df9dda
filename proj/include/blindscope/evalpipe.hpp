#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindscope/blindsync.hpp"
#include "blindscope/classifier.hpp"
#include "blindscope/errors.hpp"
#include "blindscope/featurize.hpp"
#include "blindscope/numerics.hpp"

namespace blindscope {

struct SymbolDecision {
    std::size_t symbol_index = 0;
    std::size_t frame_start = 0;
    int label = 0;             // 0..7
    double confidence = 0.0;
    bool resolved = false;     // true when a modulation label (2..7) won
    int truth_label = -1;      // filled by scoring only, never by the pipeline
};

struct PipelineConfig {
    double bandwidth_hz = 0.0;  // the monitored bandwidth, i.e. the capture sample rate
    std::vector<std::size_t> candidates{kSupportedSubcarrierCounts.begin(), kSupportedSubcarrierCounts.end()};
    double axis_range = 2.0;
    double detection_floor = kOfdmDetectionFloor;
};

struct PipelineResult {
    SyncEstimate sync;
    std::vector<SymbolDecision> decisions;
};

// The blind receiver: sync, compensate the fractional CFO, then walk the
// stream symbol by symbol. Each symbol gets nine candidate frame starts
// spanning [base + Ncp/2, base + 3*Ncp/2]; every candidate is rasterized and
// classified, and the most confident modulation verdict (labels 2..7) wins.
// Candidates flagged as CP errors (labels 0/1) act as rejections; if nothing
// else is on offer the symbol is reported unresolved with the best of those.
// The winning candidate's offset re-centers the next symbol's base.
template <typename T>
inline PipelineResult run_blind_pipeline(std::span<const cplx> r, const Model<T>& model,
                                         const PipelineConfig& pc) {
    if (pc.bandwidth_hz <= 0.0) throw std::invalid_argument("run_blind_pipeline: bandwidth must be positive");
    PipelineResult res;
    res.sync = run_blind_sync(r, pc.candidates, pc.bandwidth_hz);
    if (res.sync.peak_score < pc.detection_floor)
        throw NoOfdmDetectedError("no OFDM structure found: peak score " + std::to_string(res.sync.peak_score) +
                                  " below floor " + std::to_string(pc.detection_floor));

    const cvec comp = remove_cfo(r, res.sync.f_frac_hat, pc.bandwidth_hz);
    const std::size_t n = res.sync.n_hat;
    const std::size_t ncp = res.sync.ncp_hat;
    const std::size_t period = n + ncp;
    const std::size_t stride = std::max<std::size_t>(1, ncp / 8);
    const std::size_t resolution = model.config().input_resolution;
    constexpr std::size_t kCandidates = 9;

    std::size_t base = res.sync.shift_hat;
    for (std::size_t sym = 0;; ++sym) {
        std::vector<std::size_t> starts;
        starts.reserve(kCandidates);
        for (std::size_t i = 0; i < kCandidates; ++i) {
            const std::size_t start = base + ncp / 2 + i * stride;
            if (start + n <= comp.size()) starts.push_back(start);
        }
        if (starts.empty() || base + ncp + n > comp.size()) break;  // nominal frame must fit

        // One batched forward over all candidates keeps the decision
        // independent of evaluation order.
        nn::Tensor4<T> batch(starts.size(), 1, resolution, resolution);
        for (std::size_t i = 0; i < starts.size(); ++i) {
            const cvec frame = extract_frame(comp, starts[i], n);
            const cvec points = align_constellation_phase(frame_to_points(frame, n));
            const ConstellationImage img = rasterize(points, resolution, pc.axis_range);
            for (std::size_t p = 0; p < img.grid.size(); ++p)
                batch.v[i * img.grid.size() + p] = static_cast<T>(img.grid[p]);
        }
        const nn::Mat<T> probs = nn::softmax_rows(model.forward_eval(batch));

        SymbolDecision best_mod, best_any;
        best_mod.confidence = -1.0;
        best_any.confidence = -1.0;
        for (std::size_t i = 0; i < starts.size(); ++i) {
            int arg = 0;
            double conf = static_cast<double>(probs(static_cast<Eigen::Index>(i), 0));
            for (int j = 1; j < kNumClasses; ++j) {
                const auto pj = static_cast<double>(probs(static_cast<Eigen::Index>(i), j));
                if (pj > conf) {
                    conf = pj;
                    arg = j;
                }
            }
            SymbolDecision d{sym, starts[i], arg, conf, arg >= 2, -1};
            if (d.resolved && d.confidence > best_mod.confidence) best_mod = d;
            if (d.confidence > best_any.confidence) best_any = d;
        }

        if (best_mod.confidence >= 0.0) {
            res.decisions.push_back(best_mod);
            base = best_mod.frame_start + n;  // chosen offset corrects the next base
        } else {
            res.decisions.push_back(best_any);
            base += period;
        }
    }
    return res;
}

struct ConfusionMatrix {
    std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};

    void add(int truth, int pred) {
        if (truth < 0 || truth >= kNumClasses || pred < 0 || pred >= kNumClasses)
            throw std::invalid_argument("ConfusionMatrix: label out of range");
        counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)]++;
    }

    std::size_t row_count(int truth) const {
        std::size_t s = 0;
        for (std::size_t p = 0; p < kNumClasses; ++p) s += counts[static_cast<std::size_t>(truth)][p];
        return s;
    }

    // Row-normalized percentages; empty rows stay all-zero.
    std::array<std::array<double, kNumClasses>, kNumClasses> percentages() const {
        std::array<std::array<double, kNumClasses>, kNumClasses> out{};
        for (int t = 0; t < kNumClasses; ++t) {
            const auto total = row_count(t);
            if (total == 0) continue;
            for (std::size_t p = 0; p < kNumClasses; ++p)
                out[static_cast<std::size_t>(t)][p] =
                    100.0 * static_cast<double>(counts[static_cast<std::size_t>(t)][p]) / static_cast<double>(total);
        }
        return out;
    }

    double class_accuracy(int truth) const {
        const auto total = row_count(truth);
        if (total == 0) return 0.0;
        const auto t = static_cast<std::size_t>(truth);
        return static_cast<double>(counts[t][t]) / static_cast<double>(total);
    }

    // Macro average over the rows that have any mass, optionally restricted
    // to the modulation labels 2..7.
    double mean_class_accuracy(bool modulation_only = false) const {
        double sum = 0.0;
        std::size_t rows = 0;
        for (int t = modulation_only ? 2 : 0; t < kNumClasses; ++t) {
            if (row_count(t) == 0) continue;
            sum += class_accuracy(t);
            ++rows;
        }
        return rows == 0 ? 0.0 : sum / static_cast<double>(rows);
    }
};

inline ConfusionMatrix score(std::span<SymbolDecision> decisions, std::span<const int> truth_labels) {
    if (decisions.size() != truth_labels.size())
        throw std::invalid_argument("score: decision/truth length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        decisions[i].truth_label = truth_labels[i];
        cm.add(truth_labels[i], decisions[i].label);
    }
    return cm;
}

// ---------------------------------------------------------------------------
// Accuracy sweeps over one axis, with everything else pinned by a DatasetSpec.
// Records are generated and labeled the same way training data is, then
// classified directly; this mirrors the accuracy-versus-SNR and
// accuracy-versus-N figures.
// ---------------------------------------------------------------------------

enum class SweepAxis { SnrDb, NumSubcarriers };

struct SweepPoint {
    double axis_value = 0.0;
    std::array<double, kNumClasses> class_accuracy{};
    std::array<std::size_t, kNumClasses> class_count{};
    double mean_accuracy = 0.0;             // macro over all 8 classes
    double mean_modulation_accuracy = 0.0;  // macro over labels 2..7
    ConfusionMatrix confusion;
};

template <typename T>
inline SweepPoint evaluate_point(const DatasetSpec& spec, const Model<T>& model, const Rng& rng,
                                 double axis_value) {
    SweepPoint pt;
    pt.axis_value = axis_value;
    constexpr std::size_t kEvalBatch = 64;
    std::vector<ConstellationImage> pending;
    std::vector<int> labels;
    pending.reserve(kEvalBatch);
    const std::size_t resolution = model.config().input_resolution;
    auto flush = [&]() {
        if (pending.empty()) return;
        nn::Tensor4<T> batch(pending.size(), 1, resolution, resolution);
        for (std::size_t i = 0; i < pending.size(); ++i)
            for (std::size_t p = 0; p < pending[i].grid.size(); ++p)
                batch.v[i * pending[i].grid.size() + p] = static_cast<T>(pending[i].grid[p]);
        const nn::Mat<T> logits = model.forward_eval(batch);
        for (std::size_t i = 0; i < pending.size(); ++i) {
            int arg = 0;
            T best = logits(static_cast<Eigen::Index>(i), 0);
            for (int j = 1; j < kNumClasses; ++j)
                if (logits(static_cast<Eigen::Index>(i), j) > best) {
                    best = logits(static_cast<Eigen::Index>(i), j);
                    arg = j;
                }
            pt.confusion.add(labels[i], arg);
        }
        pending.clear();
        labels.clear();
    };
    for (std::size_t i = 0; i < spec.num_records; ++i) {
        ConstellationImage img = make_record(spec, i, rng);
        labels.push_back(img.label);
        pending.push_back(std::move(img));
        if (pending.size() == kEvalBatch) flush();
    }
    flush();
    for (int k = 0; k < kNumClasses; ++k) {
        pt.class_accuracy[static_cast<std::size_t>(k)] = pt.confusion.class_accuracy(k);
        pt.class_count[static_cast<std::size_t>(k)] = pt.confusion.row_count(k);
    }
    pt.mean_accuracy = pt.confusion.mean_class_accuracy(false);
    pt.mean_modulation_accuracy = pt.confusion.mean_class_accuracy(true);
    return pt;
}

template <typename T>
inline std::vector<SweepPoint> sweep(SweepAxis axis, std::span<const double> values, const DatasetSpec& base,
                                     const Model<T>& model, const Rng& rng) {
    std::vector<SweepPoint> out;
    out.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        DatasetSpec spec = base;
        if (axis == SweepAxis::SnrDb) {
            spec.snr_db_min = spec.snr_db_max = values[i];
        } else {
            spec.n_values = {static_cast<std::size_t>(values[i])};
        }
        out.push_back(evaluate_point(spec, model, rng.split(0x57EE9 + i), values[i]));
    }
    return out;
}

inline const char* sweep_axis_name(SweepAxis axis) {
    return axis == SweepAxis::SnrDb ? "snr_db" : "num_subcarriers";
}

inline void write_sweep_csv(const std::filesystem::path& path, SweepAxis axis,
                            std::span<const SweepPoint> points) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string(), 0);
    out << sweep_axis_name(axis) << ",class,accuracy\n";
    for (const auto& pt : points) {
        for (int k = 0; k < kNumClasses; ++k)
            out << pt.axis_value << ',' << label_name(k) << ','
                << pt.class_accuracy[static_cast<std::size_t>(k)] << '\n';
        out << pt.axis_value << ",mean," << pt.mean_accuracy << '\n';
        out << pt.axis_value << ",mean_modulation," << pt.mean_modulation_accuracy << '\n';
    }
}

inline nlohmann::json confusion_to_json(const ConfusionMatrix& cm) {
    nlohmann::json j;
    auto& names = j["labels"] = nlohmann::json::array();
    for (int k = 0; k < kNumClasses; ++k) names.push_back(label_name(k));
    auto& counts = j["counts"] = nlohmann::json::array();
    for (const auto& row : cm.counts) counts.push_back(row);
    const auto pct = cm.percentages();
    auto& rp = j["row_percent"] = nlohmann::json::array();
    for (const auto& row : pct) rp.push_back(row);
    return j;
}

inline void write_confusion_json(const std::filesystem::path& path, const ConfusionMatrix& cm) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string(), 0);
    out << confusion_to_json(cm).dump(2) << '\n';
}

} // namespace blindscope
