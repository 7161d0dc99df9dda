#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blindscope/blindsync.hpp"
#include "blindscope/channel.hpp"
#include "blindscope/errors.hpp"
#include "blindscope/modulation.hpp"
#include "blindscope/numerics.hpp"
#include "blindscope/rng.hpp"
#include "blindscope/waveform.hpp"

namespace blindscope {

// Class codes. 0 and 1 mark the two imperfect CP framings; 2..7 name the
// modulation of a perfectly framed symbol.
inline constexpr int kNumClasses = 8;
inline constexpr int kLabelCpIn = 0;
inline constexpr int kLabelCpIncluded = 1;

inline int label_for_scheme(ModScheme s) {
    switch (s) {
        case ModScheme::QPSK: return 2;
        case ModScheme::BPSK: return 3;
        case ModScheme::QAM16: return 4;
        case ModScheme::QAM64: return 5;
        case ModScheme::QAM256: return 6;
        case ModScheme::QAM1024: return 7;
    }
    throw std::invalid_argument("label_for_scheme: unknown scheme");
}

inline ModScheme scheme_for_label(int label) {
    switch (label) {
        case 2: return ModScheme::QPSK;
        case 3: return ModScheme::BPSK;
        case 4: return ModScheme::QAM16;
        case 5: return ModScheme::QAM64;
        case 6: return ModScheme::QAM256;
        case 7: return ModScheme::QAM1024;
        default: throw std::invalid_argument("scheme_for_label: label " + std::to_string(label) + " is not a modulation class");
    }
}

inline const char* label_name(int label) {
    static constexpr const char* names[kNumClasses] = {"CP_in",  "CP_included", "QPSK",   "BPSK",
                                                       "16QAM",  "64QAM",       "256QAM", "1024QAM"};
    if (label < 0 || label >= kNumClasses) throw std::invalid_argument("label_name: label out of range");
    return names[label];
}

struct ConstellationImage {
    std::size_t resolution = 0;
    double axis_range = 0.0;
    std::vector<float> grid;  // row-major, resolution x resolution, values in [0, 1]
    int label = -1;           // -1 when unlabeled

    float at(std::size_t ix, std::size_t iy) const { return grid[iy * resolution + ix]; }
};

// Contiguous slice of the stream, one hypothesized symbol body long.
inline cvec extract_frame(std::span<const cplx> r, std::size_t start, std::size_t n) {
    if (n == 0 || start + n > r.size()) throw std::invalid_argument("extract_frame: slice out of range");
    return cvec(r.begin() + static_cast<std::ptrdiff_t>(start), r.begin() + static_cast<std::ptrdiff_t>(start + n));
}

// Forward transform scaled by 1/sqrt(N), the inverse of the generator's
// scaling, so a cleanly framed symbol lands back on its reference points.
inline cvec frame_to_points(std::span<const cplx> frame, std::size_t n) {
    if (frame.size() != n) throw std::invalid_argument("frame_to_points: frame length != N");
    cvec points = dft(frame);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (auto& p : points) p *= scale;
    return points;
}

// Blind fourth-power phase alignment. The channel and the uncompensated
// integer CFO leave a global rotation on the post-FFT points; square QAM
// grids and QPSK all have a negative-real fourth moment when axis-aligned,
// so rotating by minus a quarter of arg(-sum p^4) cancels that rotation up
// to the grid's own 90-degree symmetry. BPSK comes out on the diagonal,
// which is just as canonical. Smeared frames (CP scenarios, noise) get an
// arbitrary but deterministic rotation, which costs them nothing.
inline cvec align_constellation_phase(cvec points) {
    cplx m4{0.0, 0.0};
    for (const auto& p : points) {
        const cplx p2 = p * p;
        m4 += p2 * p2;
    }
    if (!(std::abs(m4) > 0.0)) return points;
    const cplx r = std::polar(1.0, -0.25 * std::arg(-m4));
    for (auto& p : points) p *= r;
    return points;
}

// Hit-count scatter plot on [-c, c]^2: real part maps to x, imaginary to y,
// points outside the box are dropped, and the counts are scaled by the image
// max. Density is kept (not thresholded to occupancy) since it is what
// separates the dense QAM orders at modest resolution.
inline ConstellationImage rasterize(std::span<const cplx> points, std::size_t resolution, double axis_range) {
    if (resolution < 16) throw std::invalid_argument("rasterize: resolution must be >= 16");
    if (!(axis_range > 0.0)) throw std::invalid_argument("rasterize: axis range must be positive");
    ConstellationImage img;
    img.resolution = resolution;
    img.axis_range = axis_range;
    img.grid.assign(resolution * resolution, 0.0f);
    const double c = axis_range;
    const double scale = static_cast<double>(resolution) / (2.0 * c);
    const auto res = static_cast<std::ptrdiff_t>(resolution);
    for (const auto& p : points) {
        const double re = p.real();
        const double im = p.imag();
        if (re < -c || re > c || im < -c || im > c) continue;
        auto ix = static_cast<std::ptrdiff_t>(std::floor((re + c) * scale));
        auto iy = static_cast<std::ptrdiff_t>(std::floor((im + c) * scale));
        ix = std::min(ix, res - 1);  // the closed upper edge belongs to the last bin
        iy = std::min(iy, res - 1);
        img.grid[static_cast<std::size_t>(iy) * resolution + static_cast<std::size_t>(ix)] += 1.0f;
    }
    const float peak = *std::max_element(img.grid.begin(), img.grid.end());
    if (peak > 0.0f)
        for (auto& v : img.grid) v /= peak;
    return img;
}

// Ranges a dataset is drawn from. A [lo, hi] pair with lo == hi pins the
// value. label_cycle fixes the class of record i to label_cycle[i mod size],
// which keeps class balance exact by construction.
struct DatasetSpec {
    std::size_t num_records = 8000;
    std::vector<std::size_t> n_values = {128, 256};
    double cp_fraction_min = kCpFractionMin;
    double cp_fraction_max = kCpFractionMax;
    double snr_db_min = 10.0;
    double snr_db_max = 25.0;
    double cfo_ppm_min = 100.0;
    double cfo_ppm_max = 500.0;
    double subcarrier_spacing_hz = 15e3;
    double carrier_hz = 2e9;
    std::size_t num_symbols = 6;
    std::size_t resolution = 128;
    double axis_range = 2.0;
    // Datasets default to flat fading (one Rayleigh tap: a random gain and
    // phase, which the SNR reference and the phase alignment both absorb).
    // The delay-spread profile exists to stress the synchronization stage;
    // the classifier carries no equalizer, so selective fading would smear
    // every dense QAM grid into rings no per-symbol model can undo. Streams
    // for sync tests opt back into the full profile explicitly.
    MultipathProfile profile{{0.0}, {0.0}};
    std::vector<int> label_cycle = {0, 1, 2, 3, 4, 5, 6, 7};

    void validate() const {
        if (num_records == 0) throw ConfigError("dataset.num_records", "must be >= 1");
        if (n_values.empty()) throw ConfigError("dataset.n_values", "must list at least one subcarrier count");
        for (std::size_t n : n_values) {
            bool known = false;
            for (std::size_t c : kSupportedSubcarrierCounts) known |= (c == n);
            if (!known) throw ConfigError("dataset.n_values", "unsupported subcarrier count " + std::to_string(n));
        }
        if (cp_fraction_min < kCpFractionMin || cp_fraction_max > kCpFractionMax || cp_fraction_min > cp_fraction_max)
            throw ConfigError("dataset.cp_fraction", "range must sit inside [0.06, 0.15]");
        if (snr_db_min > snr_db_max) throw ConfigError("dataset.snr_db", "min exceeds max");
        if (cfo_ppm_min > cfo_ppm_max) throw ConfigError("dataset.cfo_ppm", "min exceeds max");
        if (subcarrier_spacing_hz <= 0.0) throw ConfigError("dataset.subcarrier_spacing_hz", "must be positive");
        if (carrier_hz <= 0.0) throw ConfigError("dataset.carrier_hz", "must be positive");
        if (num_symbols < 3) throw ConfigError("dataset.num_symbols", "need at least 3 symbols per stream");
        if (resolution < 16) throw ConfigError("dataset.resolution", "must be >= 16");
        if (!(axis_range > 0.0)) throw ConfigError("dataset.axis_range", "must be positive");
        if (label_cycle.empty()) throw ConfigError("dataset.label_cycle", "must list at least one label");
        for (int l : label_cycle)
            if (l < 0 || l >= kNumClasses) throw ConfigError("dataset.label_cycle", "label out of range");
    }
};

// The image is taken from the second symbol of the stream so that every
// framing variant stays clear of the stream head.
inline constexpr std::size_t kFrameSymbol = 1;

namespace detail {

inline double draw_in(Rng& rng, double lo, double hi) { return hi > lo ? rng.uniform(lo, hi) : lo; }

} // namespace detail

struct StreamDraw {
    OfdmConfig cfg;
    ImpairmentConfig imp;
};

// Draws waveform and impairment parameters from the spec ranges in a fixed
// order, shared by record generation and capture generation.
inline StreamDraw draw_stream_params(const DatasetSpec& spec, Rng& rng) {
    StreamDraw d;
    d.cfg.n = spec.n_values[rng.uniform_int(spec.n_values.size())];
    d.cfg.subcarrier_spacing_hz = spec.subcarrier_spacing_hz;
    d.cfg.carrier_hz = spec.carrier_hz;
    d.cfg.num_symbols = spec.num_symbols;
    const double cp_frac = detail::draw_in(rng, spec.cp_fraction_min, spec.cp_fraction_max);
    d.cfg.cp_len = std::clamp(static_cast<std::size_t>(std::lround(cp_frac * static_cast<double>(d.cfg.n))),
                              d.cfg.cp_len_min(), d.cfg.cp_len_max());
    d.imp.cfo_ppm = detail::draw_in(rng, spec.cfo_ppm_min, spec.cfo_ppm_max);
    d.imp.phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    d.imp.snr_db = detail::draw_in(rng, spec.snr_db_min, spec.snr_db_max);
    d.imp.profile = spec.profile;
    return d;
}

// One labeled record. Every random draw comes from a substream keyed by the
// record index, so records are reproducible independently of generation order
// or worker count.
inline ConstellationImage make_record(const DatasetSpec& spec, std::size_t index, const Rng& base) {
    Rng rng = base.split(index);
    const int label = spec.label_cycle[index % spec.label_cycle.size()];

    const StreamDraw draw = draw_stream_params(spec, rng);
    const OfdmConfig& cfg = draw.cfg;

    std::vector<ModScheme> schemes(cfg.num_symbols);
    for (auto& s : schemes) s = kAllSchemes[rng.uniform_int(kAllSchemes.size())];
    if (label >= 2) schemes[kFrameSymbol] = scheme_for_label(label);

    const TxStream tx = generate_stream_with_schemes(cfg, schemes, rng);
    const ImpairedStream rx = impair(tx, draw.imp, rng);

    // Fractional CFO is measured by the real estimator and compensated; only
    // the framing (known here, blind in deployment) comes from the truth.
    const std::size_t tau = rx.truth.channel.tau;
    const double f_hat = estimate_frac_cfo(rx.samples, cfg.n, cfg.cp_len, tau, cfg.subcarrier_spacing_hz);
    const cvec comp = remove_cfo(rx.samples, f_hat, cfg.sample_rate_hz());

    const std::size_t body_start = tau + kFrameSymbol * cfg.symbol_len() + cfg.cp_len;
    std::size_t start = body_start;
    if (label == kLabelCpIn) {
        // Window head on the CP: the frame is this body circularly shifted,
        // so each amplitude level of the constellation smears into a ring.
        start = body_start - cfg.cp_len;
    } else if (label == kLabelCpIncluded) {
        // Window slid past the body far enough that the next symbol's whole
        // CP falls inside it: the frame mixes samples of two OFDM symbols.
        start = body_start + cfg.cp_len + rng.uniform_int(cfg.n - cfg.cp_len);
    }

    const cvec frame = extract_frame(comp, start, cfg.n);
    const cvec points = align_constellation_phase(frame_to_points(frame, cfg.n));
    ConstellationImage img = rasterize(points, spec.resolution, spec.axis_range);
    img.label = label;
    return img;
}

inline std::vector<ConstellationImage> make_dataset(const DatasetSpec& spec, const Rng& base) {
    spec.validate();
    std::vector<ConstellationImage> out;
    out.reserve(spec.num_records);
    for (std::size_t i = 0; i < spec.num_records; ++i) out.push_back(make_record(spec, i, base));
    return out;
}

} // namespace blindscope
