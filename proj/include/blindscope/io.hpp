#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindscope/channel.hpp"
#include "blindscope/errors.hpp"
#include "blindscope/featurize.hpp"
#include "blindscope/waveform.hpp"

namespace blindscope::io {

namespace detail {

// Little-endian byte access, independent of host order.
inline void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

// Tracks how far into the file we are so failures can name the byte.
class ByteReader {
public:
    ByteReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

    std::uint64_t offset() const { return offset_; }

    void read_exact(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError(name_ + ": truncated read of " + std::to_string(n) + " bytes", offset_);
        offset_ += n;
    }

    std::uint32_t u32() {
        std::array<unsigned char, 4> b{};
        read_exact(b.data(), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        read_exact(s.data(), n);
        return s;
    }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    std::istream& in_;
    std::string name_;
    std::uint64_t offset_ = 0;
};

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string(), 0);
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open for reading: " + path.string(), 0);
    return in;
}

// Infinity is not valid JSON; the sidecar stores a noiseless stream as null.
inline nlohmann::json snr_to_json(double snr_db) {
    if (std::isinf(snr_db) && snr_db > 0.0) return nullptr;
    return snr_db;
}

inline double snr_from_json(const nlohmann::json& j) {
    if (j.is_null()) return kNoiselessSnrDb;
    return j.get<double>();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Capture files: "BSIQ", u32 version, u32 header length, UTF-8 JSON header,
// then interleaved little-endian float32 I/Q pairs to end of file.
// ---------------------------------------------------------------------------

inline constexpr char kCaptureMagic[4] = {'B', 'S', 'I', 'Q'};
inline constexpr std::uint32_t kCaptureVersion = 1;

struct Capture {
    double sample_rate_hz = 0.0;
    cvec samples;
    nlohmann::json header;
};

inline void write_capture_samples(std::ostream& out, const nlohmann::json& header, const cvec& samples) {
    const std::string htext = header.dump();
    out.write(kCaptureMagic, 4);
    detail::put_u32(out, kCaptureVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(htext.size()));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& s : samples) {
        detail::put_f32(out, static_cast<float>(s.real()));
        detail::put_f32(out, static_cast<float>(s.imag()));
    }
}

// Transmit-side capture: the header carries the full waveform description.
inline void write_capture(const std::filesystem::path& path, const TxStream& tx) {
    nlohmann::json h;
    h["kind"] = "tx";
    h["n"] = tx.cfg.n;
    h["cp_len"] = tx.cfg.cp_len;
    h["subcarrier_spacing_hz"] = tx.cfg.subcarrier_spacing_hz;
    h["carrier_hz"] = tx.cfg.carrier_hz;
    h["num_symbols"] = tx.cfg.num_symbols;
    auto& schemes = h["schemes"] = nlohmann::json::array();
    for (ModScheme s : tx.per_symbol_mod) schemes.push_back(mod_name(s));
    auto out = detail::open_out(path);
    write_capture_samples(out, h, tx.samples);
}

inline nlohmann::json truth_to_json(const StreamTruth& t) {
    nlohmann::json j;
    j["n"] = t.cfg.n;
    j["cp_len"] = t.cfg.cp_len;
    j["subcarrier_spacing_hz"] = t.cfg.subcarrier_spacing_hz;
    j["carrier_hz"] = t.cfg.carrier_hz;
    j["num_symbols"] = t.cfg.num_symbols;
    auto& schemes = j["schemes"] = nlohmann::json::array();
    for (ModScheme s : t.per_symbol_mod) schemes.push_back(mod_name(s));
    auto& taps = j["channel"]["taps"] = nlohmann::json::array();
    for (const auto& h : t.channel.taps) taps.push_back({h.real(), h.imag()});
    j["channel"]["tap_delays"] = t.channel.tap_delays;
    j["channel"]["tau"] = t.channel.tau;
    j["f_int_hz"] = t.f_int_hz;
    j["f_frac_hz"] = t.f_frac_hz;
    j["phi"] = t.phi;
    j["snr_db"] = detail::snr_to_json(t.snr_db);
    return j;
}

inline StreamTruth truth_from_json(const nlohmann::json& j) {
    StreamTruth t;
    t.cfg.n = j.at("n").get<std::size_t>();
    t.cfg.cp_len = j.at("cp_len").get<std::size_t>();
    t.cfg.subcarrier_spacing_hz = j.at("subcarrier_spacing_hz").get<double>();
    t.cfg.carrier_hz = j.at("carrier_hz").get<double>();
    t.cfg.num_symbols = j.at("num_symbols").get<std::size_t>();
    for (const auto& s : j.at("schemes")) t.per_symbol_mod.push_back(mod_from_name(s.get<std::string>()));
    for (const auto& h : j.at("channel").at("taps")) t.channel.taps.emplace_back(h.at(0).get<double>(), h.at(1).get<double>());
    t.channel.tap_delays = j.at("channel").at("tap_delays").get<std::vector<std::size_t>>();
    t.channel.tau = j.at("channel").at("tau").get<std::size_t>();
    t.f_int_hz = j.at("f_int_hz").get<double>();
    t.f_frac_hz = j.at("f_frac_hz").get<double>();
    t.phi = j.at("phi").get<double>();
    t.snr_db = detail::snr_from_json(j.at("snr_db"));
    return t;
}

inline std::filesystem::path truth_sidecar_path(const std::filesystem::path& capture_path) {
    return std::filesystem::path(capture_path.string() + ".truth.json");
}

// Received-side capture. The embedded header is deliberately limited to what
// a receiver can know (sample rate and length); everything the generator knew
// goes to the sidecar file, which blind code paths never open.
inline void write_capture(const std::filesystem::path& path, const ImpairedStream& rx) {
    nlohmann::json h;
    h["kind"] = "rx";
    h["sample_rate_hz"] = rx.truth.cfg.sample_rate_hz();
    h["num_samples"] = rx.samples.size();
    {
        auto out = detail::open_out(path);
        write_capture_samples(out, h, rx.samples);
    }
    auto side = detail::open_out(truth_sidecar_path(path));
    side << truth_to_json(rx.truth).dump(2) << '\n';
}

inline Capture read_capture(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    detail::ByteReader r(in, path.string());
    char magic[4];
    r.read_exact(magic, 4);
    if (std::memcmp(magic, kCaptureMagic, 4) != 0) throw FormatError(path.string() + ": bad magic", 0);
    const std::uint32_t version = r.u32();
    if (version != kCaptureVersion)
        throw FormatError(path.string() + ": unsupported capture version " + std::to_string(version), 4);
    const std::uint32_t hlen = r.u32();
    const std::uint64_t header_at = r.offset();
    const std::string htext = r.bytes(hlen);

    Capture cap;
    try {
        cap.header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": header is not valid JSON (" + e.what() + ")", header_at);
    }
    if (cap.header.contains("sample_rate_hz"))
        cap.sample_rate_hz = cap.header["sample_rate_hz"].get<double>();
    else if (cap.header.contains("n") && cap.header.contains("subcarrier_spacing_hz"))
        cap.sample_rate_hz = cap.header["n"].get<double>() * cap.header["subcarrier_spacing_hz"].get<double>();
    else
        throw FormatError(path.string() + ": header lacks a sample rate", header_at);

    while (!r.at_eof()) {
        const float re = r.f32();
        const float im = r.f32();
        cap.samples.emplace_back(re, im);
    }
    return cap;
}

inline StreamTruth read_truth_sidecar(const std::filesystem::path& capture_path) {
    auto in = detail::open_in(truth_sidecar_path(capture_path));
    nlohmann::json j;
    in >> j;
    return truth_from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.json describing shape and provenance,
// images.bin holding count * resolution^2 row-major little-endian float32
// values, labels.bin holding one byte per record.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
    std::size_t resolution = 0;
    double axis_range = 0.0;
    std::vector<float> images;         // count * resolution * resolution
    std::vector<std::uint8_t> labels;  // count
    nlohmann::json manifest;

    std::size_t count() const { return labels.size(); }
    std::size_t pixels() const { return resolution * resolution; }
    const float* image(std::size_t i) const { return images.data() + i * pixels(); }
};

// Streams records to disk as they are produced; call finalize() exactly once.
class DatasetWriter {
public:
    DatasetWriter(const std::filesystem::path& dir, std::size_t resolution, double axis_range)
        : dir_(dir), resolution_(resolution), axis_range_(axis_range) {
        std::filesystem::create_directories(dir);
        images_ = detail::open_out(dir / "images.bin");
    }

    void append(const ConstellationImage& img) {
        if (img.resolution != resolution_)
            throw std::invalid_argument("DatasetWriter: image resolution mismatch");
        if (img.label < 0 || img.label >= kNumClasses)
            throw std::invalid_argument("DatasetWriter: image carries no valid label");
        buf_.resize(img.grid.size() * 4);
        for (std::size_t i = 0; i < img.grid.size(); ++i) {
            const auto v = std::bit_cast<std::uint32_t>(img.grid[i]);
            buf_[i * 4 + 0] = static_cast<unsigned char>(v);
            buf_[i * 4 + 1] = static_cast<unsigned char>(v >> 8);
            buf_[i * 4 + 2] = static_cast<unsigned char>(v >> 16);
            buf_[i * 4 + 3] = static_cast<unsigned char>(v >> 24);
        }
        images_.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        labels_.push_back(static_cast<std::uint8_t>(img.label));
    }

    void finalize(nlohmann::json extra = {}) {
        images_.close();
        {
            auto out = detail::open_out(dir_ / "labels.bin");
            out.write(reinterpret_cast<const char*>(labels_.data()), static_cast<std::streamsize>(labels_.size()));
        }
        nlohmann::json m = std::move(extra);
        m["format_version"] = kDatasetVersion;
        m["resolution"] = resolution_;
        m["axis_range"] = axis_range_;
        m["count"] = labels_.size();
        std::vector<std::size_t> counts(kNumClasses, 0);
        for (std::uint8_t l : labels_) counts[l]++;
        m["label_counts"] = counts;
        auto out = detail::open_out(dir_ / "manifest.json");
        out << m.dump(2) << '\n';
    }

private:
    std::filesystem::path dir_;
    std::size_t resolution_;
    double axis_range_;
    std::ofstream images_;
    std::vector<std::uint8_t> labels_;
    std::vector<unsigned char> buf_;
};

inline void write_dataset(const std::filesystem::path& dir, const std::vector<ConstellationImage>& records,
                          nlohmann::json extra = {}) {
    if (records.empty()) throw std::invalid_argument("write_dataset: no records");
    DatasetWriter w(dir, records.front().resolution, records.front().axis_range);
    for (const auto& r : records) w.append(r);
    w.finalize(std::move(extra));
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    {
        auto in = detail::open_in(dir / "manifest.json");
        try {
            in >> ds.manifest;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError((dir / "manifest.json").string() + ": invalid JSON (" + std::string(e.what()) + ")", 0);
        }
    }
    if (ds.manifest.value("format_version", 0u) != kDatasetVersion)
        throw FormatError((dir / "manifest.json").string() + ": unsupported dataset version", 0);
    ds.resolution = ds.manifest.at("resolution").get<std::size_t>();
    ds.axis_range = ds.manifest.at("axis_range").get<double>();
    const auto count = ds.manifest.at("count").get<std::size_t>();

    {
        auto in = detail::open_in(dir / "labels.bin");
        detail::ByteReader r(in, (dir / "labels.bin").string());
        ds.labels.resize(count);
        if (count > 0) r.read_exact(ds.labels.data(), count);
        if (!r.at_eof()) throw FormatError((dir / "labels.bin").string() + ": trailing bytes", r.offset());
        for (std::size_t i = 0; i < count; ++i)
            if (ds.labels[i] >= kNumClasses)
                throw FormatError((dir / "labels.bin").string() + ": label out of range", i);
    }
    {
        auto in = detail::open_in(dir / "images.bin");
        detail::ByteReader r(in, (dir / "images.bin").string());
        const std::size_t total = count * ds.resolution * ds.resolution;
        std::vector<unsigned char> raw(total * 4);
        if (total > 0) r.read_exact(raw.data(), raw.size());
        if (!r.at_eof()) throw FormatError((dir / "images.bin").string() + ": trailing bytes", r.offset());
        ds.images.resize(total);
        for (std::size_t i = 0; i < total; ++i) {
            const std::uint32_t v = static_cast<std::uint32_t>(raw[i * 4 + 0]) |
                                    (static_cast<std::uint32_t>(raw[i * 4 + 1]) << 8) |
                                    (static_cast<std::uint32_t>(raw[i * 4 + 2]) << 16) |
                                    (static_cast<std::uint32_t>(raw[i * 4 + 3]) << 24);
            ds.images[i] = std::bit_cast<float>(v);
        }
    }
    return ds;
}

} // namespace blindscope::io
