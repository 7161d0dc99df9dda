#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace blindscope {

// Not enough samples to run an estimator at the requested hypothesis.
class InsufficientDataError : public std::runtime_error {
public:
    explicit InsufficientDataError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or truncated on-disk artifact. Carries the byte offset at which
// parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t byte_offset)
        : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"),
          offset_(byte_offset) {}
    std::uint64_t byte_offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

// Configuration value out of range or inconsistent. Carries the offending
// field path so the CLI can name it.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& field, const std::string& what)
        : std::runtime_error("config field '" + field + "': " + what), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Correlation sweep found no OFDM structure in the capture.
class NoOfdmDetectedError : public std::runtime_error {
public:
    explicit NoOfdmDetectedError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace blindscope
