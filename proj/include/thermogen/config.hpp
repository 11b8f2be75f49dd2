#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thermogen/common.hpp"

namespace thermogen {

/// Flat key-value experiment configuration. One `key = value` pair per line,
/// `#` starts a comment, keys may use dots for grouping (`gan.base_channels`).
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Applies a `key=value` override string (CLI `--set`).
    void apply_override(const std::string& assignment);

    /// Canonical text form: sorted keys, one per line.
    std::string canonical() const;

    /// Digest of the canonical form; embedded in every artifact.
    std::string digest() const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace thermogen
