#include "thermogen/config.hpp"

#include <cfenv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace thermogen {

std::string Fnv1a64::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

long round_even(double x) {
    return std::lround(std::nearbyint(x));
}

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = value;
    }
    return cfg;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long KeyValueConfig::get_int(const std::string& key) const {
    try {
        return std::stol(get_string(key));
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key " + key + " is not an integer");
    }
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get_string(key));
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key " + key + " is not a number");
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    auto v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean");
}

void KeyValueConfig::apply_override(const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must be key=value: " + assignment);
    values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string KeyValueConfig::canonical() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
}

std::string KeyValueConfig::digest() const {
    Fnv1a64 h;
    h.update(canonical());
    return h.hex();
}

}  // namespace thermogen
