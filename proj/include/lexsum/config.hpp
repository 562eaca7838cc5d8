#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "lexsum/errors.hpp"

namespace lexsum {

// Flat key=value settings with dotted key names. File values load first;
// command-line overrides land on top through set().
class Config {
  public:
    Config() = default;

    static Config from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_string(buf.str(), path);
    }

    static Config from_string(const std::string& text,
                              const std::string& origin = "config") {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string stripped = trim(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const std::size_t eq = stripped.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + " line " + std::to_string(line_no) +
                                  ": expected key=value");
            }
            const std::string key = trim(stripped.substr(0, eq));
            if (key.empty()) {
                throw ConfigError(origin + " line " + std::to_string(line_no) +
                                  ": empty key");
            }
            cfg.values_[key] = trim(stripped.substr(eq + 1));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key,
                           const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trail");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": invalid number '" +
                              it->second + "'");
        }
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(it->second, &used);
            if (used != it->second.size() || v < 0) {
                throw std::invalid_argument("neg");
            }
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": invalid count '" +
                              it->second + "'");
        }
    }

    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trail");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": invalid seed '" +
                              it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "on") {
            return true;
        }
        if (it->second == "false" || it->second == "0" || it->second == "off") {
            return false;
        }
        throw ConfigError("config key " + key + ": invalid flag '" + it->second +
                          "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    static std::string trim(const std::string& s) {
        std::size_t b = 0;
        std::size_t e = s.size();
        while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
        while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
        return s.substr(b, e - b);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace lexsum
