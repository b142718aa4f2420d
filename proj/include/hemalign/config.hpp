// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plain-text `key = value` configuration. Blank lines and lines starting with
// '#' are ignored. Keys are dotted, e.g. `synth.noise_sigma = 0.3`.

#ifndef HEMALIGN_CONFIG_HPP
#define HEMALIGN_CONFIG_HPP

#include <charconv>
#include <type_traits>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "hemalign/error.hpp"

namespace hemalign {

class KeyValues {
public:
    static KeyValues parse(const std::string& text) {
        KeyValues kv;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
            const std::string key = trim(t.substr(0, eq));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            kv.values_[key] = trim(t.substr(eq + 1));
        }
        return kv;
    }

    static KeyValues load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set(const std::string& key, double value) {
        std::ostringstream os;
        os.precision(17);
        os << value;
        values_[key] = os.str();
    }
    void set(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }
    void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void read(const std::string& key, double& out) const {
        if (auto s = find(key)) {
            try {
                std::size_t used = 0;
                out = std::stod(*s, &used);
                if (used != s->size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "': '" + *s + "' is not a number");
            }
        }
    }

    template <typename Int>
        requires std::is_integral_v<Int>
    void read(const std::string& key, Int& out) const {
        if (auto s = find(key)) {
            if constexpr (std::is_same_v<Int, bool>) {
                if (*s == "true" || *s == "1") out = true;
                else if (*s == "false" || *s == "0") out = false;
                else throw ConfigError("key '" + key + "': '" + *s + "' is not a boolean");
            } else {
                Int v{};
                auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
                if (ec != std::errc{} || p != s->data() + s->size())
                    throw ConfigError("key '" + key + "': '" + *s + "' is not an integer");
                out = v;
            }
        }
    }

    void read(const std::string& key, std::string& out) const {
        if (auto s = find(key)) out = *s;
    }

    /// Keys present here but not in `known`.
    std::set<std::string> unknown_keys(const std::set<std::string>& known) const {
        std::set<std::string> out;
        for (const auto& [k, _] : values_)
            if (!known.count(k)) out.insert(k);
        return out;
    }

    std::string to_string() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    const std::map<std::string, std::string>& entries() const noexcept { return values_; }

private:
    const std::string* find(const std::string& key) const {
        auto it = values_.find(key);
        return it == values_.end() ? nullptr : &it->second;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

} // namespace hemalign

#endif // HEMALIGN_CONFIG_HPP
