#pragma once

// Flat `key = value` run configuration checked against a schema.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"

namespace hrf {

enum class ValueType { integer, real, text, list };

struct ConfigKey {
    std::string name;
    ValueType type = ValueType::text;
    std::optional<std::string> fallback;  // absent = required
    std::vector<std::string> choices;     // empty = any
    std::string help;
};

class ConfigSchema {
public:
    ConfigSchema& add(ConfigKey k) {
        keys_.push_back(std::move(k));
        return *this;
    }
    const ConfigKey* find(const std::string& name) const {
        for (const auto& k : keys_)
            if (k.name == name) return &k;
        return nullptr;
    }
    const std::vector<ConfigKey>& keys() const { return keys_; }

private:
    std::vector<ConfigKey> keys_;
};

namespace detail {

inline void check_value(const ConfigKey& k, const std::string& v) {
    auto bad = [&](const std::string& why) { throw InputError("config key '" + k.name + "': " + why); };
    switch (k.type) {
        case ValueType::integer:
            try {
                csv::parse_int<std::int64_t>(v);
            } catch (const Error&) {
                bad("expected an integer, got '" + v + "'");
            }
            break;
        case ValueType::real:
            try {
                csv::parse_double(v);
            } catch (const Error&) {
                bad("expected a number, got '" + v + "'");
            }
            break;
        case ValueType::list:
            for (const auto& item : csv::split(v)) {
                try {
                    csv::parse_int<std::int64_t>(csv::trim(item));
                } catch (const Error&) {
                    bad("expected a comma-separated integer list, got '" + v + "'");
                }
            }
            break;
        case ValueType::text: break;
    }
    if (!k.choices.empty() && std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
        std::string all;
        for (const auto& c : k.choices) all += (all.empty() ? "" : ", ") + c;
        bad("'" + v + "' is not one of {" + all + "}");
    }
}

}  // namespace detail

class Config {
public:
    explicit Config(const ConfigSchema& schema) : schema_(&schema) {}

    /// Parses `key = value` lines; `#` starts a comment. Unknown and repeated
    /// keys are errors.
    void parse(std::istream& in, const std::string& source = "<config>") {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const auto text = csv::trim(line);
            if (text.empty()) continue;
            const auto eq = text.find('=');
            if (eq == std::string::npos)
                throw InputError(source + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key(csv::trim(text.substr(0, eq)));
            const std::string value(csv::trim(text.substr(eq + 1)));
            if (seen_.count(key)) throw InputError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            seen_.insert({key, lineno});
            set(key, value);
        }
    }

    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InputError("cannot read config " + path);
        parse(in, path);
    }

    /// Sets one key (command-line overrides use this too).
    void set(const std::string& key, const std::string& value) {
        const auto* k = schema_->find(key);
        if (!k) throw InputError("unknown config key '" + key + "'");
        detail::check_value(*k, value);
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) || (schema_->find(key) && schema_->find(key)->fallback); }

    /// Throws naming the first required key without a value.
    void require_complete() const {
        for (const auto& k : schema_->keys())
            if (!k.fallback && !values_.count(k.name)) throw InputError("missing required config key '" + k.name + "'");
    }

    const std::string& raw(const std::string& key) const {
        const auto* k = schema_->find(key);
        if (!k) throw InputError("unknown config key '" + key + "'");
        if (auto it = values_.find(key); it != values_.end()) return it->second;
        if (k->fallback) return *k->fallback;
        throw InputError("missing required config key '" + key + "'");
    }

    std::string text(const std::string& key) const { return raw(key); }
    double real(const std::string& key) const { return csv::parse_double(raw(key)); }
    std::int64_t integer(const std::string& key) const { return csv::parse_int<std::int64_t>(raw(key)); }

    std::size_t count(const std::string& key) const {
        const auto v = integer(key);
        if (v < 0) throw InputError("config key '" + key + "' must be non-negative");
        return static_cast<std::size_t>(v);
    }

    std::vector<std::size_t> sizes(const std::string& key) const {
        std::vector<std::size_t> out;
        for (const auto& item : csv::split(raw(key))) {
            const auto v = csv::parse_int<std::int64_t>(csv::trim(item));
            if (v <= 0) throw InputError("config key '" + key + "' needs positive entries");
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    }

    /// Every schema key with its resolved value, sorted by name.
    void write_lock(std::ostream& out) const {
        std::vector<std::string> names;
        for (const auto& k : schema_->keys()) names.push_back(k.name);
        std::sort(names.begin(), names.end());
        for (const auto& n : names) {
            const auto* k = schema_->find(n);
            if (values_.count(n) || k->fallback) out << n << " = " << raw(n) << '\n';
        }
    }

private:
    const ConfigSchema* schema_;
    std::map<std::string, std::string> values_;
    std::map<std::string, std::size_t> seen_;
};

}  // namespace hrf
