#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "atme/common.hpp"

namespace atme {

// Flat dotted-key configuration document ("a.b = value" per line, '#'
// comments). Kept as strings until typed access so the on-disk form, the
// manifest snapshot, and CLI overrides share one representation.
class ConfigDoc {
  public:
    static ConfigDoc parse_string(const std::string& text, const std::string& origin = "<string>") {
        ConfigDoc doc;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + trimmed + "'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            doc.values_[key] = value;
        }
        return doc;
    }

    static ConfigDoc parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::ostringstream buf;
        buf << f.rdbuf();
        return parse_string(buf.str(), path);
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    size_t size() const { return values_.size(); }
    const std::map<std::string, std::string>& entries() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    int get_int(const std::string& key, int fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_number<int>(key, it->second);
    }

    int64_t get_int64(const std::string& key, int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_number<int64_t>(key, it->second);
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_number<double>(key, it->second);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<int> out;
        std::istringstream is(it->second);
        std::string item;
        while (std::getline(is, item, ',')) {
            const std::string t = trim(item);
            if (t.empty())
                throw ConfigError("config key '" + key + "': empty list element in '" +
                                  it->second + "'");
            out.push_back(parse_number<int>(key, t));
        }
        return out;
    }

    // Canonical sorted "key = value" rendering for manifests and hashing.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    template <typename N>
    static N parse_number(const std::string& key, const std::string& v) {
        std::istringstream is(v);
        N out;
        is >> out;
        if (is.fail() || !is.eof())
            throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as number");
        return out;
    }

    std::map<std::string, std::string> values_;
};

inline int levenshtein(const std::string& a, const std::string& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = int(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = int(i);
        for (size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Rejects unknown keys outright; a typo'd key gets its nearest known key as a
// suggestion plus the full valid-key list, so the failure is actionable.
inline void validate_config_keys(const ConfigDoc& doc, const std::vector<std::string>& known) {
    for (const auto& [key, value] : doc.entries()) {
        if (std::find(known.begin(), known.end(), key) != known.end()) continue;
        std::string best;
        int best_d = 1 << 30;
        for (const auto& k : known) {
            const int d = levenshtein(key, k);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        std::string msg = "unknown config key '" + key + "'";
        if (!best.empty() && best_d <= std::max<int>(2, int(key.size()) / 3))
            msg += "; did you mean '" + best + "'?";
        msg += " Valid keys:";
        for (const auto& k : known) msg += " " + k;
        throw ConfigError(msg);
    }
}

}  // namespace atme
