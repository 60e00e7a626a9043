#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mlc/common.hpp"

namespace mlc {

// Usage errors (unknown key, unparseable value, missing path) map to CLI
// exit code 1.
class usage_error : public std::runtime_error {
public:
    explicit usage_error(const std::string& m) : std::runtime_error(m) {}
};

// Flat `key = value` configuration with `#` comments, merged with
// command-line `--key value` overrides. Every consumed key is tracked so
// unknown keys can be rejected by name.
class Options {
public:
    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw usage_error("cannot open config file: " + path);
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
                throw usage_error(detail::format_msg(
                    "config line ", lineno, " is not 'key = value': ", trimmed));
            set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        if (key.empty()) throw usage_error("empty config key");
        kv_[key] = value;
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    std::string require_str(const std::string& key) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) throw usage_error("missing required option --" + key);
        return it->second;
    }

    long long get_int(const std::string& key, long long fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t pos = 0;
            long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing chars");
            return v;
        } catch (const std::exception&) {
            throw usage_error(detail::format_msg(
                "option --", key, " expects an integer, got '", it->second, "'"));
        }
    }

    double get_double(const std::string& key, double fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing chars");
            return v;
        } catch (const std::exception&) {
            throw usage_error(detail::format_msg(
                "option --", key, " expects a number, got '", it->second, "'"));
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw usage_error(detail::format_msg(
            "option --", key, " expects true/false, got '", it->second, "'"));
    }

    // Call after all known keys were read.
    void reject_unknown() const {
        for (const auto& [key, value] : kv_) {
            (void)value;
            if (!consumed_.count(key)) throw usage_error("unknown option --" + key);
        }
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> consumed_;
};

// Parses "--key value" pairs starting at argv[from]; "--config file" loads
// the file first so command-line values win.
inline Options parse_cli_options(int argc, char** argv, int from) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string config_path;
    for (int i = from; i < argc; ++i) {
        std::string key = argv[i];
        if (key.rfind("--", 0) != 0)
            throw usage_error("expected --key, got '" + key + "'");
        key = key.substr(2);
        if (i + 1 >= argc) throw usage_error("option --" + key + " needs a value");
        const std::string value = argv[++i];
        if (key == "config")
            config_path = value;
        else
            pairs.emplace_back(key, value);
    }
    Options opts;
    if (!config_path.empty()) opts.load_file(config_path);
    for (auto& [k, v] : pairs) opts.set(k, v);
    return opts;
}

} // namespace mlc
