#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmmd {

// Line-oriented `key = value` config with `[section]` headers. Parsing keeps
// raw strings; typed access tracks consumption so unknown keys can be
// rejected after a command has read everything it understands.
class RunConfig {
public:
    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config: cannot open " + path);
        std::ostringstream os;
        os << in.rdbuf();
        return parse(os.str());
    }

    static RunConfig parse(const std::string& text) {
        RunConfig cfg;
        std::istringstream is(text);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            if (t.front() == '[' && t.back() == ']') {
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty())
                    throw std::invalid_argument("config: empty section at line " +
                                             std::to_string(lineno));
                continue;
            }
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: malformed line " + std::to_string(lineno) +
                                         ": " + t);
            std::string key = trim(t.substr(0, eq));
            std::string val = trim(t.substr(eq + 1));
            if (key.empty())
                throw std::invalid_argument("config: empty key at line " +
                                         std::to_string(lineno));
            cfg.values_[section + "." + key] = val;
        }
        return cfg;
    }

    // `--set section.key=value` overrides
    void set(const std::string& dotted, const std::string& value) {
        values_[dotted] = value;
    }

    bool has(const std::string& dotted) const { return values_.count(dotted) != 0; }

    std::string get_string(const std::string& dotted, const std::string& fallback) const {
        consumed_.insert(dotted);
        auto it = values_.find(dotted);
        return it == values_.end() ? fallback : it->second;
    }
    std::string require_string(const std::string& dotted) const {
        consumed_.insert(dotted);
        auto it = values_.find(dotted);
        if (it == values_.end())
            throw std::invalid_argument("config: missing required key " + dotted);
        return it->second;
    }
    double get_double(const std::string& dotted, double fallback) const {
        consumed_.insert(dotted);
        auto it = values_.find(dotted);
        return it == values_.end() ? fallback : parse_double(dotted, it->second);
    }
    std::size_t get_size(const std::string& dotted, std::size_t fallback) const {
        consumed_.insert(dotted);
        auto it = values_.find(dotted);
        return it == values_.end() ? fallback : std::size_t(parse_u64(dotted, it->second));
    }
    std::uint64_t get_u64(const std::string& dotted, std::uint64_t fallback) const {
        consumed_.insert(dotted);
        auto it = values_.find(dotted);
        return it == values_.end() ? fallback : parse_u64(dotted, it->second);
    }
    bool get_bool(const std::string& dotted, bool fallback) const {
        consumed_.insert(dotted);
        auto it = values_.find(dotted);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::invalid_argument("config: boolean expected for " + dotted);
    }

    void reject_unknown() const {
        for (const auto& [key, value] : values_)
            if (consumed_.find(key) == consumed_.end())
                throw std::invalid_argument("config: unknown key " + key);
    }

    // fully-resolved echo: every consumed key with its effective value
    void note_default(const std::string& dotted, const std::string& value) const {
        if (values_.find(dotted) == values_.end()) defaults_[dotted] = value;
    }

    std::string echo() const {
        std::map<std::string, std::string> all = values_;
        for (const auto& [k, v] : defaults_)
            if (all.find(k) == all.end()) all[k] = v;
        std::map<std::string, std::map<std::string, std::string>> by_section;
        for (const auto& [dotted, v] : all) {
            auto dot = dotted.find('.');
            by_section[dotted.substr(0, dot)][dotted.substr(dot + 1)] = v;
        }
        std::ostringstream os;
        for (const auto& [section, kv] : by_section) {
            os << "[" << section << "]\n";
            for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
            os << "\n";
        }
        return os.str();
    }

    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> out;
        std::istringstream is(s);
        std::string item;
        while (std::getline(is, item, ',')) {
            std::string t = trim(item);
            if (!t.empty()) out.push_back(t);
        }
        return out;
    }

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
    mutable std::map<std::string, std::string> defaults_;

    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (...) {
            throw std::invalid_argument("config: number expected for " + key + ": " + v);
        }
    }
    static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            std::uint64_t u = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return u;
        } catch (...) {
            throw std::invalid_argument("config: integer expected for " + key + ": " + v);
        }
    }
};

} // namespace cmmd
