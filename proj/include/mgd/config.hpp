#ifndef MGD_CONFIG_HPP
#define MGD_CONFIG_HPP

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgd {

/// Flat key-value configuration: one `key = value` per line, `#` starts a
/// comment, list values are comma-separated. Keys are unique; later
/// assignments override earlier ones.
class FlatConfig {
  public:
    static FlatConfig parse_string(const std::string& text) {
        FlatConfig cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string::size_type hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::string t = trim(line);
            if (t.empty()) continue;
            std::string::size_type eq = t.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string value = trim(t.substr(eq + 1));
            if (key.empty())
                throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static FlatConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str());
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    long get_long(const std::string& key, long fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return parse_long(key, it->second);
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return parse_double(key, it->second);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::runtime_error("config key " + key + ": expected boolean");
    }

    std::vector<std::string> get_string_list(const std::string& key,
                                             const std::string& fallback) const {
        std::vector<std::string> out;
        for (const std::string& item : split(get_string(key, fallback))) out.push_back(item);
        return out;
    }

    std::vector<long> get_long_list(const std::string& key, const std::string& fallback) const {
        std::vector<long> out;
        for (const std::string& item : split(get_string(key, fallback)))
            out.push_back(parse_long(key, item));
        return out;
    }

    std::vector<double> get_double_list(const std::string& key,
                                        const std::string& fallback) const {
        std::vector<double> out;
        for (const std::string& item : split(get_string(key, fallback)))
            out.push_back(parse_double(key, item));
        return out;
    }

    /// FNV-1a over the sorted key=value pairs; identical configs hash
    /// identically regardless of line order or comments.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [k, v] : kv_) {
            for (char c : k + "=" + v + "\n") {
                h ^= static_cast<unsigned char>(c);
                h *= 0x100000001b3ull;
            }
        }
        return h;
    }

    std::string hash_hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
        return buf;
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

  private:
    static std::string trim(const std::string& s) {
        std::string::size_type a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        std::string::size_type b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream in(s);
        while (std::getline(in, cur, ',')) {
            std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
        }
        return out;
    }

    static long parse_long(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            long out = std::stol(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw std::runtime_error("config key " + key + ": expected integer, got '" + v + "'");
        }
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw std::runtime_error("config key " + key + ": expected number, got '" + v + "'");
        }
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace mgd

#endif
