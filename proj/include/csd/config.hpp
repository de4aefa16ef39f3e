#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace csd {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Line-oriented `key = value` text, `#` starts a comment. Keys are kept
/// sorted so the serialized form is canonical.
class KeyValues {
public:
    static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
    static KeyValues load(const std::filesystem::path& path);

    std::string to_text() const;
    void save(const std::filesystem::path& path) const;

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    /// Applies a `key=value` override string.
    void set_assignment(const std::string& assignment);
    void merge(const KeyValues& other);

    std::string get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    int64_t get_i64(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Throws ConfigError naming the first key not in `allowed`.
    void require_known(const std::vector<std::string>& allowed) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);
std::string format_float(double v);

} // namespace csd
