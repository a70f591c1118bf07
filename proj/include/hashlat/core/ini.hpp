#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace hashlat {

// Strict INI-style config: [section] headers, key = value lines, '#' or ';'
// comments. Consumers declare the keys they understand; anything else is a
// ConfigError (unknown keys rejected).
class IniFile {
public:
    static IniFile parse(const std::string& text);
    static IniFile parse_file(const std::string& path);

    // Raw text as read, byte for byte (config echo).
    const std::string& raw_text() const { return raw_; }

    bool has_section(const std::string& section) const;
    bool has_key(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;

    // Validation: every present section must be listed, and every present key
    // within it must appear in the allowed set.
    void require_known(const std::map<std::string, std::set<std::string>>& schema) const;

    std::vector<std::string> sections() const;

private:
    std::string raw_;
    std::map<std::string, std::map<std::string, std::string>> data_;
};

}  // namespace hashlat
