#include "hashlat/core/ini.hpp"

#include <fstream>
#include <sstream>

#include "hashlat/core/errors.hpp"

namespace hashlat {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
    IniFile ini;
    ini.raw_ = text;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": malformed section");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            ini.data_[section];
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (ini.data_[section].count(key))
            throw ConfigError("config: duplicate key '" + key + "' in [" + section + "]");
        ini.data_[section][key] = value;
    }
    return ini;
}

IniFile IniFile::parse_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("config: cannot open: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

bool IniFile::has_section(const std::string& section) const { return data_.count(section) > 0; }

bool IniFile::has_key(const std::string& section, const std::string& key) const {
    auto it = data_.find(section);
    return it != data_.end() && it->second.count(key) > 0;
}

std::string IniFile::get_string(const std::string& section, const std::string& key) const {
    auto it = data_.find(section);
    if (it == data_.end())
        throw ConfigError("config: missing section [" + section + "]");
    auto kit = it->second.find(key);
    if (kit == it->second.end())
        throw ConfigError("config: missing key '" + key + "' in [" + section + "]");
    return kit->second;
}

std::string IniFile::get_string(const std::string& section, const std::string& key,
                                const std::string& fallback) const {
    return has_key(section, key) ? get_string(section, key) : fallback;
}

double IniFile::get_double(const std::string& section, const std::string& key,
                           double fallback) const {
    if (!has_key(section, key)) return fallback;
    const std::string v = get_string(section, key);
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' in [" + section + "] is not a number: " + v);
    }
}

int64_t IniFile::get_int(const std::string& section, const std::string& key,
                         int64_t fallback) const {
    if (!has_key(section, key)) return fallback;
    const std::string v = get_string(section, key);
    try {
        size_t pos = 0;
        int64_t i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' in [" + section + "] is not an integer: " + v);
    }
}

void IniFile::require_known(const std::map<std::string, std::set<std::string>>& schema) const {
    for (const auto& [section, keys] : data_) {
        auto sit = schema.find(section);
        if (sit == schema.end())
            throw ConfigError("config: unknown section [" + section + "]");
        for (const auto& [key, value] : keys) {
            if (!sit->second.count(key))
                throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
        }
    }
}

std::vector<std::string> IniFile::sections() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : data_) out.push_back(k);
    return out;
}

}  // namespace hashlat
