#include "emloc/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace emloc {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw std::runtime_error("config: unterminated section at line " +
                                         std::to_string(line_no));
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) {
                throw std::runtime_error("config: empty section name at line " +
                                         std::to_string(line_no));
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: expected key=value at line " +
                                     std::to_string(line_no));
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error("config: empty key at line " + std::to_string(line_no));
        }
        cfg.sections_[section][key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return fallback;
    const auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_string(section, key, "");
    std::size_t used = 0;
    double parsed = 0.0;
    try {
        parsed = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad number for " + section + "." + key);
    }
    if (used != v.size()) {
        throw std::runtime_error("config: bad number for " + section + "." + key);
    }
    return parsed;
}

std::uint64_t Config::get_uint(const std::string& section, const std::string& key,
                               std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_string(section, key, "");
    std::size_t used = 0;
    std::uint64_t parsed = 0;
    try {
        parsed = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad integer for " + section + "." + key);
    }
    if (used != v.size()) {
        throw std::runtime_error("config: bad integer for " + section + "." + key);
    }
    return parsed;
}

std::vector<std::size_t> Config::get_size_list(const std::string& section,
                                               const std::string& key,
                                               const std::vector<std::size_t>& fallback) const {
    if (!has(section, key)) return fallback;
    return parse_size_list(get_string(section, key, ""));
}

namespace {

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(csv);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) throw std::runtime_error("empty item in list: " + csv);
        parts.push_back(item);
    }
    if (parts.empty()) throw std::runtime_error("empty list");
    return parts;
}

}  // namespace

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    for (const std::string& item : split_csv(csv)) {
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::runtime_error("bad number in list: " + item);
    }
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    for (const std::string& item : split_csv(csv)) {
        std::size_t used = 0;
        out.push_back(static_cast<std::size_t>(std::stoull(item, &used)));
        if (used != item.size()) throw std::runtime_error("bad integer in list: " + item);
    }
    return out;
}

}  // namespace emloc
