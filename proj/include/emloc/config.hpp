#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace emloc {

/// Flat key=value configuration with [section] headers and '#' comments.
/// Values are stored verbatim (trimmed); typed accessors parse on demand.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key,
                      double fallback) const;
    std::uint64_t get_uint(const std::string& section, const std::string& key,
                           std::uint64_t fallback) const;
    std::vector<std::size_t> get_size_list(const std::string& section,
                                           const std::string& key,
                                           const std::vector<std::size_t>& fallback) const;

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return sections_;
    }

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

std::vector<double> parse_double_list(const std::string& csv);
std::vector<std::size_t> parse_size_list(const std::string& csv);

}  // namespace emloc
