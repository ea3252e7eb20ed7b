#include "piddm/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace piddm {

namespace {
std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}
}  // namespace

Config Config::parse(std::istream& is) {
    Config c;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
        c.kv_[section.empty() ? key : section + "." + key] = value;
    }
    return c;
}

Config Config::parse_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path.string());
    return parse(is);
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("config: missing required key " + key);
    return it->second;
}

double Config::get_num(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stod(it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stoi(it->second);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stoull(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw std::runtime_error("config: bad boolean for " + key);
}

std::vector<std::string> Config::get_list(const std::string& key) const {
    std::vector<std::string> out;
    const auto it = kv_.find(key);
    if (it == kv_.end()) return out;
    std::istringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (!cell.empty()) out.push_back(cell);
    }
    return out;
}

std::vector<int> Config::get_int_list(const std::string& key,
                                      const std::vector<int>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (const auto& s : get_list(key)) out.push_back(std::stoi(s));
    return out;
}

std::vector<std::uint64_t> Config::get_u64_list(const std::string& key,
                                                const std::vector<std::uint64_t>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key)) out.push_back(std::stoull(s));
    return out;
}

}  // namespace piddm
