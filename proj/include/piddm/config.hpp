#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

namespace piddm {

// Flat key-value run configuration with [section] headers:
//
//   [teacher]
//   iters = 3000
//   hidden = 96, 96
//
// Keys are addressed as "section.key"; '#' starts a comment.
class Config {
public:
    static Config parse(std::istream& is);
    static Config parse_file(const std::filesystem::path& path);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    double get_num(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key) const;  // comma separated
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
    std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                            const std::vector<std::uint64_t>& fallback) const;

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace piddm
