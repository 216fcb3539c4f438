#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mimlite/util.hpp"

namespace mimlite {

// INI-style experiment configuration:
//
//   # comment
//   [pretrain]
//   epochs = 50
//   mask_ratio = 0.75
//
// Sections group the settings of one pipeline stage; `[sweep.<name>]` sections
// hold per-arm overrides whose keys are "section.key" paths.  Values are plain
// strings interpreted by the typed accessors.  All malformed input throws
// InputError, which the command line maps to exit code 2.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text,
                               const std::string& origin = "<string>");

    // "section.key=value" (the key is everything after the last dot before '=',
    // so section names may themselves contain dots, e.g. sweep.arm1).
    void apply_override(const std::string& assignment);

    bool has_section(const std::string& section) const;
    bool has(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const;
    double get_double(const std::string& section, const std::string& key,
                      double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    std::string require_string(const std::string& section, const std::string& key) const;

    std::vector<std::string> section_names() const;
    const std::map<std::string, std::string>& section(const std::string& name) const;

    // Throws when the section contains a key outside `allowed` (catches typos).
    void require_known_keys(const std::string& section,
                            const std::set<std::string>& allowed) const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
    const std::string* lookup(const std::string& section, const std::string& key) const;
};

}  // namespace mimlite
