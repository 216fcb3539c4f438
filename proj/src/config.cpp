#include "mimlite/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mimlite {
namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

[[noreturn]] void fail_at(const std::string& origin, int line, const std::string& msg) {
    throw InputError("config: " + origin + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string raw;
    std::string current;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail_at(origin, line_no, "unterminated section header");
            current = trim(line.substr(1, line.size() - 2));
            if (current.empty()) fail_at(origin, line_no, "empty section name");
            cfg.sections_[current];  // register even if the section stays empty
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            fail_at(origin, line_no, "expected 'key = value' or '[section]'");
        }
        if (current.empty()) {
            fail_at(origin, line_no, "key before any [section] header");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail_at(origin, line_no, "empty key");
        auto& section = cfg.sections_[current];
        if (section.count(key)) {
            fail_at(origin, line_no, "duplicate key '" + key + "' in [" + current + "]");
        }
        section[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw InputError("config: cannot open: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_string(buf.str(), path);
}

void Config::apply_override(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw InputError("override: expected section.key=value, got '" + assignment + "'");
    }
    const std::string target = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    const std::size_t dot = target.rfind('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == target.size()) {
        throw InputError("override: expected section.key=value, got '" + assignment + "'");
    }
    sections_[target.substr(0, dot)][target.substr(dot + 1)] = value;
}

const std::string* Config::lookup(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    return &k->second;
}

bool Config::has_section(const std::string& section) const {
    return sections_.count(section) > 0;
}

bool Config::has(const std::string& section, const std::string& key) const {
    return lookup(section, key) != nullptr;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    const std::string* v = lookup(section, key);
    return v ? *v : fallback;
}

std::string Config::require_string(const std::string& section, const std::string& key) const {
    const std::string* v = lookup(section, key);
    if (!v || v->empty()) {
        throw InputError("config: [" + section + "] requires '" + key + "'");
    }
    return *v;
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
    const std::string* v = lookup(section, key);
    if (!v) return fallback;
    int out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size()) {
        throw InputError("config: [" + section + "] " + key + " must be an integer, got '" +
                         *v + "'");
    }
    return out;
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::uint64_t fallback) const {
    const std::string* v = lookup(section, key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size()) {
        throw InputError("config: [" + section + "] " + key +
                         " must be a non-negative integer, got '" + *v + "'");
    }
    return out;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    const std::string* v = lookup(section, key);
    if (!v) return fallback;
    try {
        std::size_t consumed = 0;
        const double out = std::stod(*v, &consumed);
        if (consumed != v->size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw InputError("config: [" + section + "] " + key + " must be a number, got '" +
                         *v + "'");
    }
}

bool Config::get_bool(const std::string& section, const std::string& key,
                      bool fallback) const {
    const std::string* v = lookup(section, key);
    if (!v) return fallback;
    const std::string s = lower(*v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw InputError("config: [" + section + "] " + key + " must be a boolean, got '" + *v +
                     "'");
}

std::vector<std::string> Config::section_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : sections_) names.push_back(name);
    return names;
}

const std::map<std::string, std::string>& Config::section(const std::string& name) const {
    static const std::map<std::string, std::string> empty;
    const auto it = sections_.find(name);
    return it == sections_.end() ? empty : it->second;
}

void Config::require_known_keys(const std::string& section,
                                const std::set<std::string>& allowed) const {
    const auto it = sections_.find(section);
    if (it == sections_.end()) return;
    for (const auto& [key, _] : it->second) {
        if (!allowed.count(key)) {
            std::string hint = "config: [" + section + "] unknown key '" + key +
                               "'; expected one of:";
            for (const std::string& k : allowed) hint += " " + k;
            throw InputError(hint);
        }
    }
}

}  // namespace mimlite
