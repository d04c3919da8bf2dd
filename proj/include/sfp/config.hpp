#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sfp/network.hpp"
#include "sfp/prune.hpp"

namespace sfp {

/// Flat key-value configuration with [section] headers, '#' comments and
/// key = value lines. Values are kept as strings; typed access validates.
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<std::size_t> get_size_list(const std::string& section, const std::string& key,
                                           std::vector<std::size_t> fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);

    /// Section.key=value lines in sorted order; the config hash is the
    /// FNV-1a of this form, so it is stable under field reordering.
    std::string canonical() const;
    std::uint64_t hash() const;

    /// Every key must have been consumed by a typed getter.
    void ensure_all_consumed() const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
    mutable std::map<std::string, bool> consumed_;
    std::string origin_;

    const std::string* find(const std::string& section, const std::string& key) const;
};

/// Everything one experiment run needs, resolved from a config file plus
/// CLI overrides.
struct ExperimentConfig {
    ModelSpec model;
    SfpConfig sfp;

    std::string data_kind = "synthetic"; // synthetic | idx | cifar-bin
    std::string data_dir;
    std::size_t train_subset = 5000;
    std::size_t test_subset = 1000;
    bool augment = false;

    bool bench_enabled = false;
    std::size_t bench_batch = 32;
    std::size_t bench_reps = 15;

    bool three_seeds = false;
    std::string pretrained_path; // load instead of random init; divides lr by 10

    static ExperimentConfig from_config(const ConfigFile& file);
    ConfigFile to_config() const;
    std::uint64_t hash() const { return to_config().hash(); }
};

} // namespace sfp
