#include "sfp/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sfp {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

} // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.erase(hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
            }
            cfg.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = unquote(trim(line.substr(eq + 1)));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (section.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": key '" + key + "' outside any [section]");
        }
        if (cfg.sections_[section].count(key)) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                              section + "." + key + "'");
        }
        cfg.sections_[section][key] = value;
    }
    return cfg;
}

const std::string* ConfigFile::find(const std::string& section, const std::string& key) const {
    const auto sec = sections_.find(section);
    if (sec == sections_.end()) return nullptr;
    const auto it = sec->second.find(key);
    if (it == sec->second.end()) return nullptr;
    consumed_[section + "." + key] = true;
    return &it->second;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    const auto* v = find(section, key);
    return v ? *v : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    const auto* v = find(section, key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config value " + section + "." + key + " = '" + *v +
                          "' is not a number");
    }
}

std::int64_t ConfigFile::get_int(const std::string& section, const std::string& key,
                                 std::int64_t fallback) const {
    const auto* v = find(section, key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const long long i = std::stoll(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config value " + section + "." + key + " = '" + *v +
                          "' is not an integer");
    }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
    const auto* v = find(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError("config value " + section + "." + key + " = '" + *v +
                      "' is not a boolean (true/false)");
}

std::vector<std::size_t> ConfigFile::get_size_list(const std::string& section,
                                                   const std::string& key,
                                                   std::vector<std::size_t> fallback) const {
    const auto* v = find(section, key);
    if (!v) return fallback;
    std::vector<std::size_t> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        try {
            out.push_back(std::stoul(item));
        } catch (const std::exception&) {
            throw ConfigError("config value " + section + "." + key + " has non-integer item '" +
                              item + "'");
        }
    }
    if (out.empty()) {
        throw ConfigError("config value " + section + "." + key + " is an empty list");
    }
    return out;
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
    sections_[section][key] = value;
}

std::string ConfigFile::canonical() const {
    std::ostringstream os;
    for (const auto& [section, kv] : sections_) {
        for (const auto& [key, value] : kv) {
            os << section << '.' << key << '=' << value << '\n';
        }
    }
    return os.str();
}

std::uint64_t ConfigFile::hash() const { return fnv1a64(canonical()); }

void ConfigFile::ensure_all_consumed() const {
    for (const auto& [section, kv] : sections_) {
        for (const auto& [key, value] : kv) {
            (void)value;
            if (!consumed_.count(section + "." + key)) {
                throw ConfigError(origin_ + ": unknown config key '" + section + "." + key + "'");
            }
        }
    }
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& file) {
    ExperimentConfig cfg;

    cfg.model.architecture =
        architecture_from_name(file.get_string("model", "architecture", "plain-chain"));
    cfg.model.widths = file.get_size_list("model", "widths", {8, 16, 16, 32});
    cfg.model.strides = file.get_size_list("model", "strides", {1, 2, 1, 2});
    cfg.model.kernel = static_cast<std::size_t>(file.get_int("model", "kernel", 3));
    cfg.model.depth = static_cast<std::size_t>(file.get_int("model", "depth", 20));
    cfg.model.stage_widths = file.get_size_list("model", "stage_widths", {16, 32, 64});
    cfg.model.input_channels =
        static_cast<std::size_t>(file.get_int("model", "input_channels", 1));
    cfg.model.input_h = static_cast<std::size_t>(file.get_int("model", "input_size", 28));
    cfg.model.input_w = cfg.model.input_h;
    cfg.model.classes = static_cast<std::size_t>(file.get_int("model", "classes", 10));
    cfg.model.stem_prunable = file.get_bool("model", "stem_prunable", true);
    const std::string mask = file.get_string("model", "prune_mask", "all");
    if (mask == "all") {
        cfg.model.prune_mask = PruneMask::all;
    } else if (mask == "first-of-block") {
        cfg.model.prune_mask = PruneMask::first_of_block;
    } else if (mask == "second-of-block") {
        cfg.model.prune_mask = PruneMask::second_of_block;
    } else {
        throw ConfigError("model.prune_mask must be all | first-of-block | second-of-block");
    }

    cfg.sfp.pruning_rate = file.get_double("sfp", "pruning_rate", 0.1);
    cfg.sfp.norm_order = file.get_double("sfp", "norm_order", 2.0);
    cfg.sfp.interval = static_cast<std::size_t>(file.get_int("sfp", "interval", 1));
    cfg.sfp.epoch_max = static_cast<std::size_t>(file.get_int("sfp", "epochs", 10));
    cfg.sfp.prune_at_init = file.get_bool("sfp", "prune_at_init", false);
    cfg.sfp.reset_pruned_momentum = file.get_bool("sfp", "reset_pruned_momentum", false);
    cfg.sfp.seed = static_cast<std::uint64_t>(file.get_int("sfp", "seed", 1));

    cfg.sfp.lr_schedule = LrSchedule::parse(file.get_string("train", "lr_schedule", "0:0.1,6:0.02,8:0.004"));
    cfg.sfp.batch_size = static_cast<std::size_t>(file.get_int("train", "batch_size", 64));
    cfg.sfp.momentum = file.get_double("train", "momentum", 0.9);
    cfg.sfp.weight_decay = file.get_double("train", "weight_decay", 1e-4);
    cfg.sfp.pretrained_mode = file.get_bool("train", "pretrained_mode", false);
    cfg.sfp.deterministic = file.get_bool("train", "deterministic", true);

    cfg.data_kind = file.get_string("data", "kind", "synthetic");
    if (cfg.data_kind != "synthetic" && cfg.data_kind != "idx" && cfg.data_kind != "cifar-bin") {
        throw ConfigError("data.kind must be synthetic | idx | cifar-bin");
    }
    cfg.data_dir = file.get_string("data", "dir", "");
    cfg.train_subset = static_cast<std::size_t>(file.get_int("data", "train_subset", 5000));
    cfg.test_subset = static_cast<std::size_t>(file.get_int("data", "test_subset", 1000));
    cfg.augment = file.get_bool("data", "augment", false);
    cfg.sfp.augment = cfg.augment;

    cfg.bench_enabled = file.get_bool("bench", "enabled", false);
    cfg.bench_batch = static_cast<std::size_t>(file.get_int("bench", "batch", 32));
    cfg.bench_reps = static_cast<std::size_t>(file.get_int("bench", "reps", 15));

    cfg.three_seeds = file.get_bool("run", "three_seeds", false);
    cfg.pretrained_path = file.get_string("run", "pretrained", "");

    file.ensure_all_consumed();
    cfg.sfp.validate();
    return cfg;
}

ConfigFile ExperimentConfig::to_config() const {
    ConfigFile f;
    auto set_int = [&](const std::string& s, const std::string& k, std::uint64_t v) {
        f.set(s, k, std::to_string(v));
    };
    auto set_double = [&](const std::string& s, const std::string& k, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        f.set(s, k, os.str());
    };
    auto set_bool = [&](const std::string& s, const std::string& k, bool v) {
        f.set(s, k, v ? "true" : "false");
    };
    auto set_list = [&](const std::string& s, const std::string& k,
                        const std::vector<std::size_t>& v) {
        std::ostringstream os;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) os << ',';
            os << v[i];
        }
        f.set(s, k, os.str());
    };

    f.set("model", "architecture", architecture_name(model.architecture));
    set_list("model", "widths", model.widths);
    set_list("model", "strides", model.strides.empty()
                                     ? std::vector<std::size_t>(model.widths.size(), 1)
                                     : model.strides);
    set_int("model", "kernel", model.kernel);
    set_int("model", "depth", model.depth);
    set_list("model", "stage_widths", model.stage_widths);
    set_int("model", "input_channels", model.input_channels);
    set_int("model", "input_size", model.input_h);
    set_int("model", "classes", model.classes);
    set_bool("model", "stem_prunable", model.stem_prunable);
    f.set("model", "prune_mask", model.prune_mask == PruneMask::all ? "all"
                                 : model.prune_mask == PruneMask::first_of_block
                                     ? "first-of-block"
                                     : "second-of-block");

    set_double("sfp", "pruning_rate", sfp.pruning_rate);
    set_double("sfp", "norm_order", sfp.norm_order);
    set_int("sfp", "interval", sfp.interval);
    set_int("sfp", "epochs", sfp.epoch_max);
    set_bool("sfp", "prune_at_init", sfp.prune_at_init);
    set_bool("sfp", "reset_pruned_momentum", sfp.reset_pruned_momentum);
    set_int("sfp", "seed", sfp.seed);

    f.set("train", "lr_schedule", sfp.lr_schedule.to_string());
    set_int("train", "batch_size", sfp.batch_size);
    set_double("train", "momentum", sfp.momentum);
    set_double("train", "weight_decay", sfp.weight_decay);
    set_bool("train", "pretrained_mode", sfp.pretrained_mode);
    set_bool("train", "deterministic", sfp.deterministic);

    f.set("data", "kind", data_kind);
    f.set("data", "dir", data_dir);
    set_int("data", "train_subset", train_subset);
    set_int("data", "test_subset", test_subset);
    set_bool("data", "augment", augment);

    set_bool("bench", "enabled", bench_enabled);
    set_int("bench", "batch", bench_batch);
    set_int("bench", "reps", bench_reps);

    set_bool("run", "three_seeds", three_seeds);
    f.set("run", "pretrained", pretrained_path);
    return f;
}

} // namespace sfp
