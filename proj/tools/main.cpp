#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "sfp/bench.hpp"
#include "sfp/compact.hpp"
#include "sfp/config.hpp"
#include "sfp/dataset.hpp"
#include "sfp/experiment.hpp"
#include "sfp/flops.hpp"
#include "sfp/prune.hpp"
#include "sfp/serialize.hpp"

namespace {

using namespace sfp;

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "runs/latest";
    long long seed = -1;
    bool deterministic = false;
    double pruning_rate = -1.0;
    double norm_order = -1.0;
    long long interval = -1;
    long long epochs = -1;
    long long subset = -1;
    std::string pretrained;
    bool json = false;
};

ExperimentConfig resolve_config(const CommonFlags& flags, bool config_required) {
    ExperimentConfig cfg;
    if (!flags.config_path.empty()) {
        cfg = ExperimentConfig::from_config(ConfigFile::parse_file(flags.config_path));
    } else if (config_required) {
        throw ConfigError("--config is required for this subcommand");
    } else {
        cfg = make_preset("desk-chain").runs.front().second;
    }
    if (flags.seed >= 0) cfg.sfp.seed = static_cast<std::uint64_t>(flags.seed);
    if (flags.deterministic) cfg.sfp.deterministic = true;
    if (flags.pruning_rate >= 0) cfg.sfp.pruning_rate = flags.pruning_rate;
    if (flags.norm_order > 0) cfg.sfp.norm_order = flags.norm_order;
    if (flags.interval > 0) cfg.sfp.interval = static_cast<std::size_t>(flags.interval);
    if (flags.epochs > 0) cfg.sfp.epoch_max = static_cast<std::size_t>(flags.epochs);
    if (flags.subset > 0) cfg.train_subset = static_cast<std::size_t>(flags.subset);
    if (!flags.pretrained.empty()) cfg.pretrained_path = flags.pretrained;
    cfg.sfp.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_config = true) {
    if (with_config) cmd->add_option("--config", flags.config_path, "config file (TOML-style)");
    cmd->add_option("--seed", flags.seed, "RNG seed override");
    cmd->add_flag("--deterministic", flags.deterministic, "force single-threaded reproducibility");
    cmd->add_option("--out-dir", flags.out_dir, "artifact directory");
    cmd->add_option("--pruning-rate", flags.pruning_rate, "pruning rate P in [0,1)");
    cmd->add_option("--norm-order", flags.norm_order, "filter norm order p > 0");
    cmd->add_option("--interval", flags.interval, "epochs between pruning events");
    cmd->add_option("--epochs", flags.epochs, "training epochs");
    cmd->add_option("--pretrained", flags.pretrained,
                    "pretrained model path (divides schedule learning rates by 10)");
    cmd->add_option("--subset", flags.subset, "training subset cap");
    cmd->add_flag("--json", flags.json, "machine-readable output");
}

int cmd_train(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve_config(flags, true);
    if (cfg.three_seeds) {
        const auto results = run_three_seeds(cfg, flags.out_dir);
        for (const auto& r : results) {
            std::printf("seed run %s: final test accuracy %.4f\n", r.dir.c_str(),
                        r.final_test_accuracy);
        }
        return 0;
    }
    const RunResult r = run_experiment(cfg, flags.out_dir);
    std::printf("run %s: final test accuracy %.4f, equivalence max diff %.3g\n", r.dir.c_str(),
                r.final_test_accuracy, r.equivalence_max_diff);
    return 0;
}

int cmd_prune(const CommonFlags& flags, const std::string& model_path,
              const std::string& out_path) {
    Model<float> model = load_model(model_path);
    const double rate = flags.pruning_rate >= 0 ? flags.pruning_rate : 0.3;
    const double order = flags.norm_order > 0 ? flags.norm_order : 2.0;
    PruneRecord record;
    PruneEvent ev;
    ev.epoch = 0;
    ev.terminal = true;
    std::map<std::string, std::vector<std::size_t>> selection;
    for (const auto& [id, width] : enumerate_prunable(model)) {
        (void)width;
        const auto* layer = find_layer(model, id);
        auto norms = filter_norms(*layer, order);
        auto selected = select_filters(norms, rate);
        ev.layer_ids.push_back(id);
        ev.norms.push_back(std::move(norms));
        ev.selected.push_back(selected);
        selection.emplace(id, std::move(selected));
    }
    zeroize(model, selection);
    record.events.push_back(std::move(ev));
    model.final_selection = selection;
    save_model(model, out_path);
    std::ofstream csv(out_path + ".prune.csv");
    write_prune_record_csv(record, csv);
    std::printf("pruned %s -> %s (P=%.3f, p=%.1f); record at %s\n", model_path.c_str(),
                out_path.c_str(), rate, order, (out_path + ".prune.csv").c_str());
    return 0;
}

int cmd_compact(const CommonFlags& flags, const std::string& model_path,
                const std::string& out_path, long long check_inputs) {
    const Model<float> model = load_model(model_path);
    if (model.final_selection.empty()) {
        throw InputError("model '" + model_path +
                         "' carries no pruning metadata; run prune or train first");
    }
    PruneRecord record;
    PruneEvent ev;
    ev.terminal = true;
    for (const auto& [id, selected] : model.final_selection) {
        ev.layer_ids.push_back(id);
        ev.selected.push_back(selected);
        ev.norms.emplace_back(find_layer(model, id)->out_channels(), 0.0);
    }
    record.events.push_back(std::move(ev));
    const KeepPlan plan = derive_keep_plan(model, record);
    const Model<float> small = compact(model, plan);
    save_model(small, out_path);
    double diff = 0.0;
    if (check_inputs > 0) {
        diff = equivalence_check(model, small, static_cast<std::size_t>(check_inputs),
                                 flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed) : 7);
    }
    if (flags.json) {
        std::printf("{\"compact\":\"%s\",\"parameters\":%zu,\"original_parameters\":%zu,"
                    "\"max_logit_diff\":%.9g}\n",
                    out_path.c_str(), small.parameter_count(), model.parameter_count(), diff);
    } else {
        std::printf("compact model: %s (%zu params, from %zu)\n", out_path.c_str(),
                    small.parameter_count(), model.parameter_count());
        if (check_inputs > 0) std::printf("max logit diff over %lld inputs: %.3g\n", check_inputs, diff);
    }
    return 0;
}

int cmd_flops(const CommonFlags& flags, const std::string& arch, long long input_size,
              long long input_channels, const std::string& csv_path, bool include_stem) {
    const ArchTable table = resolve_arch(arch, static_cast<std::size_t>(input_size),
                                         static_cast<std::size_t>(input_channels));
    std::map<std::string, double> rates;
    if (flags.pruning_rate > 0) {
        rates = uniform_rates(table, flags.pruning_rate, include_stem);
    }
    for (const auto convention :
         {FlopsConvention::alignment_aware, FlopsConvention::all_compactable}) {
        const FlopsReport report = model_flops(table, rates, convention);
        if (flags.json) {
            std::printf("%s\n", report.to_json().c_str());
        } else {
            std::printf("%s\n", report.to_text().c_str());
        }
        if (!csv_path.empty()) {
            const std::string path = csv_path + "." + convention_name(convention) + ".csv";
            std::ofstream out(path);
            out << report.to_csv();
        }
        if (rates.empty()) break; // identical reports without rates
    }
    return 0;
}

int cmd_bench(const CommonFlags& flags, const std::string& model_path,
              const std::string& compact_path, long long batch, long long reps) {
    const Model<float> base = load_model(model_path);
    const Model<float> small = load_model(compact_path);
    const TimingReport report =
        wallclock_bench(base, small, static_cast<std::size_t>(batch),
                        static_cast<std::size_t>(reps),
                        flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed) : 7);
    std::printf("%s\n", flags.json ? report.to_json().c_str() : report.to_text().c_str());
    return 0;
}

int cmd_reproduce(const CommonFlags& flags, const std::string& preset) {
    if (!preset.empty()) {
        const auto results = run_preset(preset, flags.out_dir);
        for (const auto& r : results) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(r.log_hash));
            std::printf("%s: log_hash=%s acc=%.4f\n", r.dir.c_str(), buf, r.final_test_accuracy);
        }
        return 0;
    }
    ExperimentConfig cfg = resolve_config(flags, true);
    cfg.sfp.deterministic = true;
    const RunResult r = run_experiment(cfg, flags.out_dir);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(r.log_hash));
    std::printf("log_hash=%s\nfinal_test_accuracy=%.6f\n", buf, r.final_test_accuracy);
    return 0;
}

int cmd_datagen(const std::string& out_dir, long long n_train, long long n_test, long long seed) {
    write_synthetic_digit_idx(out_dir, static_cast<std::size_t>(n_train),
                              static_cast<std::size_t>(n_test),
                              static_cast<std::uint64_t>(seed));
    std::printf("wrote %lld train / %lld test digit images under %s\n", n_train, n_test,
                out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CNN training engine with epoch-wise soft filter pruning"};
    app.require_subcommand(1);

    CommonFlags flags;

    auto* train = app.add_subcommand("train", "run an experiment from a config file");
    add_common(train, flags);

    auto* prune = app.add_subcommand("prune", "one-shot norm-based filter zeroizing");
    std::string prune_model, prune_out = "pruned.sfp";
    prune->add_option("--model", prune_model, "input model file")->required();
    prune->add_option("--out", prune_out, "output model file");
    add_common(prune, flags, false);

    auto* compact_cmd = app.add_subcommand("compact", "extract the dense compact model");
    std::string compact_model, compact_out = "compact.sfp";
    long long check_inputs = 0;
    compact_cmd->add_option("--model", compact_model, "pruned model file")->required();
    compact_cmd->add_option("--out", compact_out, "output model file");
    compact_cmd->add_option("--check", check_inputs, "verify equivalence over N random inputs");
    add_common(compact_cmd, flags, false);

    auto* flops = app.add_subcommand("flops", "convolution MAC/FLOPs accounting");
    std::string arch = "resnet20", flops_csv;
    long long input_size = 32, input_channels = 3;
    bool include_stem = false;
    flops->add_option("--arch", arch, "architecture name (resnet18/34/50/101, resnet<6n+2>)");
    flops->add_option("--input", input_size, "input spatial size");
    flops->add_option("--channels", input_channels, "input channels");
    flops->add_option("--csv", flops_csv, "also write per-layer CSV files");
    flops->add_flag("--include-stem", include_stem, "apply the pruning rate to the stem too");
    add_common(flops, flags, false);

    auto* bench = app.add_subcommand("bench", "wall-clock forward timing, baseline vs compact");
    std::string bench_model, bench_compact;
    long long bench_batch = 32, bench_reps = 15;
    bench->add_option("--model", bench_model, "baseline model file")->required();
    bench->add_option("--compact", bench_compact, "compact model file")->required();
    bench->add_option("--batch", bench_batch, "batch size");
    bench->add_option("--reps", bench_reps, "timed repetitions (>= 10)");
    add_common(bench, flags, false);

    auto* reproduce = app.add_subcommand("reproduce", "rerun a pinned config or preset");
    std::string preset;
    reproduce->add_option("--preset", preset, "preset name (see README)");
    add_common(reproduce, flags);

    auto* datagen = app.add_subcommand("datagen", "write a synthetic digit dataset (IDX format)");
    std::string datagen_out = "data/digits";
    long long datagen_train = 5000, datagen_test = 1000, datagen_seed = 1;
    datagen->add_option("--out", datagen_out, "output directory");
    datagen->add_option("--train", datagen_train, "training images");
    datagen->add_option("--test", datagen_test, "test images");
    datagen->add_option("--seed", datagen_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(flags);
        if (app.got_subcommand(prune)) return cmd_prune(flags, prune_model, prune_out);
        if (app.got_subcommand(compact_cmd)) {
            return cmd_compact(flags, compact_model, compact_out, check_inputs);
        }
        if (app.got_subcommand(flops)) {
            return cmd_flops(flags, arch, input_size, input_channels, flops_csv, include_stem);
        }
        if (app.got_subcommand(bench)) {
            return cmd_bench(flags, bench_model, bench_compact, bench_batch, bench_reps);
        }
        if (app.got_subcommand(reproduce)) return cmd_reproduce(flags, preset);
        if (app.got_subcommand(datagen)) {
            return cmd_datagen(datagen_out, datagen_train, datagen_test, datagen_seed);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
