#include "sfp/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sfp/bench.hpp"
#include "sfp/compact.hpp"
#include "sfp/dataset.hpp"
#include "sfp/flops.hpp"
#include "sfp/serialize.hpp"

namespace sfp {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

std::string file_fnv_hex(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(data)));
    return buf;
}

struct LoadedData {
    Dataset train;
    Dataset test;
};

LoadedData load_data(const ExperimentConfig& cfg, const std::string& out_dir) {
    LoadedData data;
    if (cfg.data_kind == "synthetic") {
        const std::string dir =
            cfg.data_dir.empty() ? out_dir + "/data" : cfg.data_dir;
        if (!fs::exists(idx_train_images(dir))) {
            write_synthetic_digit_idx(dir, cfg.train_subset, cfg.test_subset, cfg.sfp.seed);
        }
        data.train = load_idx(idx_train_images(dir), idx_train_labels(dir), cfg.train_subset);
        data.test = load_idx(idx_test_images(dir), idx_test_labels(dir), cfg.test_subset);
    } else if (cfg.data_kind == "idx") {
        if (cfg.data_dir.empty()) throw ConfigError("data.kind = idx needs data.dir");
        data.train = load_idx(idx_train_images(cfg.data_dir), idx_train_labels(cfg.data_dir),
                              cfg.train_subset);
        data.test = load_idx(idx_test_images(cfg.data_dir), idx_test_labels(cfg.data_dir),
                             cfg.test_subset);
    } else if (cfg.data_kind == "cifar-bin") {
        if (cfg.data_dir.empty()) throw ConfigError("data.kind = cifar-bin needs data.dir");
        std::vector<std::string> train_paths;
        for (int i = 1; i <= 5; ++i) {
            const std::string p = cfg.data_dir + "/data_batch_" + std::to_string(i) + ".bin";
            if (fs::exists(p)) train_paths.push_back(p);
        }
        if (train_paths.empty()) {
            throw ConfigError("no data_batch_*.bin files under '" + cfg.data_dir + "'");
        }
        data.train = load_cifar_bin(train_paths, cfg.train_subset);
        data.test = load_cifar_bin({cfg.data_dir + "/test_batch.bin"}, cfg.test_subset);
    } else {
        throw ConfigError("unknown data kind '" + cfg.data_kind + "'");
    }
    data.train.split = "train";
    data.test.split = "test";
    data.train.classes = cfg.model.classes;
    data.test.classes = cfg.model.classes;
    const ChannelStats stats = compute_channel_stats(data.train);
    apply_normalization(data.train, stats);
    apply_normalization(data.test, stats);
    data.train.validate();
    data.test.validate();

    if (data.train.images.shape[1] != cfg.model.input_channels ||
        data.train.images.shape[2] != cfg.model.input_h) {
        throw ConfigError("dataset shape " + data.train.images.shape_str() +
                          " does not match model input");
    }
    return data;
}

} // namespace

std::string experiment_log_csv(const ExperimentConfig& cfg, const TrainLog& log) {
    std::ostringstream os;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(cfg.hash()));
    os << "# config_hash=" << buf << "\n";
    os << "# seed=" << cfg.sfp.seed << "\n";
    os << "# mode=" << (cfg.sfp.deterministic ? "deterministic" : "relaxed") << "\n";
    os << "epoch,lr,train_loss,train_accuracy,test_accuracy,reconstruction,zero_filters\n";
    os.precision(10);
    for (const auto& e : log.epochs) {
        os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.train_accuracy << ','
           << e.test_accuracy << ',' << e.reconstruction << ',';
        for (std::size_t i = 0; i < e.zero_filters.size(); ++i) {
            if (i) os << '|';
            os << e.zero_filters[i];
        }
        os << '\n';
    }
    return os.str();
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    RunResult result;
    result.dir = out_dir;

    write_text(fs::path(out_dir) / "config.toml", cfg.to_config().canonical());

    LoadedData data = load_data(cfg, out_dir);

    Model<float> model;
    SfpConfig sfp_cfg = cfg.sfp;
    if (!cfg.pretrained_path.empty()) {
        model = load_model(cfg.pretrained_path);
        sfp_cfg.pretrained_mode = true;
    } else {
        model = build_model<float>(cfg.model, cfg.sfp.seed);
    }

    SfpResult trained = sfp_train(std::move(model), data.train, &data.test, sfp_cfg,
                                  (fs::path(out_dir) / "checkpoint.sfp").string());
    result.record = trained.record;

    const std::string log_csv = experiment_log_csv(cfg, trained.log);
    write_text(fs::path(out_dir) / "log.csv", log_csv);
    result.log_hash = fnv1a64(log_csv);
    if (!trained.log.epochs.empty()) {
        result.final_test_accuracy = trained.log.epochs.back().test_accuracy;
    }

    write_text(fs::path(out_dir) / "prune_record.csv", prune_record_csv(trained.record));
    save_model(trained.model, (fs::path(out_dir) / "model.sfp").string());

    const KeepPlan plan = derive_keep_plan(trained.model, trained.record);
    Model<float> compact_model = compact(trained.model, plan);
    save_model(compact_model, (fs::path(out_dir) / "compact.sfp").string());

    result.equivalence_max_diff = equivalence_check(trained.model, compact_model, 100, cfg.sfp.seed);
    {
        std::ostringstream os;
        os << "inputs: 100\nmax_abs_logit_diff: " << result.equivalence_max_diff << "\n";
        write_text(fs::path(out_dir) / "equivalence.txt", os.str());
    }

    const ArchTable table = arch_table_from_spec(cfg.model);
    const auto rates = uniform_rates(table, cfg.sfp.pruning_rate, cfg.model.stem_prunable);
    for (const auto convention :
         {FlopsConvention::alignment_aware, FlopsConvention::all_compactable}) {
        const FlopsReport report = model_flops(table, rates, convention);
        const std::string stem = convention == FlopsConvention::alignment_aware
                                     ? "flops_alignment_aware"
                                     : "flops_all_compactable";
        write_text(fs::path(out_dir) / (stem + ".csv"), report.to_csv());
        write_text(fs::path(out_dir) / (stem + ".txt"), report.to_text());
        if (convention == FlopsConvention::alignment_aware) {
            result.flops_pruned_ratio = report.pruned_ratio;
        }
    }

    if (cfg.bench_enabled) {
        const TimingReport timing =
            wallclock_bench(trained.model, compact_model, cfg.bench_batch, cfg.bench_reps);
        write_text(fs::path(out_dir) / "timing.csv", timing.to_csv());
        write_text(fs::path(out_dir) / "timing.txt", timing.to_text());
    }

    nlohmann::json manifest;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(cfg.hash()));
    manifest["config_hash"] = buf;
    manifest["seed"] = cfg.sfp.seed;
    manifest["final_test_accuracy"] = result.final_test_accuracy;
    manifest["equivalence_max_diff"] = result.equivalence_max_diff;
    nlohmann::json artifacts = nlohmann::json::object();
    for (const char* name : {"config.toml", "log.csv", "prune_record.csv", "model.sfp",
                             "compact.sfp", "equivalence.txt", "flops_alignment_aware.csv",
                             "flops_all_compactable.csv"}) {
        artifacts[name] = file_fnv_hex(fs::path(out_dir) / name);
    }
    manifest["artifacts"] = artifacts;
    write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    return result;
}

std::vector<RunResult> run_three_seeds(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<RunResult> results;
    for (std::uint64_t offset = 0; offset < 3; ++offset) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.three_seeds = false;
        run_cfg.sfp.seed = cfg.sfp.seed + offset;
        const std::string dir = out_dir + "/seed-" + std::to_string(run_cfg.sfp.seed);
        results.push_back(run_experiment(run_cfg, dir));
    }
    double mean = 0.0;
    for (const auto& r : results) mean += r.final_test_accuracy;
    mean /= static_cast<double>(results.size());
    double var = 0.0;
    for (const auto& r : results) {
        var += (r.final_test_accuracy - mean) * (r.final_test_accuracy - mean);
    }
    var /= static_cast<double>(results.size());
    std::ostringstream os;
    os << "metric,mean,std\n";
    os.precision(10);
    os << "final_test_accuracy," << mean << ',' << std::sqrt(var) << '\n';
    write_text(fs::path(out_dir) / "summary.csv", os.str());
    return results;
}

namespace {

ExperimentConfig desk_chain_config() {
    ExperimentConfig cfg;
    cfg.model.architecture = Architecture::plain_chain;
    cfg.model.widths = {8, 16, 16, 32};
    cfg.model.strides = {1, 2, 1, 2};
    cfg.model.input_channels = 1;
    cfg.model.input_h = cfg.model.input_w = 28;
    cfg.model.classes = 10;
    cfg.sfp.pruning_rate = 0.1;
    cfg.sfp.epoch_max = 10;
    cfg.sfp.lr_schedule = LrSchedule::parse("0:0.1,6:0.02,8:0.004");
    cfg.train_subset = 5000;
    cfg.test_subset = 1000;
    return cfg;
}

ExperimentConfig desk_resnet8_config() {
    ExperimentConfig cfg = desk_chain_config();
    cfg.model.architecture = Architecture::resnet_basic;
    cfg.model.depth = 8;
    return cfg;
}

// Smaller splits keep multi-run sweeps in the minutes range.
ExperimentConfig sweep_base() {
    ExperimentConfig cfg = desk_chain_config();
    cfg.train_subset = 1500;
    cfg.test_subset = 500;
    cfg.sfp.epoch_max = 5;
    cfg.sfp.lr_schedule = LrSchedule::parse("0:0.1,4:0.02");
    return cfg;
}

} // namespace

std::vector<std::string> preset_names() {
    return {"desk-chain", "desk-resnet8", "ablation-norm", "ablation-rate",
            "ablation-interval", "ablation-layer"};
}

Preset make_preset(const std::string& name) {
    Preset preset;
    preset.name = name;
    if (name == "desk-chain") {
        preset.runs.emplace_back("run", desk_chain_config());
    } else if (name == "desk-resnet8") {
        preset.runs.emplace_back("run", desk_resnet8_config());
    } else if (name == "ablation-norm") {
        for (const double p : {1.0, 2.0}) {
            for (const double rate : {0.1, 0.2, 0.3}) {
                ExperimentConfig cfg = sweep_base();
                cfg.sfp.norm_order = p;
                cfg.sfp.pruning_rate = rate;
                std::ostringstream os;
                os << "l" << static_cast<int>(p) << "-P" << rate;
                preset.runs.emplace_back(os.str(), cfg);
            }
        }
    } else if (name == "ablation-rate") {
        for (int i = 0; i <= 8; ++i) {
            const double rate = 0.05 * i;
            ExperimentConfig cfg = sweep_base();
            cfg.sfp.pruning_rate = rate;
            std::ostringstream os;
            os << "P" << rate;
            preset.runs.emplace_back(os.str(), cfg);
        }
    } else if (name == "ablation-interval") {
        for (std::size_t interval = 1; interval <= 10; ++interval) {
            ExperimentConfig cfg = sweep_base();
            cfg.sfp.epoch_max = 10;
            cfg.sfp.interval = interval;
            cfg.sfp.pruning_rate = 0.3;
            preset.runs.emplace_back("interval" + std::to_string(interval), cfg);
        }
    } else if (name == "ablation-layer") {
        for (const auto mask : {PruneMask::first_of_block, PruneMask::second_of_block}) {
            ExperimentConfig cfg = sweep_base();
            cfg.model.architecture = Architecture::resnet_basic;
            cfg.model.depth = 8;
            cfg.model.prune_mask = mask;
            cfg.sfp.pruning_rate = 0.3;
            preset.runs.emplace_back(
                mask == PruneMask::first_of_block ? "first-of-block" : "second-of-block", cfg);
        }
    } else {
        std::string known;
        for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
    }
    return preset;
}

std::vector<RunResult> run_preset(const std::string& name, const std::string& out_dir) {
    const Preset preset = make_preset(name);
    fs::create_directories(out_dir);
    std::vector<RunResult> results;
    std::ostringstream summary;
    summary << "run,final_test_accuracy,equivalence_max_diff,log_hash\n";
    summary.precision(10);
    for (const auto& [run_name, cfg] : preset.runs) {
        const std::string dir = out_dir + "/" + run_name;
        RunResult r = run_experiment(cfg, dir);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(r.log_hash));
        summary << run_name << ',' << r.final_test_accuracy << ',' << r.equivalence_max_diff
                << ',' << buf << '\n';
        results.push_back(std::move(r));
    }
    write_text(fs::path(out_dir) / "summary.csv", summary.str());
    return results;
}

} // namespace sfp
