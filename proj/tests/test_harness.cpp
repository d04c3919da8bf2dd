#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sfp/compact.hpp"
#include "sfp/config.hpp"
#include "sfp/dataset.hpp"
#include "sfp/experiment.hpp"
#include "sfp/serialize.hpp"

using namespace sfp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("sfp_test_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

} // namespace

TEST_CASE("IDX loader parses a hand-built 10x28x28 pair") {
    TempDir dir("idx");
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803u);
    push_be32(img, 10);
    push_be32(img, 28);
    push_be32(img, 28);
    for (int i = 0; i < 10 * 28 * 28; ++i) img.push_back(static_cast<unsigned char>(i % 251));
    std::vector<unsigned char> lbl;
    push_be32(lbl, 0x00000801u);
    push_be32(lbl, 10);
    for (int i = 0; i < 10; ++i) lbl.push_back(static_cast<unsigned char>(i % 10));
    write_bytes(dir.path / "img", img);
    write_bytes(dir.path / "lbl", lbl);

    const Dataset ds = load_idx((dir.path / "img").string(), (dir.path / "lbl").string());
    CHECK(ds.images.shape == std::vector<std::size_t>{10, 1, 28, 28});
    CHECK(ds.labels.size() == 10);
    CHECK(ds.images[0] == 0.0f);
    CHECK(ds.images[1] == doctest::Approx(1.0f / 255.0f));

    const Dataset capped = load_idx((dir.path / "img").string(), (dir.path / "lbl").string(), 4);
    CHECK(capped.size() == 4);
}

TEST_CASE("IDX loader rejects a wrong magic with the byte offset") {
    TempDir dir("idxbad");
    std::vector<unsigned char> img;
    push_be32(img, 0x00000802u);
    push_be32(img, 1);
    push_be32(img, 2);
    push_be32(img, 2);
    for (int i = 0; i < 4; ++i) img.push_back(0);
    std::vector<unsigned char> lbl;
    push_be32(lbl, 0x00000801u);
    push_be32(lbl, 1);
    lbl.push_back(3);
    write_bytes(dir.path / "img", img);
    write_bytes(dir.path / "lbl", lbl);
    CHECK_THROWS_WITH_AS(load_idx((dir.path / "img").string(), (dir.path / "lbl").string()),
                         doctest::Contains("0x00000802"), FormatError);
}

TEST_CASE("IDX loader rejects truncated payloads") {
    TempDir dir("idxtrunc");
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803u);
    push_be32(img, 2);
    push_be32(img, 2);
    push_be32(img, 2);
    img.push_back(0); // 7 bytes short
    std::vector<unsigned char> lbl;
    push_be32(lbl, 0x00000801u);
    push_be32(lbl, 2);
    lbl.push_back(0);
    lbl.push_back(1);
    write_bytes(dir.path / "img", img);
    write_bytes(dir.path / "lbl", lbl);
    CHECK_THROWS_WITH_AS(load_idx((dir.path / "img").string(), (dir.path / "lbl").string()),
                         doctest::Contains("truncated"), FormatError);
}

TEST_CASE("CIFAR binary: 30730 bytes make exactly ten records") {
    TempDir dir("cifar");
    std::vector<unsigned char> bin(10 * 3073);
    for (std::size_t i = 0; i < 10; ++i) bin[i * 3073] = static_cast<unsigned char>(i % 10);
    write_bytes(dir.path / "batch.bin", bin);
    const Dataset ds = load_cifar_bin({(dir.path / "batch.bin").string()});
    CHECK(ds.images.shape == std::vector<std::size_t>{10, 3, 32, 32});
    CHECK(ds.labels[3] == 3);

    std::vector<unsigned char> bad(3073 * 2 + 17);
    write_bytes(dir.path / "bad.bin", bad);
    CHECK_THROWS_WITH_AS(load_cifar_bin({(dir.path / "bad.bin").string()}),
                         doctest::Contains("3073"), FormatError);
}

TEST_CASE("channel normalization gives zero mean and unit variance on train") {
    TempDir dir("norm");
    write_synthetic_digit_idx(dir.path.string(), 128, 32, 9);
    Dataset train = load_idx(idx_train_images(dir.path.string()),
                             idx_train_labels(dir.path.string()));
    const ChannelStats stats = compute_channel_stats(train);
    apply_normalization(train, stats);
    const ChannelStats after = compute_channel_stats(train);
    CHECK(after.mean[0] == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(after.stddev[0] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("synthetic digit generation is deterministic per seed") {
    TempDir a("synth_a"), b("synth_b");
    write_synthetic_digit_idx(a.path.string(), 16, 8, 123);
    write_synthetic_digit_idx(b.path.string(), 16, 8, 123);
    for (const auto& name : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"}) {
        std::ifstream fa(a.path / name, std::ios::binary);
        std::ifstream fb(b.path / name, std::ios::binary);
        const std::string da{std::istreambuf_iterator<char>(fa), {}};
        const std::string db{std::istreambuf_iterator<char>(fb), {}};
        CHECK(da == db);
        CHECK(!da.empty());
    }
}

TEST_CASE("model save/load round trip is bitwise lossless") {
    TempDir dir("roundtrip");
    ModelSpec spec;
    spec.architecture = Architecture::resnet_basic;
    spec.depth = 8;
    spec.input_channels = 3;
    spec.input_h = spec.input_w = 16;
    spec.classes = 10;
    auto model = build_model<float>(spec, 77);
    model.final_selection["s1b1c1"] = {1, 5};

    const std::string p1 = (dir.path / "m1.sfp").string();
    const std::string p2 = (dir.path / "m2.sfp").string();
    save_model(model, p1);
    const Model<float> loaded = load_model(p1);
    save_model(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string d1{std::istreambuf_iterator<char>(f1), {}};
    const std::string d2{std::istreambuf_iterator<char>(f2), {}};
    CHECK(d1 == d2);
    CHECK(!d1.empty());

    REQUIRE(loaded.convs.size() == model.convs.size());
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        CHECK(loaded.convs[i].filters.data == model.convs[i].filters.data);
        CHECK(loaded.convs[i].bn_stats.mean.data == model.convs[i].bn_stats.mean.data);
        CHECK(loaded.convs[i].prunable == model.convs[i].prunable);
    }
    CHECK(loaded.final_selection == model.final_selection);
    CHECK(loaded.blocks.size() == model.blocks.size());

    // Loaded models execute identically.
    Rng rng(5);
    const TensorF batch = testing::random_tensor<float>({2, 3, 16, 16}, rng);
    CHECK(forward_eval(model, batch).data == forward_eval(loaded, batch).data);
}

TEST_CASE("a truncated blob fails the checksum/length check") {
    TempDir dir("trunc");
    ModelSpec spec;
    spec.architecture = Architecture::plain_chain;
    spec.widths = {4};
    spec.strides = {1};
    spec.input_channels = 1;
    spec.input_h = spec.input_w = 8;
    spec.classes = 3;
    const auto model = build_model<float>(spec, 1);
    const std::string path = (dir.path / "m.sfp").string();
    save_model(model, path);

    // Chop the last 8 bytes off the blob.
    std::ifstream in(path, std::ios::binary);
    std::string data{std::istreambuf_iterator<char>(in), {}};
    in.close();
    data.resize(data.size() - 8);
    std::ofstream out(path, std::ios::binary);
    out << data;
    out.close();
    CHECK_THROWS_AS(load_model(path), FormatError);
}

TEST_CASE("a corrupted blob fails the checksum check") {
    TempDir dir("corrupt");
    ModelSpec spec;
    spec.architecture = Architecture::plain_chain;
    spec.widths = {4};
    spec.strides = {1};
    spec.input_channels = 1;
    spec.input_h = spec.input_w = 8;
    spec.classes = 3;
    const auto model = build_model<float>(spec, 1);
    const std::string path = (dir.path / "m.sfp").string();
    save_model(model, path);

    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(-4, std::ios::end);
    const char junk[4] = {0x13, 0x37, 0x13, 0x37};
    f.write(junk, 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("checksum"), FormatError);
}

TEST_CASE("compact models restore their index-mapping sidecar") {
    TempDir dir("sidecar");
    ModelSpec spec;
    spec.architecture = Architecture::plain_chain;
    spec.widths = {10, 10};
    spec.strides = {1, 1};
    spec.input_channels = 2;
    spec.input_h = spec.input_w = 8;
    spec.classes = 5;
    auto model = build_model<float>(spec, 3);

    std::map<std::string, std::vector<std::size_t>> selection{{"conv1", {0, 9}},
                                                              {"conv2", {4}}};
    zeroize(model, selection);
    PruneRecord record;
    PruneEvent ev;
    ev.terminal = true;
    for (const auto& [id, sel] : selection) {
        ev.layer_ids.push_back(id);
        ev.selected.push_back(sel);
        ev.norms.push_back(filter_norms(*find_layer(model, id), 2.0));
    }
    record.events.push_back(ev);
    const auto small = compact(model, derive_keep_plan(model, record));
    REQUIRE(!small.index_mapping.empty());

    const std::string path = (dir.path / "compact.sfp").string();
    save_model(small, path);
    CHECK(fs::exists(sidecar_path(path)));
    const auto loaded = load_model(path);
    CHECK(loaded.index_mapping == small.index_mapping);
    CHECK(loaded.index_mapping.at("conv1") ==
          std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("config parser handles sections, comments, types and lists") {
    const std::string text = R"(
# a comment
[model]
architecture = "plain-chain"
widths = 8,16
strides = "1,2"
input_channels = 1
input_size = 12
classes = 10

[sfp]
pruning_rate = 0.25
epochs = 3   # trailing comment

[train]
deterministic = true
)";
    const ConfigFile file = ConfigFile::parse_string(text);
    const ExperimentConfig cfg = ExperimentConfig::from_config(file);
    CHECK(cfg.model.widths == std::vector<std::size_t>{8, 16});
    CHECK(cfg.model.strides == std::vector<std::size_t>{1, 2});
    CHECK(cfg.sfp.pruning_rate == 0.25);
    CHECK(cfg.sfp.epoch_max == 3);
    CHECK(cfg.sfp.deterministic);
}

TEST_CASE("unknown config keys are errors, not warnings") {
    const std::string text = "[model]\narchitecture = plain-chain\nwidth_typo = 8\n";
    const ConfigFile file = ConfigFile::parse_string(text);
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_config(file),
                         doctest::Contains("model.width_typo"), ConfigError);
}

TEST_CASE("config errors carry line numbers") {
    CHECK_THROWS_WITH_AS(ConfigFile::parse_string("[model\n"), doctest::Contains(":1"),
                         ConfigError);
    CHECK_THROWS_AS(ConfigFile::parse_string("key_without_section = 1\n"), ConfigError);
    CHECK_THROWS_AS(ConfigFile::parse_string("[a]\nx = 1\nx = 2\n"), ConfigError);
    CHECK_THROWS_AS(ConfigFile::parse_string("[a]\nnot a pair\n"), ConfigError);
}

TEST_CASE("config hash is stable under field reordering") {
    const auto a = ConfigFile::parse_string("[m]\nx = 1\ny = 2\n[z]\nk = 3\n");
    const auto b = ConfigFile::parse_string("[z]\nk = 3\n[m]\ny = 2\nx = 1\n");
    CHECK(a.hash() == b.hash());
    const auto c = ConfigFile::parse_string("[m]\nx = 1\ny = 3\n[z]\nk = 3\n");
    CHECK(a.hash() != c.hash());
}

TEST_CASE("experiment config round-trips through its canonical form") {
    const ExperimentConfig cfg = make_preset("desk-chain").runs.front().second;
    const ConfigFile snapshot = cfg.to_config();
    const ExperimentConfig back = ExperimentConfig::from_config(
        ConfigFile::parse_string(snapshot.canonical() + "\n"));
    CHECK(back.hash() == cfg.hash());
    CHECK(back.model.widths == cfg.model.widths);
    CHECK(back.sfp.lr_schedule.to_string() == cfg.sfp.lr_schedule.to_string());
}

TEST_CASE("presets cover the ablation grid") {
    CHECK(make_preset("ablation-norm").runs.size() == 6);
    CHECK(make_preset("ablation-rate").runs.size() == 9);
    CHECK(make_preset("ablation-interval").runs.size() == 10);
    const auto layer = make_preset("ablation-layer");
    REQUIRE(layer.runs.size() == 2);
    CHECK(layer.runs[0].second.model.prune_mask == PruneMask::first_of_block);
    CHECK(layer.runs[1].second.model.prune_mask == PruneMask::second_of_block);
    // The two runs differ only in the prunable-layer mask.
    auto a = layer.runs[0].second;
    auto b = layer.runs[1].second;
    a.model.prune_mask = b.model.prune_mask;
    CHECK(a.hash() == b.hash());
    CHECK_THROWS_AS(make_preset("nope"), ConfigError);
}

TEST_CASE("first-vs-second layer masks flip which convs are prunable") {
    ModelSpec spec;
    spec.architecture = Architecture::resnet_basic;
    spec.depth = 8;
    spec.input_channels = 1;
    spec.input_h = spec.input_w = 16;
    spec.classes = 10;
    spec.prune_mask = PruneMask::first_of_block;
    const auto first = build_model<float>(spec, 1);
    spec.prune_mask = PruneMask::second_of_block;
    const auto second = build_model<float>(spec, 1);

    CHECK(find_layer(first, "s1b1c1")->prunable);
    CHECK_FALSE(find_layer(first, "s1b1c2")->prunable);
    CHECK_FALSE(find_layer(first, "stem")->prunable);
    CHECK_FALSE(find_layer(second, "s1b1c1")->prunable);
    CHECK(find_layer(second, "s1b1c2")->prunable);
    // Weights are identical; only the mask differs.
    CHECK(first.convs[0].filters.data == second.convs[0].filters.data);
}

TEST_CASE("run_experiment writes the full artifact set deterministically") {
    TempDir dir("runexp");
    ExperimentConfig cfg = make_preset("desk-chain").runs.front().second;
    cfg.train_subset = 160;
    cfg.test_subset = 48;
    cfg.sfp.epoch_max = 2;
    cfg.sfp.batch_size = 32;
    cfg.sfp.seed = 11;

    const RunResult a = run_experiment(cfg, (dir.path / "a").string());
    for (const auto& name :
         {"config.toml", "log.csv", "prune_record.csv", "model.sfp", "compact.sfp",
          "equivalence.txt", "flops_alignment_aware.csv", "flops_all_compactable.csv",
          "flops_alignment_aware.txt", "manifest.json", "checkpoint.sfp"}) {
        CAPTURE(name);
        CHECK(fs::exists(dir.path / "a" / name));
    }
    CHECK(a.equivalence_max_diff < 1e-5);

    const RunResult b = run_experiment(cfg, (dir.path / "b").string());
    CHECK(a.log_hash == b.log_hash);
    std::ifstream ra(dir.path / "a" / "prune_record.csv");
    std::ifstream rb(dir.path / "b" / "prune_record.csv");
    const std::string ca{std::istreambuf_iterator<char>(ra), {}};
    const std::string cb{std::istreambuf_iterator<char>(rb), {}};
    CHECK(ca == cb);
    CHECK(!ca.empty());
}
