#include "sfp/serialize.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sfp {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'F', 'P', '1'};
constexpr const char* kVersion = "sfp-v1";

void append_tensor(std::vector<float>& blob, const TensorF& t) {
    blob.insert(blob.end(), t.data.begin(), t.data.end());
}

TensorF take_tensor(const std::vector<float>& blob, std::size_t& cursor,
                    std::vector<std::size_t> shape) {
    const std::size_t n = TensorF::numel_of(shape);
    if (cursor + n > blob.size()) {
        throw FormatError("model blob too short: needed " + std::to_string(cursor + n) +
                          " values, have " + std::to_string(blob.size()));
    }
    TensorF t(std::move(shape));
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(cursor), n, t.data.begin());
    cursor += n;
    return t;
}

json spec_to_json(const ModelSpec& spec) {
    json j;
    j["architecture"] = architecture_name(spec.architecture);
    j["widths"] = spec.widths;
    j["strides"] = spec.strides;
    j["kernel"] = spec.kernel;
    j["depth"] = spec.depth;
    j["stage_widths"] = spec.stage_widths;
    j["input_channels"] = spec.input_channels;
    j["input_h"] = spec.input_h;
    j["input_w"] = spec.input_w;
    j["classes"] = spec.classes;
    j["stem_prunable"] = spec.stem_prunable;
    j["prune_mask"] = spec.prune_mask == PruneMask::all ? "all"
                      : spec.prune_mask == PruneMask::first_of_block ? "first-of-block"
                                                                     : "second-of-block";
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.architecture = architecture_from_name(j.at("architecture").get<std::string>());
    spec.widths = j.at("widths").get<std::vector<std::size_t>>();
    spec.strides = j.at("strides").get<std::vector<std::size_t>>();
    spec.kernel = j.at("kernel").get<std::size_t>();
    spec.depth = j.at("depth").get<std::size_t>();
    spec.stage_widths = j.at("stage_widths").get<std::vector<std::size_t>>();
    spec.input_channels = j.at("input_channels").get<std::size_t>();
    spec.input_h = j.at("input_h").get<std::size_t>();
    spec.input_w = j.at("input_w").get<std::size_t>();
    spec.classes = j.at("classes").get<std::size_t>();
    spec.stem_prunable = j.at("stem_prunable").get<bool>();
    const auto mask = j.at("prune_mask").get<std::string>();
    spec.prune_mask = mask == "all" ? PruneMask::all
                      : mask == "first-of-block" ? PruneMask::first_of_block
                                                 : PruneMask::second_of_block;
    return spec;
}

char hex_digit(unsigned v) { return v < 10 ? static_cast<char>('0' + v) : static_cast<char>('a' + v - 10); }

std::string hex64(std::uint64_t v) {
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = hex_digit(v & 0xf);
        v >>= 4;
    }
    return s;
}

} // namespace

std::string sidecar_path(const std::string& model_path) { return model_path + ".map.csv"; }

void save_model(const Model<float>& model, const std::string& path) {
    json manifest;
    manifest["format_version"] = kVersion;
    manifest["spec"] = spec_to_json(model.spec);

    std::vector<float> blob;
    json layers = json::array();
    for (const auto& c : model.convs) {
        json l;
        l["id"] = c.id;
        l["out_channels"] = c.out_channels();
        l["in_channels"] = c.in_channels();
        l["kernel"] = c.kernel();
        l["stride"] = c.stride;
        l["pad"] = c.pad;
        l["prunable"] = c.prunable;
        l["compactable"] = c.compactable;
        layers.push_back(l);
        append_tensor(blob, c.filters);
        append_tensor(blob, c.bn_gamma);
        append_tensor(blob, c.bn_beta);
        append_tensor(blob, c.bn_stats.mean);
        append_tensor(blob, c.bn_stats.var);
    }
    manifest["layers"] = layers;
    json blks = json::array();
    for (const auto& b : model.blocks) {
        blks.push_back({{"conv1", b.conv1}, {"conv2", b.conv2}, {"proj", b.proj}});
    }
    manifest["blocks"] = blks;
    manifest["fc_classes"] = model.fc_weight.shape[0];
    manifest["fc_features"] = model.fc_weight.shape[1];
    append_tensor(blob, model.fc_weight);
    append_tensor(blob, model.fc_bias);

    json sel = json::object();
    for (const auto& [id, idx] : model.final_selection) sel[id] = idx;
    manifest["final_selection"] = sel;

    manifest["blob_values"] = blob.size();
    manifest["blob_checksum"] = hex64(fnv1a64(blob.data(), blob.size() * sizeof(float)));

    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write model file '" + path + "'");
    out.write(kMagic, 4);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw FormatError("short write to '" + path + "'");

    if (!model.index_mapping.empty()) {
        std::ofstream map(sidecar_path(path));
        map << "layer_id,compact_index,original_index\n";
        for (const auto& [id, mapping] : model.index_mapping) {
            for (std::size_t i = 0; i < mapping.size(); ++i) {
                map << id << ',' << i << ',' << mapping[i] << '\n';
            }
        }
    }
}

Model<float> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open model file '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw FormatError("'" + path + "' is not an sfp model file (bad magic)");
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in) throw FormatError("'" + path + "' truncated manifest header");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError("'" + path + "' truncated manifest");

    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError("'" + path + "' manifest is not valid JSON: " + e.what());
    }
    const auto version = manifest.at("format_version").get<std::string>();
    if (version != kVersion) {
        throw FormatError("'" + path + "' has format version '" + version + "', want '" +
                          kVersion + "'");
    }

    const auto blob_values = manifest.at("blob_values").get<std::size_t>();
    std::vector<float> blob(blob_values);
    in.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob_values * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != blob_values * sizeof(float)) {
        throw FormatError("'" + path + "' blob truncated: expected " +
                          std::to_string(blob_values * sizeof(float)) + " bytes, got " +
                          std::to_string(in.gcount()));
    }
    const std::string checksum = hex64(fnv1a64(blob.data(), blob.size() * sizeof(float)));
    if (checksum != manifest.at("blob_checksum").get<std::string>()) {
        throw FormatError("'" + path + "' blob checksum mismatch: stored " +
                          manifest.at("blob_checksum").get<std::string>() + ", computed " +
                          checksum);
    }

    Model<float> model;
    model.spec = spec_from_json(manifest.at("spec"));
    std::size_t cursor = 0;
    for (const auto& l : manifest.at("layers")) {
        ConvLayer<float> c;
        c.id = l.at("id").get<std::string>();
        const auto cout = l.at("out_channels").get<std::size_t>();
        const auto cin = l.at("in_channels").get<std::size_t>();
        const auto k = l.at("kernel").get<std::size_t>();
        c.stride = l.at("stride").get<std::size_t>();
        c.pad = l.at("pad").get<std::size_t>();
        c.prunable = l.at("prunable").get<bool>();
        c.compactable = l.at("compactable").get<bool>();
        c.filters = take_tensor(blob, cursor, {cout, cin, k, k});
        c.bn_gamma = take_tensor(blob, cursor, {cout});
        c.bn_beta = take_tensor(blob, cursor, {cout});
        c.bn_stats.mean = take_tensor(blob, cursor, {cout});
        c.bn_stats.var = take_tensor(blob, cursor, {cout});
        model.convs.push_back(std::move(c));
    }
    for (const auto& b : manifest.at("blocks")) {
        ResBlock block;
        block.conv1 = b.at("conv1").get<std::size_t>();
        block.conv2 = b.at("conv2").get<std::size_t>();
        block.proj = b.at("proj").get<int>();
        model.blocks.push_back(block);
    }
    const auto classes = manifest.at("fc_classes").get<std::size_t>();
    const auto features = manifest.at("fc_features").get<std::size_t>();
    model.fc_weight = take_tensor(blob, cursor, {classes, features});
    model.fc_bias = take_tensor(blob, cursor, {classes});
    if (cursor != blob.size()) {
        throw FormatError("'" + path + "' blob has " + std::to_string(blob.size() - cursor) +
                          " unread values");
    }
    for (const auto& [id, idx] : manifest.at("final_selection").items()) {
        model.final_selection[id] = idx.get<std::vector<std::size_t>>();
    }
    model.mode = ops::Mode::eval;

    // Compact models carry their index mapping in a sidecar CSV.
    std::ifstream map(sidecar_path(path));
    if (map) {
        std::string line;
        std::getline(map, line); // header
        while (std::getline(map, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string id, compact_idx, orig_idx;
            if (!std::getline(ss, id, ',') || !std::getline(ss, compact_idx, ',') ||
                !std::getline(ss, orig_idx, ',')) {
                throw FormatError("'" + sidecar_path(path) + "' has a malformed row: " + line);
            }
            auto& mapping = model.index_mapping[id];
            const auto slot = static_cast<std::size_t>(std::stoul(compact_idx));
            if (mapping.size() <= slot) mapping.resize(slot + 1);
            mapping[slot] = static_cast<std::size_t>(std::stoul(orig_idx));
        }
    }
    return model;
}

} // namespace sfp
