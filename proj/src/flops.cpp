#include "sfp/flops.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

namespace sfp {

std::uint64_t ArchTable::total_macs() const {
    std::uint64_t total = 0;
    for (const auto& c : convs) total += c.macs();
    return total;
}

std::string convention_name(FlopsConvention c) {
    return c == FlopsConvention::all_compactable ? "all-compactable" : "alignment-aware";
}

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

struct Cursor {
    std::size_t c, h, w;
};

ConvDesc make_desc(const std::string& id, LayerRole role, Cursor& cur, std::size_t cout,
                   std::size_t k, std::size_t stride, std::size_t pad, int src, bool through_add,
                   bool default_pruned) {
    ConvDesc d;
    d.id = id;
    d.role = role;
    d.cin = cur.c;
    d.cout = cout;
    d.kernel = k;
    d.out_h = conv_out(cur.h, k, stride, pad);
    d.out_w = conv_out(cur.w, k, stride, pad);
    d.src = src;
    d.through_add = through_add;
    d.default_pruned = default_pruned;
    cur = {cout, d.out_h, d.out_w};
    return d;
}

// Appends one stage of basic blocks; returns the index of the last add's
// main-branch conv.
void append_basic_stage(ArchTable& table, Cursor& cur, const std::string& prefix,
                        std::size_t width, std::size_t blocks, bool downsample_first,
                        int& block_input_src, bool& block_input_is_add) {
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t stride = (downsample_first && b == 0) ? 2 : 1;
        const std::string base = prefix + "b" + std::to_string(b + 1);
        const Cursor block_in = cur;
        const int in_src = block_input_src;
        const bool in_add = block_input_is_add;
        table.convs.push_back(make_desc(base + "c1", LayerRole::block_conv1, cur, width, 3,
                                        stride, 1, in_src, in_add, true));
        const int c1 = static_cast<int>(table.convs.size() - 1);
        table.convs.push_back(
            make_desc(base + "c2", LayerRole::block_conv2, cur, width, 3, 1, 1, c1, false, true));
        const int c2 = static_cast<int>(table.convs.size() - 1);
        if (stride != 1 || block_in.c != width) {
            Cursor proj_cur = block_in;
            table.convs.push_back(make_desc(base + "p", LayerRole::projection, proj_cur, width, 1,
                                            stride, 0, in_src, in_add, false));
        }
        block_input_src = c2;
        block_input_is_add = true;
    }
}

void append_bottleneck_stage(ArchTable& table, Cursor& cur, const std::string& prefix,
                             std::size_t mid, std::size_t blocks, bool downsample_first,
                             int& block_input_src, bool& block_input_is_add) {
    const std::size_t out_c = mid * 4;
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t stride = (downsample_first && b == 0) ? 2 : 1;
        const std::string base = prefix + "b" + std::to_string(b + 1);
        const Cursor block_in = cur;
        const int in_src = block_input_src;
        const bool in_add = block_input_is_add;
        // Stride sits on the first 1x1 conv, matching the original layout.
        table.convs.push_back(make_desc(base + "c1", LayerRole::block_conv1, cur, mid, 1, stride,
                                        0, in_src, in_add, true));
        const int c1 = static_cast<int>(table.convs.size() - 1);
        table.convs.push_back(
            make_desc(base + "c2", LayerRole::block_conv2, cur, mid, 3, 1, 1, c1, false, true));
        const int c2 = static_cast<int>(table.convs.size() - 1);
        table.convs.push_back(make_desc(base + "c3", LayerRole::block_conv3, cur, out_c, 1, 1, 0,
                                        c2, false, true));
        const int c3 = static_cast<int>(table.convs.size() - 1);
        if (stride != 1 || block_in.c != out_c) {
            Cursor proj_cur = block_in;
            table.convs.push_back(make_desc(base + "p", LayerRole::projection, proj_cur, out_c, 1,
                                            stride, 0, in_src, in_add, false));
        }
        block_input_src = c3;
        block_input_is_add = true;
    }
}

} // namespace

ArchTable arch_table_from_spec(const ModelSpec& spec, const std::string& name) {
    ArchTable table;
    table.name = name.empty() ? architecture_name(spec.architecture) : name;
    table.input_c = spec.input_channels;
    table.input_h = spec.input_h;
    table.input_w = spec.input_w;
    Cursor cur{spec.input_channels, spec.input_h, spec.input_w};

    if (spec.architecture == Architecture::plain_chain) {
        std::vector<std::size_t> strides = spec.strides;
        if (strides.empty()) strides.assign(spec.widths.size(), 1);
        for (std::size_t i = 0; i < spec.widths.size(); ++i) {
            table.convs.push_back(make_desc("conv" + std::to_string(i + 1), LayerRole::chain, cur,
                                            spec.widths[i], spec.kernel, strides[i],
                                            spec.kernel / 2, static_cast<int>(i) - 1, false,
                                            true));
        }
        return table;
    }

    const std::size_t blocks = (spec.depth - 2) / 6;
    table.convs.push_back(
        make_desc("stem", LayerRole::stem, cur, spec.stage_widths[0], 3, 1, 1, -1, false, true));
    int src = 0;
    bool is_add = false;
    for (std::size_t s = 0; s < spec.stage_widths.size(); ++s) {
        append_basic_stage(table, cur, "s" + std::to_string(s + 1), spec.stage_widths[s], blocks,
                           s > 0, src, is_add);
    }
    return table;
}

ArchTable static_arch_table(const std::string& name, std::size_t input_size) {
    struct ImagenetArch {
        const char* name;
        bool bottleneck;
        std::size_t blocks[4];
    };
    static const ImagenetArch archs[] = {
        {"resnet18", false, {2, 2, 2, 2}},
        {"resnet34", false, {3, 4, 6, 3}},
        {"resnet50", true, {3, 4, 6, 3}},
        {"resnet101", true, {3, 4, 23, 3}},
    };
    for (const auto& arch : archs) {
        if (name != arch.name) continue;
        ArchTable table;
        table.name = name;
        table.input_c = 3;
        table.input_h = table.input_w = input_size;
        Cursor cur{3, input_size, input_size};
        table.convs.push_back(make_desc("stem", LayerRole::stem, cur, 64, 7, 2, 3, -1, false, true));
        // 3x3/2 max pool, spatial only.
        cur.h = conv_out(cur.h, 3, 2, 1);
        cur.w = conv_out(cur.w, 3, 2, 1);
        const std::size_t widths[4] = {64, 128, 256, 512};
        int src = 0;
        bool is_add = false;
        for (std::size_t s = 0; s < 4; ++s) {
            if (arch.bottleneck) {
                append_bottleneck_stage(table, cur, "s" + std::to_string(s + 1), widths[s],
                                        arch.blocks[s], s > 0, src, is_add);
            } else {
                append_basic_stage(table, cur, "s" + std::to_string(s + 1), widths[s],
                                   arch.blocks[s], s > 0, src, is_add);
            }
        }
        return table;
    }
    std::string known;
    for (const auto& arch : archs) known += std::string(known.empty() ? "" : ", ") + arch.name;
    throw InputError("unknown architecture '" + name + "' (known: " + known +
                     ", plus resnet<6n+2> CIFAR-style names such as resnet20)");
}

std::vector<std::string> known_arch_names() {
    return {"resnet18", "resnet34", "resnet50", "resnet101",
            "resnet20", "resnet32", "resnet56", "resnet110", "plain-chain"};
}

ArchTable resolve_arch(const std::string& name, std::size_t input_size,
                       std::size_t input_channels) {
    for (const char* imagenet : {"resnet18", "resnet34", "resnet50", "resnet101"}) {
        if (name == imagenet) return static_arch_table(name, input_size);
    }
    if (name.rfind("resnet", 0) == 0) {
        std::size_t depth = 0;
        try {
            depth = std::stoul(name.substr(6));
        } catch (const std::exception&) {
            throw InputError("unknown architecture '" + name + "'");
        }
        ModelSpec spec;
        spec.architecture = Architecture::resnet_basic;
        spec.depth = depth;
        spec.input_channels = input_channels;
        spec.input_h = spec.input_w = input_size;
        if (depth < 8 || (depth - 2) % 6 != 0) {
            throw InputError("architecture '" + name + "' does not satisfy depth = 6n+2");
        }
        return arch_table_from_spec(spec, name);
    }
    throw InputError("unknown architecture '" + name + "' (known: resnet18, resnet34, resnet50, " +
                     "resnet101, resnet<6n+2>)");
}

std::map<std::string, double> uniform_rates(const ArchTable& table, double rate,
                                            bool include_stem) {
    std::map<std::string, double> rates;
    for (const auto& c : table.convs) {
        if (!c.default_pruned) continue;
        if (c.role == LayerRole::stem && !include_stem) continue;
        rates[c.id] = rate;
    }
    return rates;
}

FlopsReport model_flops(const ArchTable& table, const std::map<std::string, double>& rates,
                        FlopsConvention convention) {
    for (const auto& [id, rate] : rates) {
        bool found = false;
        for (const auto& c : table.convs) found = found || c.id == id;
        if (!found) throw InputError("pruning rate names unknown layer '" + id + "'");
        if (rate < 0 || rate >= 1) {
            throw InputError("pruning rate for '" + id + "' must be in [0,1)");
        }
    }
    auto rate_of = [&](int idx) {
        if (idx < 0) return 0.0;
        const auto it = rates.find(table.convs[static_cast<std::size_t>(idx)].id);
        return it == rates.end() ? 0.0 : it->second;
    };

    FlopsReport report;
    report.arch = table.name;
    report.convention = convention;
    for (std::size_t i = 0; i < table.convs.size(); ++i) {
        const auto& c = table.convs[i];
        FlopsLayerRow row;
        row.id = c.id;
        row.out_h = c.out_h;
        row.out_w = c.out_w;
        row.macs = c.macs();
        row.rate = rate_of(static_cast<int>(i));
        row.kept_out = 1.0 - row.rate;
        const bool input_full =
            c.src < 0 || (convention == FlopsConvention::alignment_aware && c.through_add);
        row.kept_in = input_full ? 1.0 : 1.0 - rate_of(c.src);
        row.pruned_macs = static_cast<double>(row.macs) * row.kept_in * row.kept_out;
        row.reduction = 1.0 - row.kept_in * row.kept_out;
        report.total_macs += row.macs;
        report.pruned_total_macs += row.pruned_macs;
        if (row.rate > 0.0) {
            report.rated_macs += row.macs;
            report.rated_pruned_macs += row.pruned_macs;
        }
        report.layers.push_back(std::move(row));
    }
    report.pruned_ratio =
        report.total_macs
            ? 1.0 - report.pruned_total_macs / static_cast<double>(report.total_macs)
            : 0.0;
    report.pruned_ratio_rated =
        report.rated_macs
            ? 1.0 - report.rated_pruned_macs / static_cast<double>(report.rated_macs)
            : 0.0;
    return report;
}

double pruned_ratio(const ArchTable& table, const std::map<std::string, double>& rates,
                    FlopsConvention convention) {
    return model_flops(table, rates, convention).pruned_ratio;
}

std::string FlopsReport::to_text() const {
    std::ostringstream os;
    os << "architecture: " << arch << "\n";
    os << "convention:   " << convention_name(convention) << "\n";
    os << "layer               out       MACs        rate  kept_in  kept_out  pruned_MACs\n";
    char line[160];
    for (const auto& r : layers) {
        std::snprintf(line, sizeof line, "%-18s %4zux%-4zu %12llu  %4.2f  %6.3f   %6.3f  %13.1f\n",
                      r.id.c_str(), r.out_h, r.out_w,
                      static_cast<unsigned long long>(r.macs), r.rate, r.kept_in, r.kept_out,
                      r.pruned_macs);
        os << line;
    }
    os << "total MACs:  " << total_macs << "  (FLOPs = " << total_flops() << ")\n";
    std::snprintf(line, sizeof line, "pruned MACs: %.1f\n", pruned_total_macs);
    os << line;
    std::snprintf(line, sizeof line, "pruned ratio (all layers):   %.4f\n", pruned_ratio);
    os << line;
    std::snprintf(line, sizeof line, "pruned ratio (rated layers): %.4f\n", pruned_ratio_rated);
    os << line;
    return os.str();
}

std::string FlopsReport::to_csv() const {
    std::ostringstream os;
    os << "layer_id,out_h,out_w,macs,rate,kept_in,kept_out,pruned_macs,reduction\n";
    os.precision(12);
    for (const auto& r : layers) {
        os << r.id << ',' << r.out_h << ',' << r.out_w << ',' << r.macs << ',' << r.rate << ','
           << r.kept_in << ',' << r.kept_out << ',' << r.pruned_macs << ',' << r.reduction << '\n';
    }
    return os.str();
}

std::string FlopsReport::to_json() const {
    nlohmann::json j;
    j["architecture"] = arch;
    j["convention"] = convention_name(convention);
    j["total_macs"] = total_macs;
    j["total_flops"] = total_flops();
    j["pruned_macs"] = pruned_total_macs;
    j["pruned_ratio"] = pruned_ratio;
    j["pruned_ratio_rated"] = pruned_ratio_rated;
    auto rows = nlohmann::json::array();
    for (const auto& r : layers) {
        rows.push_back({{"layer_id", r.id},
                        {"out_h", r.out_h},
                        {"out_w", r.out_w},
                        {"macs", r.macs},
                        {"rate", r.rate},
                        {"kept_in", r.kept_in},
                        {"kept_out", r.kept_out},
                        {"pruned_macs", r.pruned_macs}});
    }
    j["layers"] = rows;
    return j.dump(2);
}

template <typename T>
std::uint64_t model_macs(const Model<T>& model) {
    std::uint64_t total = 0;
    std::size_t h = model.spec.input_h, w = model.spec.input_w;
    auto conv_macs = [&](const ConvLayer<T>& c, std::size_t in_h, std::size_t in_w,
                         std::size_t& oh, std::size_t& ow) {
        oh = conv_out(in_h, c.kernel(), c.stride, c.pad);
        ow = conv_out(in_w, c.kernel(), c.stride, c.pad);
        return static_cast<std::uint64_t>(c.out_channels()) * c.in_channels() * c.kernel() *
               c.kernel() * oh * ow;
    };
    if (model.spec.architecture == Architecture::plain_chain) {
        for (const auto& c : model.convs) {
            std::size_t oh, ow;
            total += conv_macs(c, h, w, oh, ow);
            h = oh;
            w = ow;
        }
        return total;
    }
    std::size_t oh, ow;
    total += conv_macs(model.convs[0], h, w, oh, ow);
    h = oh;
    w = ow;
    for (const auto& block : model.blocks) {
        std::size_t bh, bw;
        total += conv_macs(model.convs[block.conv1], h, w, bh, bw);
        std::size_t th, tw;
        total += conv_macs(model.convs[block.conv2], bh, bw, th, tw);
        if (block.proj >= 0) {
            std::size_t ph, pw;
            total += conv_macs(model.convs[static_cast<std::size_t>(block.proj)], h, w, ph, pw);
        }
        h = th;
        w = tw;
    }
    return total;
}

template std::uint64_t model_macs(const Model<float>&);
template std::uint64_t model_macs(const Model<double>&);

} // namespace sfp
