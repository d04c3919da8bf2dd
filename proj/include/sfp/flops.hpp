#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sfp/network.hpp"

namespace sfp {

enum class LayerRole { stem, block_conv1, block_conv2, block_conv3, projection, chain };

/// Static description of one convolution for MAC accounting.
struct ConvDesc {
    std::string id;
    LayerRole role = LayerRole::chain;
    std::size_t cin = 0, cout = 0, kernel = 1;
    std::size_t out_h = 0, out_w = 0;
    /// Conv producing this layer's input along the main branch, -1 = image.
    int src = -1;
    /// True when the input tensor is a residual-add output, whose channels
    /// are revived by the shortcut regardless of upstream pruning.
    bool through_add = false;
    /// Belongs to the default pruned set (projections never do).
    bool default_pruned = true;

    std::uint64_t macs() const {
        return static_cast<std::uint64_t>(cout) * cin * kernel * kernel * out_h * out_w;
    }
};

struct ArchTable {
    std::string name;
    std::size_t input_c = 3, input_h = 32, input_w = 32;
    std::vector<ConvDesc> convs;

    std::uint64_t total_macs() const;
};

/// Accounting table for an executable model spec.
ArchTable arch_table_from_spec(const ModelSpec& spec, const std::string& name = "");

/// Static tables for the ImageNet-family architectures; the bottleneck
/// variants exist as data only. Throws InputError listing known names.
ArchTable static_arch_table(const std::string& name, std::size_t input_size);
std::vector<std::string> known_arch_names();

/// Resolves either a static name or an executable family name such as
/// "resnet20" / "resnet56" (depth 6n+2) at the given input size.
ArchTable resolve_arch(const std::string& name, std::size_t input_size,
                       std::size_t input_channels);

/// Uniform per-layer rates over the default pruned set; the stem can be
/// excluded, projections always are.
std::map<std::string, double> uniform_rates(const ArchTable& table, double rate,
                                            bool include_stem);

/// How input-channel reductions propagate when computing pruned MACs.
/// all_compactable: the paper's linearized closed form — a layer's input
///   keep fraction is (1-P) of the main-branch producer even across adds.
/// alignment_aware: residual-add outputs count as full width, because the
///   shortcut revives channels the block's last conv zeroized.
enum class FlopsConvention { all_compactable, alignment_aware };

std::string convention_name(FlopsConvention c);

struct FlopsLayerRow {
    std::string id;
    std::size_t out_h = 0, out_w = 0;
    std::uint64_t macs = 0;
    double rate = 0.0;
    double kept_in = 1.0, kept_out = 1.0;
    double pruned_macs = 0.0; // macs * kept_in * kept_out
    double reduction = 0.0;   // 1 - kept_in * kept_out
};

struct FlopsReport {
    std::string arch;
    FlopsConvention convention = FlopsConvention::alignment_aware;
    std::vector<FlopsLayerRow> layers;
    std::uint64_t total_macs = 0;
    double pruned_total_macs = 0.0;
    double pruned_ratio = 0.0; // over every layer
    std::uint64_t rated_macs = 0;
    double rated_pruned_macs = 0.0;
    double pruned_ratio_rated = 0.0; // over layers with a nonzero rate

    std::uint64_t total_flops() const { return 2 * total_macs; }
    std::string to_text() const;
    std::string to_csv() const;
    std::string to_json() const;
};

/// MAC/FLOPs accounting under per-layer pruning rates (empty = baseline).
FlopsReport model_flops(const ArchTable& table,
                        const std::map<std::string, double>& rates = {},
                        FlopsConvention convention = FlopsConvention::alignment_aware);

/// 1 - pruned_total / baseline_total over all layers of the table.
double pruned_ratio(const ArchTable& table, const std::map<std::string, double>& rates,
                    FlopsConvention convention);

/// Conv MACs of a concrete model instance (works on compacted models).
template <typename T>
std::uint64_t model_macs(const Model<T>& model);

extern template std::uint64_t model_macs(const Model<float>&);
extern template std::uint64_t model_macs(const Model<double>&);

} // namespace sfp
