#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <type_traits>
#include <vector>

#include "sfp/ops.hpp"
#include "sfp/tensor.hpp"

namespace sfp {

enum class Architecture { plain_chain, resnet_basic };

std::string architecture_name(Architecture a);
Architecture architecture_from_name(const std::string& name);

/// Which conv layers of residual blocks participate in pruning.
enum class PruneMask { all, first_of_block, second_of_block };

struct ModelSpec {
    Architecture architecture = Architecture::plain_chain;

    // plain-chain: one conv per entry, kernel x kernel, BN + relu after each.
    std::vector<std::size_t> widths;
    std::vector<std::size_t> strides; // defaults to all-1 when empty
    std::size_t kernel = 3;

    // resnet-basic: depth = 6n+2, three stages of n blocks each.
    std::size_t depth = 20;
    std::vector<std::size_t> stage_widths = {16, 32, 64};

    std::size_t input_channels = 3;
    std::size_t input_h = 32;
    std::size_t input_w = 32;
    std::size_t classes = 10;

    bool stem_prunable = true;
    PruneMask prune_mask = PruneMask::all;

    /// Count of weighted layers: enumerated convs + 1 classifier.
    std::size_t weighted_layer_count() const;
};

/// One convolution with its batch-norm parameters; the unit of pruning.
template <typename T>
struct ConvLayer {
    std::string id;
    Tensor<T> filters; // [Cout, Cin, K, K]
    Tensor<T> bn_gamma;
    Tensor<T> bn_beta;
    ops::BnStats<T> bn_stats;
    std::size_t stride = 1;
    std::size_t pad = 1;
    bool prunable = true;
    bool compactable = true;

    std::size_t out_channels() const { return filters.shape[0]; }
    std::size_t in_channels() const { return filters.shape[1]; }
    std::size_t kernel() const { return filters.shape[2]; }
};

/// Residual basic block: conv1 -> bn -> relu -> conv2 -> bn, plus shortcut,
/// joined by elementwise add and a final relu. Members index Model::convs.
struct ResBlock {
    std::size_t conv1 = 0;
    std::size_t conv2 = 0;
    int proj = -1; // projection conv index, or -1 for identity shortcut
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnStatMomentum = 0.1;

template <typename T>
struct Model {
    ModelSpec spec;
    std::vector<ConvLayer<T>> convs; // definition order, projections included
    std::vector<ResBlock> blocks;    // empty for plain chains
    Tensor<T> fc_weight;             // [classes, features]
    Tensor<T> fc_bias;               // [classes]
    ops::Mode mode = ops::Mode::train;

    /// Filter indices zeroized by the final pruning event, per layer id.
    /// Populated by the pruning scheduler; consumed by compaction.
    std::map<std::string, std::vector<std::size_t>> final_selection;

    /// For compact models: per layer id, original filter index per kept slot.
    std::map<std::string, std::vector<std::size_t>> index_mapping;

    std::size_t parameter_count() const;
};

template <typename T>
struct ModelGrads {
    struct ConvGrad {
        Tensor<T> filters;
        Tensor<T> bn_gamma;
        Tensor<T> bn_beta;
    };
    std::vector<ConvGrad> convs;
    Tensor<T> fc_weight;
    Tensor<T> fc_bias;

    static ModelGrads zeros_like(const Model<T>& m);
};

/// He-style fan-in initialization, deterministic per seed.
template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Eval-mode forward using running BN statistics. Purely functional.
/// When `post_bn` is given it receives the post-BN activation of every conv
/// in definition order (before any relu/add).
template <typename T>
Tensor<T> forward_eval(const Model<T>& model, const Tensor<T>& batch,
                       std::type_identity_t<std::vector<Tensor<T>>*> post_bn = nullptr);

/// Train-mode forward; updates running BN statistics.
template <typename T>
Tensor<T> forward_train(Model<T>& model, const Tensor<T>& batch);

/// Dispatches on model.mode.
template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& batch);

template <typename T>
struct BackwardResult {
    double loss = 0.0;
    Tensor<T> logits;
    ModelGrads<T> grads;
};

/// Train-mode forward + cross-entropy + hand-derived backward for every
/// parameter, including currently-zero filters. StateError in eval mode.
template <typename T>
BackwardResult<T> backward(Model<T>& model, const Tensor<T>& batch,
                           const std::vector<int>& labels);

/// Ordered (layer_id, out_channels) for prunable convs, definition order.
template <typename T>
std::vector<std::pair<std::string, std::size_t>> enumerate_prunable(const Model<T>& model);

template <typename T>
ConvLayer<T>* find_layer(Model<T>& model, const std::string& id);
template <typename T>
const ConvLayer<T>* find_layer(const Model<T>& model, const std::string& id);

extern template struct ConvLayer<float>;
extern template struct ConvLayer<double>;
extern template struct Model<float>;
extern template struct Model<double>;
extern template struct ModelGrads<float>;
extern template struct ModelGrads<double>;
extern template Model<float> build_model(const ModelSpec&, std::uint64_t);
extern template Model<double> build_model(const ModelSpec&, std::uint64_t);
extern template Tensor<float> forward_eval(const Model<float>&, const Tensor<float>&, std::vector<Tensor<float>>*);
extern template Tensor<double> forward_eval(const Model<double>&, const Tensor<double>&, std::vector<Tensor<double>>*);
extern template Tensor<float> forward_train(Model<float>&, const Tensor<float>&);
extern template Tensor<double> forward_train(Model<double>&, const Tensor<double>&);
extern template Tensor<float> forward(Model<float>&, const Tensor<float>&);
extern template Tensor<double> forward(Model<double>&, const Tensor<double>&);
extern template BackwardResult<float> backward(Model<float>&, const Tensor<float>&, const std::vector<int>&);
extern template BackwardResult<double> backward(Model<double>&, const Tensor<double>&, const std::vector<int>&);
extern template std::vector<std::pair<std::string, std::size_t>> enumerate_prunable(const Model<float>&);
extern template std::vector<std::pair<std::string, std::size_t>> enumerate_prunable(const Model<double>&);
extern template ConvLayer<float>* find_layer(Model<float>&, const std::string&);
extern template ConvLayer<double>* find_layer(Model<double>&, const std::string&);
extern template const ConvLayer<float>* find_layer(const Model<float>&, const std::string&);
extern template const ConvLayer<double>* find_layer(const Model<double>&, const std::string&);

using ModelF = Model<float>;
using ModelD = Model<double>;

} // namespace sfp
