#include "sfp/compact.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace sfp {

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

// Index of the conv whose kept outputs define this conv's input channels,
// or -1 for the network input. Residual add outputs resolve to the block's
// second conv, which is non-compactable and therefore keeps full width.
template <typename T>
int producer_of(const Model<T>& model, std::size_t conv_idx) {
    if (model.spec.architecture == Architecture::plain_chain) {
        return conv_idx == 0 ? -1 : static_cast<int>(conv_idx - 1);
    }
    if (conv_idx == 0) return -1; // stem
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto& block = model.blocks[b];
        const int block_input =
            b == 0 ? 0 : static_cast<int>(model.blocks[b - 1].conv2);
        if (conv_idx == block.conv1) return block_input;
        if (conv_idx == block.conv2) return static_cast<int>(block.conv1);
        if (block.proj >= 0 && conv_idx == static_cast<std::size_t>(block.proj)) {
            return block_input;
        }
    }
    throw InputError("conv index " + std::to_string(conv_idx) + " not reachable in topology");
}

template <typename T>
int classifier_producer(const Model<T>& model) {
    if (model.spec.architecture == Architecture::plain_chain) {
        return static_cast<int>(model.convs.size() - 1);
    }
    return static_cast<int>(model.blocks.back().conv2);
}

template <typename T>
KeepPlan build_plan(const Model<T>& model, KeepPlan::Source source,
                    const std::function<std::vector<std::size_t>(std::size_t)>& kept_out_of) {
    KeepPlan plan;
    plan.source = source;
    plan.layer_ids.reserve(model.convs.size());
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        const auto& layer = model.convs[i];
        plan.layer_ids.push_back(layer.id);
        plan.kept_out.push_back(layer.compactable ? kept_out_of(i)
                                                  : all_indices(layer.out_channels()));
    }
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        const int src = producer_of(model, i);
        plan.kept_in.push_back(src < 0 ? all_indices(model.convs[i].in_channels())
                                       : plan.kept_out[static_cast<std::size_t>(src)]);
    }
    plan.kept_features = plan.kept_out[static_cast<std::size_t>(classifier_producer(model))];
    return plan;
}

} // namespace

template <typename T>
KeepPlan derive_keep_plan(const Model<T>& model, const PruneRecord& record) {
    const PruneEvent* ev = record.final_event();
    if (!ev) throw InputError("prune record has no events; model is not in a pruned state");
    std::map<std::string, const std::vector<std::size_t>*> selected;
    for (std::size_t l = 0; l < ev->layer_ids.size(); ++l) {
        const auto* layer = find_layer(model, ev->layer_ids[l]);
        if (!layer) {
            throw InputError("prune record names layer '" + ev->layer_ids[l] +
                             "' which the model does not have");
        }
        for (const auto j : ev->selected[l]) {
            if (j >= layer->out_channels()) {
                throw InputError("prune record index " + std::to_string(j) +
                                 " out of range for layer '" + ev->layer_ids[l] + "'");
            }
        }
        selected[ev->layer_ids[l]] = &ev->selected[l];
    }
    return build_plan(model, KeepPlan::Source::recorded_selection, [&](std::size_t i) {
        const auto& layer = model.convs[i];
        const auto it = selected.find(layer.id);
        if (it == selected.end()) return all_indices(layer.out_channels());
        std::vector<std::size_t> kept;
        kept.reserve(layer.out_channels() - it->second->size());
        std::size_t cursor = 0;
        for (std::size_t j = 0; j < layer.out_channels(); ++j) {
            if (cursor < it->second->size() && (*it->second)[cursor] == j) {
                ++cursor;
            } else {
                kept.push_back(j);
            }
        }
        return kept;
    });
}

template <typename T>
KeepPlan derive_keep_plan_threshold(const Model<T>& model, double eps) {
    return build_plan(model, KeepPlan::Source::norm_threshold, [&](std::size_t i) {
        const auto norms = filter_norms(model.convs[i], 2.0);
        std::vector<std::size_t> kept;
        for (std::size_t j = 0; j < norms.size(); ++j) {
            if (norms[j] > eps) kept.push_back(j);
        }
        return kept;
    });
}

template <typename T>
KeepPlan identity_plan(const Model<T>& model) {
    return build_plan(model, KeepPlan::Source::identity,
                      [&](std::size_t i) { return all_indices(model.convs[i].out_channels()); });
}

template <typename T>
Model<T> compact(const Model<T>& model, const KeepPlan& plan) {
    if (plan.layer_ids.size() != model.convs.size()) {
        throw InputError("keep plan covers " + std::to_string(plan.layer_ids.size()) +
                         " layers, model has " + std::to_string(model.convs.size()));
    }
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        if (plan.layer_ids[i] != model.convs[i].id) {
            throw InputError("keep plan layer '" + plan.layer_ids[i] + "' does not match model layer '" +
                             model.convs[i].id + "'");
        }
        const int src = producer_of(model, i);
        const auto& expect = src < 0 ? all_indices(model.convs[i].in_channels())
                                     : plan.kept_out[static_cast<std::size_t>(src)];
        if (plan.kept_in[i] != expect) {
            throw DimensionError(
                "keep plan inconsistency: kept inputs of '" + model.convs[i].id +
                "' do not match kept outputs of '" +
                (src < 0 ? std::string("<input>") : model.convs[static_cast<std::size_t>(src)].id) +
                "'");
        }
        if (!model.convs[i].compactable &&
            plan.kept_out[i].size() != model.convs[i].out_channels()) {
            throw InputError("keep plan drops outputs of non-compactable layer '" +
                             model.convs[i].id + "'");
        }
    }

    Model<T> out;
    out.spec = model.spec;
    out.blocks = model.blocks;
    out.mode = ops::Mode::eval;
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        const auto& layer = model.convs[i];
        const auto& keep_o = plan.kept_out[i];
        const auto& keep_i = plan.kept_in[i];
        const std::size_t k = layer.kernel();
        ConvLayer<T> sliced;
        sliced.id = layer.id;
        sliced.stride = layer.stride;
        sliced.pad = layer.pad;
        sliced.prunable = layer.prunable;
        sliced.compactable = layer.compactable;
        sliced.filters = Tensor<T>({keep_o.size(), keep_i.size(), k, k});
        for (std::size_t a = 0; a < keep_o.size(); ++a) {
            for (std::size_t b = 0; b < keep_i.size(); ++b) {
                const T* src = &layer.filters.at4(keep_o[a], keep_i[b], 0, 0);
                T* dst = &sliced.filters.at4(a, b, 0, 0);
                std::copy_n(src, k * k, dst);
            }
        }
        sliced.bn_gamma = Tensor<T>({keep_o.size()});
        sliced.bn_beta = Tensor<T>({keep_o.size()});
        sliced.bn_stats.mean = Tensor<T>({keep_o.size()});
        sliced.bn_stats.var = Tensor<T>({keep_o.size()});
        for (std::size_t a = 0; a < keep_o.size(); ++a) {
            sliced.bn_gamma[a] = layer.bn_gamma[keep_o[a]];
            sliced.bn_beta[a] = layer.bn_beta[keep_o[a]];
            sliced.bn_stats.mean[a] = layer.bn_stats.mean[keep_o[a]];
            sliced.bn_stats.var[a] = layer.bn_stats.var[keep_o[a]];
        }
        out.convs.push_back(std::move(sliced));
        if (keep_o.size() != layer.out_channels()) {
            out.index_mapping[layer.id] = keep_o;
        }
    }

    const std::size_t classes = model.fc_weight.shape[0];
    out.fc_weight = Tensor<T>({classes, plan.kept_features.size()});
    for (std::size_t r = 0; r < classes; ++r) {
        for (std::size_t f = 0; f < plan.kept_features.size(); ++f) {
            out.fc_weight.at2(r, f) = model.fc_weight.at2(r, plan.kept_features[f]);
        }
    }
    out.fc_bias = model.fc_bias;

    if (model.spec.architecture == Architecture::plain_chain) {
        for (std::size_t i = 0; i < out.convs.size(); ++i) {
            out.spec.widths[i] = out.convs[i].out_channels();
        }
    }
    return out;
}

template <typename T>
double equivalence_check(const Model<T>& original, const Model<T>& compact_model,
                         std::size_t n_inputs, std::uint64_t seed) {
    const auto& spec = original.spec;
    Rng rng(seed);
    double worst = 0.0;
    constexpr std::size_t kBatch = 16;
    for (std::size_t done = 0; done < n_inputs; done += kBatch) {
        const std::size_t b = std::min(kBatch, n_inputs - done);
        Tensor<T> batch({b, spec.input_channels, spec.input_h, spec.input_w});
        rng.fill_normal(batch, 0.0, 1.0);
        const Tensor<T> lhs = forward_eval<T>(original, batch, nullptr);
        const Tensor<T> rhs = forward_eval<T>(compact_model, batch, nullptr);
        if (lhs.shape != rhs.shape) {
            throw DimensionError("equivalence logit shapes differ: " + lhs.shape_str() + " vs " +
                                 rhs.shape_str());
        }
        for (std::size_t i = 0; i < lhs.numel(); ++i) {
            worst = std::max(worst, std::fabs(static_cast<double>(lhs[i]) - rhs[i]));
        }
    }
    return worst;
}

template KeepPlan derive_keep_plan(const Model<float>&, const PruneRecord&);
template KeepPlan derive_keep_plan(const Model<double>&, const PruneRecord&);
template KeepPlan derive_keep_plan_threshold(const Model<float>&, double);
template KeepPlan derive_keep_plan_threshold(const Model<double>&, double);
template KeepPlan identity_plan(const Model<float>&);
template KeepPlan identity_plan(const Model<double>&);
template Model<float> compact(const Model<float>&, const KeepPlan&);
template Model<double> compact(const Model<double>&, const KeepPlan&);
template double equivalence_check(const Model<float>&, const Model<float>&, std::size_t, std::uint64_t);
template double equivalence_check(const Model<double>&, const Model<double>&, std::size_t, std::uint64_t);

} // namespace sfp
