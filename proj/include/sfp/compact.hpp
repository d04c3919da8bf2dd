#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfp/network.hpp"
#include "sfp/prune.hpp"

namespace sfp {

/// Which filters survive compaction, per conv layer in definition order.
/// Non-compactable layers always keep every output channel; kept input
/// channels follow the producing layer's kept outputs.
struct KeepPlan {
    enum class Source { recorded_selection, norm_threshold, identity };
    Source source = Source::identity;
    std::vector<std::string> layer_ids;
    std::vector<std::vector<std::size_t>> kept_out;
    std::vector<std::vector<std::size_t>> kept_in;
    std::vector<std::size_t> kept_features; // classifier input slice
};

/// Keep the complement of the record's final pruning event.
template <typename T>
KeepPlan derive_keep_plan(const Model<T>& model, const PruneRecord& record);

/// Keep filters whose l2 norm exceeds eps. Agrees with the recorded plan on
/// a freshly pruned model.
template <typename T>
KeepPlan derive_keep_plan_threshold(const Model<T>& model, double eps);

template <typename T>
KeepPlan identity_plan(const Model<T>& model);

/// Slice filter banks, BN parameters (running stats included) and the
/// classifier according to the plan. Retained values are copied bitwise;
/// the result carries an index mapping back to original filter slots.
template <typename T>
Model<T> compact(const Model<T>& model, const KeepPlan& plan);

/// Worst absolute logit difference between the two models over n random
/// inputs, both evaluated in eval mode.
template <typename T>
double equivalence_check(const Model<T>& original, const Model<T>& compact_model,
                         std::size_t n_inputs, std::uint64_t seed);

extern template KeepPlan derive_keep_plan(const Model<float>&, const PruneRecord&);
extern template KeepPlan derive_keep_plan(const Model<double>&, const PruneRecord&);
extern template KeepPlan derive_keep_plan_threshold(const Model<float>&, double);
extern template KeepPlan derive_keep_plan_threshold(const Model<double>&, double);
extern template KeepPlan identity_plan(const Model<float>&);
extern template KeepPlan identity_plan(const Model<double>&);
extern template Model<float> compact(const Model<float>&, const KeepPlan&);
extern template Model<double> compact(const Model<double>&, const KeepPlan&);
extern template double equivalence_check(const Model<float>&, const Model<float>&, std::size_t, std::uint64_t);
extern template double equivalence_check(const Model<double>&, const Model<double>&, std::size_t, std::uint64_t);

} // namespace sfp
