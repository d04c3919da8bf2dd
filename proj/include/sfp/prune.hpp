#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sfp/dataset.hpp"
#include "sfp/network.hpp"

namespace sfp {

/// Piecewise-constant learning-rate schedule keyed by 0-based epoch index.
struct LrSchedule {
    std::vector<std::pair<std::size_t, double>> steps{{0, 0.1}};

    double at(std::size_t epoch_index) const;
    static LrSchedule parse(const std::string& text); // "0:0.1,6:0.02,9:0.004"
    std::string to_string() const;
};

struct SfpConfig {
    double pruning_rate = 0.3; // P, uniform over all prunable layers
    double norm_order = 2.0;   // p
    std::size_t interval = 1;  // epochs between pruning events
    std::size_t epoch_max = 10;
    LrSchedule lr_schedule;
    bool pretrained_mode = false; // divides all schedule learning rates by 10
    std::uint64_t seed = 1;

    std::size_t batch_size = 64;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool prune_at_init = false;
    /// Clear optimizer momentum of zeroized filters at each event. Off by
    /// default: with zeroed BN affine parameters the gradient into a pruned
    /// filter vanishes, so retained momentum is what re-opens the update
    /// path at the next step and lets the filter reconstruct from data.
    bool reset_pruned_momentum = false;
    bool deterministic = true;
    /// Pad-4 random crop + horizontal flip, for full CIFAR-style runs.
    bool augment = false;

    void validate() const;
};

/// One pruning event: which filters were zeroized, per prunable layer.
struct PruneEvent {
    std::size_t epoch = 0; // 0 = before the first training epoch
    bool terminal = false;
    std::vector<std::string> layer_ids;               // enumeration order
    std::vector<std::vector<std::size_t>> selected;   // strictly increasing
    std::vector<std::vector<double>> norms;           // snapshot before zeroizing
};

struct PruneRecord {
    std::vector<PruneEvent> events;

    const PruneEvent* final_event() const;
};

/// CSV rows: event_epoch, layer_id, filter_index, norm_value.
void write_prune_record_csv(const PruneRecord& record, std::ostream& out);
std::string prune_record_csv(const PruneRecord& record);

/// Per-filter lp norm, 64-bit accumulation regardless of model precision.
template <typename T>
std::vector<double> filter_norms(const ConvLayer<T>& layer, double p);

/// Indices of the floor(N*P) smallest norms; ties go to the lower index.
std::vector<std::size_t> select_filters(const std::vector<double>& norms, double pruning_rate);

/// Set selected filters and their BN affine parameters to zero.
template <typename T>
void zeroize(Model<T>& model, const std::map<std::string, std::vector<std::size_t>>& selection);

/// Fraction of the event's pruned filters that regained nonzero l2 norm.
template <typename T>
double reconstruction_stats(const PruneEvent& event, const Model<T>& model_after_next_epoch);

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    /// Reconstruction fraction for the previous pruning event, measured after
    /// this epoch's updates and before this epoch's event; -1 when no prior
    /// event exists.
    double reconstruction = -1.0;
    std::vector<std::size_t> zero_filters; // per prunable layer, at epoch end
};

struct TrainLog {
    std::vector<EpochMetrics> epochs;
};

struct SfpResult {
    Model<float> model;
    PruneRecord record;
    TrainLog log;
};

/// The training loop: each epoch trains on the full split (reconstruction),
/// then prunes every `interval` epochs; a terminal prune always follows the
/// last epoch so the returned model is in a pruned state.
/// `test` may be null. When `checkpoint_path` is nonempty the model state is
/// saved there after every completed epoch, and a non-finite loss aborts
/// with a reference to that checkpoint.
SfpResult sfp_train(Model<float> model, const Dataset& train, const Dataset* test,
                    const SfpConfig& cfg, const std::string& checkpoint_path = "");

/// Eval-mode classification accuracy in [0,1].
template <typename T>
double evaluate_accuracy(const Model<T>& model, const Dataset& data, std::size_t batch_size = 256);

extern template std::vector<double> filter_norms(const ConvLayer<float>&, double);
extern template std::vector<double> filter_norms(const ConvLayer<double>&, double);
extern template void zeroize(Model<float>&, const std::map<std::string, std::vector<std::size_t>>&);
extern template void zeroize(Model<double>&, const std::map<std::string, std::vector<std::size_t>>&);
extern template double reconstruction_stats(const PruneEvent&, const Model<float>&);
extern template double reconstruction_stats(const PruneEvent&, const Model<double>&);
extern template double evaluate_accuracy(const Model<float>&, const Dataset&, std::size_t);
extern template double evaluate_accuracy(const Model<double>&, const Dataset&, std::size_t);

} // namespace sfp
