#include "sfp/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sfp/serialize.hpp"

namespace sfp {

double LrSchedule::at(std::size_t epoch_index) const {
    if (steps.empty()) throw ConfigError("empty learning-rate schedule");
    double lr = steps.front().second;
    for (const auto& [start, value] : steps) {
        if (start <= epoch_index) lr = value;
    }
    return lr;
}

LrSchedule LrSchedule::parse(const std::string& text) {
    LrSchedule s;
    s.steps.clear();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("bad lr schedule entry '" + item + "', want epoch:lr");
        }
        try {
            s.steps.emplace_back(std::stoul(item.substr(0, colon)),
                                 std::stod(item.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ConfigError("bad lr schedule entry '" + item + "'");
        }
    }
    if (s.steps.empty()) throw ConfigError("empty lr schedule '" + text + "'");
    std::sort(s.steps.begin(), s.steps.end());
    for (const auto& [e, lr] : s.steps) {
        (void)e;
        if (lr <= 0) throw ConfigError("lr schedule values must be > 0");
    }
    return s;
}

std::string LrSchedule::to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) os << ',';
        os << steps[i].first << ':' << steps[i].second;
    }
    return os.str();
}

void SfpConfig::validate() const {
    if (pruning_rate < 0 || pruning_rate >= 1) {
        throw ConfigError("pruning_rate must be in [0,1), got " + std::to_string(pruning_rate));
    }
    if (norm_order <= 0) throw ConfigError("norm_order must be > 0");
    if (interval < 1) throw ConfigError("interval must be >= 1");
    if (epoch_max < 1) throw ConfigError("epoch_max must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    lr_schedule.at(0);
}

const PruneEvent* PruneRecord::final_event() const {
    return events.empty() ? nullptr : &events.back();
}

void write_prune_record_csv(const PruneRecord& record, std::ostream& out) {
    out << "event_epoch,layer_id,filter_index,norm_value\n";
    for (const auto& ev : record.events) {
        for (std::size_t l = 0; l < ev.layer_ids.size(); ++l) {
            for (const auto idx : ev.selected[l]) {
                out << ev.epoch << ',' << ev.layer_ids[l] << ',' << idx << ','
                    << ev.norms[l][idx] << '\n';
            }
        }
    }
}

std::string prune_record_csv(const PruneRecord& record) {
    std::ostringstream os;
    os.precision(17);
    write_prune_record_csv(record, os);
    return os.str();
}

template <typename T>
std::vector<double> filter_norms(const ConvLayer<T>& layer, double p) {
    if (p <= 0) throw ConfigError("norm order must be > 0");
    const std::size_t cout = layer.out_channels();
    const std::size_t per_filter = layer.filters.numel() / cout;
    std::vector<double> norms(cout);
    for (std::size_t j = 0; j < cout; ++j) {
        const T* w = layer.filters.ptr() + j * per_filter;
        double acc = 0.0;
        if (p == 2.0) {
            for (std::size_t i = 0; i < per_filter; ++i)
                acc += static_cast<double>(w[i]) * static_cast<double>(w[i]);
            norms[j] = std::sqrt(acc);
        } else if (p == 1.0) {
            for (std::size_t i = 0; i < per_filter; ++i) acc += std::fabs(static_cast<double>(w[i]));
            norms[j] = acc;
        } else {
            for (std::size_t i = 0; i < per_filter; ++i)
                acc += std::pow(std::fabs(static_cast<double>(w[i])), p);
            norms[j] = std::pow(acc, 1.0 / p);
        }
    }
    return norms;
}

std::vector<std::size_t> select_filters(const std::vector<double>& norms, double pruning_rate) {
    if (pruning_rate < 0 || pruning_rate >= 1) {
        throw ConfigError("pruning rate must be in [0,1)");
    }
    const std::size_t n = norms.size();
    // floor(N*P); the epsilon shields exact products like 10*0.3 from
    // landing one ulp below the integer.
    const auto count = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * pruning_rate + 1e-9));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
    std::vector<std::size_t> selected(order.begin(), order.begin() + count);
    std::sort(selected.begin(), selected.end());
    return selected;
}

template <typename T>
void zeroize(Model<T>& model, const std::map<std::string, std::vector<std::size_t>>& selection) {
    for (const auto& [layer_id, indices] : selection) {
        auto* layer = find_layer(model, layer_id);
        if (!layer) throw InputError("zeroize: no layer named '" + layer_id + "'");
        const std::size_t cout = layer->out_channels();
        const std::size_t per_filter = layer->filters.numel() / cout;
        for (const auto j : indices) {
            if (j >= cout) {
                throw InputError("zeroize: filter index " + std::to_string(j) +
                                 " out of range for layer '" + layer_id + "' with " +
                                 std::to_string(cout) + " filters");
            }
            std::fill_n(layer->filters.ptr() + j * per_filter, per_filter, T(0));
            layer->bn_gamma[j] = T(0);
            layer->bn_beta[j] = T(0);
        }
    }
}

template <typename T>
double reconstruction_stats(const PruneEvent& event, const Model<T>& model_after_next_epoch) {
    std::size_t total = 0, recovered = 0;
    for (std::size_t l = 0; l < event.layer_ids.size(); ++l) {
        const auto* layer = find_layer(model_after_next_epoch, event.layer_ids[l]);
        if (!layer) throw InputError("reconstruction_stats: no layer '" + event.layer_ids[l] + "'");
        const auto norms = filter_norms(*layer, 2.0);
        for (const auto j : event.selected[l]) {
            ++total;
            if (norms[j] > 0.0) ++recovered;
        }
    }
    if (total == 0) return 1.0;
    return static_cast<double>(recovered) / static_cast<double>(total);
}

template <typename T>
double evaluate_accuracy(const Model<T>& model, const Dataset& data, std::size_t batch_size) {
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, data.size());
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor<T> batch = data.gather(idx).template cast<T>();
        const Tensor<T> logits = forward_eval<T>(model, batch, nullptr);
        const std::size_t classes = logits.shape[1];
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const T* row = logits.ptr() + b * classes;
            std::size_t best = 0;
            for (std::size_t j = 1; j < classes; ++j)
                if (row[j] > row[best]) best = j;
            if (static_cast<int>(best) == data.labels[idx[b]]) ++correct;
        }
    }
    return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

namespace {

struct PruneContext {
    std::vector<std::pair<std::string, std::size_t>> prunable; // (id, width)
};

PruneEvent run_prune_event(Model<float>& model, ModelGrads<float>& velocity,
                           const SfpConfig& cfg, const PruneContext& ctx, std::size_t epoch,
                           bool terminal) {
    PruneEvent ev;
    ev.epoch = epoch;
    ev.terminal = terminal;
    std::map<std::string, std::vector<std::size_t>> selection;
    for (const auto& [id, width] : ctx.prunable) {
        (void)width;
        const auto* layer = find_layer(model, id);
        auto norms = filter_norms(*layer, cfg.norm_order);
        auto selected = select_filters(norms, cfg.pruning_rate);
        ev.layer_ids.push_back(id);
        ev.norms.push_back(std::move(norms));
        ev.selected.push_back(selected);
        selection.emplace(id, std::move(selected));
    }
    zeroize(model, selection);
    if (cfg.reset_pruned_momentum) {
        for (std::size_t c = 0; c < model.convs.size(); ++c) {
            const auto it = selection.find(model.convs[c].id);
            if (it == selection.end()) continue;
            auto& vel = velocity.convs[c].filters;
            const std::size_t per_filter = vel.numel() / model.convs[c].out_channels();
            for (const auto j : it->second) {
                std::fill_n(vel.ptr() + j * per_filter, per_filter, 0.0f);
            }
        }
    }
    return ev;
}

void check_gradients_finite(const Model<float>& model, const ModelGrads<float>& grads,
                            std::size_t epoch) {
    for (std::size_t c = 0; c < model.convs.size(); ++c) {
        if (!ops::all_finite(grads.convs[c].filters) || !ops::all_finite(grads.convs[c].bn_gamma) ||
            !ops::all_finite(grads.convs[c].bn_beta)) {
            throw TrainingError("non-finite gradient in layer '" + model.convs[c].id +
                                "' at epoch " + std::to_string(epoch));
        }
    }
    if (!ops::all_finite(grads.fc_weight) || !ops::all_finite(grads.fc_bias)) {
        throw TrainingError("non-finite gradient in layer 'fc' at epoch " + std::to_string(epoch));
    }
}

// Pad-4 random crop plus horizontal flip, applied in place per sample.
void augment_batch(TensorF& batch, std::mt19937_64& rng) {
    const std::size_t n = batch.shape[0], c = batch.shape[1];
    const std::size_t h = batch.shape[2], w = batch.shape[3];
    constexpr std::size_t kPad = 4;
    std::vector<float> padded((h + 2 * kPad) * (w + 2 * kPad));
    std::uniform_int_distribution<std::size_t> shift(0, 2 * kPad);
    std::uniform_int_distribution<int> coin(0, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t dy = shift(rng), dx = shift(rng);
        const bool flip = coin(rng) == 1;
        for (std::size_t ch = 0; ch < c; ++ch) {
            float* plane = batch.ptr() + (i * c + ch) * h * w;
            std::fill(padded.begin(), padded.end(), 0.0f);
            for (std::size_t y = 0; y < h; ++y) {
                std::copy_n(plane + y * w, w, padded.data() + (y + kPad) * (w + 2 * kPad) + kPad);
            }
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t sx = flip ? dx + (w - 1 - x) : dx + x;
                    plane[y * w + x] = padded[(y + dy) * (w + 2 * kPad) + sx];
                }
            }
        }
    }
}

std::vector<std::size_t> zero_filter_counts(const Model<float>& model, const PruneContext& ctx) {
    std::vector<std::size_t> counts;
    counts.reserve(ctx.prunable.size());
    for (const auto& [id, width] : ctx.prunable) {
        (void)width;
        const auto norms = filter_norms(*find_layer(model, id), 2.0);
        counts.push_back(static_cast<std::size_t>(
            std::count_if(norms.begin(), norms.end(), [](double v) { return v == 0.0; })));
    }
    return counts;
}

} // namespace

SfpResult sfp_train(Model<float> model, const Dataset& train, const Dataset* test,
                    const SfpConfig& cfg, const std::string& checkpoint_path) {
    cfg.validate();
    train.validate();
    if (test) test->validate();
    if (train.size() == 0) throw ConfigError("empty training set");
    model.mode = ops::Mode::train;

    SfpResult result{std::move(model), {}, {}};
    Model<float>& m = result.model;

    PruneContext ctx{enumerate_prunable(m)};
    ModelGrads<float> velocity = ModelGrads<float>::zeros_like(m);

    if (cfg.prune_at_init) {
        result.record.events.push_back(run_prune_event(m, velocity, cfg, ctx, 0, false));
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epoch_max; ++epoch) {
        double lr = cfg.lr_schedule.at(epoch - 1);
        if (cfg.pretrained_mode) lr /= 10.0;

        // Deterministic per-epoch shuffle.
        std::mt19937_64 shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ull + epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::vector<std::size_t> batch_idx;
        std::vector<int> batch_labels;
        for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, train.size());
            batch_idx.assign(order.begin() + start, order.begin() + end);
            batch_labels.clear();
            for (const auto i : batch_idx) batch_labels.push_back(train.labels[i]);
            TensorF batch = train.gather(batch_idx);
            if (cfg.augment) augment_batch(batch, shuffle_rng);

            auto bw = backward(m, batch, batch_labels);
            if (!std::isfinite(bw.loss)) {
                throw TrainingError(
                    "non-finite loss at epoch " + std::to_string(epoch) + "; last good state: " +
                    (checkpoint_path.empty()
                         ? "epoch " + std::to_string(epoch - 1) + " (no checkpoint configured)"
                         : "checkpoint '" + checkpoint_path + "' (epoch " +
                               std::to_string(epoch - 1) + ")"));
            }
            check_gradients_finite(m, bw.grads, epoch);

            for (std::size_t c = 0; c < m.convs.size(); ++c) {
                ops::sgd_step(m.convs[c].filters, bw.grads.convs[c].filters,
                              velocity.convs[c].filters, lr, cfg.momentum, cfg.weight_decay);
                ops::sgd_step(m.convs[c].bn_gamma, bw.grads.convs[c].bn_gamma,
                              velocity.convs[c].bn_gamma, lr, cfg.momentum, cfg.weight_decay);
                ops::sgd_step(m.convs[c].bn_beta, bw.grads.convs[c].bn_beta,
                              velocity.convs[c].bn_beta, lr, cfg.momentum, cfg.weight_decay);
            }
            ops::sgd_step(m.fc_weight, bw.grads.fc_weight, velocity.fc_weight, lr, cfg.momentum,
                          cfg.weight_decay);
            ops::sgd_step(m.fc_bias, bw.grads.fc_bias, velocity.fc_bias, lr, cfg.momentum,
                          cfg.weight_decay);

            loss_sum += bw.loss * static_cast<double>(batch_idx.size());
            const std::size_t classes = bw.logits.shape[1];
            for (std::size_t b = 0; b < batch_idx.size(); ++b) {
                const float* row = bw.logits.ptr() + b * classes;
                std::size_t best = 0;
                for (std::size_t j = 1; j < classes; ++j)
                    if (row[j] > row[best]) best = j;
                if (static_cast<int>(best) == batch_labels[b]) ++correct;
            }
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.lr = lr;
        metrics.train_loss = loss_sum / static_cast<double>(train.size());
        metrics.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());

        // Reconstruction for the previous event, measured on the freshly
        // trained state before this epoch's own event.
        if (!result.record.events.empty()) {
            metrics.reconstruction = reconstruction_stats(result.record.events.back(), m);
        }

        const bool last_epoch = epoch == cfg.epoch_max;
        if (epoch % cfg.interval == 0 || last_epoch) {
            result.record.events.push_back(
                run_prune_event(m, velocity, cfg, ctx, epoch, last_epoch));
        }

        metrics.zero_filters = zero_filter_counts(m, ctx);
        if (test) metrics.test_accuracy = evaluate_accuracy(m, *test);
        result.log.epochs.push_back(std::move(metrics));

        if (!checkpoint_path.empty()) save_model(m, checkpoint_path);
    }

    // Expose the terminal selection for compaction.
    const auto* final_ev = result.record.final_event();
    if (final_ev) {
        m.final_selection.clear();
        for (std::size_t l = 0; l < final_ev->layer_ids.size(); ++l) {
            m.final_selection[final_ev->layer_ids[l]] = final_ev->selected[l];
        }
    }
    m.mode = ops::Mode::eval;
    return result;
}

template std::vector<double> filter_norms(const ConvLayer<float>&, double);
template std::vector<double> filter_norms(const ConvLayer<double>&, double);
template void zeroize(Model<float>&, const std::map<std::string, std::vector<std::size_t>>&);
template void zeroize(Model<double>&, const std::map<std::string, std::vector<std::size_t>>&);
template double reconstruction_stats(const PruneEvent&, const Model<float>&);
template double reconstruction_stats(const PruneEvent&, const Model<double>&);
template double evaluate_accuracy(const Model<float>&, const Dataset&, std::size_t);
template double evaluate_accuracy(const Model<double>&, const Dataset&, std::size_t);

} // namespace sfp
