#include "sfp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "sfp/flops.hpp"

namespace sfp {

namespace {

struct Timing {
    double mean_ms;
    double std_ms;
};

Timing time_forward(const Model<float>& model, const TensorF& batch, std::size_t warmups,
                    std::size_t reps) {
    using clock = std::chrono::steady_clock;
    volatile float sink = 0.0f;
    for (std::size_t i = 0; i < warmups; ++i) {
        const TensorF out = forward_eval<float>(model, batch, nullptr);
        sink = sink + out[0];
    }
    std::vector<double> times(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = clock::now();
        const TensorF out = forward_eval<float>(model, batch, nullptr);
        const auto t1 = clock::now();
        sink = sink + out[0];
        times[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    (void)sink;

    // Median of group means, robust against scheduler noise.
    constexpr std::size_t kGroups = 5;
    const std::size_t per_group = std::max<std::size_t>(1, reps / kGroups);
    std::vector<double> group_means;
    for (std::size_t g = 0; g * per_group < reps; ++g) {
        const std::size_t lo = g * per_group;
        const std::size_t hi = std::min(lo + per_group, reps);
        double sum = 0.0;
        for (std::size_t i = lo; i < hi; ++i) sum += times[i];
        group_means.push_back(sum / static_cast<double>(hi - lo));
    }
    std::sort(group_means.begin(), group_means.end());
    const double median = group_means[group_means.size() / 2];

    double mean = 0.0;
    for (const double t : times) mean += t;
    mean /= static_cast<double>(reps);
    double var = 0.0;
    for (const double t : times) var += (t - mean) * (t - mean);
    var /= static_cast<double>(reps);
    return {median, std::sqrt(var)};
}

} // namespace

TimingReport wallclock_bench(const Model<float>& baseline, const Model<float>& compact_model,
                             std::size_t batch, std::size_t reps, std::uint64_t seed) {
    if (reps < 10) throw ConfigError("wallclock bench needs reps >= 10, got " + std::to_string(reps));
    if (batch < 1) throw ConfigError("wallclock bench needs batch >= 1");
    constexpr std::size_t kWarmups = 3;

    const auto& spec = baseline.spec;
    TensorF inputs({batch, spec.input_channels, spec.input_h, spec.input_w});
    Rng rng(seed);
    rng.fill_normal(inputs, 0.0, 1.0);

    TimingReport report;
    report.batch = batch;
    report.warmups = kWarmups;
    report.repetitions = reps;
    report.threads = 1;

    const Timing base = time_forward(baseline, inputs, kWarmups, reps);
    const Timing pruned = time_forward(compact_model, inputs, kWarmups, reps);
    report.baseline_mean_ms = base.mean_ms;
    report.baseline_std_ms = base.std_ms;
    report.compact_mean_ms = pruned.mean_ms;
    report.compact_std_ms = pruned.std_ms;
    report.realistic_speedup = 1.0 - pruned.mean_ms / base.mean_ms;
    report.theoretical_speedup =
        1.0 - static_cast<double>(model_macs(compact_model)) /
                  static_cast<double>(model_macs(baseline));
    return report;
}

std::string TimingReport::to_text() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "batch %zu, %zu reps after %zu warmups, %zu thread(s)\n",
                  batch, repetitions, warmups, threads);
    os << line;
    std::snprintf(line, sizeof line, "baseline forward: %.3f ms/batch (std %.3f)\n",
                  baseline_mean_ms, baseline_std_ms);
    os << line;
    std::snprintf(line, sizeof line, "compact forward:  %.3f ms/batch (std %.3f)\n",
                  compact_mean_ms, compact_std_ms);
    os << line;
    std::snprintf(line, sizeof line, "realistic speedup:   %.1f%%\n", 100.0 * realistic_speedup);
    os << line;
    std::snprintf(line, sizeof line, "theoretical speedup: %.1f%%\n", 100.0 * theoretical_speedup);
    os << line;
    return os.str();
}

std::string TimingReport::to_csv() const {
    std::ostringstream os;
    os << "batch,warmups,repetitions,threads,baseline_mean_ms,baseline_std_ms,"
       << "compact_mean_ms,compact_std_ms,realistic_speedup,theoretical_speedup\n";
    os << batch << ',' << warmups << ',' << repetitions << ',' << threads << ','
       << baseline_mean_ms << ',' << baseline_std_ms << ',' << compact_mean_ms << ','
       << compact_std_ms << ',' << realistic_speedup << ',' << theoretical_speedup << '\n';
    return os.str();
}

std::string TimingReport::to_json() const {
    nlohmann::json j;
    j["batch"] = batch;
    j["warmups"] = warmups;
    j["repetitions"] = repetitions;
    j["threads"] = threads;
    j["baseline_mean_ms"] = baseline_mean_ms;
    j["baseline_std_ms"] = baseline_std_ms;
    j["compact_mean_ms"] = compact_mean_ms;
    j["compact_std_ms"] = compact_std_ms;
    j["realistic_speedup"] = realistic_speedup;
    j["theoretical_speedup"] = theoretical_speedup;
    return j.dump(2);
}

} // namespace sfp
