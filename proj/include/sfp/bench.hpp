#pragma once

#include <cstdint>
#include <string>

#include "sfp/network.hpp"

namespace sfp {

struct TimingReport {
    std::size_t batch = 0;
    std::size_t warmups = 0;
    std::size_t repetitions = 0;
    std::size_t threads = 1;
    double baseline_mean_ms = 0.0;
    double baseline_std_ms = 0.0;
    double compact_mean_ms = 0.0;
    double compact_std_ms = 0.0;
    double realistic_speedup = 0.0;   // 1 - pruned_time / baseline_time
    double theoretical_speedup = 0.0; // 1 - pruned_macs / baseline_macs

    std::string to_text() const;
    std::string to_csv() const;
    std::string to_json() const;
};

/// Times eval-mode forward passes of both models on identical deterministic
/// inputs. Single-threaded, monotonic clock, median-of-means over groups of
/// repetitions. Requires reps >= 10; runs 3 warmups per model.
TimingReport wallclock_bench(const Model<float>& baseline, const Model<float>& compact_model,
                             std::size_t batch, std::size_t reps, std::uint64_t seed = 7);

} // namespace sfp
