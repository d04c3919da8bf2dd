#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfp/tensor.hpp"

namespace sfp {

/// Labeled image set. Pixels are loaded into [0,1] and then standardized
/// per channel with statistics taken from the training split.
struct Dataset {
    TensorF images; // [N,C,H,W]
    std::vector<int> labels;
    std::string split; // "train" | "test"
    std::size_t classes = 10;

    std::size_t size() const { return labels.size(); }
    void validate() const;

    /// Gather a batch by index list.
    TensorF gather(const std::vector<std::size_t>& idx) const;
};

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

ChannelStats compute_channel_stats(const Dataset& train);
void apply_normalization(Dataset& ds, const ChannelStats& stats);

/// IDX pair loader (big-endian headers, magic 0x00000803 / 0x00000801).
/// Pixels scaled to [0,1]; not yet normalized. subset=0 keeps everything.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t subset = 0);

/// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072 pixel
/// bytes in channel-major order.
Dataset load_cifar_bin(const std::vector<std::string>& paths, std::size_t subset = 0);

/// Deterministic 28x28 grayscale digit renderer used for desk-scale runs
/// when no real dataset is supplied. Writes standard IDX files.
void write_synthetic_digit_idx(const std::string& dir, std::size_t n_train, std::size_t n_test,
                               std::uint64_t seed);

/// Standard IDX file names inside a dataset directory.
std::string idx_train_images(const std::string& dir);
std::string idx_train_labels(const std::string& dir);
std::string idx_test_images(const std::string& dir);
std::string idx_test_labels(const std::string& dir);

} // namespace sfp
