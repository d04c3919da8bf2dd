#include "sfp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace sfp {

void Dataset::validate() const {
    if (images.rank() != 4 || images.shape[0] != labels.size()) {
        throw DimensionError("dataset images " + images.shape_str() + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    for (const int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) {
            throw InputError("dataset label " + std::to_string(l) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
    }
}

TensorF Dataset::gather(const std::vector<std::size_t>& idx) const {
    const std::size_t c = images.shape[1], h = images.shape[2], w = images.shape[3];
    const std::size_t sample = c * h * w;
    TensorF out({idx.size(), c, h, w});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= size()) throw InputError("dataset index out of range");
        std::copy_n(images.ptr() + idx[i] * sample, sample, out.ptr() + i * sample);
    }
    return out;
}

ChannelStats compute_channel_stats(const Dataset& train) {
    const std::size_t n = train.images.shape[0], c = train.images.shape[1];
    const std::size_t plane = train.images.shape[2] * train.images.shape[3];
    ChannelStats s;
    s.mean.assign(c, 0.0);
    s.stddev.assign(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const float* p = train.images.ptr() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum += p[j];
                sq += static_cast<double>(p[j]) * p[j];
            }
        }
        const double count = static_cast<double>(n * plane);
        const double mean = sum / count;
        const double var = std::max(sq / count - mean * mean, 1e-12);
        s.mean[ch] = mean;
        s.stddev[ch] = std::sqrt(var);
    }
    return s;
}

void apply_normalization(Dataset& ds, const ChannelStats& stats) {
    const std::size_t n = ds.images.shape[0], c = ds.images.shape[1];
    const std::size_t plane = ds.images.shape[2] * ds.images.shape[3];
    if (stats.mean.size() != c) {
        throw DimensionError("normalization stats for " + std::to_string(stats.mean.size()) +
                             " channels applied to " + std::to_string(c) + "-channel dataset");
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            float* p = ds.images.ptr() + (i * c + ch) * plane;
            const float m = static_cast<float>(stats.mean[ch]);
            const float inv = static_cast<float>(1.0 / stats.stddev[ch]);
            for (std::size_t j = 0; j < plane; ++j) p[j] = (p[j] - m) * inv;
        }
    }
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& buf, std::size_t offset,
                   const std::string& path) {
    if (offset + 4 > buf.size()) {
        throw FormatError("'" + path + "' truncated at byte offset " + std::to_string(offset));
    }
    return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
           (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t subset) {
    const auto img = read_file(images_path);
    const auto lbl = read_file(labels_path);

    const std::uint32_t img_magic = be32(img, 0, images_path);
    if (img_magic != 0x00000803u) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "0x%08x", img_magic);
        throw FormatError("'" + images_path + "': bad image magic " + hex +
                          " at byte offset 0 (want 0x00000803)");
    }
    const std::size_t n_img = be32(img, 4, images_path);
    const std::size_t rows = be32(img, 8, images_path);
    const std::size_t cols = be32(img, 12, images_path);
    if (img.size() != 16 + n_img * rows * cols) {
        throw FormatError("'" + images_path + "' truncated: expected " +
                          std::to_string(16 + n_img * rows * cols) + " bytes, got " +
                          std::to_string(img.size()));
    }

    const std::uint32_t lbl_magic = be32(lbl, 0, labels_path);
    if (lbl_magic != 0x00000801u) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "0x%08x", lbl_magic);
        throw FormatError("'" + labels_path + "': bad label magic " + hex +
                          " at byte offset 0 (want 0x00000801)");
    }
    const std::size_t n_lbl = be32(lbl, 4, labels_path);
    if (lbl.size() != 8 + n_lbl) {
        throw FormatError("'" + labels_path + "' truncated: expected " +
                          std::to_string(8 + n_lbl) + " bytes, got " + std::to_string(lbl.size()));
    }
    if (n_img != n_lbl) {
        throw FormatError("IDX pair mismatch: " + std::to_string(n_img) + " images vs " +
                          std::to_string(n_lbl) + " labels");
    }

    std::size_t n = n_img;
    if (subset > 0 && subset < n) n = subset;

    Dataset ds;
    ds.images = TensorF({n, 1, rows, cols});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* src = img.data() + 16 + i * rows * cols;
        float* dst = ds.images.ptr() + i * rows * cols;
        for (std::size_t j = 0; j < rows * cols; ++j) dst[j] = src[j] / 255.0f;
        ds.labels[i] = lbl[8 + i];
    }
    return ds;
}

Dataset load_cifar_bin(const std::vector<std::string>& paths, std::size_t subset) {
    constexpr std::size_t kRecord = 3073; // 1 label byte + 3*32*32 pixels
    constexpr std::size_t kPixels = 3072;
    std::vector<unsigned char> all;
    for (const auto& path : paths) {
        auto buf = read_file(path);
        if (buf.size() % kRecord != 0) {
            throw FormatError("'" + path + "': size " + std::to_string(buf.size()) +
                              " is not a multiple of the 3073-byte record; trailing partial " +
                              "record at byte offset " +
                              std::to_string(buf.size() - buf.size() % kRecord));
        }
        all.insert(all.end(), buf.begin(), buf.end());
    }
    std::size_t n = all.size() / kRecord;
    if (n == 0) throw FormatError("no CIFAR records found");
    if (subset > 0 && subset < n) n = subset;

    Dataset ds;
    ds.images = TensorF({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = all.data() + i * kRecord;
        ds.labels[i] = rec[0];
        float* dst = ds.images.ptr() + i * 3 * 1024;
        for (std::size_t j = 0; j < kPixels; ++j) dst[j] = rec[1 + j] / 255.0f;
    }
    return ds;
}

namespace {

struct Segment {
    double x0, y0, x1, y1;
};

// Stroke templates per digit in a unit box, y pointing down.
const std::vector<std::vector<Segment>>& digit_strokes() {
    static const std::vector<std::vector<Segment>> strokes = {
        /*0*/ {{0.25, 0.12, 0.75, 0.12}, {0.75, 0.12, 0.75, 0.88}, {0.75, 0.88, 0.25, 0.88}, {0.25, 0.88, 0.25, 0.12}},
        /*1*/ {{0.5, 0.1, 0.5, 0.9}, {0.33, 0.28, 0.5, 0.1}},
        /*2*/ {{0.22, 0.22, 0.78, 0.18}, {0.78, 0.18, 0.78, 0.42}, {0.78, 0.42, 0.22, 0.88}, {0.22, 0.88, 0.8, 0.88}},
        /*3*/ {{0.22, 0.12, 0.78, 0.12}, {0.78, 0.12, 0.78, 0.88}, {0.3, 0.5, 0.78, 0.5}, {0.22, 0.88, 0.78, 0.88}},
        /*4*/ {{0.7, 0.9, 0.7, 0.1}, {0.7, 0.1, 0.22, 0.62}, {0.22, 0.62, 0.85, 0.62}},
        /*5*/ {{0.78, 0.12, 0.24, 0.12}, {0.24, 0.12, 0.24, 0.5}, {0.24, 0.5, 0.75, 0.5}, {0.75, 0.5, 0.75, 0.88}, {0.75, 0.88, 0.22, 0.88}},
        /*6*/ {{0.7, 0.1, 0.26, 0.35}, {0.26, 0.35, 0.26, 0.88}, {0.26, 0.88, 0.76, 0.88}, {0.76, 0.88, 0.76, 0.52}, {0.76, 0.52, 0.26, 0.52}},
        /*7*/ {{0.2, 0.12, 0.8, 0.12}, {0.8, 0.12, 0.42, 0.9}},
        /*8*/ {{0.25, 0.12, 0.75, 0.12}, {0.75, 0.12, 0.75, 0.88}, {0.75, 0.88, 0.25, 0.88}, {0.25, 0.88, 0.25, 0.12}, {0.25, 0.5, 0.75, 0.5}},
        /*9*/ {{0.74, 0.5, 0.26, 0.5}, {0.26, 0.5, 0.26, 0.12}, {0.26, 0.12, 0.74, 0.12}, {0.74, 0.12, 0.74, 0.88}, {0.74, 0.88, 0.3, 0.88}},
    };
    return strokes;
}

double point_segment_dist(double px, double py, const Segment& s) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
    return std::hypot(px - cx, py - cy);
}

void render_digit(int digit, Rng& rng, unsigned char* out28x28) {
    const double scale = 18.0 * rng.uniform(0.8, 1.15);
    const double angle = rng.uniform(-0.22, 0.22);
    const double cx = 14.0 + rng.uniform(-2.5, 2.5);
    const double cy = 14.0 + rng.uniform(-2.5, 2.5);
    const double thick = rng.uniform(1.0, 1.7);
    const double ca = std::cos(angle), sa = std::sin(angle);

    std::vector<Segment> segs;
    for (const auto& s : digit_strokes()[static_cast<std::size_t>(digit)]) {
        auto tx = [&](double x, double y, bool want_x) {
            const double ux = (x - 0.5) * scale, uy = (y - 0.5) * scale;
            return want_x ? cx + ca * ux - sa * uy : cy + sa * ux + ca * uy;
        };
        segs.push_back({tx(s.x0, s.y0, true), tx(s.x0, s.y0, false),
                        tx(s.x1, s.y1, true), tx(s.x1, s.y1, false)});
    }
    for (std::size_t py = 0; py < 28; ++py) {
        for (std::size_t px = 0; px < 28; ++px) {
            double d = 1e9;
            for (const auto& s : segs) d = std::min(d, point_segment_dist(px + 0.5, py + 0.5, s));
            double v = 255.0 * std::clamp(thick + 0.5 - d, 0.0, 1.0);
            v += rng.uniform(-20.0, 20.0);
            out28x28[py * 28 + px] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
        }
    }
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_pair(const std::string& img_path, const std::string& lbl_path, std::size_t n,
                    Rng& rng) {
    std::ofstream img(img_path, std::ios::binary);
    std::ofstream lbl(lbl_path, std::ios::binary);
    if (!img || !lbl) throw FormatError("cannot write IDX files under '" + img_path + "'");
    write_be32(img, 0x00000803u);
    write_be32(img, static_cast<std::uint32_t>(n));
    write_be32(img, 28);
    write_be32(img, 28);
    write_be32(lbl, 0x00000801u);
    write_be32(lbl, static_cast<std::uint32_t>(n));
    std::vector<unsigned char> pixels(28 * 28);
    for (std::size_t i = 0; i < n; ++i) {
        const int digit = static_cast<int>(rng.index(10));
        render_digit(digit, rng, pixels.data());
        img.write(reinterpret_cast<const char*>(pixels.data()), 28 * 28);
        const char label = static_cast<char>(digit);
        lbl.write(&label, 1);
    }
}

} // namespace

std::string idx_train_images(const std::string& dir) { return dir + "/train-images-idx3-ubyte"; }
std::string idx_train_labels(const std::string& dir) { return dir + "/train-labels-idx1-ubyte"; }
std::string idx_test_images(const std::string& dir) { return dir + "/t10k-images-idx3-ubyte"; }
std::string idx_test_labels(const std::string& dir) { return dir + "/t10k-labels-idx1-ubyte"; }

void write_synthetic_digit_idx(const std::string& dir, std::size_t n_train, std::size_t n_test,
                               std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    Rng train_rng(seed);
    write_idx_pair(idx_train_images(dir), idx_train_labels(dir), n_train, train_rng);
    Rng test_rng(seed + 0x9e3779b97f4a7c15ull);
    write_idx_pair(idx_test_images(dir), idx_test_labels(dir), n_test, test_rng);
}

} // namespace sfp
