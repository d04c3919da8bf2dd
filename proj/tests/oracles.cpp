#include "oracles.hpp"

#include <cmath>

namespace sfp::testing {

template <typename T>
Tensor<T> conv2d_naive(const Tensor<T>& input, const Tensor<T>& filters, std::size_t stride,
                       std::size_t pad, std::uint64_t* mac_counter) {
    const std::size_t batch = input.shape[0], cin = input.shape[1];
    const std::size_t h = input.shape[2], w = input.shape[3];
    const std::size_t cout = filters.shape[0], k = filters.shape[2];
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (w + 2 * pad - k) / stride + 1;
    Tensor<T> out({batch, cout, oh, ow});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    T acc = 0;
                    for (std::size_t c = 0; c < cin; ++c) {
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                if (mac_counter) ++*mac_counter;
                                const std::ptrdiff_t iy =
                                    static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
                                    ix >= static_cast<std::ptrdiff_t>(w)) {
                                    continue;
                                }
                                acc += input.at4(b, c, static_cast<std::size_t>(iy),
                                                 static_cast<std::size_t>(ix)) *
                                       filters.at4(o, c, ky, kx);
                            }
                        }
                    }
                    out.at4(b, o, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    rng.fill_uniform(t, lo, hi);
    return t;
}

template <typename T>
void avoid_kinks(Tensor<T>& t, Rng& rng, double margin) {
    for (auto& v : t.data) {
        while (std::fabs(static_cast<double>(v)) < margin) {
            v = static_cast<T>(rng.uniform(-1.0, 1.0));
        }
    }
}

template Tensor<float> conv2d_naive(const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t, std::uint64_t*);
template Tensor<double> conv2d_naive(const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t, std::uint64_t*);
template Tensor<float> random_tensor(std::vector<std::size_t>, Rng&, double, double);
template Tensor<double> random_tensor(std::vector<std::size_t>, Rng&, double, double);
template void avoid_kinks(Tensor<float>&, Rng&, double);
template void avoid_kinks(Tensor<double>&, Rng&, double);

} // namespace sfp::testing
