#pragma once

#include <cstdint>

#include "sfp/tensor.hpp"

namespace sfp::testing {

/// Direct six-nested-loop cross-correlation, the trusted reference for the
/// im2col implementation. When `mac_counter` is given it is incremented once
/// per multiply-accumulate, padding taps included.
template <typename T>
Tensor<T> conv2d_naive(const Tensor<T>& input, const Tensor<T>& filters, std::size_t stride,
                       std::size_t pad, std::uint64_t* mac_counter = nullptr);

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                        double hi = 1.0);

/// Resamples entries with |x| < margin away from zero; keeps relu kinks out
/// of finite-difference checks.
template <typename T>
void avoid_kinks(Tensor<T>& t, Rng& rng, double margin = 1e-3);

extern template Tensor<float> conv2d_naive(const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t, std::uint64_t*);
extern template Tensor<double> conv2d_naive(const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t, std::uint64_t*);
extern template Tensor<float> random_tensor(std::vector<std::size_t>, Rng&, double, double);
extern template Tensor<double> random_tensor(std::vector<std::size_t>, Rng&, double, double);
extern template void avoid_kinks(Tensor<float>&, Rng&, double);
extern template void avoid_kinks(Tensor<double>&, Rng&, double);

} // namespace sfp::testing
