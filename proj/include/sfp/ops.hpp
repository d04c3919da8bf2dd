#pragma once

#include <type_traits>
#include <vector>

#include "sfp/tensor.hpp"

namespace sfp::ops {

enum class Mode { train, eval };

/// Cross-correlation of [B,Cin,H,W] with [Cout,Cin,K,K], no bias.
/// Implemented as im2col + matrix multiply.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& filters,
                 std::size_t stride, std::size_t pad);

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> filters;
};

/// Gradients of sum(upstream * conv2d(input, filters)) w.r.t. input and filters.
/// grad_filters depends only on input and upstream, so it is generally nonzero
/// even when the filters themselves are all zero.
template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& upstream, const Tensor<T>& input,
                         const Tensor<T>& filters, std::size_t stride, std::size_t pad);

template <typename T>
struct BnStats {
    Tensor<T> mean; // [C]
    Tensor<T> var;  // [C]
};

template <typename T>
struct BnCache {
    Tensor<T> xhat;    // normalized input, same shape as input
    Tensor<T> inv_std; // [C]
};

/// Per-channel batch normalization with affine transform over [B,C,H,W].
/// Train mode normalizes with batch statistics and updates the running stats
/// by exponential moving average; eval mode uses the running stats.
/// Pass a cache pointer in train mode to enable the backward pass.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BnStats<T>& running, Mode mode, double eps, double stat_momentum,
                     std::type_identity_t<BnCache<T>*> cache = nullptr);

template <typename T>
struct BnGrads {
    Tensor<T> input;
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
BnGrads<T> batch_norm_grad(const Tensor<T>& upstream, const BnCache<T>& cache,
                           const Tensor<T>& gamma);

/// Elementwise max(0, x). The subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& upstream, const Tensor<T>& x);

/// Mean over the spatial extent: [B,C,H,W] -> [B,C].
template <typename T>
Tensor<T> avg_pool_global(const Tensor<T>& x);

template <typename T>
Tensor<T> avg_pool_global_grad(const Tensor<T>& upstream, std::size_t h, std::size_t w);

/// Affine map: [B,F] x [O,F] + [O] -> [B,O].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_grad(const Tensor<T>& upstream, const Tensor<T>& x,
                           const Tensor<T>& weight);

template <typename T>
struct CeResult {
    double loss = 0.0;
    Tensor<T> grad_logits;
};

/// Mean cross-entropy over the batch, stabilized by max subtraction.
/// grad_logits = (softmax - onehot) / B.
template <typename T>
CeResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

/// SGD with momentum and weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
              double lr, double momentum, double weight_decay);

/// Row-major matrix multiply C (+)= A[M,K] * B[K,N]; building block for conv.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

template <typename T>
bool all_finite(const Tensor<T>& t);

extern template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t);
extern template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t);
extern template ConvGrads<float> conv2d_grad(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t);
extern template ConvGrads<double> conv2d_grad(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t);
extern template Tensor<float> batch_norm(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, BnStats<float>&, Mode, double, double, BnCache<float>*);
extern template Tensor<double> batch_norm(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, BnStats<double>&, Mode, double, double, BnCache<double>*);
extern template BnGrads<float> batch_norm_grad(const Tensor<float>&, const BnCache<float>&, const Tensor<float>&);
extern template BnGrads<double> batch_norm_grad(const Tensor<double>&, const BnCache<double>&, const Tensor<double>&);
extern template Tensor<float> relu(const Tensor<float>&);
extern template Tensor<double> relu(const Tensor<double>&);
extern template Tensor<float> relu_grad(const Tensor<float>&, const Tensor<float>&);
extern template Tensor<double> relu_grad(const Tensor<double>&, const Tensor<double>&);
extern template Tensor<float> avg_pool_global(const Tensor<float>&);
extern template Tensor<double> avg_pool_global(const Tensor<double>&);
extern template Tensor<float> avg_pool_global_grad(const Tensor<float>&, std::size_t, std::size_t);
extern template Tensor<double> avg_pool_global_grad(const Tensor<double>&, std::size_t, std::size_t);
extern template Tensor<float> linear(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
extern template Tensor<double> linear(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
extern template LinearGrads<float> linear_grad(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
extern template LinearGrads<double> linear_grad(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
extern template CeResult<float> softmax_cross_entropy(const Tensor<float>&, const std::vector<int>&);
extern template CeResult<double> softmax_cross_entropy(const Tensor<double>&, const std::vector<int>&);
extern template void sgd_step(Tensor<float>&, const Tensor<float>&, Tensor<float>&, double, double, double);
extern template void sgd_step(Tensor<double>&, const Tensor<double>&, Tensor<double>&, double, double, double);
extern template void gemm_accumulate(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
extern template void gemm_accumulate(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
extern template bool all_finite(const Tensor<float>&);
extern template bool all_finite(const Tensor<double>&);

} // namespace sfp::ops
