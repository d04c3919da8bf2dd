#include "sfp/ops.hpp"

#include <algorithm>
#include <cmath>

namespace sfp::ops {

namespace {

void check_rank4(const char* what, const std::vector<std::size_t>& shape) {
    if (shape.size() != 4) {
        throw DimensionError(std::string(what) + " must have rank 4, got rank " +
                             std::to_string(shape.size()));
    }
}

struct ConvDims {
    std::size_t batch, cin, h, w;
    std::size_t cout, k;
    std::size_t oh, ow;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& filters,
                   std::size_t stride, std::size_t pad) {
    check_rank4("conv2d input", input.shape);
    check_rank4("conv2d filters", filters.shape);
    if (filters.shape[2] != filters.shape[3]) {
        throw DimensionError("conv2d filters must be square, got " + filters.shape_str());
    }
    if (input.shape[1] != filters.shape[1]) {
        throw DimensionError("conv2d channel mismatch: input " + input.shape_str() +
                             " vs filters " + filters.shape_str());
    }
    if (stride == 0) throw ConfigError("conv2d stride must be positive");
    ConvDims d{};
    d.batch = input.shape[0];
    d.cin = input.shape[1];
    d.h = input.shape[2];
    d.w = input.shape[3];
    d.cout = filters.shape[0];
    d.k = filters.shape[2];
    const std::size_t padded_h = d.h + 2 * pad;
    const std::size_t padded_w = d.w + 2 * pad;
    // Floor division; leftover rows beyond the last window are dropped.
    if (padded_h < d.k || padded_w < d.k) {
        throw ConfigError("conv2d output extent is not positive for input " + input.shape_str() +
                          ", kernel " + std::to_string(d.k) + ", stride " +
                          std::to_string(stride) + ", pad " + std::to_string(pad));
    }
    d.oh = (padded_h - d.k) / stride + 1;
    d.ow = (padded_w - d.k) / stride + 1;
    return d;
}

// Unfold one sample [Cin,H,W] into [Cin*K*K, OH*OW]; out-of-bounds taps are zero.
template <typename T>
void im2col(const T* src, const ConvDims& d, std::size_t stride, std::size_t pad, T* cols) {
    const std::size_t patch = d.cin * d.k * d.k;
    const std::size_t spatial = d.oh * d.ow;
    std::fill(cols, cols + patch * spatial, T(0));
    for (std::size_t c = 0; c < d.cin; ++c) {
        for (std::size_t kh = 0; kh < d.k; ++kh) {
            for (std::size_t kw = 0; kw < d.k; ++kw) {
                T* row = cols + ((c * d.k + kh) * d.k + kw) * spatial;
                for (std::size_t oy = 0; oy < d.oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + kh) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    const T* src_row = src + (c * d.h + iy) * d.w;
                    for (std::size_t ox = 0; ox < d.ow; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kw) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        row[oy * d.ow + ox] = src_row[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add the column representation back onto one sample [Cin,H,W].
template <typename T>
void col2im_add(const T* cols, const ConvDims& d, std::size_t stride, std::size_t pad, T* dst) {
    const std::size_t spatial = d.oh * d.ow;
    for (std::size_t c = 0; c < d.cin; ++c) {
        for (std::size_t kh = 0; kh < d.k; ++kh) {
            for (std::size_t kw = 0; kw < d.k; ++kw) {
                const T* row = cols + ((c * d.k + kh) * d.k + kw) * spatial;
                for (std::size_t oy = 0; oy < d.oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + kh) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    T* dst_row = dst + (c * d.h + iy) * d.w;
                    for (std::size_t ox = 0; ox < d.ow; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kw) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        dst_row[ix] += row[oy * d.ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& filters,
                 std::size_t stride, std::size_t pad) {
    const ConvDims d = conv_dims(input, filters, stride, pad);
    Tensor<T> out({d.batch, d.cout, d.oh, d.ow});
    const std::size_t patch = d.cin * d.k * d.k;
    const std::size_t spatial = d.oh * d.ow;
    std::vector<T> cols(patch * spatial);
    for (std::size_t b = 0; b < d.batch; ++b) {
        im2col(input.ptr() + b * d.cin * d.h * d.w, d, stride, pad, cols.data());
        gemm_accumulate(filters.ptr(), cols.data(), out.ptr() + b * d.cout * spatial,
                        d.cout, patch, spatial);
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& upstream, const Tensor<T>& input,
                         const Tensor<T>& filters, std::size_t stride, std::size_t pad) {
    const ConvDims d = conv_dims(input, filters, stride, pad);
    check_rank4("conv2d upstream", upstream.shape);
    const std::vector<std::size_t> expect{d.batch, d.cout, d.oh, d.ow};
    if (upstream.shape != expect) {
        throw DimensionError("conv2d upstream shape " + upstream.shape_str() +
                             " does not match output shape " + Tensor<T>(expect).shape_str());
    }
    ConvGrads<T> g{Tensor<T>(input.shape), Tensor<T>(filters.shape)};
    const std::size_t patch = d.cin * d.k * d.k;
    const std::size_t spatial = d.oh * d.ow;
    std::vector<T> cols(patch * spatial);
    std::vector<T> dcols(patch * spatial);
    // Filter weights as [Cout, patch]; its transpose drives the input gradient.
    std::vector<T> filters_t(patch * d.cout);
    for (std::size_t o = 0; o < d.cout; ++o)
        for (std::size_t p = 0; p < patch; ++p)
            filters_t[p * d.cout + o] = filters.ptr()[o * patch + p];

    std::vector<T> up_t(spatial * d.cout);
    for (std::size_t b = 0; b < d.batch; ++b) {
        const T* up = upstream.ptr() + b * d.cout * spatial;
        im2col(input.ptr() + b * d.cin * d.h * d.w, d, stride, pad, cols.data());
        // grad_filters[o,p] += sum_s up[o,s] * cols[p,s]
        for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t o = 0; o < d.cout; ++o)
                up_t[s * d.cout + o] = up[o * spatial + s];
        for (std::size_t o = 0; o < d.cout; ++o) {
            T* gf = g.filters.ptr() + o * patch;
            const T* urow = up + o * spatial;
            for (std::size_t p = 0; p < patch; ++p) {
                const T* crow = cols.data() + p * spatial;
                T acc = 0;
                for (std::size_t s = 0; s < spatial; ++s) acc += urow[s] * crow[s];
                gf[p] += acc;
            }
        }
        // dcols[p,s] = sum_o filters[o,p] * up[o,s], then scatter back.
        std::fill(dcols.begin(), dcols.end(), T(0));
        gemm_accumulate(filters_t.data(), up, dcols.data(), patch, d.cout, spatial);
        col2im_add(dcols.data(), d, stride, pad, g.input.ptr() + b * d.cin * d.h * d.w);
    }
    return g;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BnStats<T>& running, Mode mode, double eps, double stat_momentum,
                     std::type_identity_t<BnCache<T>*> cache) {
    check_rank4("batch_norm input", input.shape);
    const std::size_t batch = input.shape[0], c = input.shape[1];
    const std::size_t h = input.shape[2], w = input.shape[3];
    if (gamma.numel() != c || beta.numel() != c ||
        running.mean.numel() != c || running.var.numel() != c) {
        throw DimensionError("batch_norm parameter length mismatch for input " + input.shape_str());
    }
    if (eps <= 0) throw ConfigError("batch_norm eps must be > 0");
    const std::size_t n = batch * h * w;
    if (n == 0) throw ConfigError("batch_norm requires nonzero batch*spatial size");

    Tensor<T> out(input.shape);
    if (cache) {
        cache->xhat = Tensor<T>(input.shape);
        cache->inv_std = Tensor<T>({c});
    }
    const std::size_t plane = h * w;
    const std::size_t sample = c * plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = input.ptr() + b * sample + ch * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            mean = sum / static_cast<double>(n);
            double sq = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = input.ptr() + b * sample + ch * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double dlt = p[i] - mean;
                    sq += dlt * dlt;
                }
            }
            var = sq / static_cast<double>(n); // biased, used for normalization
            const double unbiased = n > 1 ? sq / static_cast<double>(n - 1) : var;
            running.mean[ch] = static_cast<T>((1.0 - stat_momentum) * running.mean[ch] +
                                              stat_momentum * mean);
            running.var[ch] = static_cast<T>((1.0 - stat_momentum) * running.var[ch] +
                                             stat_momentum * unbiased);
        } else {
            mean = running.mean[ch];
            var = running.var[ch];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps);
        const double g = gamma[ch], bt = beta[ch];
        if (cache) cache->inv_std[ch] = static_cast<T>(inv_std);
        for (std::size_t b = 0; b < batch; ++b) {
            const T* p = input.ptr() + b * sample + ch * plane;
            T* q = out.ptr() + b * sample + ch * plane;
            T* xh = cache ? cache->xhat.ptr() + b * sample + ch * plane : nullptr;
            for (std::size_t i = 0; i < plane; ++i) {
                const double hat = (p[i] - mean) * inv_std;
                if (xh) xh[i] = static_cast<T>(hat);
                q[i] = static_cast<T>(g * hat + bt);
            }
        }
    }
    return out;
}

template <typename T>
BnGrads<T> batch_norm_grad(const Tensor<T>& upstream, const BnCache<T>& cache,
                           const Tensor<T>& gamma) {
    const auto& shape = cache.xhat.shape;
    if (upstream.shape != shape) {
        throw DimensionError("batch_norm upstream shape " + upstream.shape_str() +
                             " does not match input shape " + cache.xhat.shape_str());
    }
    const std::size_t batch = shape[0], c = shape[1], plane = shape[2] * shape[3];
    const std::size_t sample = c * plane;
    const double n = static_cast<double>(batch * plane);
    BnGrads<T> g{Tensor<T>(shape), Tensor<T>({c}), Tensor<T>({c})};
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const T* up = upstream.ptr() + b * sample + ch * plane;
            const T* xh = cache.xhat.ptr() + b * sample + ch * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_g += up[i];
                sum_gx += up[i] * static_cast<double>(xh[i]);
            }
        }
        g.beta[ch] = static_cast<T>(sum_g);
        g.gamma[ch] = static_cast<T>(sum_gx);
        const double scale = static_cast<double>(gamma[ch]) * cache.inv_std[ch] / n;
        for (std::size_t b = 0; b < batch; ++b) {
            const T* up = upstream.ptr() + b * sample + ch * plane;
            const T* xh = cache.xhat.ptr() + b * sample + ch * plane;
            T* gx = g.input.ptr() + b * sample + ch * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                gx[i] = static_cast<T>(scale * (n * up[i] - sum_g - xh[i] * sum_gx));
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& upstream, const Tensor<T>& x) {
    if (upstream.shape != x.shape) {
        throw DimensionError("relu upstream shape " + upstream.shape_str() +
                             " does not match input shape " + x.shape_str());
    }
    Tensor<T> out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? upstream[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> avg_pool_global(const Tensor<T>& x) {
    check_rank4("avg_pool input", x.shape);
    const std::size_t batch = x.shape[0], c = x.shape[1], plane = x.shape[2] * x.shape[3];
    Tensor<T> out({batch, c});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = x.ptr() + (b * c + ch) * plane;
            double sum = 0.0;
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            out.at2(b, ch) = static_cast<T>(sum / static_cast<double>(plane));
        }
    }
    return out;
}

template <typename T>
Tensor<T> avg_pool_global_grad(const Tensor<T>& upstream, std::size_t h, std::size_t w) {
    if (upstream.rank() != 2) {
        throw DimensionError("avg_pool upstream must have rank 2, got " + upstream.shape_str());
    }
    const std::size_t batch = upstream.shape[0], c = upstream.shape[1], plane = h * w;
    Tensor<T> out({batch, c, h, w});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T v = static_cast<T>(upstream.at2(b, ch) / static_cast<T>(plane));
            T* p = out.ptr() + (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = v;
        }
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.shape[1] != weight.shape[1] ||
        bias.numel() != weight.shape[0]) {
        throw DimensionError("linear shape mismatch: input " + x.shape_str() + " vs weight " +
                             weight.shape_str());
    }
    const std::size_t batch = x.shape[0], f = x.shape[1], o = weight.shape[0];
    Tensor<T> out({batch, o});
    for (std::size_t b = 0; b < batch; ++b) {
        const T* xin = x.ptr() + b * f;
        for (std::size_t j = 0; j < o; ++j) {
            const T* wrow = weight.ptr() + j * f;
            T acc = bias[j];
            for (std::size_t i = 0; i < f; ++i) acc += wrow[i] * xin[i];
            out.at2(b, j) = acc;
        }
    }
    return out;
}

template <typename T>
LinearGrads<T> linear_grad(const Tensor<T>& upstream, const Tensor<T>& x,
                           const Tensor<T>& weight) {
    const std::size_t batch = x.shape[0], f = x.shape[1], o = weight.shape[0];
    if (upstream.rank() != 2 || upstream.shape[0] != batch || upstream.shape[1] != o) {
        throw DimensionError("linear upstream shape " + upstream.shape_str() +
                             " does not match output [" + std::to_string(batch) + "x" +
                             std::to_string(o) + "]");
    }
    LinearGrads<T> g{Tensor<T>(x.shape), Tensor<T>(weight.shape), Tensor<T>({o})};
    for (std::size_t b = 0; b < batch; ++b) {
        const T* up = upstream.ptr() + b * o;
        const T* xin = x.ptr() + b * f;
        T* gx = g.input.ptr() + b * f;
        for (std::size_t j = 0; j < o; ++j) {
            const T u = up[j];
            g.bias[j] += u;
            const T* wrow = weight.ptr() + j * f;
            T* gwrow = g.weight.ptr() + j * f;
            for (std::size_t i = 0; i < f; ++i) {
                gx[i] += u * wrow[i];
                gwrow[i] += u * xin[i];
            }
        }
    }
    return g;
}

template <typename T>
CeResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.shape[0] != labels.size()) {
        throw DimensionError("softmax logits " + logits.shape_str() + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = logits.shape[0], c = logits.shape[1];
    CeResult<T> r;
    r.grad_logits = Tensor<T>(logits.shape);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= c) {
            throw InputError("label " + std::to_string(label) + " out of range [0, " +
                             std::to_string(c) + ")");
        }
        const T* row = logits.ptr() + b * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        total += std::log(denom) - (row[label] - mx);
        T* grow = r.grad_logits.ptr() + b * c;
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(row[j] - mx) / denom;
            grow[j] = static_cast<T>((p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) /
                                     static_cast<double>(batch));
        }
    }
    r.loss = total / static_cast<double>(batch);
    return r;
}

template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
              double lr, double momentum, double weight_decay) {
    if (lr <= 0) throw ConfigError("sgd lr must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("sgd momentum must be in [0,1)");
    if (param.shape != grad.shape || param.shape != velocity.shape) {
        throw DimensionError("sgd param " + param.shape_str() + " vs grad " + grad.shape_str());
    }
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const T v = static_cast<T>(momentum * velocity[i] + grad[i] + weight_decay * param[i]);
        velocity[i] = v;
        param[i] = static_cast<T>(param[i] - lr * v);
    }
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (const auto v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t);
template ConvGrads<float> conv2d_grad(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t);
template ConvGrads<double> conv2d_grad(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> batch_norm(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, BnStats<float>&, Mode, double, double, BnCache<float>*);
template Tensor<double> batch_norm(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, BnStats<double>&, Mode, double, double, BnCache<double>*);
template BnGrads<float> batch_norm_grad(const Tensor<float>&, const BnCache<float>&, const Tensor<float>&);
template BnGrads<double> batch_norm_grad(const Tensor<double>&, const BnCache<double>&, const Tensor<double>&);
template Tensor<float> relu(const Tensor<float>&);
template Tensor<double> relu(const Tensor<double>&);
template Tensor<float> relu_grad(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> relu_grad(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> avg_pool_global(const Tensor<float>&);
template Tensor<double> avg_pool_global(const Tensor<double>&);
template Tensor<float> avg_pool_global_grad(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> avg_pool_global_grad(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> linear(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> linear(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template LinearGrads<float> linear_grad(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template LinearGrads<double> linear_grad(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template CeResult<float> softmax_cross_entropy(const Tensor<float>&, const std::vector<int>&);
template CeResult<double> softmax_cross_entropy(const Tensor<double>&, const std::vector<int>&);
template void sgd_step(Tensor<float>&, const Tensor<float>&, Tensor<float>&, double, double, double);
template void sgd_step(Tensor<double>&, const Tensor<double>&, Tensor<double>&, double, double, double);
template void gemm_accumulate(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_accumulate(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

} // namespace sfp::ops
