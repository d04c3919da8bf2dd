#include "sfp/network.hpp"

#include <cmath>

namespace sfp {

std::string architecture_name(Architecture a) {
    return a == Architecture::plain_chain ? "plain-chain" : "resnet-basic";
}

Architecture architecture_from_name(const std::string& name) {
    if (name == "plain-chain") return Architecture::plain_chain;
    if (name == "resnet-basic") return Architecture::resnet_basic;
    throw ConfigError("unknown architecture '" + name + "' (known: plain-chain, resnet-basic)");
}

std::size_t ModelSpec::weighted_layer_count() const {
    if (architecture == Architecture::plain_chain) return widths.size() + 1;
    return depth;
}

namespace {

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                            const std::string& where) {
    const std::size_t padded = in + 2 * pad;
    if (padded < k) {
        throw ConfigError("conv output extent is not positive at " + where + ": input " +
                          std::to_string(in) + ", kernel " + std::to_string(k) + ", pad " +
                          std::to_string(pad));
    }
    return (padded - k) / stride + 1;
}

template <typename T>
ConvLayer<T> make_conv(const std::string& id, std::size_t cout, std::size_t cin, std::size_t k,
                       std::size_t stride, std::size_t pad, bool prunable, bool compactable,
                       Rng& rng) {
    ConvLayer<T> layer;
    layer.id = id;
    layer.filters = Tensor<T>({cout, cin, k, k});
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    rng.fill_normal(layer.filters, 0.0, stddev);
    layer.bn_gamma = Tensor<T>({cout});
    layer.bn_gamma.fill(T(1));
    layer.bn_beta = Tensor<T>({cout});
    layer.bn_stats.mean = Tensor<T>({cout});
    layer.bn_stats.var = Tensor<T>({cout});
    layer.bn_stats.var.fill(T(1));
    layer.stride = stride;
    layer.pad = pad;
    layer.prunable = prunable;
    layer.compactable = compactable;
    return layer;
}

} // namespace

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = fc_weight.numel() + fc_bias.numel();
    for (const auto& c : convs) n += c.filters.numel() + c.bn_gamma.numel() + c.bn_beta.numel();
    return n;
}

template <typename T>
ModelGrads<T> ModelGrads<T>::zeros_like(const Model<T>& m) {
    ModelGrads<T> g;
    g.convs.reserve(m.convs.size());
    for (const auto& c : m.convs) {
        g.convs.push_back({Tensor<T>(c.filters.shape), Tensor<T>(c.bn_gamma.shape),
                           Tensor<T>(c.bn_beta.shape)});
    }
    g.fc_weight = Tensor<T>(m.fc_weight.shape);
    g.fc_bias = Tensor<T>(m.fc_bias.shape);
    return g;
}

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw ConfigError("model needs at least 2 classes");
    if (spec.input_channels == 0 || spec.input_h == 0 || spec.input_w == 0) {
        throw ConfigError("model input shape must have positive extents");
    }
    Rng rng(seed);
    Model<T> model;
    model.spec = spec;

    std::size_t c = spec.input_channels, h = spec.input_h, w = spec.input_w;

    if (spec.architecture == Architecture::plain_chain) {
        if (spec.widths.empty()) throw ConfigError("plain-chain must have at least 1 conv layer");
        std::vector<std::size_t> strides = spec.strides;
        if (strides.empty()) strides.assign(spec.widths.size(), 1);
        if (strides.size() != spec.widths.size()) {
            throw ConfigError("plain-chain strides count " + std::to_string(strides.size()) +
                              " does not match widths count " + std::to_string(spec.widths.size()));
        }
        const std::size_t k = spec.kernel;
        const std::size_t pad = k / 2;
        for (std::size_t i = 0; i < spec.widths.size(); ++i) {
            const bool prunable = i == 0 ? spec.stem_prunable : true;
            model.convs.push_back(make_conv<T>("conv" + std::to_string(i + 1), spec.widths[i], c,
                                               k, strides[i], pad, prunable, true, rng));
            h = conv_out_extent(h, k, strides[i], pad, "conv" + std::to_string(i + 1));
            w = conv_out_extent(w, k, strides[i], pad, "conv" + std::to_string(i + 1));
            c = spec.widths[i];
        }
    } else {
        if (spec.depth < 8 || (spec.depth - 2) % 6 != 0) {
            throw ConfigError("resnet-basic depth must satisfy depth = 6n+2 (n >= 1), got " +
                              std::to_string(spec.depth));
        }
        if (spec.stage_widths.size() != 3) {
            throw ConfigError("resnet-basic expects 3 stage widths");
        }
        const std::size_t blocks_per_stage = (spec.depth - 2) / 6;
        const bool stem_prunable = spec.stem_prunable && spec.prune_mask == PruneMask::all;
        model.convs.push_back(
            make_conv<T>("stem", spec.stage_widths[0], c, 3, 1, 1, stem_prunable, false, rng));
        h = conv_out_extent(h, 3, 1, 1, "stem");
        w = conv_out_extent(w, 3, 1, 1, "stem");
        c = spec.stage_widths[0];
        for (std::size_t s = 0; s < spec.stage_widths.size(); ++s) {
            const std::size_t width = spec.stage_widths[s];
            for (std::size_t b = 0; b < blocks_per_stage; ++b) {
                const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
                const std::string base = "s" + std::to_string(s + 1) + "b" + std::to_string(b + 1);
                ResBlock block;
                const bool c1_prunable = spec.prune_mask != PruneMask::second_of_block;
                const bool c2_prunable = spec.prune_mask != PruneMask::first_of_block;
                block.conv1 = model.convs.size();
                model.convs.push_back(
                    make_conv<T>(base + "c1", width, c, 3, stride, 1, c1_prunable, true, rng));
                block.conv2 = model.convs.size();
                model.convs.push_back(
                    make_conv<T>(base + "c2", width, width, 3, 1, 1, c2_prunable, false, rng));
                if (stride != 1 || c != width) {
                    block.proj = static_cast<int>(model.convs.size());
                    model.convs.push_back(
                        make_conv<T>(base + "p", width, c, 1, stride, 0, false, false, rng));
                }
                const std::size_t oh = conv_out_extent(h, 3, stride, 1, base + "c1");
                const std::size_t ow = conv_out_extent(w, 3, stride, 1, base + "c1");
                if (block.proj >= 0) {
                    const std::size_t ph = conv_out_extent(h, 1, stride, 0, base + "p");
                    const std::size_t pw = conv_out_extent(w, 1, stride, 0, base + "p");
                    if (ph != oh || pw != ow) {
                        throw DimensionError("residual add mismatch in " + base + ": main [" +
                                             std::to_string(oh) + "x" + std::to_string(ow) +
                                             "] vs shortcut [" + std::to_string(ph) + "x" +
                                             std::to_string(pw) + "]");
                    }
                }
                h = oh;
                w = ow;
                c = width;
                model.blocks.push_back(block);
            }
        }
    }
    if (h == 0 || w == 0) throw ConfigError("spatial extent collapsed to zero");

    model.fc_weight = Tensor<T>({spec.classes, c});
    rng.fill_normal(model.fc_weight, 0.0, std::sqrt(1.0 / static_cast<double>(c)));
    model.fc_bias = Tensor<T>({spec.classes});
    return model;
}

namespace {

// Saved per-conv intermediates for the hand-derived backward pass.
template <typename T>
struct ConvTrace {
    Tensor<T> input;
    ops::BnCache<T> bn_cache;
    Tensor<T> bn_out;
};

template <typename T>
struct Trace {
    std::vector<ConvTrace<T>> conv;
    std::vector<Tensor<T>> block_pre_relu;
    Tensor<T> pooled;
    std::size_t last_h = 0, last_w = 0;
};

template <typename T>
Tensor<T> add_tensors(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape) {
        throw DimensionError("residual add mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

// Shared forward. In train mode running stats are updated and, when a trace
// is supplied, every intermediate needed by backward is recorded.
template <typename T>
Tensor<T> run_forward(Model<T>& model, const Tensor<T>& batch, ops::Mode mode, Trace<T>* trace,
                      std::type_identity_t<std::vector<Tensor<T>>*> post_bn) {
    if (batch.rank() != 4 || batch.shape[1] != model.spec.input_channels ||
        batch.shape[2] != model.spec.input_h || batch.shape[3] != model.spec.input_w) {
        throw DimensionError("batch shape " + batch.shape_str() + " does not match model input [" +
                             std::to_string(model.spec.input_channels) + "x" +
                             std::to_string(model.spec.input_h) + "x" +
                             std::to_string(model.spec.input_w) + "]");
    }
    if (trace) trace->conv.resize(model.convs.size());
    if (post_bn) post_bn->resize(model.convs.size());

    auto conv_unit = [&](std::size_t idx, const Tensor<T>& x) {
        auto& layer = model.convs[idx];
        Tensor<T> z = ops::conv2d(x, layer.filters, layer.stride, layer.pad);
        ops::BnCache<T>* cache = nullptr;
        if (trace) {
            trace->conv[idx].input = x;
            cache = &trace->conv[idx].bn_cache;
        }
        Tensor<T> out = ops::batch_norm(z, layer.bn_gamma, layer.bn_beta, layer.bn_stats, mode,
                                        kBnEps, kBnStatMomentum, cache);
        if (post_bn) (*post_bn)[idx] = out;
        return out;
    };

    Tensor<T> cur;
    if (model.spec.architecture == Architecture::plain_chain) {
        cur = batch;
        for (std::size_t i = 0; i < model.convs.size(); ++i) {
            Tensor<T> h = conv_unit(i, cur);
            if (trace) trace->conv[i].bn_out = h;
            cur = ops::relu(h);
        }
    } else {
        Tensor<T> h = conv_unit(0, batch);
        if (trace) trace->conv[0].bn_out = h;
        cur = ops::relu(h);
        if (trace) trace->block_pre_relu.resize(model.blocks.size());
        for (std::size_t b = 0; b < model.blocks.size(); ++b) {
            const auto& block = model.blocks[b];
            Tensor<T> h1 = conv_unit(block.conv1, cur);
            if (trace) trace->conv[block.conv1].bn_out = h1;
            Tensor<T> a1 = ops::relu(h1);
            Tensor<T> h2 = conv_unit(block.conv2, a1);
            Tensor<T> shortcut = block.proj >= 0
                                     ? conv_unit(static_cast<std::size_t>(block.proj), cur)
                                     : cur;
            Tensor<T> pre = add_tensors(h2, shortcut);
            if (trace) trace->block_pre_relu[b] = pre;
            cur = ops::relu(pre);
        }
    }
    if (trace) {
        trace->last_h = cur.shape[2];
        trace->last_w = cur.shape[3];
    }
    Tensor<T> pooled = ops::avg_pool_global(cur);
    if (trace) trace->pooled = pooled;
    return ops::linear(pooled, model.fc_weight, model.fc_bias);
}

} // namespace

template <typename T>
Tensor<T> forward_eval(const Model<T>& model, const Tensor<T>& batch,
                       std::type_identity_t<std::vector<Tensor<T>>*> post_bn) {
    // Eval mode never mutates; the const_cast is confined to this adapter.
    auto& m = const_cast<Model<T>&>(model);
    return run_forward<T>(m, batch, ops::Mode::eval, nullptr, post_bn);
}

template <typename T>
Tensor<T> forward_train(Model<T>& model, const Tensor<T>& batch) {
    return run_forward<T>(model, batch, ops::Mode::train, nullptr, nullptr);
}

template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& batch) {
    if (model.mode == ops::Mode::train) return forward_train(model, batch);
    return forward_eval<T>(model, batch, nullptr);
}

template <typename T>
BackwardResult<T> backward(Model<T>& model, const Tensor<T>& batch,
                           const std::vector<int>& labels) {
    if (model.mode != ops::Mode::train) {
        throw StateError("backward requires train mode");
    }
    Trace<T> trace;
    Tensor<T> logits = run_forward<T>(model, batch, ops::Mode::train, &trace, nullptr);
    auto ce = ops::softmax_cross_entropy(logits, labels);

    BackwardResult<T> result;
    result.loss = ce.loss;
    result.logits = logits;
    result.grads = ModelGrads<T>::zeros_like(model);
    auto& g = result.grads;

    auto fc_grads = ops::linear_grad(ce.grad_logits, trace.pooled, model.fc_weight);
    g.fc_weight = fc_grads.weight;
    g.fc_bias = fc_grads.bias;
    Tensor<T> dcur = ops::avg_pool_global_grad(fc_grads.input, trace.last_h, trace.last_w);

    // Backprop through one conv+bn unit; returns the gradient at its input.
    auto conv_unit_grad = [&](std::size_t idx, const Tensor<T>& dout) {
        auto& layer = model.convs[idx];
        auto& tr = trace.conv[idx];
        auto bn = ops::batch_norm_grad(dout, tr.bn_cache, layer.bn_gamma);
        g.convs[idx].bn_gamma = bn.gamma;
        g.convs[idx].bn_beta = bn.beta;
        auto conv = ops::conv2d_grad(bn.input, tr.input, layer.filters, layer.stride, layer.pad);
        g.convs[idx].filters = conv.filters;
        return conv.input;
    };

    if (model.spec.architecture == Architecture::plain_chain) {
        for (std::size_t i = model.convs.size(); i-- > 0;) {
            Tensor<T> dh = ops::relu_grad(dcur, trace.conv[i].bn_out);
            dcur = conv_unit_grad(i, dh);
        }
    } else {
        for (std::size_t b = model.blocks.size(); b-- > 0;) {
            const auto& block = model.blocks[b];
            Tensor<T> dpre = ops::relu_grad(dcur, trace.block_pre_relu[b]);
            Tensor<T> da1 = conv_unit_grad(block.conv2, dpre);
            Tensor<T> dh1 = ops::relu_grad(da1, trace.conv[block.conv1].bn_out);
            Tensor<T> dx_main = conv_unit_grad(block.conv1, dh1);
            if (block.proj >= 0) {
                Tensor<T> dx_short = conv_unit_grad(static_cast<std::size_t>(block.proj), dpre);
                dcur = add_tensors(dx_main, dx_short);
            } else {
                dcur = add_tensors(dx_main, dpre);
            }
        }
        Tensor<T> dh = ops::relu_grad(dcur, trace.conv[0].bn_out);
        conv_unit_grad(0, dh);
    }
    return result;
}

template <typename T>
std::vector<std::pair<std::string, std::size_t>> enumerate_prunable(const Model<T>& model) {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& c : model.convs) {
        if (c.prunable) out.emplace_back(c.id, c.out_channels());
    }
    return out;
}

template <typename T>
ConvLayer<T>* find_layer(Model<T>& model, const std::string& id) {
    for (auto& c : model.convs)
        if (c.id == id) return &c;
    return nullptr;
}

template <typename T>
const ConvLayer<T>* find_layer(const Model<T>& model, const std::string& id) {
    for (const auto& c : model.convs)
        if (c.id == id) return &c;
    return nullptr;
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct Model<float>;
template struct Model<double>;
template struct ModelGrads<float>;
template struct ModelGrads<double>;
template Model<float> build_model(const ModelSpec&, std::uint64_t);
template Model<double> build_model(const ModelSpec&, std::uint64_t);
template Tensor<float> forward_eval(const Model<float>&, const Tensor<float>&, std::vector<Tensor<float>>*);
template Tensor<double> forward_eval(const Model<double>&, const Tensor<double>&, std::vector<Tensor<double>>*);
template Tensor<float> forward_train(Model<float>&, const Tensor<float>&);
template Tensor<double> forward_train(Model<double>&, const Tensor<double>&);
template Tensor<float> forward(Model<float>&, const Tensor<float>&);
template Tensor<double> forward(Model<double>&, const Tensor<double>&);
template BackwardResult<float> backward(Model<float>&, const Tensor<float>&, const std::vector<int>&);
template BackwardResult<double> backward(Model<double>&, const Tensor<double>&, const std::vector<int>&);
template std::vector<std::pair<std::string, std::size_t>> enumerate_prunable(const Model<float>&);
template std::vector<std::pair<std::string, std::size_t>> enumerate_prunable(const Model<double>&);
template ConvLayer<float>* find_layer(Model<float>&, const std::string&);
template ConvLayer<double>* find_layer(Model<double>&, const std::string&);
template const ConvLayer<float>* find_layer(const Model<float>&, const std::string&);
template const ConvLayer<double>* find_layer(const Model<double>&, const std::string&);

} // namespace sfp
