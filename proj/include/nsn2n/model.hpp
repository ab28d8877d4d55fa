#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "nsn2n/common.hpp"
#include "nsn2n/volume.hpp"

namespace nsn2n {

/// Shape of the U-Net denoiser. levels == 1 gives a plain conv stack with
/// no pooling; kernel_size == 1 together with leaky_slope == 1 makes the
/// whole network affine.
struct ModelConfig {
    int levels = 3;
    int base_channels = 16;
    int kernel_size = 3;
    double leaky_slope = 0.1;

    /// Exactly affine configuration: one level, 1x1 kernels, identity activations.
    static ModelConfig affine(int channels = 4) { return {1, channels, 1, 1.0}; }

    void validate() const
    {
        if (levels < 1 || levels > 8) throw std::invalid_argument("model levels must lie in [1, 8]");
        if (base_channels < 1) throw std::invalid_argument("model base channels must be >= 1");
        if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("model kernel size must be odd");
        if (!(leaky_slope >= 0.0)) throw std::invalid_argument("leaky slope must be >= 0");
    }

    int divisor() const { return 1 << (levels - 1); }
    bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = {{"levels", c.levels},
         {"base_channels", c.base_channels},
         {"kernel_size", c.kernel_size},
         {"leaky_slope", c.leaky_slope}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c)
{
    c.levels = j.value("levels", c.levels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
}

/// Storage aligned to the widest SIMD packet. Eigen peels leading elements
/// according to the address, so unaligned buffers would make reductions sum
/// in an order that depends on where the allocator placed them.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Channel-major image stack (C x H x W).
template <typename T>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    AlignedVector<T> data;

    Tensor() = default;
    Tensor(int c, int h, int w, T fill = T(0))
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill)
    {
    }

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    T* channel(int c) { return data.data() + c * plane(); }
    const T* channel(int c) const { return data.data() + c * plane(); }
    T& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    T at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

    static Tensor from_slice(const Slice& s)
    {
        Tensor t(1, s.height, s.width);
        std::copy(s.data.begin(), s.data.end(), t.data.begin());
        return t;
    }

    Slice to_slice() const
    {
        if (channels != 1) throw std::invalid_argument("only single-channel tensors convert to slices");
        Slice s(width, height);
        for (std::size_t i = 0; i < data.size(); ++i) s.data[i] = static_cast<float>(data[i]);
        return s;
    }
};

struct ConvSpec {
    std::string name;
    int in_channels;
    int out_channels;
    int kernel;
    bool activated;
};

/// Convolutions in execution order.
inline std::vector<ConvSpec> conv_layout(const ModelConfig& cfg)
{
    cfg.validate();
    const int k = cfg.kernel_size;
    auto ch = [&](int level) { return cfg.base_channels << level; };
    std::vector<ConvSpec> specs;
    for (int l = 0; l < cfg.levels; ++l) {
        const std::string p = "enc" + std::to_string(l);
        specs.push_back({p + ".conv1", l == 0 ? 1 : ch(l - 1), ch(l), k, true});
        specs.push_back({p + ".conv2", ch(l), ch(l), k, true});
    }
    for (int l = cfg.levels - 2; l >= 0; --l) {
        const std::string p = "dec" + std::to_string(l);
        specs.push_back({p + ".up", ch(l + 1), ch(l), k, true});
        specs.push_back({p + ".conv1", 2 * ch(l), ch(l), k, true});
        specs.push_back({p + ".conv2", ch(l), ch(l), k, true});
    }
    specs.push_back({"head", ch(0), 1, 1, false});
    return specs;
}

template <typename T>
struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> values;
};

template <typename T>
using Gradients = std::vector<std::vector<T>>;

/// The trainable denoiser f_theta. params holds (weight, bias) for each
/// entry of conv_layout(), weight shaped [out, in, k, k].
template <typename T>
struct DenoiserModel {
    ModelConfig config;
    std::uint64_t seed = 0;
    std::vector<ParamTensor<T>> params;

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params) n += p.values.size();
        return n;
    }

    Gradients<T> zero_gradients() const
    {
        Gradients<T> g;
        g.reserve(params.size());
        for (const auto& p : params) g.emplace_back(p.values.size(), T(0));
        return g;
    }

    template <typename U>
    DenoiserModel<U> cast() const
    {
        DenoiserModel<U> out{config, seed, {}};
        for (const auto& p : params)
            out.params.push_back({p.name, p.shape, std::vector<U>(p.values.begin(), p.values.end())});
        return out;
    }
};

/// Deterministic fan-in scaled uniform initialisation (He bound adjusted for
/// the leaky slope); biases start at zero.
template <typename T>
DenoiserModel<T> init_model(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    DenoiserModel<T> model{config, seed, {}};
    const double gain = 6.0 / (1.0 + config.leaky_slope * config.leaky_slope);
    std::uint64_t stream = 0;
    for (const auto& c : conv_layout(config)) {
        const int fan_in = c.in_channels * c.kernel * c.kernel;
        const double bound = std::sqrt(gain / fan_in);
        ParamTensor<T> w{c.name + ".weight", {c.out_channels, c.in_channels, c.kernel, c.kernel}, {}};
        w.values.resize(static_cast<std::size_t>(c.out_channels) * fan_in);
        Rng rng(seed, stream++);
        for (auto& v : w.values) v = static_cast<T>(rng.uniform(-bound, bound));
        model.params.push_back(std::move(w));
        model.params.push_back({c.name + ".bias", {c.out_channels}, std::vector<T>(c.out_channels, T(0))});
    }
    return model;
}

// ---------------------------------------------------------------------------
// Layer primitives. Convolutions use replicate padding and run as
// im2col + GEMM.

namespace layers {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void im2col(const Tensor<T>& in, int k, AlignedVector<T>& col)
{
    const int r = k / 2;
    const int h = in.height;
    const int w = in.width;
    const std::size_t plane = in.plane();
    col.resize(static_cast<std::size_t>(in.channels) * k * k * plane);
    T* dst = col.data();
    for (int c = 0; c < in.channels; ++c) {
        const T* src = in.channel(c);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int ox = kx - r;
                const int x_lo = std::max(0, -ox);
                const int x_hi = std::min(w, w - ox);
                for (int y = 0; y < h; ++y) {
                    const T* row = src + static_cast<std::size_t>(std::clamp(y + ky - r, 0, h - 1)) * w;
                    T* out = dst + static_cast<std::size_t>(y) * w;
                    for (int x = 0; x < x_lo; ++x) out[x] = row[0];
                    std::copy(row + x_lo + ox, row + x_hi + ox, out + x_lo);
                    for (int x = x_hi; x < w; ++x) out[x] = row[w - 1];
                }
                dst += plane;
            }
    }
}

/// Adjoint of im2col: scatter-adds columns back onto the input grid.
template <typename T>
void col2im_add(const AlignedVector<T>& col, int k, Tensor<T>& grad_in)
{
    const int r = k / 2;
    const int h = grad_in.height;
    const int w = grad_in.width;
    const std::size_t plane = grad_in.plane();
    const T* src = col.data();
    for (int c = 0; c < grad_in.channels; ++c) {
        T* dst = grad_in.channel(c);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int ox = kx - r;
                const int x_lo = std::max(0, -ox);
                const int x_hi = std::min(w, w - ox);
                for (int y = 0; y < h; ++y) {
                    T* row = dst + static_cast<std::size_t>(std::clamp(y + ky - r, 0, h - 1)) * w;
                    const T* g = src + static_cast<std::size_t>(y) * w;
                    for (int x = 0; x < x_lo; ++x) row[0] += g[x];
                    T* shifted = row + (x_lo + ox);
                    for (int x = x_lo; x < x_hi; ++x) shifted[x - x_lo] += g[x];
                    for (int x = x_hi; x < w; ++x) row[w - 1] += g[x];
                }
                src += plane;
            }
    }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& in, const ConvSpec& spec, const std::vector<T>& weight,
                       const std::vector<T>& bias, AlignedVector<T>& scratch)
{
    Tensor<T> out(spec.out_channels, in.height, in.width);
    const auto plane = static_cast<Eigen::Index>(in.plane());
    const Eigen::Index kk = static_cast<Eigen::Index>(spec.in_channels) * spec.kernel * spec.kernel;
    Eigen::Map<const RowMat<T>> wm(weight.data(), spec.out_channels, kk);
    Eigen::Map<RowMat<T>> om(out.data.data(), spec.out_channels, plane);
    if (spec.kernel == 1) {
        om.noalias() = wm * Eigen::Map<const RowMat<T>>(in.data.data(), kk, plane);
    } else {
        im2col(in, spec.kernel, scratch);
        om.noalias() = wm * Eigen::Map<const RowMat<T>>(scratch.data(), kk, plane);
    }
    om.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data(), spec.out_channels);
    return out;
}

/// Accumulates weight/bias gradients; adds the input gradient to grad_in
/// when it is non-null.
template <typename T>
void conv_backward(const Tensor<T>& in, const ConvSpec& spec, const std::vector<T>& weight, const Tensor<T>& grad_out,
                   std::vector<T>& grad_weight, std::vector<T>& grad_bias, Tensor<T>* grad_in, AlignedVector<T>& scratch)
{
    const auto plane = static_cast<Eigen::Index>(in.plane());
    const Eigen::Index kk = static_cast<Eigen::Index>(spec.in_channels) * spec.kernel * spec.kernel;
    Eigen::Map<const RowMat<T>> wm(weight.data(), spec.out_channels, kk);
    Eigen::Map<const RowMat<T>> gm(grad_out.data.data(), spec.out_channels, plane);
    Eigen::Map<RowMat<T>> gw(grad_weight.data(), spec.out_channels, kk);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grad_bias.data(), spec.out_channels);
    gb += gm.rowwise().sum();
    if (spec.kernel == 1) {
        Eigen::Map<const RowMat<T>> cm(in.data.data(), kk, plane);
        gw.noalias() += gm * cm.transpose();
        if (grad_in) {
            Eigen::Map<RowMat<T>> gi(grad_in->data.data(), kk, plane);
            gi.noalias() += wm.transpose() * gm;
        }
        return;
    }
    im2col(in, spec.kernel, scratch);
    Eigen::Map<const RowMat<T>> cm(scratch.data(), kk, plane);
    gw.noalias() += gm * cm.transpose();
    if (grad_in) {
        Eigen::Map<RowMat<T>> gc(scratch.data(), kk, plane);
        gc.noalias() = wm.transpose() * gm;
        col2im_add(scratch, spec.kernel, *grad_in);
    }
}

template <typename T>
void leaky_inplace(Tensor<T>& t, T slope)
{
    if (slope == T(1)) return;
    for (auto& v : t.data) v = v > T(0) ? v : v * slope;
}

template <typename T>
void leaky_backward(const Tensor<T>& pre, const Tensor<T>& grad_out, T slope, Tensor<T>& grad_in)
{
    for (std::size_t i = 0; i < pre.data.size(); ++i)
        grad_in.data[i] += pre.data[i] > T(0) ? grad_out.data[i] : slope * grad_out.data[i];
}

/// 2x2 max pool; argmax receives the flat source index of each output.
template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& in, std::vector<std::uint32_t>& argmax)
{
    Tensor<T> out(in.channels, in.height / 2, in.width / 2);
    argmax.resize(out.data.size());
    std::size_t o = 0;
    for (int c = 0; c < in.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x, ++o) {
                std::size_t best = c * in.plane() + static_cast<std::size_t>(2 * y) * in.width + 2 * x;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t i = c * in.plane() + static_cast<std::size_t>(2 * y + dy) * in.width + 2 * x + dx;
                        if (in.data[i] > in.data[best]) best = i;
                    }
                out.data[o] = in.data[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
    return out;
}

template <typename T>
void maxpool_backward(const std::vector<std::uint32_t>& argmax, const Tensor<T>& grad_out, Tensor<T>& grad_in)
{
    for (std::size_t o = 0; o < argmax.size(); ++o) grad_in.data[argmax[o]] += grad_out.data[o];
}

template <typename T>
Tensor<T> upsample_forward(const Tensor<T>& in)
{
    Tensor<T> out(in.channels, in.height * 2, in.width * 2);
    for (int c = 0; c < in.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
    return out;
}

template <typename T>
void upsample_backward(const Tensor<T>& grad_out, Tensor<T>& grad_in)
{
    for (int c = 0; c < grad_out.channels; ++c)
        for (int y = 0; y < grad_out.height; ++y)
            for (int x = 0; x < grad_out.width; ++x) grad_in.at(c, y / 2, x / 2) += grad_out.at(c, y, x);
}

template <typename T>
Tensor<T> concat_forward(const Tensor<T>& a, const Tensor<T>& b)
{
    Tensor<T> out(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return out;
}

template <typename T>
void concat_backward(const Tensor<T>& grad_out, Tensor<T>& grad_a, Tensor<T>& grad_b)
{
    const auto na = grad_a.data.size();
    for (std::size_t i = 0; i < na; ++i) grad_a.data[i] += grad_out.data[i];
    for (std::size_t i = 0; i < grad_b.data.size(); ++i) grad_b.data[i] += grad_out.data[na + i];
}

} // namespace layers

// ---------------------------------------------------------------------------
// Recorded forward pass and its reverse sweep.

struct TraceStep {
    enum class Kind { conv, act, pool, up, concat } kind;
    int layer = -1; // conv index, or argmax slot for pool
    int in = -1;
    int in2 = -1;
    int out = -1;
};

template <typename T>
struct Trace {
    std::vector<Tensor<T>> values;
    std::vector<TraceStep> steps;
    std::vector<std::vector<std::uint32_t>> argmax;

    const Tensor<T>& output() const { return values.back(); }
};

template <typename T>
void check_input_shape(const DenoiserModel<T>& model, int height, int width)
{
    const int d = model.config.divisor();
    if (height % d != 0 || width % d != 0 || height < d || width < d)
        throw std::invalid_argument("input height and width must be divisible by " + std::to_string(d) + " (got " +
                                    std::to_string(width) + "x" + std::to_string(height) + ")");
}

template <typename T>
Trace<T> trace_forward(const DenoiserModel<T>& model, Tensor<T> input)
{
    if (input.channels != 1) throw std::invalid_argument("denoiser input must have one channel");
    check_input_shape(model, input.height, input.width);
    const auto specs = conv_layout(model.config);
    const T slope = static_cast<T>(model.config.leaky_slope);
    Trace<T> tr;
    AlignedVector<T> scratch;
    auto push = [&](Tensor<T> t) {
        tr.values.push_back(std::move(t));
        return static_cast<int>(tr.values.size() - 1);
    };
    int layer = 0;
    auto conv = [&](int in) {
        const auto& spec = specs[layer];
        const int out = push(layers::conv_forward(tr.values[in], spec, model.params[2 * layer].values,
                                                  model.params[2 * layer + 1].values, scratch));
        tr.steps.push_back({TraceStep::Kind::conv, layer, in, -1, out});
        ++layer;
        if (!spec.activated) return out;
        Tensor<T> a = tr.values[out];
        layers::leaky_inplace(a, slope);
        const int act = push(std::move(a));
        tr.steps.push_back({TraceStep::Kind::act, -1, out, -1, act});
        return act;
    };

    int cur = push(std::move(input));
    std::vector<int> skips;
    const int levels = model.config.levels;
    for (int l = 0; l < levels; ++l) {
        cur = conv(cur);
        cur = conv(cur);
        if (l + 1 < levels) {
            skips.push_back(cur);
            tr.argmax.emplace_back();
            const int slot = static_cast<int>(tr.argmax.size() - 1);
            const int out = push(layers::maxpool_forward(tr.values[cur], tr.argmax.back()));
            tr.steps.push_back({TraceStep::Kind::pool, slot, cur, -1, out});
            cur = out;
        }
    }
    for (int l = levels - 2; l >= 0; --l) {
        const int up = push(layers::upsample_forward(tr.values[cur]));
        tr.steps.push_back({TraceStep::Kind::up, -1, cur, -1, up});
        cur = conv(up);
        const int cat = push(layers::concat_forward(tr.values[skips[l]], tr.values[cur]));
        tr.steps.push_back({TraceStep::Kind::concat, -1, skips[l], cur, cat});
        cur = conv(cat);
        cur = conv(cur);
    }
    conv(cur);
    return tr;
}

/// Reverse sweep over a recorded pass; parameter gradients are added to grads.
template <typename T>
void backward_trace(const DenoiserModel<T>& model, const Trace<T>& tr, const Tensor<T>& grad_output,
                    Gradients<T>& grads)
{
    const auto& out = tr.output();
    if (grad_output.channels != out.channels || grad_output.height != out.height || grad_output.width != out.width)
        throw std::invalid_argument("output gradient shape does not match the forward output");
    const auto specs = conv_layout(model.config);
    const T slope = static_cast<T>(model.config.leaky_slope);
    std::vector<Tensor<T>> g(tr.values.size());
    auto grad = [&](int i) -> Tensor<T>& {
        if (g[i].data.empty()) g[i] = Tensor<T>(tr.values[i].channels, tr.values[i].height, tr.values[i].width);
        return g[i];
    };
    g.back() = grad_output;
    AlignedVector<T> scratch;
    for (auto it = tr.steps.rbegin(); it != tr.steps.rend(); ++it) {
        const auto& s = *it;
        if (g[s.out].data.empty()) continue; // nothing flows back from this value
        const auto& go = g[s.out];
        switch (s.kind) {
        case TraceStep::Kind::conv: {
            Tensor<T>* gi = s.in == 0 ? nullptr : &grad(s.in);
            layers::conv_backward(tr.values[s.in], specs[s.layer], model.params[2 * s.layer].values, go,
                                  grads[2 * s.layer], grads[2 * s.layer + 1], gi, scratch);
            break;
        }
        case TraceStep::Kind::act: layers::leaky_backward(tr.values[s.in], go, slope, grad(s.in)); break;
        case TraceStep::Kind::pool: layers::maxpool_backward(tr.argmax[s.layer], go, grad(s.in)); break;
        case TraceStep::Kind::up: layers::upsample_backward(go, grad(s.in)); break;
        case TraceStep::Kind::concat: layers::concat_backward(go, grad(s.in), grad(s.in2)); break;
        }
        g[s.out] = Tensor<T>(); // release
    }
}

template <typename T>
Tensor<T> forward(const DenoiserModel<T>& model, const Tensor<T>& input)
{
    return trace_forward(model, input).values.back();
}

/// Per-slice forward pass. No clamping is applied.
inline std::vector<Slice> forward(const DenoiserModel<float>& model, std::span<const Slice> batch)
{
    std::vector<Slice> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(forward(model, Tensor<float>::from_slice(s)).to_slice());
    return out;
}

/// Gradients of sum_k <output_gradient[k], f(batch[k])> with respect to the
/// parameters.
template <typename T>
Gradients<T> backward(const DenoiserModel<T>& model, std::span<const Tensor<T>> batch,
                      std::span<const Tensor<T>> output_gradient)
{
    if (batch.size() != output_gradient.size())
        throw std::invalid_argument("batch and output gradient sizes differ");
    auto grads = model.zero_gradients();
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto tr = trace_forward(model, batch[k]);
        backward_trace(model, tr, output_gradient[k], grads);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Optimiser.

struct AdamSettings {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    double base_lr = 1e-3;
    int halve_every = 20;
};

inline void to_json(nlohmann::json& j, const AdamSettings& a)
{
    j = {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"base_lr", a.base_lr},
         {"halve_every", a.halve_every}};
}

inline void from_json(const nlohmann::json& j, AdamSettings& a)
{
    a.beta1 = j.value("beta1", a.beta1);
    a.beta2 = j.value("beta2", a.beta2);
    a.eps = j.value("eps", a.eps);
    a.base_lr = j.value("base_lr", a.base_lr);
    a.halve_every = j.value("halve_every", a.halve_every);
}

template <typename T>
struct OptimizerState {
    AdamSettings settings;
    long step = 0;
    Gradients<T> m;
    Gradients<T> v;

    static OptimizerState for_model(const DenoiserModel<T>& model, AdamSettings s = {})
    {
        return {s, 0, model.zero_gradients(), model.zero_gradients()};
    }
};

/// Step-decay schedule: base_lr halved every halve_every epochs.
inline double lr_schedule(int epoch, double base_lr = 1e-3, int halve_every = 20)
{
    if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
    return base_lr * std::ldexp(1.0, -(epoch / halve_every));
}

/// One bias-corrected Adam update of every parameter.
template <typename T>
void adam_step(OptimizerState<T>& state, DenoiserModel<T>& model, const Gradients<T>& grads, double lr)
{
    if (grads.size() != model.params.size() || state.m.size() != model.params.size())
        throw std::invalid_argument("optimizer state does not match the model");
    for (std::size_t p = 0; p < grads.size(); ++p) {
        if (grads[p].size() != model.params[p].values.size())
            throw std::invalid_argument("gradient shape mismatch for " + model.params[p].name);
        for (T g : grads[p])
            if (!std::isfinite(static_cast<double>(g))) throw DivergedError("diverged: non-finite gradient");
    }
    const auto& s = state.settings;
    ++state.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < grads.size(); ++p) {
        auto& theta = model.params[p].values;
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grads[p][i];
            const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * g;
            const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            theta[i] = static_cast<T>(theta[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + s.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: <name>.json metadata plus <name>.bin holding every parameter
// tensor as little-endian float32, concatenated in the order listed under
// "tensors" (each entry carries its element offset).

struct CheckpointMeta {
    int epoch = 0;
    AdamSettings optimizer;
};

inline void save_checkpoint(const DenoiserModel<float>& model, const std::filesystem::path& path,
                            const CheckpointMeta& meta = {})
{
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& p : model.params) {
        tensors.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
        offset += p.values.size();
    }
    nlohmann::json j = {{"version", 1},
                        {"config", model.config},
                        {"seed", model.seed},
                        {"epoch", meta.epoch},
                        {"optimizer", meta.optimizer},
                        {"dtype", "f32le"},
                        {"elements", offset},
                        {"tensors", tensors}};
    io::write_text(path, j.dump(2) + "\n");
    std::ofstream os(io::companion(path, ".bin"), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint payload for " + path.string());
    for (const auto& p : model.params) io::write_f32le(os, p.values);
}

inline DenoiserModel<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr)
{
    const auto j = io::read_json(path);
    try {
        if (j.at("version").get<int>() != 1) throw FormatError("unsupported version");
        if (j.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported checkpoint dtype");
        auto model = init_model<float>(j.at("config").get<ModelConfig>(), j.at("seed").get<std::uint64_t>());
        const auto values = io::decode_f32le(io::read_file(io::companion(path, ".bin")));
        if (values.size() != model.parameter_count() || j.at("elements").get<std::size_t>() != values.size())
            throw FormatError("corrupt checkpoint: parameter count mismatch");
        const auto& tensors = j.at("tensors");
        if (tensors.size() != model.params.size()) throw FormatError("corrupt checkpoint: tensor list mismatch");
        for (std::size_t p = 0; p < model.params.size(); ++p) {
            auto& dst = model.params[p];
            if (tensors[p].at("name").get<std::string>() != dst.name ||
                tensors[p].at("shape").get<std::vector<int>>() != dst.shape)
                throw FormatError("corrupt checkpoint: unexpected tensor " + tensors[p].at("name").get<std::string>());
            const auto off = tensors[p].at("offset").get<std::size_t>();
            if (off + dst.values.size() > values.size()) throw FormatError("corrupt checkpoint: bad offset");
            std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), dst.values.size(), dst.values.begin());
        }
        if (meta) {
            meta->epoch = j.at("epoch").get<int>();
            meta->optimizer = j.at("optimizer").get<AdamSettings>();
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint: ") + e.what());
    }
}

} // namespace nsn2n
