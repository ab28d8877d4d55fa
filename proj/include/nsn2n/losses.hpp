#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn2n/model.hpp"
#include "nsn2n/pairing.hpp"

namespace nsn2n {

/// Training hyperparameters. Defaults follow the reference setup:
/// lambda_RC = 0.5, lambda_IC = 1, 100 epochs, Adam(0.5, 0.999), lr 1e-3
/// halved every 20 epochs.
struct TrainConfig {
    double lambda_rc = 0.5;
    double lambda_ic = 1.0;
    int epochs = 100;
    double th = 0.01;
    int batch_size = 1;
    std::uint64_t seed = 0;
    bool use_weights = true;
    bool use_rc = true;
    bool use_ic = true;
    bool deterministic = false;
    /// Checkpoint cadence in epochs for the CLI (0 disables).
    int checkpoint_every = 20;
    AdamSettings adam;

    void validate() const
    {
        if (!(lambda_rc >= 0.0) || !(lambda_ic >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (std::isnan(th) || th < 0.0) throw std::invalid_argument("threshold th must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
        if (checkpoint_every < 0) throw std::invalid_argument("checkpoint cadence must be >= 0");
        if (!(adam.base_lr > 0.0) || adam.halve_every < 1) throw std::invalid_argument("invalid learning-rate schedule");
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
            throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"lambda_rc", c.lambda_rc},
         {"lambda_ic", c.lambda_ic},
         {"epochs", c.epochs},
         {"th", threshold_to_json(c.th)},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"use_weights", c.use_weights},
         {"use_rc", c.use_rc},
         {"use_ic", c.use_ic},
         {"deterministic", c.deterministic},
         {"checkpoint_every", c.checkpoint_every},
         {"adam", c.adam}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c)
{
    c.lambda_rc = j.value("lambda_rc", c.lambda_rc);
    c.lambda_ic = j.value("lambda_ic", c.lambda_ic);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("th")) c.th = threshold_from_json(j.at("th"));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.use_weights = j.value("use_weights", c.use_weights);
    c.use_rc = j.value("use_rc", c.use_rc);
    c.use_ic = j.value("use_ic", c.use_ic);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("adam")) c.adam = j.at("adam").get<AdamSettings>();
}

struct LossParts {
    double recon = 0.0;
    double rc = 0.0;
    double ic = 0.0;
};

namespace detail {

template <typename A, typename B>
void check_same(std::span<const A> a, std::span<const B> b)
{
    if (a.size() != b.size()) throw std::invalid_argument("loss operands differ in shape");
}

} // namespace detail

/// sum W (p - q)^2 / max(sum W, 1).
template <typename P, typename Q>
double masked_mse(std::span<const P> p, std::span<const Q> q, const WeightMatrix& w)
{
    detail::check_same(p, q);
    if (w.size() != p.size()) throw std::invalid_argument("weight matrix does not match loss operands");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (w.values[i]) {
            const double d = static_cast<double>(p[i]) - static_cast<double>(q[i]);
            acc += d * d;
            ++count;
        }
    return acc / static_cast<double>(std::max<std::size_t>(count, 1));
}

inline double masked_mse(const Slice& p, const Slice& q, const WeightMatrix& w)
{
    if (!p.same_shape(q)) throw std::invalid_argument("loss operands differ in shape");
    if (w.width != p.width || w.height != p.height)
        throw std::invalid_argument("weight matrix does not match loss operands");
    return masked_mse(std::span<const float>(p.data), std::span<const float>(q.data), w);
}

/// Cross reconstruction: f(x_a) against x_b and f(x_b) against x_a on matched pixels.
inline double recon_loss(const Slice& f_a, const Slice& f_b, const Slice& x_a, const Slice& x_b, const WeightMatrix& w)
{
    if (!f_a.same_shape(f_b) || !f_a.same_shape(x_a) || !f_a.same_shape(x_b))
        throw std::invalid_argument("loss operands differ in shape");
    return 0.5 * (masked_mse(f_a, x_b, w) + masked_mse(f_b, x_a, w));
}

/// Regional consistency: outputs of both slices agree on matched pixels.
inline double rc_loss(const Slice& f_a, const Slice& f_b, const WeightMatrix& w) { return masked_mse(f_a, f_b, w); }

/// Inter-slice continuity from the three outputs f(x_a), f(x_b), f((x_a + x_b) / 2).
template <typename T>
double ic_residual_loss(std::span<const T> f_a, std::span<const T> f_b, std::span<const T> f_mid)
{
    detail::check_same(f_a, f_b);
    detail::check_same(f_a, f_mid);
    double acc = 0.0;
    for (std::size_t i = 0; i < f_a.size(); ++i) {
        const double r = static_cast<double>(f_mid[i]) - 0.5 * (static_cast<double>(f_a[i]) + f_b[i]);
        acc += r * r;
    }
    return acc / static_cast<double>(f_a.size());
}

template <typename T>
Tensor<T> midpoint(const Tensor<T>& a, const Tensor<T>& b)
{
    Tensor<T> m(a.channels, a.height, a.width);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = (a.data[i] + b.data[i]) / T(2);
    return m;
}

/// Inter-slice continuity loss; runs the model on x_a, x_b and their mean.
template <typename T>
double ic_loss(const DenoiserModel<T>& model, const Slice& x_a, const Slice& x_b)
{
    if (!x_a.same_shape(x_b)) throw std::invalid_argument("loss operands differ in shape");
    const auto ta = Tensor<T>::from_slice(x_a);
    const auto tb = Tensor<T>::from_slice(x_b);
    const auto fa = forward(model, ta);
    const auto fb = forward(model, tb);
    const auto fm = forward(model, midpoint(ta, tb));
    return ic_residual_loss<T>(fa.data, fb.data, fm.data);
}

inline double total_loss(const LossParts& parts, const TrainConfig& config)
{
    double l = parts.recon;
    if (config.use_rc) l += config.lambda_rc * parts.rc;
    if (config.use_ic) l += config.lambda_ic * parts.ic;
    return l;
}

/// Loss terms of one pair together with dL/df for each of the three outputs.
template <typename T>
struct PairGradients {
    LossParts parts;
    double total = 0.0;
    Tensor<T> d_fa;
    Tensor<T> d_fb;
    Tensor<T> d_fmid;
};

/// Evaluates the full objective on one pair from its three network outputs.
/// Disabled terms contribute neither value nor gradient; scale multiplies
/// every gradient (1 / batch size).
template <typename T>
PairGradients<T> pair_objective(const Tensor<T>& f_a, const Tensor<T>& f_b, const Tensor<T>& f_mid, const Slice& x_a,
                                const Slice& x_b, const WeightMatrix& w, const TrainConfig& config, double scale = 1.0)
{
    const std::size_t n = f_a.data.size();
    if (f_b.data.size() != n || f_mid.data.size() != n || x_a.size() != n || x_b.size() != n || w.size() != n)
        throw std::invalid_argument("loss operands differ in shape");
    PairGradients<T> out{{}, 0.0, Tensor<T>(1, f_a.height, f_a.width), Tensor<T>(1, f_a.height, f_a.width),
                         Tensor<T>(1, f_a.height, f_a.width)};
    const double inv_s = 1.0 / static_cast<double>(std::max<std::size_t>(w.matched(), 1));
    const double inv_p = 1.0 / static_cast<double>(n);
    const double lrc = config.use_rc ? config.lambda_rc : 0.0;
    const double lic = config.use_ic ? config.lambda_ic : 0.0;
    double recon_a = 0.0, recon_b = 0.0, rc = 0.0, ic = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double fa = f_a.data[i];
        const double fb = f_b.data[i];
        double ga = 0.0, gb = 0.0, gm = 0.0;
        if (w.values[i]) {
            const double ea = fa - x_b.data[i];
            const double eb = fb - x_a.data[i];
            const double c = fa - fb;
            recon_a += ea * ea;
            recon_b += eb * eb;
            rc += c * c;
            ga += ea * inv_s + 2.0 * lrc * c * inv_s;
            gb += eb * inv_s - 2.0 * lrc * c * inv_s;
        }
        const double r = static_cast<double>(f_mid.data[i]) - 0.5 * (fa + fb);
        ic += r * r;
        gm += 2.0 * lic * r * inv_p;
        ga -= lic * r * inv_p;
        gb -= lic * r * inv_p;
        out.d_fa.data[i] = static_cast<T>(scale * ga);
        out.d_fb.data[i] = static_cast<T>(scale * gb);
        out.d_fmid.data[i] = static_cast<T>(scale * gm);
    }
    out.parts = {0.5 * (recon_a + recon_b) * inv_s, rc * inv_s, ic * inv_p};
    out.total = total_loss(out.parts, config);
    return out;
}

} // namespace nsn2n
