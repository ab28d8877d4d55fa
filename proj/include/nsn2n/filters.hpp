#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn2n/volume.hpp"

namespace nsn2n {

/// Settings of the low-pass pre-filter (non-local means, then median).
///
/// The NLM weight of candidate q for pixel p is
///   exp(-max(d2 - 2 sigma^2, 0) / h^2)
/// with d2 the mean squared difference of the patches around p and q. The
/// defaults (h = 0.03, sigma = 0) are conventional values, not measured ones;
/// for_noise_level() derives both from a known noise level.
struct LpfParams {
    int patch_radius = 1;
    int search_radius = 3;
    double h = 0.03;
    /// Noise estimate for the 2*sigma^2 compensation term; 0 disables it.
    double sigma = 0.0;
    int median_size = 3;

    static LpfParams for_noise_level(double level)
    {
        LpfParams p;
        p.h = 0.6 * level;
        p.sigma = level;
        return p;
    }

    void validate() const
    {
        if (patch_radius < 0 || search_radius < 0) throw std::invalid_argument("NLM radii must be >= 0");
        if (!(h > 0.0)) throw std::invalid_argument("NLM strength h must be > 0");
        if (!(sigma >= 0.0)) throw std::invalid_argument("NLM noise estimate must be >= 0");
        if (median_size < 1 || median_size % 2 == 0)
            throw std::invalid_argument("median kernel size must be odd and >= 1");
    }

    bool operator==(const LpfParams&) const = default;
};

inline void to_json(nlohmann::json& j, const LpfParams& p)
{
    j = {{"patch_radius", p.patch_radius},
         {"search_radius", p.search_radius},
         {"h", p.h},
         {"sigma", p.sigma},
         {"median_size", p.median_size}};
}

inline void from_json(const nlohmann::json& j, LpfParams& p)
{
    p.patch_radius = j.value("patch_radius", p.patch_radius);
    p.search_radius = j.value("search_radius", p.search_radius);
    p.h = j.value("h", p.h);
    p.sigma = j.value("sigma", p.sigma);
    p.median_size = j.value("median_size", p.median_size);
}

/// k x k median with replicate padding.
inline Slice median_filter(const Slice& slice, int k)
{
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("median kernel size must be odd");
    if (k > std::min(slice.width, slice.height)) throw std::invalid_argument("median kernel larger than slice");
    const int r = k / 2;
    Slice out(slice.width, slice.height);
    std::vector<float> window(static_cast<std::size_t>(k) * k);
    const auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
    for (int y = 0; y < slice.height; ++y)
        for (int x = 0; x < slice.width; ++x) {
            std::size_t n = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) window[n++] = slice.clamped(x + dx, y + dy);
            std::nth_element(window.begin(), mid, window.end());
            out(x, y) = *mid;
        }
    return out;
}

/// Non-local means. Candidates are the in-image pixels of the search window
/// (the center included, with d2 = 0); patches use replicate padding.
///
/// Works offset by offset: for each displacement the squared-difference
/// image is box-summed over the patch, which visits every (pixel, candidate)
/// pair once.
inline Slice nlm_filter(const Slice& slice, const LpfParams& params)
{
    params.validate();
    const int pr = params.patch_radius;
    const int sr = params.search_radius;
    const int w = slice.width;
    const int h = slice.height;
    if (w <= 2 * (pr + sr) || h <= 2 * (pr + sr)) throw std::invalid_argument("slice too small for NLM window");

    const double inv_h2 = 1.0 / (params.h * params.h);
    const double bias = 2.0 * params.sigma * params.sigma;
    const double inv_patch = 1.0 / ((2.0 * pr + 1) * (2.0 * pr + 1));

    // Clamp-extended copy covering every index the patches can touch.
    const int pad = pr + sr;
    const int pw = w + 2 * pad;
    const int ph = h + 2 * pad;
    std::vector<double> ext(static_cast<std::size_t>(pw) * ph);
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) ext[static_cast<std::size_t>(y) * pw + x] = slice.clamped(x - pad, y - pad);
    auto at = [&](int x, int y) { return ext[static_cast<std::size_t>(y + pad) * pw + (x + pad)]; };

    std::vector<double> num(static_cast<std::size_t>(w) * h, 0.0);
    std::vector<double> den(static_cast<std::size_t>(w) * h, 0.0);
    // diff over rows [-pr, h+pr) x cols [-pr, w+pr); row sums over patch width.
    const int dw = w + 2 * pr;
    const int dh = h + 2 * pr;
    std::vector<double> diff(static_cast<std::size_t>(dw) * dh);
    std::vector<double> rowsum(static_cast<std::size_t>(w) * dh);

    for (int oy = -sr; oy <= sr; ++oy)
        for (int ox = -sr; ox <= sr; ++ox) {
            for (int y = 0; y < dh; ++y)
                for (int x = 0; x < dw; ++x) {
                    const double d = at(x - pr, y - pr) - at(x - pr + ox, y - pr + oy);
                    diff[static_cast<std::size_t>(y) * dw + x] = d * d;
                }
            for (int y = 0; y < dh; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int t = 0; t <= 2 * pr; ++t) acc += diff[static_cast<std::size_t>(y) * dw + x + t];
                    rowsum[static_cast<std::size_t>(y) * w + x] = acc;
                }
            for (int y = 0; y < h; ++y) {
                const int qy = y + oy;
                if (qy < 0 || qy >= h) continue;
                for (int x = 0; x < w; ++x) {
                    const int qx = x + ox;
                    if (qx < 0 || qx >= w) continue;
                    double acc = 0.0;
                    for (int t = 0; t <= 2 * pr; ++t) acc += rowsum[static_cast<std::size_t>(y + t) * w + x];
                    const double d2 = acc * inv_patch;
                    const double wgt = std::exp(-std::max(d2 - bias, 0.0) * inv_h2);
                    const auto i = static_cast<std::size_t>(y) * w + x;
                    num[i] += wgt * slice(qx, qy);
                    den[i] += wgt;
                }
            }
        }

    Slice out(w, h);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(num[i] / den[i]);
    return out;
}

/// Low-pass pre-filter used for weight maps: NLM followed by a median.
inline Slice lpf(const Slice& slice, const LpfParams& params)
{
    return median_filter(nlm_filter(slice, params), params.median_size);
}

} // namespace nsn2n
