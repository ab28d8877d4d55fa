#pragma once
// Scalar reference implementations used as independent oracles. They follow
// the defining formulas directly and share no code with the library paths
// they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nsn2n/common.hpp"
#include "nsn2n/filters.hpp"
#include "nsn2n/pairing.hpp"
#include "nsn2n/volume.hpp"

namespace nsn2n::oracle {

inline Slice random_slice(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
    Rng rng(seed, 0xabc);
    Slice s(w, h);
    for (auto& v : s.data) v = static_cast<float>(rng.uniform(lo, hi));
    return s;
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

/// Bilinear value at continuous source coordinate (fx, fy).
inline double bilinear_at(const Slice& s, double fx, double fy)
{
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            const double wx = dx == 0 ? 1.0 - (fx - x0) : fx - x0;
            const double wy = dy == 0 ? 1.0 - (fy - y0) : fy - y0;
            if (wx == 0.0 || wy == 0.0) continue;
            acc += wx * wy * s(clampi(x0 + dx, 0, s.width - 1), clampi(y0 + dy, 0, s.height - 1));
        }
    return acc;
}

/// Target pixel centers placed so the outermost centers of both grids coincide.
inline Slice resample(const Slice& s, int w, int h)
{
    Slice out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / (w - 1); // unit-square position
            const double v = static_cast<double>(y) / (h - 1);
            out(x, y) = static_cast<float>(bilinear_at(s, u * (s.width - 1), v * (s.height - 1)));
        }
    return out;
}

/// Quadruple-loop non-local means.
inline Slice nlm(const Slice& s, const LpfParams& p)
{
    Slice out(s.width, s.height);
    const double n = (2.0 * p.patch_radius + 1) * (2.0 * p.patch_radius + 1);
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            double num = 0.0, den = 0.0;
            for (int qy = y - p.search_radius; qy <= y + p.search_radius; ++qy)
                for (int qx = x - p.search_radius; qx <= x + p.search_radius; ++qx) {
                    if (qx < 0 || qy < 0 || qx >= s.width || qy >= s.height) continue;
                    double d2 = 0.0;
                    for (int ty = -p.patch_radius; ty <= p.patch_radius; ++ty)
                        for (int tx = -p.patch_radius; tx <= p.patch_radius; ++tx) {
                            const double a = s(clampi(x + tx, 0, s.width - 1), clampi(y + ty, 0, s.height - 1));
                            const double b = s(clampi(qx + tx, 0, s.width - 1), clampi(qy + ty, 0, s.height - 1));
                            d2 += (a - b) * (a - b);
                        }
                    d2 /= n;
                    const double w = std::exp(-std::max(d2 - 2.0 * p.sigma * p.sigma, 0.0) / (p.h * p.h));
                    num += w * s(qx, qy);
                    den += w;
                }
            out(x, y) = static_cast<float>(num / den);
        }
    return out;
}

/// Median by full sort of the clamped window.
inline Slice median(const Slice& s, int k)
{
    Slice out(s.width, s.height);
    const int r = k / 2;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            std::vector<float> v;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    v.push_back(s(clampi(x + dx, 0, s.width - 1), clampi(y + dy, 0, s.height - 1)));
            std::sort(v.begin(), v.end());
            out(x, y) = v[v.size() / 2];
        }
    return out;
}

inline Slice lpf(const Slice& s, const LpfParams& p) { return median(nlm(s, p), p.median_size); }

inline std::vector<std::uint8_t> weights(const Slice& a, const Slice& b, double th, const LpfParams& p)
{
    const auto la = oracle::lpf(a, p);
    const auto lb = oracle::lpf(b, p);
    std::vector<std::uint8_t> w(a.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::fabs(double(la.data[i]) - double(lb.data[i])) <= th;
    return w;
}

inline double masked_mse(const std::vector<float>& p, const std::vector<float>& q, const std::vector<std::uint8_t>& w)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += w[i] * (double(p[i]) - double(q[i])) * (double(p[i]) - double(q[i]));
        den += w[i];
    }
    return num / std::max(den, 1.0);
}

/// Continuity term from the three outputs.
inline double ic(const std::vector<float>& fa, const std::vector<float>& fb, const std::vector<float>& fm)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        const double d = double(fm[i]) - (double(fa[i]) + double(fb[i])) / 2.0;
        acc += d * d;
    }
    return acc / static_cast<double>(fa.size());
}

/// Scalar Adam recurrence on loss 0.5 * theta^2, returning theta after each step.
inline std::vector<double> adam_quadratic(double theta, int steps, double lr, double b1 = 0.5, double b2 = 0.999,
                                          double eps = 1e-8)
{
    std::vector<double> out;
    double m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
        const double g = theta;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        theta -= lr * mh / (std::sqrt(vh) + eps);
        out.push_back(theta);
    }
    return out;
}

/// Mean of a Rician variable with signal s and noise sigma, by Simpson
/// quadrature of x * pdf(x).
inline double rician_mean(double s, double sigma)
{
    const double lo = std::max(0.0, s - 12.0 * sigma);
    const double hi = s + 12.0 * sigma;
    const int n = 20000;
    const double hstep = (hi - lo) / n;
    auto f = [&](double x) {
        if (x <= 0.0) return 0.0;
        const double z = x * s / (sigma * sigma);
        // pdf = x/s^2 exp(-(x^2+s^2)/2s^2) I0(z); fold exp(-z) into the scaled Bessel.
        const double i0e = std::cyl_bessel_i(0.0, z) * std::exp(-z);
        return x * (x / (sigma * sigma)) * std::exp(-(x - s) * (x - s) / (2 * sigma * sigma)) * i0e;
    };
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(lo + i * hstep);
    return acc * hstep / 3.0;
}

} // namespace nsn2n::oracle
