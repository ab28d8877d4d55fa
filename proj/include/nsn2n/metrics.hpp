#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn2n/common.hpp"
#include "nsn2n/volume.hpp"

namespace nsn2n {

inline double mse(const Slice& a, const Slice& b)
{
    if (!a.same_shape(b)) throw std::invalid_argument("metric operands differ in shape");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

/// Peak signal-to-noise ratio in dB; +infinity for identical inputs.
inline double psnr(const Slice& a, const Slice& b, double data_range = 1.0)
{
    if (!(data_range > 0.0)) throw std::invalid_argument("data range must be > 0");
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / m);
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean structural similarity over every fully contained Gaussian window.
inline double ssim(const Slice& a, const Slice& b, const SsimParams& params = {})
{
    if (!a.same_shape(b)) throw std::invalid_argument("metric operands differ in shape");
    const int win = params.window;
    if (a.width < win || a.height < win) throw std::invalid_argument("slice smaller than the SSIM window");
    std::vector<double> g(win);
    double gs = 0.0;
    for (int i = 0; i < win; ++i) {
        const double t = i - (win - 1) / 2.0;
        g[i] = std::exp(-t * t / (2.0 * params.sigma * params.sigma));
        gs += g[i];
    }
    for (auto& v : g) v /= gs;

    const int ow = a.width - win + 1;
    const int oh = a.height - win + 1;
    // Separable valid filtering of x, y, x^2, y^2, xy.
    auto filter = [&](auto&& value) {
        std::vector<double> rows(static_cast<std::size_t>(ow) * a.height);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int t = 0; t < win; ++t) acc += g[t] * value(x + t, y);
                rows[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        std::vector<double> out(static_cast<std::size_t>(ow) * oh);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int t = 0; t < win; ++t) acc += g[t] * rows[static_cast<std::size_t>(y + t) * ow + x];
                out[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        return out;
    };
    auto va = [&](int x, int y) { return static_cast<double>(a(x, y)); };
    auto vb = [&](int x, int y) { return static_cast<double>(b(x, y)); };
    const auto mu_a = filter(va);
    const auto mu_b = filter(vb);
    const auto aa = filter([&](int x, int y) { return va(x, y) * va(x, y); });
    const auto bb = filter([&](int x, int y) { return vb(x, y) * vb(x, y); });
    const auto ab = filter([&](int x, int y) { return va(x, y) * vb(x, y); });

    const double c1 = (params.k1 * params.data_range) * (params.k1 * params.data_range);
    const double c2 = (params.k2 * params.data_range) * (params.k2 * params.data_range);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i];
        const double mb = mu_b[i];
        const double var_a = aa[i] - ma * ma;
        const double var_b = bb[i] - mb * mb;
        const double cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

/// Mean and population standard deviation. All-infinite input yields
/// (inf, 0); a mix of finite and infinite values yields (inf, inf).
struct Summary {
    double mean = 0.0;
    double stddev = 0.0;
};

inline Summary summarize(const std::vector<double>& v)
{
    if (v.empty()) return {};
    std::size_t inf = 0;
    for (double x : v) inf += std::isinf(x) ? 1 : 0;
    if (inf == v.size()) return {std::numeric_limits<double>::infinity(), 0.0};
    if (inf > 0) return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

struct MetricsReport {
    std::vector<double> psnr;
    std::vector<double> ssim;
    Summary psnr_summary;
    Summary ssim_summary;
    double data_range = 1.0;

    double ssim_percent_mean() const { return 100.0 * ssim_summary.mean; }
    double ssim_percent_std() const { return 100.0 * ssim_summary.stddev; }
};

inline MetricsReport evaluate_volume(const Volume& pred, const Volume& truth, double data_range = 1.0)
{
    if (!pred.same_shape(truth)) throw std::invalid_argument("volumes differ in shape or depth");
    MetricsReport r;
    r.data_range = data_range;
    r.psnr.resize(pred.slices.size());
    r.ssim.resize(pred.slices.size());
    SsimParams sp;
    sp.data_range = data_range;
    parallel_for(pred.slices.size(), [&](std::size_t z) {
        r.psnr[z] = psnr(pred[z], truth[z], data_range);
        r.ssim[z] = ssim(pred[z], truth[z], sp);
    });
    r.psnr_summary = summarize(r.psnr);
    r.ssim_summary = summarize(r.ssim);
    return r;
}

/// Numbers as text with "inf"/"nan" spelled out.
inline std::string format_number(double v, int precision = 6)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

inline nlohmann::json number_to_json(double v)
{
    if (std::isfinite(v)) return v;
    return format_number(v);
}

inline nlohmann::json report_to_json(const MetricsReport& r)
{
    nlohmann::json psnr = nlohmann::json::array(), ssim = nlohmann::json::array();
    for (double v : r.psnr) psnr.push_back(number_to_json(v));
    for (double v : r.ssim) ssim.push_back(number_to_json(v));
    return {{"stddev", "population"},
            {"data_range", r.data_range},
            {"psnr_db", {{"mean", number_to_json(r.psnr_summary.mean)},
                         {"std", number_to_json(r.psnr_summary.stddev)},
                         {"per_slice", psnr}}},
            {"ssim", {{"mean", number_to_json(r.ssim_summary.mean)},
                      {"std", number_to_json(r.ssim_summary.stddev)},
                      {"mean_percent", number_to_json(r.ssim_percent_mean())},
                      {"std_percent", number_to_json(r.ssim_percent_std())},
                      {"per_slice", ssim}}}};
}

inline std::string report_to_csv(const MetricsReport& r)
{
    std::ostringstream os;
    os << "# population standard deviation\n";
    os << "slice,psnr_db,ssim\n";
    for (std::size_t z = 0; z < r.psnr.size(); ++z)
        os << z << ',' << format_number(r.psnr[z], 10) << ',' << format_number(r.ssim[z], 10) << '\n';
    return os.str();
}

/// One-line "PSNR mean±std dB, SSIM mean±std %" summary.
inline std::string table_line(const MetricsReport& r)
{
    auto fmt2 = [](double v) {
        if (!std::isfinite(v)) return format_number(v);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    return "PSNR " + fmt2(r.psnr_summary.mean) + "±" + fmt2(r.psnr_summary.stddev) + " dB, SSIM " +
           fmt2(r.ssim_percent_mean()) + "±" + fmt2(r.ssim_percent_std()) + " %";
}

} // namespace nsn2n
