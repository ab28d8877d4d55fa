#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn2n/common.hpp"
#include "nsn2n/volume.hpp"

namespace nsn2n {

/// Parameters of the drifting-ellipse phantom.
struct PhantomSpec {
    int width = 64;
    int height = 64;
    int depth = 32;
    int shapes = 3;
    /// Center drift per slice as a fraction of the in-plane extent.
    double drift = 0.01;
    std::vector<double> levels{0.4, 0.7, 1.0};
    std::uint64_t seed = 0;

    void validate() const
    {
        if (width < 2 || height < 2) throw std::invalid_argument("phantom width and height must be >= 2");
        if (depth < 2) throw std::invalid_argument("phantom depth must be >= 2 (pairing needs a neighboring slice)");
        if (shapes < 1) throw std::invalid_argument("phantom needs at least one shape");
        if (!(drift >= 0.0) || drift > 0.5) throw std::invalid_argument("phantom drift must lie in [0, 0.5]");
        if (levels.empty()) throw std::invalid_argument("phantom intensity levels must not be empty");
        for (double l : levels)
            if (!(l > 0.0 && l <= 1.0)) throw std::invalid_argument("phantom intensity levels must lie in (0, 1]");
    }
};

enum class NoiseModel { gaussian, rician, correlated };

inline std::string to_string(NoiseModel m)
{
    switch (m) {
    case NoiseModel::gaussian: return "gaussian";
    case NoiseModel::rician: return "rician";
    case NoiseModel::correlated: return "correlated";
    }
    return "?";
}

inline NoiseModel parse_noise_model(const std::string& s)
{
    if (s == "gaussian") return NoiseModel::gaussian;
    if (s == "rician") return NoiseModel::rician;
    if (s == "correlated" || s == "correlated-gaussian") return NoiseModel::correlated;
    throw std::invalid_argument("unknown noise model '" + s + "'");
}

struct NoiseSpec {
    NoiseModel model = NoiseModel::rician;
    /// Noise standard deviation as a fraction of the clean volume's maximum.
    double level = 0.05;
    /// Box kernel half-width, correlated model only.
    int half_width = 1;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (!(level >= 0.0) || !std::isfinite(level)) throw std::invalid_argument("noise level must be >= 0");
        if (model == NoiseModel::correlated && half_width < 1)
            throw std::invalid_argument("correlated noise half-width must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const PhantomSpec& p)
{
    j = {{"width", p.width}, {"height", p.height}, {"depth", p.depth}, {"shapes", p.shapes},
         {"drift", p.drift}, {"levels", p.levels}, {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, PhantomSpec& p)
{
    p.width = j.value("width", p.width);
    p.height = j.value("height", p.height);
    p.depth = j.value("depth", p.depth);
    p.shapes = j.value("shapes", p.shapes);
    p.drift = j.value("drift", p.drift);
    p.levels = j.value("levels", p.levels);
    p.seed = j.value("seed", p.seed);
}

inline void to_json(nlohmann::json& j, const NoiseSpec& n)
{
    j = {{"model", to_string(n.model)}, {"level", n.level}, {"half_width", n.half_width}, {"seed", n.seed}};
}

inline void from_json(const nlohmann::json& j, NoiseSpec& n)
{
    if (j.contains("model")) n.model = parse_noise_model(j.at("model").get<std::string>());
    n.level = j.value("level", n.level);
    n.half_width = j.value("half_width", n.half_width);
    n.seed = j.value("seed", n.seed);
}

/// Fraction of pixels with bit-identical values in two slices.
inline double equal_fraction(const Slice& a, const Slice& b)
{
    if (!a.same_shape(b)) throw std::invalid_argument("slice shapes differ");
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a.data[i] == b.data[i];
    return static_cast<double>(same) / static_cast<double>(a.size());
}

/// Smallest equal-pixel fraction over all consecutive slice pairs.
inline double min_consecutive_overlap(const Volume& v)
{
    double worst = 1.0;
    for (int z = 0; z + 1 < v.depth(); ++z) worst = std::min(worst, equal_fraction(v[z], v[z + 1]));
    return worst;
}

/// Piecewise-constant phantom of nested ellipses on a zero background. Each
/// ellipse's center and semi-axes move linearly with z (relative to the
/// middle slice), so neighboring slices agree everywhere except thin bands
/// along the moving boundaries.
inline Volume make_phantom(const PhantomSpec& spec)
{
    spec.validate();
    struct Ellipse {
        double cx, cy, a, b, theta;
        double dx, dy, da, db;
        float level;
    };
    Rng rng(spec.seed, 0x5ea1);
    const double w = spec.width;
    const double h = spec.height;
    std::vector<Ellipse> shapes;
    std::size_t prev_level = spec.levels.size();
    for (int k = 0; k < spec.shapes; ++k) {
        Ellipse e{};
        if (k == 0) {
            e.cx = w * rng.uniform(0.45, 0.55);
            e.cy = h * rng.uniform(0.45, 0.55);
            e.a = w * rng.uniform(0.30, 0.38);
            e.b = h * rng.uniform(0.30, 0.38);
        } else {
            e.cx = w * rng.uniform(0.35, 0.65);
            e.cy = h * rng.uniform(0.35, 0.65);
            e.a = w * rng.uniform(0.08, 0.18);
            e.b = h * rng.uniform(0.08, 0.18);
        }
        e.theta = rng.uniform(0.0, 3.141592653589793);
        const double phi = rng.uniform(0.0, 6.283185307179586);
        e.dx = spec.drift * w * std::cos(phi);
        e.dy = spec.drift * h * std::sin(phi);
        const double grow = rng.uniform() < 0.5 ? -0.5 : 0.5;
        e.da = grow * spec.drift * w;
        e.db = grow * spec.drift * h;
        std::size_t li = rng.below(spec.levels.size());
        if (spec.levels.size() > 1 && li == prev_level) li = (li + 1) % spec.levels.size();
        prev_level = li;
        e.level = static_cast<float>(spec.levels[li]);
        shapes.push_back(e);
    }

    std::vector<Slice> slices(spec.depth);
    const double mid = 0.5 * (spec.depth - 1);
    parallel_for(static_cast<std::size_t>(spec.depth), [&](std::size_t zi) {
        const double dz = static_cast<double>(zi) - mid;
        Slice s(spec.width, spec.height, 0.0f);
        for (const auto& e : shapes) {
            const double cx = e.cx + e.dx * dz;
            const double cy = e.cy + e.dy * dz;
            const double a = std::max(1.0, e.a + e.da * dz);
            const double b = std::max(1.0, e.b + e.db * dz);
            const double c = std::cos(e.theta);
            const double sn = std::sin(e.theta);
            for (int y = 0; y < spec.height; ++y)
                for (int x = 0; x < spec.width; ++x) {
                    const double px = x + 0.5 - cx;
                    const double py = y + 0.5 - cy;
                    const double u = (px * c + py * sn) / a;
                    const double v = (-px * sn + py * c) / b;
                    if (u * u + v * v <= 1.0) s(x, y) = e.level;
                }
        }
        slices[zi] = std::move(s);
    });

    Volume vol(std::move(slices));
    if (min_consecutive_overlap(vol) < 0.5) throw std::invalid_argument("insufficient inter-slice continuity");
    return vol;
}

namespace detail {

inline double noise_sigma(const Volume& v, const NoiseSpec& spec) { return spec.level * v.max_value(); }

// Substream tags keep the three models from sharing draws for the same seed.
inline constexpr std::uint64_t kGaussianTag = 1ull << 40;
inline constexpr std::uint64_t kRicianTag = 2ull << 40;
inline constexpr std::uint64_t kCorrelatedTag = 3ull << 40;

} // namespace detail

/// x = s + n with n ~ N(0, sigma^2), sigma = level * max(s).
inline Volume add_gaussian_noise(const Volume& volume, const NoiseSpec& spec)
{
    spec.validate();
    if (spec.model != NoiseModel::gaussian) throw std::invalid_argument("noise spec is not gaussian");
    Volume out = volume;
    if (spec.level == 0.0) return out;
    const double sigma = detail::noise_sigma(volume, spec);
    parallel_for(out.slices.size(), [&](std::size_t z) {
        Rng rng(spec.seed, detail::kGaussianTag + z);
        for (float& v : out[z].data) v = static_cast<float>(v + sigma * rng.normal());
    });
    return out;
}

/// Magnitude of a complex signal whose real and imaginary parts carry
/// independent N(0, sigma^2) noise: x = sqrt((s + n1)^2 + n2^2).
inline Volume add_rician_noise(const Volume& volume, const NoiseSpec& spec)
{
    spec.validate();
    if (spec.model != NoiseModel::rician) throw std::invalid_argument("noise spec is not rician");
    if (volume.intensity_range().first < 0.0f)
        throw std::invalid_argument("rician noise requires non-negative intensities");
    Volume out = volume;
    if (spec.level == 0.0) return out;
    const double sigma = detail::noise_sigma(volume, spec);
    parallel_for(out.slices.size(), [&](std::size_t z) {
        Rng rng(spec.seed, detail::kRicianTag + z);
        for (float& v : out[z].data) {
            const double re = v + sigma * rng.normal();
            const double im = sigma * rng.normal();
            v = static_cast<float>(std::sqrt(re * re + im * im));
        }
    });
    return out;
}

/// In-plane correlated Gaussian noise: each slice gets a fresh white field
/// box-filtered with a (2r+1)^2 kernel (valid region of an enlarged field, so
/// the variance is uniform) and rescaled to sigma = level * max(s).
inline Volume add_correlated_noise(const Volume& volume, const NoiseSpec& spec)
{
    spec.validate();
    if (spec.model != NoiseModel::correlated) throw std::invalid_argument("noise spec is not correlated");
    const int r = spec.half_width;
    if (2 * r + 1 > std::min(volume.width(), volume.height()))
        throw std::invalid_argument("correlated noise kernel is wider than the slice");
    Volume out = volume;
    if (spec.level == 0.0) return out;
    const double sigma = detail::noise_sigma(volume, spec);
    const int k = 2 * r + 1;
    // A sum of k*k unit normals has std k.
    const double gain = sigma / k;
    const int w = volume.width();
    const int h = volume.height();
    parallel_for(out.slices.size(), [&](std::size_t z) {
        Rng rng(spec.seed, detail::kCorrelatedTag + z);
        const int fw = w + 2 * r;
        const int fh = h + 2 * r;
        std::vector<double> field(static_cast<std::size_t>(fw) * fh);
        for (double& f : field) f = rng.normal();
        // Separable box sums: rows, then columns.
        std::vector<double> rows(static_cast<std::size_t>(w) * fh, 0.0);
        for (int y = 0; y < fh; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i) acc += field[static_cast<std::size_t>(y) * fw + x + i];
                rows[static_cast<std::size_t>(y) * w + x] = acc;
            }
        auto& s = out[z];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i) acc += rows[static_cast<std::size_t>(y + i) * w + x];
                s(x, y) = static_cast<float>(s(x, y) + gain * acc);
            }
    });
    return out;
}

inline Volume add_noise(const Volume& volume, const NoiseSpec& spec)
{
    switch (spec.model) {
    case NoiseModel::gaussian: return add_gaussian_noise(volume, spec);
    case NoiseModel::rician: return add_rician_noise(volume, spec);
    case NoiseModel::correlated: return add_correlated_noise(volume, spec);
    }
    throw std::invalid_argument("unknown noise model");
}

} // namespace nsn2n
