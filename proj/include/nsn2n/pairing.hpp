#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn2n/common.hpp"
#include "nsn2n/filters.hpp"
#include "nsn2n/volume.hpp"

namespace nsn2n {

/// Binary matched-region mask over the pixels of a slice pair.
struct WeightMatrix {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;

    WeightMatrix() = default;
    WeightMatrix(int w, int h, std::uint8_t fill) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    static WeightMatrix ones(int w, int h) { return {w, h, 1}; }

    std::uint8_t operator()(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return values.size(); }
    std::size_t matched() const
    {
        std::size_t n = 0;
        for (auto v : values) n += v;
        return n;
    }
    double matched_fraction() const { return values.empty() ? 0.0 : static_cast<double>(matched()) / values.size(); }

    bool matches(const Slice& s) const { return s.width == width && s.height == height; }
    bool operator==(const WeightMatrix&) const = default;
};

/// Neighboring slices (x_i, x_{i+1}) with their weight matrix.
struct WeightedPair {
    int index = 0;
    Slice slice_a;
    Slice slice_b;
    WeightMatrix weights;
};

struct TrainingSet {
    double th = 0.0;
    LpfParams params;
    std::vector<WeightedPair> pairs;
};

namespace detail {

inline void check_threshold(double th)
{
    if (std::isnan(th) || th < 0.0) throw std::invalid_argument("threshold th must be >= 0");
}

} // namespace detail

/// W = 1 where |a - b| <= th on already low-passed slices.
inline WeightMatrix threshold_residual(const Slice& filtered_a, const Slice& filtered_b, double th)
{
    detail::check_threshold(th);
    if (!filtered_a.same_shape(filtered_b)) throw std::invalid_argument("weight matrix: slice shapes differ");
    WeightMatrix w(filtered_a.width, filtered_a.height, 0);
    for (std::size_t i = 0; i < w.values.size(); ++i)
        w.values[i] = std::abs(static_cast<double>(filtered_a.data[i]) - filtered_b.data[i]) <= th ? 1 : 0;
    return w;
}

inline WeightMatrix compute_weight_matrix(const Slice& x_a, const Slice& x_b, double th, const LpfParams& params)
{
    detail::check_threshold(th);
    if (!x_a.same_shape(x_b)) throw std::invalid_argument("weight matrix: slice shapes differ");
    return threshold_residual(lpf(x_a, params), lpf(x_b, params), th);
}

/// LPF output of every slice, each computed once.
inline std::vector<Slice> filter_volume(const Volume& volume, const LpfParams& params)
{
    params.validate();
    std::vector<Slice> out(volume.slices.size());
    parallel_for(out.size(), [&](std::size_t z) { out[z] = lpf(volume[z], params); });
    return out;
}

inline TrainingSet build_training_set(const Volume& volume, double th, const LpfParams& params)
{
    detail::check_threshold(th);
    if (volume.depth() < 2) throw std::invalid_argument("training set needs a volume of depth >= 2");
    const auto filtered = filter_volume(volume, params);
    TrainingSet set{th, params, std::vector<WeightedPair>(volume.slices.size() - 1)};
    parallel_for(set.pairs.size(), [&](std::size_t i) {
        set.pairs[i] = WeightedPair{static_cast<int>(i), volume[i], volume[i + 1],
                                    threshold_residual(filtered[i], filtered[i + 1], th)};
    });
    return set;
}

/// Identical slices with all-ones masks, i.e. the pairing without weights.
inline TrainingSet unweighted_training_set(const Volume& volume)
{
    if (volume.depth() < 2) throw std::invalid_argument("training set needs a volume of depth >= 2");
    TrainingSet set{std::numeric_limits<double>::infinity(), LpfParams{}, {}};
    for (int i = 0; i + 1 < volume.depth(); ++i)
        set.pairs.push_back({i, volume[i], volume[i + 1], WeightMatrix::ones(volume.width(), volume.height())});
    return set;
}

// ---------------------------------------------------------------------------
// Threshold diagnostics.

struct ResidualHistogram {
    double bin_width = 0.005;
    /// counts[k] covers [k*bin_width, (k+1)*bin_width); the last bin is open.
    std::vector<std::size_t> counts;
};

struct ThresholdRow {
    double th = 0.0;
    double matched_fraction = 0.0;
    double min_pair_fraction = 0.0;
};

struct WeightDiagnostics {
    ResidualHistogram histogram;
    std::vector<ThresholdRow> rows;
};

/// Residual statistics and matched fractions for a set of candidate
/// thresholds. When png_dir is non-empty every weight map is also written
/// as w_th<k>_pair<i>.png for inspection.
inline WeightDiagnostics weight_diagnostics(const Volume& volume, const LpfParams& params,
                                            const std::vector<double>& th_candidates,
                                            const std::filesystem::path& png_dir = {})
{
    if (th_candidates.empty()) throw std::invalid_argument("no threshold candidates given");
    for (double th : th_candidates) detail::check_threshold(th);
    const auto filtered = filter_volume(volume, params);

    WeightDiagnostics diag;
    diag.histogram.counts.assign(41, 0);
    for (std::size_t i = 0; i + 1 < filtered.size(); ++i)
        for (std::size_t p = 0; p < filtered[i].size(); ++p) {
            const double r = std::abs(static_cast<double>(filtered[i].data[p]) - filtered[i + 1].data[p]);
            const auto bin = std::min<std::size_t>(static_cast<std::size_t>(r / diag.histogram.bin_width),
                                                   diag.histogram.counts.size() - 1);
            ++diag.histogram.counts[bin];
        }

    for (std::size_t k = 0; k < th_candidates.size(); ++k) {
        ThresholdRow row{th_candidates[k], 0.0, 1.0};
        for (std::size_t i = 0; i + 1 < filtered.size(); ++i) {
            const auto w = threshold_residual(filtered[i], filtered[i + 1], th_candidates[k]);
            row.matched_fraction += w.matched_fraction();
            row.min_pair_fraction = std::min(row.min_pair_fraction, w.matched_fraction());
            if (!png_dir.empty()) {
                Slice img(w.width, w.height);
                for (std::size_t p = 0; p < w.size(); ++p) img.data[p] = w.values[p];
                char name[64];
                std::snprintf(name, sizeof name, "w_th%zu_pair%03zu.png", k, i);
                save_png16(img, png_dir / name);
            }
        }
        row.matched_fraction /= static_cast<double>(filtered.size() - 1);
        diag.rows.push_back(row);
    }
    return diag;
}

// ---------------------------------------------------------------------------
// Training-set directory: manifest.json plus one packed bitmap per pair.
// Bit k of a bitmap (row-major pixel index) lives in byte k / 8 at bit
// position k % 8, least significant bit first.

inline nlohmann::json threshold_to_json(double th)
{
    if (std::isinf(th)) return "inf";
    return th;
}

inline double threshold_from_json(const nlohmann::json& j)
{
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw FormatError("bad threshold value " + j.dump());
    }
    return j.get<double>();
}

inline std::string pack_bits(const WeightMatrix& w)
{
    std::string bytes((w.size() + 7) / 8, '\0');
    for (std::size_t k = 0; k < w.size(); ++k)
        if (w.values[k]) bytes[k / 8] = static_cast<char>(bytes[k / 8] | (1u << (k % 8)));
    return bytes;
}

inline WeightMatrix unpack_bits(const std::string& bytes, int width, int height)
{
    WeightMatrix w(width, height, 0);
    if (bytes.size() != (w.size() + 7) / 8) throw FormatError("corrupt weight bitmap: wrong byte count");
    for (std::size_t k = 0; k < w.size(); ++k)
        w.values[k] = (static_cast<unsigned char>(bytes[k / 8]) >> (k % 8)) & 1u;
    return w;
}

inline void save_training_set(const TrainingSet& set, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nlohmann::json pairs = nlohmann::json::array();
    int width = 0, height = 0;
    for (const auto& p : set.pairs) {
        char name[32];
        std::snprintf(name, sizeof name, "w_%04d.bits", p.index);
        io::write_text(dir / name, pack_bits(p.weights));
        pairs.push_back({{"index", p.index}, {"a", p.index}, {"b", p.index + 1}, {"file", name},
                         {"matched", p.weights.matched()}});
        width = p.weights.width;
        height = p.weights.height;
    }
    nlohmann::json manifest = {{"version", 1},
                               {"width", width},
                               {"height", height},
                               {"th", threshold_to_json(set.th)},
                               {"lpf", set.params},
                               {"bit_order", "row-major,lsb-first"},
                               {"pairs", pairs}};
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Reattaches stored weight maps to the slices of their source volume.
inline TrainingSet load_training_set(const std::filesystem::path& dir, const Volume& volume)
{
    const auto manifest = io::read_json(dir / "manifest.json");
    try {
        if (manifest.at("version").get<int>() != 1) throw FormatError("unsupported version");
        const int w = manifest.at("width").get<int>();
        const int h = manifest.at("height").get<int>();
        if (w != volume.width() || h != volume.height())
            throw std::invalid_argument("training set does not match the volume's slice size");
        TrainingSet set;
        set.th = threshold_from_json(manifest.at("th"));
        set.params = manifest.at("lpf").get<LpfParams>();
        for (const auto& p : manifest.at("pairs")) {
            const int i = p.at("index").get<int>();
            if (i < 0 || i + 1 >= volume.depth()) throw std::invalid_argument("training set pair index out of range");
            auto weights = unpack_bits(io::read_file(dir / p.at("file").get<std::string>()), w, h);
            set.pairs.push_back({i, volume[i], volume[i + 1], std::move(weights)});
        }
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt training-set manifest: ") + e.what());
    }
}

} // namespace nsn2n
