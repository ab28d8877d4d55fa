#include <gtest/gtest.h>

#include <filesystem>

#include "nsn2n/pairing.hpp"
#include "nsn2n/synth.hpp"
#include "support/oracles.hpp"

using namespace nsn2n;
namespace fs = std::filesystem;

namespace {

Volume noisy_phantom(double level, std::uint64_t seed, int depth = 32)
{
    PhantomSpec ps;
    ps.depth = depth;
    ps.seed = seed;
    NoiseSpec ns;
    ns.model = NoiseModel::gaussian;
    ns.level = level;
    ns.seed = seed + 1000;
    return add_noise(make_phantom(ps), ns);
}

Slice disk(int w, int h, double cx, double cy, double r, float level)
{
    Slice s(w, h, 0.0f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r) s(x, y) = level;
    return s;
}

} // namespace

TEST(WeightMatrix, IdenticalSlicesAreAllOnes)
{
    const auto s = oracle::random_slice(16, 16, 1);
    for (double th : {0.0, 0.01, 1.0}) {
        const auto w = compute_weight_matrix(s, s, th, LpfParams{});
        EXPECT_EQ(w.matched(), w.size());
    }
}

TEST(WeightMatrix, DistinctConstantsAreAllZeros)
{
    const auto w = compute_weight_matrix(Slice(16, 16, 0.0f), Slice(16, 16, 0.5f), 0.01, LpfParams{});
    EXPECT_EQ(w.matched(), 0u);
}

TEST(WeightMatrix, EqualityAtThresholdCountsAsMatched)
{
    const auto w = threshold_residual(Slice(2, 1, {0.0f, 0.0f}), Slice(2, 1, {0.25f, 0.5f}), 0.25);
    EXPECT_EQ(w.values, (std::vector<std::uint8_t>{1, 0}));
}

TEST(WeightMatrix, ShiftedDiskMasksTheMovingBand)
{
    const int n = 48;
    const auto a = disk(n, n, 24, 24, 12, 0.7f);
    const auto b = disk(n, n, 28, 24, 12, 0.7f);
    const LpfParams p;
    const double th = 0.01;
    const auto w = compute_weight_matrix(a, b, th, p);

    // Against the brute-force LPF reference; ties within float noise of th excused.
    const auto la = oracle::lpf(a, p);
    const auto lb = oracle::lpf(b, p);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double r = std::abs(double(la.data[i]) - lb.data[i]);
        if ((r <= th) != (w.values[i] == 1)) {
            ++mismatches;
            EXPECT_NEAR(r, th, 1e-5);
        }
    }
    EXPECT_LE(mismatches, 2u);

    // Zeros lie within two pixels of the symmetric difference, and cover it.
    std::size_t band = 0, band_zero = 0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const bool in_band = a(x, y) != b(x, y);
            band += in_band;
            band_zero += in_band && w(x, y) == 0;
            if (w(x, y) == 0) {
                bool near = false;
                for (int dy = -2; dy <= 2 && !near; ++dy)
                    for (int dx = -2; dx <= 2 && !near; ++dx) {
                        const int xx = oracle::clampi(x + dx, 0, n - 1), yy = oracle::clampi(y + dy, 0, n - 1);
                        near = a(xx, yy) != b(xx, yy);
                    }
                EXPECT_TRUE(near) << "unmatched pixel far from the band at " << x << "," << y;
            }
        }
    ASSERT_GT(band, 0u);
    EXPECT_GE(static_cast<double>(band_zero) / band, 0.9);
}

TEST(WeightMatrix, LawsOnNoisyPhantomPairs)
{
    const auto v = noisy_phantom(0.05, 21, 11);
    const LpfParams p = LpfParams::for_noise_level(0.05);
    for (int i = 0; i + 1 < v.depth(); ++i) {
        const auto w1 = compute_weight_matrix(v[i], v[i + 1], 0.01, p);
        const auto w2 = compute_weight_matrix(v[i], v[i + 1], 0.03, p);
        const auto swapped = compute_weight_matrix(v[i + 1], v[i], 0.01, p);
        const auto all = compute_weight_matrix(v[i], v[i + 1], std::numeric_limits<double>::infinity(), p);
        EXPECT_EQ(w1.values, swapped.values);
        EXPECT_EQ(all.matched(), all.size());
        for (std::size_t k = 0; k < w1.size(); ++k) {
            ASSERT_TRUE(w1.values[k] == 0 || w1.values[k] == 1);
            ASSERT_LE(w1.values[k], w2.values[k]);
        }
    }
}

TEST(WeightMatrix, DependsOnlyOnFilteredSlices)
{
    // A single impulse is removed by the median stage when NLM leaves it
    // isolated (tiny h), so W does not change.
    const auto v = noisy_phantom(0.0, 2, 2);
    LpfParams p;
    p.h = 1e-6;
    auto a2 = v[0];
    // Pick a pixel inside a flat 5x5 region.
    int px = -1, py = -1;
    for (int y = 2; y < 62 && px < 0; ++y)
        for (int x = 2; x < 62 && px < 0; ++x) {
            bool flat = true;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) flat = flat && v[0](x + dx, y + dy) == v[0](x, y);
            if (flat && v[0](x, y) > 0.0f) px = x, py = y;
        }
    ASSERT_GE(px, 0);
    a2(px, py) += 0.3f;
    EXPECT_EQ(lpf(a2, p), lpf(v[0], p));
    EXPECT_EQ(compute_weight_matrix(a2, v[1], 0.01, p).values, compute_weight_matrix(v[0], v[1], 0.01, p).values);
}

TEST(WeightMatrix, Errors)
{
    EXPECT_THROW(compute_weight_matrix(Slice(16, 16), Slice(16, 17), 0.01, LpfParams{}), std::invalid_argument);
    EXPECT_THROW(compute_weight_matrix(Slice(16, 16), Slice(16, 16), -0.01, LpfParams{}), std::invalid_argument);
}

TEST(TrainingSet, PairsAndFilterReuse)
{
    const auto v = noisy_phantom(0.05, 3);
    const LpfParams p = LpfParams::for_noise_level(0.05);
    const auto set = build_training_set(v, 0.01, p);
    ASSERT_EQ(set.pairs.size(), 31u);
    for (std::size_t i = 0; i < set.pairs.size(); ++i) {
        EXPECT_EQ(set.pairs[i].index, static_cast<int>(i));
        EXPECT_EQ(set.pairs[i].slice_a, v[i]);
        EXPECT_EQ(set.pairs[i].slice_b, v[i + 1]);
    }
    for (int i : {0, 15, 30})
        EXPECT_EQ(set.pairs[i].weights.values, compute_weight_matrix(v[i], v[i + 1], 0.01, p).values);
}

TEST(TrainingSet, MeanMatchedFractionOnNoisyPhantom)
{
    const auto v = noisy_phantom(0.05, 4);
    const auto set = build_training_set(v, 0.01, LpfParams::for_noise_level(0.05));
    double mean = 0.0;
    for (const auto& p : set.pairs) mean += p.weights.matched_fraction();
    mean /= set.pairs.size();
    EXPECT_GE(mean, 0.5);
}

TEST(TrainingSet, IdenticalSlicesGiveAllOnes)
{
    const auto s = oracle::random_slice(16, 16, 9);
    const auto set = build_training_set(Volume({s, s, s}), 0.0, LpfParams{});
    ASSERT_EQ(set.pairs.size(), 2u);
    for (const auto& p : set.pairs) EXPECT_EQ(p.weights.matched(), p.weights.size());
}

TEST(Diagnostics, ThresholdExtremesAndMonotonicity)
{
    const auto v = noisy_phantom(0.05, 5, 8);
    const auto d = weight_diagnostics(v, LpfParams::for_noise_level(0.05),
                                      {0.0, 0.005, 0.01, 0.02, 0.04, std::numeric_limits<double>::infinity()});
    ASSERT_EQ(d.rows.size(), 6u);
    EXPECT_LT(d.rows[0].matched_fraction, 0.01);
    EXPECT_EQ(d.rows[5].matched_fraction, 1.0);
    EXPECT_EQ(d.rows[5].min_pair_fraction, 1.0);
    for (std::size_t k = 1; k < d.rows.size(); ++k) {
        EXPECT_GE(d.rows[k].matched_fraction, d.rows[k - 1].matched_fraction);
        EXPECT_LE(d.rows[k].min_pair_fraction, d.rows[k].matched_fraction);
    }
    std::size_t total = 0;
    for (auto c : d.histogram.counts) total += c;
    EXPECT_EQ(total, 7u * 64u * 64u);
}

TEST(Diagnostics, ExportsWeightMaps)
{
    const auto dir = fs::temp_directory_path() / "nsn2n_test_diag";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto v = noisy_phantom(0.05, 6, 3);
    weight_diagnostics(v, LpfParams{}, {0.01, 0.02}, dir);
    std::size_t pngs = 0;
    for (const auto& e : fs::directory_iterator(dir)) pngs += e.path().extension() == ".png";
    EXPECT_EQ(pngs, 4u);
    EXPECT_THROW(weight_diagnostics(v, LpfParams{}, {}), std::invalid_argument);
}

TEST(Bitmap, LsbFirstRowMajor)
{
    WeightMatrix w(5, 2, 0);
    // Row 0: 1 0 1 1 0, row 1: 0 0 0 0 1 -> bits 0,2,3,9
    w.values = {1, 0, 1, 1, 0, 0, 0, 0, 0, 1};
    const auto bytes = pack_bits(w);
    ASSERT_EQ(bytes.size(), 2u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0b00001101);
    EXPECT_EQ(static_cast<unsigned char>(bytes[1]), 0b00000010);
    EXPECT_EQ(unpack_bits(bytes, 5, 2).values, w.values);
    EXPECT_THROW(unpack_bits(bytes + "x", 5, 2), FormatError);
}

TEST(TrainingSet, DirectoryRoundTrip)
{
    const auto dir = fs::temp_directory_path() / "nsn2n_test_pairs";
    fs::remove_all(dir);
    const auto v = noisy_phantom(0.05, 7, 6);
    const auto set = build_training_set(v, 0.03, LpfParams::for_noise_level(0.07));
    save_training_set(set, dir);
    const auto back = load_training_set(dir, v);
    EXPECT_EQ(back.th, set.th);
    EXPECT_EQ(back.params, set.params);
    ASSERT_EQ(back.pairs.size(), set.pairs.size());
    for (std::size_t i = 0; i < set.pairs.size(); ++i) {
        EXPECT_EQ(back.pairs[i].weights.values, set.pairs[i].weights.values);
        EXPECT_EQ(back.pairs[i].slice_a, set.pairs[i].slice_a);
    }

    auto inf_set = unweighted_training_set(v);
    save_training_set(inf_set, dir);
    EXPECT_EQ(io::read_json(dir / "manifest.json")["th"], "inf");
    EXPECT_TRUE(std::isinf(load_training_set(dir, v).th));

    PhantomSpec small;
    small.width = 32;
    small.height = 32;
    small.depth = 6;
    EXPECT_THROW(load_training_set(dir, make_phantom(small)), std::invalid_argument);
}
