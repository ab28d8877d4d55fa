#include <gtest/gtest.h>

#include <limits>

#include "nsn2n/synth.hpp"
#include "nsn2n/trainer.hpp"
#include "support/oracles.hpp"

using namespace nsn2n;

namespace {

const ModelConfig kSmall{2, 4, 3, 0.1};

Volume small_noisy(int depth, std::uint64_t seed, Volume* clean_out = nullptr)
{
    PhantomSpec ps;
    ps.width = 32;
    ps.height = 32;
    ps.depth = depth;
    ps.seed = seed;
    const auto clean = make_phantom(ps);
    if (clean_out) *clean_out = clean;
    NoiseSpec ns;
    ns.model = NoiseModel::gaussian;
    ns.level = 0.05;
    ns.seed = seed;
    return add_noise(clean, ns);
}

TrainConfig quick(int epochs)
{
    TrainConfig c;
    c.epochs = epochs;
    c.th = 0.03;
    c.seed = 5;
    return c;
}

} // namespace

TEST(Train, ZeroEpochsRejected)
{
    EXPECT_THROW(train(small_noisy(2, 1), quick(0), kSmall, LpfParams{}), std::invalid_argument);
}

TEST(Train, OneEpochOnDepthTwo)
{
    int calls = 0;
    TrainOptions opts;
    opts.on_epoch = [&](const EpochRecord& r, const DenoiserModel<float>&) {
        ++calls;
        EXPECT_EQ(r.epoch, 1);
    };
    Volume clean;
    const auto noisy = small_noisy(2, 2, &clean);
    opts.ground_truth = &clean;
    const auto result = train(noisy, quick(1), kSmall, LpfParams{}, opts);
    ASSERT_EQ(result.history.records.size(), 1u);
    EXPECT_EQ(calls, 1);
    const auto& r = result.history.records[0];
    EXPECT_EQ(r.lr, 1e-3);
    EXPECT_TRUE(r.psnr.has_value());
    EXPECT_GT(r.loss_recon, 0.0);
    EXPECT_NEAR(r.loss_total, r.loss_recon + 0.5 * r.loss_rc + r.loss_ic, 1e-12);
}

TEST(Train, DeterministicRuns)
{
    const auto noisy = small_noisy(5, 3);
    const auto a = train(noisy, quick(3), kSmall, LpfParams{});
    set_max_threads(3);
    const auto b = train(noisy, quick(3), kSmall, LpfParams{});
    set_max_threads(1);
    EXPECT_EQ(history_to_csv(a.history, false), history_to_csv(b.history, false));
    for (std::size_t p = 0; p < a.model.params.size(); ++p) EXPECT_EQ(a.model.params[p].values, b.model.params[p].values);
    auto other = quick(3);
    other.seed = 6;
    const auto c = train(noisy, other, kSmall, LpfParams{});
    EXPECT_NE(a.model.params[0].values, c.model.params[0].values);
}

TEST(Train, LossDecreasesAndPsnrImproves)
{
    Volume clean;
    const auto noisy = small_noisy(8, 4, &clean);
    TrainOptions opts;
    opts.ground_truth = &clean;
    auto cfg = quick(25);
    cfg.adam.base_lr = 3e-3;
    const auto r = train(noisy, cfg, kSmall, LpfParams::for_noise_level(0.05), opts);
    const auto& h = r.history.records;
    EXPECT_LT(h.back().loss_total, h.front().loss_total);
    EXPECT_GT(*h.back().psnr, *h.front().psnr);
}

TEST(Train, AblationSwitches)
{
    const auto noisy = small_noisy(3, 5);
    auto cfg = quick(1);
    cfg.use_rc = false;
    cfg.use_ic = false;
    const auto r = train(noisy, cfg, kSmall, LpfParams{});
    EXPECT_DOUBLE_EQ(r.history.records[0].loss_total, r.history.records[0].loss_recon);
    cfg.use_weights = false;
    EXPECT_NO_THROW(train(noisy, cfg, kSmall, LpfParams{}));
}

TEST(Train, NonFiniteInputDiverges)
{
    auto noisy = small_noisy(3, 6);
    noisy[1].data[10] = std::numeric_limits<float>::quiet_NaN();
    auto cfg = quick(1);
    cfg.use_weights = false;
    try {
        train(noisy, cfg, kSmall, LpfParams{});
        FAIL() << "expected divergence";
    } catch (const DivergedError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("diverged"), std::string::npos);
        EXPECT_NE(msg.find("epoch 1"), std::string::npos);
        EXPECT_NE(msg.find("pair"), std::string::npos);
    }
}

TEST(Train, ShapeErrors)
{
    PhantomSpec ps;
    ps.width = 31;
    ps.height = 32;
    ps.depth = 2;
    EXPECT_THROW(train(make_phantom(ps), quick(1), kSmall, LpfParams{}), std::invalid_argument);
    Volume clean;
    const auto noisy = small_noisy(3, 7, &clean);
    TrainOptions opts;
    const auto wrong = small_noisy(4, 7);
    opts.ground_truth = &wrong;
    EXPECT_THROW(train(noisy, quick(1), kSmall, LpfParams{}, opts), std::invalid_argument);
}

TEST(Train, IdentityOnCleanData)
{
    // Noise-free pairs differ only on moving boundaries, which the weights
    // mask out; the network then learns to pass its input through.
    PhantomSpec ps;
    ps.width = 32;
    ps.height = 32;
    ps.depth = 4;
    ps.seed = 8;
    const auto clean = make_phantom(ps);
    auto cfg = quick(120);
    cfg.th = 0.01;
    cfg.adam.base_lr = 3e-3;
    cfg.adam.halve_every = 1000;
    const auto r = train(clean, cfg, kSmall, LpfParams{});
    const auto out = denoise_volume(r.model, clean);
    EXPECT_GT(evaluate_volume(out, clean).psnr_summary.mean, 28.0);
}

TEST(Denoise, ClampsAndPreservesShape)
{
    auto m = init_model<float>(kSmall, 0);
    const auto noisy = small_noisy(3, 9);
    m.params.back().values[0] = 5.0f; // head bias
    auto hi = denoise_volume(m, noisy);
    EXPECT_EQ(hi.depth(), 3);
    for (const auto& s : hi.slices)
        for (float v : s.data) ASSERT_EQ(v, 1.0f);
    m.params.back().values[0] = -5.0f;
    for (const auto& s : denoise_volume(m, noisy).slices)
        for (float v : s.data) ASSERT_EQ(v, 0.0f);
}

TEST(History, CsvRoundTrip)
{
    TrainHistory h;
    h.records.push_back({1, 1e-3, 0.5, 0.3, 0.1, 0.15, 24.5, 1.25});
    h.records.push_back({2, 1e-3, 0.25, 0.2, 0.05, 0.025, std::nullopt, 1.5});
    const auto csv = history_to_csv(h);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,loss_total,loss_recon,loss_rc,loss_ic,psnr,seconds");
    const auto back = history_from_csv(csv);
    ASSERT_EQ(back.records.size(), 2u);
    EXPECT_EQ(back.records[0].psnr, 24.5);
    EXPECT_FALSE(back.records[1].psnr.has_value());
    EXPECT_EQ(back.records[1].loss_ic, 0.025);
    EXPECT_EQ(back.records[1].seconds, 1.5);
    EXPECT_EQ(history_from_csv(history_to_csv(h, false)).records[0].seconds, 0.0);
    EXPECT_THROW(history_from_csv("a,b\n"), FormatError);
    EXPECT_THROW(history_from_csv(std::string(kHistoryHeader) + "\n1,2,3\n"), FormatError);
    const auto j = history_to_json(h);
    EXPECT_EQ(j["records"].size(), 2u);
    EXPECT_FALSE(j["records"][1].contains("psnr"));
}
