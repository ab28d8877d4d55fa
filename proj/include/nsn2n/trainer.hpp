#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn2n/common.hpp"
#include "nsn2n/losses.hpp"
#include "nsn2n/metrics.hpp"
#include "nsn2n/model.hpp"
#include "nsn2n/pairing.hpp"

namespace nsn2n {

struct EpochRecord {
    int epoch = 0; // 1-based
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_recon = 0.0;
    double loss_rc = 0.0;
    double loss_ic = 0.0;
    std::optional<double> psnr;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
};

inline constexpr const char* kHistoryHeader = "epoch,lr,loss_total,loss_recon,loss_rc,loss_ic,psnr,seconds";

/// CSV export. With timings == false the seconds column is written as 0 so
/// that reruns produce identical files.
inline std::string history_to_csv(const TrainHistory& h, bool timings = true)
{
    std::ostringstream os;
    os << kHistoryHeader << '\n';
    for (const auto& r : h.records) {
        os << r.epoch << ',' << format_number(r.lr, 10) << ',' << format_number(r.loss_total, 10) << ','
           << format_number(r.loss_recon, 10) << ',' << format_number(r.loss_rc, 10) << ','
           << format_number(r.loss_ic, 10) << ',' << (r.psnr ? format_number(*r.psnr, 10) : std::string()) << ','
           << (timings ? format_number(r.seconds, 6) : std::string("0")) << '\n';
    }
    return os.str();
}

inline nlohmann::json history_to_json(const TrainHistory& h, bool timings = true)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : h.records) {
        nlohmann::json j = {{"epoch", r.epoch},
                            {"lr", r.lr},
                            {"loss_total", number_to_json(r.loss_total)},
                            {"loss_recon", number_to_json(r.loss_recon)},
                            {"loss_rc", number_to_json(r.loss_rc)},
                            {"loss_ic", number_to_json(r.loss_ic)},
                            {"seconds", timings ? r.seconds : 0.0}};
        if (r.psnr) j["psnr"] = number_to_json(*r.psnr);
        arr.push_back(std::move(j));
    }
    return {{"records", arr}};
}

/// Parses a history CSV written by history_to_csv.
inline TrainHistory history_from_csv(const std::string& text)
{
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kHistoryHeader) throw FormatError("not a training history CSV");
    auto num = [](const std::string& s) {
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        return std::stod(s);
    };
    TrainHistory h;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() == 7) f.emplace_back(); // trailing empty field
        if (f.size() != 8) throw FormatError("malformed history row: " + line);
        try {
            EpochRecord r{std::stoi(f[0]), num(f[1]), num(f[2]), num(f[3]), num(f[4]), num(f[5]), std::nullopt,
                          f[7].empty() ? 0.0 : num(f[7])};
            if (!f[6].empty()) r.psnr = num(f[6]);
            h.records.push_back(r);
        } catch (const std::logic_error&) {
            throw FormatError("malformed history row: " + line);
        }
    }
    return h;
}

/// Runs every slice through the model independently and clamps to [0, 1].
inline Volume denoise_volume(const DenoiserModel<float>& model, const Volume& volume)
{
    check_input_shape(model, volume.height(), volume.width());
    std::vector<Slice> out(volume.slices.size());
    parallel_for(out.size(), [&](std::size_t z) {
        auto s = forward(model, Tensor<float>::from_slice(volume[z])).to_slice();
        for (float& v : s.data) v = std::clamp(v, 0.0f, 1.0f);
        out[z] = std::move(s);
    });
    return Volume(std::move(out), volume.value_range);
}

struct TrainOptions {
    /// Clean volume for per-epoch PSNR logging (synthetic runs only).
    const Volume* ground_truth = nullptr;
    /// Precomputed weighted pairs; built from the volume when absent.
    const TrainingSet* training_set = nullptr;
    /// Called after each completed epoch.
    std::function<void(const EpochRecord&, const DenoiserModel<float>&)> on_epoch;
};

struct TrainResult {
    DenoiserModel<float> model;
    TrainHistory history;
};

/// Self-supervised training on neighboring-slice pairs. Each optimizer step
/// takes batch_size pairs; every pair costs three forward passes (x_a, x_b
/// and their mean) when the continuity term is enabled.
inline TrainResult train(const Volume& volume, const TrainConfig& config, const ModelConfig& model_config,
                         const LpfParams& lpf_params, const TrainOptions& options = {})
{
    config.validate();
    model_config.validate();
    lpf_params.validate();
    volume.validate();
    check_input_shape(init_model<float>(model_config, 0), volume.height(), volume.width());
    if (options.ground_truth && !options.ground_truth->same_shape(volume))
        throw std::invalid_argument("ground truth volume does not match the training volume");

    TrainingSet built;
    const TrainingSet* set = options.training_set;
    if (!set) {
        built = config.use_weights ? build_training_set(volume, config.th, lpf_params) : unweighted_training_set(volume);
        set = &built;
    }
    if (set->pairs.empty()) throw std::invalid_argument("training set is empty");
    const auto all_ones = WeightMatrix::ones(volume.width(), volume.height());

    TrainResult result{init_model<float>(model_config, config.seed), {}};
    auto& model = result.model;
    auto opt = OptimizerState<float>::for_model(model, config.adam);
    Rng order_rng(config.seed, 0x0de7);
    std::vector<std::size_t> order(set->pairs.size());

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_schedule(epoch, config.adam.base_lr, config.adam.halve_every);
        std::iota(order.begin(), order.end(), std::size_t{0});
        order_rng.shuffle(order);
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = lr;

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            const double scale = 1.0 / static_cast<double>(stop - start);
            auto grads = model.zero_gradients();
            for (std::size_t k = start; k < stop; ++k) {
                const auto& pair = set->pairs[order[k]];
                const auto& w = config.use_weights ? pair.weights : all_ones;
                const auto ta = Tensor<float>::from_slice(pair.slice_a);
                const auto tb = Tensor<float>::from_slice(pair.slice_b);
                std::vector<Trace<float>> traces(config.use_ic ? 3 : 2);
                parallel_for(traces.size(), [&](std::size_t t) {
                    traces[t] = trace_forward(model, t == 0 ? ta : t == 1 ? tb : midpoint(ta, tb));
                });
                const auto& fa = traces[0].output();
                const auto& fb = traces[1].output();
                const auto pg = pair_objective(fa, fb, config.use_ic ? traces[2].output() : midpoint(fa, fb),
                                               pair.slice_a, pair.slice_b, w, config, scale);
                if (!std::isfinite(pg.total))
                    throw DivergedError("diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                        ", pair " + std::to_string(pair.index));
                backward_trace(model, traces[0], pg.d_fa, grads);
                backward_trace(model, traces[1], pg.d_fb, grads);
                if (config.use_ic) backward_trace(model, traces[2], pg.d_fmid, grads);
                rec.loss_total += pg.total;
                rec.loss_recon += pg.parts.recon;
                rec.loss_rc += pg.parts.rc;
                rec.loss_ic += pg.parts.ic;
            }
            try {
                adam_step(opt, model, grads, lr);
            } catch (const DivergedError&) {
                throw DivergedError("diverged: non-finite gradient at epoch " + std::to_string(epoch + 1) +
                                    ", pair " + std::to_string(set->pairs[order[start]].index));
            }
        }
        const double n = static_cast<double>(order.size());
        rec.loss_total /= n;
        rec.loss_recon /= n;
        rec.loss_rc /= n;
        rec.loss_ic /= n;
        if (options.ground_truth)
            rec.psnr = evaluate_volume(denoise_volume(model, volume), *options.ground_truth).psnr_summary.mean;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.records.push_back(rec);
        if (options.on_epoch) options.on_epoch(rec, model);
    }
    return result;
}

} // namespace nsn2n
