#pragma once
// Command-line front end. run() is the whole program; tools/nsn2n.cpp only
// forwards argv to it, which keeps every subcommand callable from tests.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nsn2n/config.hpp"
#include "nsn2n/metrics.hpp"
#include "nsn2n/pairing.hpp"
#include "nsn2n/synth.hpp"
#include "nsn2n/trainer.hpp"
#include "nsn2n/volume.hpp"

namespace nsn2n::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Flags given on the command line; unset ones leave the config alone.
struct Overrides {
    std::optional<int> width, height, depth, shapes;
    std::optional<double> drift;
    std::vector<double> levels;
    std::optional<std::uint64_t> phantom_seed;

    std::optional<std::string> noise_model;
    std::optional<double> noise_level;
    std::optional<int> half_width;
    std::optional<std::uint64_t> noise_seed;

    std::optional<double> th;
    std::optional<double> nlm_h, nlm_sigma, noise_estimate;
    std::optional<int> patch_radius, search_radius, median_size;

    std::optional<int> epochs, batch_size, checkpoint_every;
    std::optional<double> lambda_rc, lambda_ic, lr;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::string> ablate;
    bool deterministic = false;

    std::optional<int> levels_model, base_channels, kernel_size;
    std::optional<double> leaky_slope;

    std::optional<std::string> workdir;
    std::optional<int> threads;
};

/// Applies an --ablate list such as "no-rc,no-ic". Presets: full, w-only
/// (no-rc,no-ic) and no-w-all (no-w,no-rc,no-ic).
inline void apply_ablation(TrainConfig& c, const std::string& spec)
{
    std::stringstream ss(spec);
    for (std::string tok; std::getline(ss, tok, ',');) {
        if (tok == "full") c.use_weights = c.use_rc = c.use_ic = true;
        else if (tok == "no-w") c.use_weights = false;
        else if (tok == "no-rc") c.use_rc = false;
        else if (tok == "no-ic") c.use_ic = false;
        else if (tok == "w-only") c.use_rc = c.use_ic = false;
        else if (tok == "no-w-all") c.use_weights = c.use_rc = c.use_ic = false;
        else throw std::invalid_argument("unknown --ablate entry '" + tok + "'");
    }
}

inline void apply_overrides(RunConfig& c, const Overrides& o)
{
    auto set = [](auto& dst, const auto& src) {
        if (src) dst = *src;
    };
    set(c.phantom.width, o.width);
    set(c.phantom.height, o.height);
    set(c.phantom.depth, o.depth);
    set(c.phantom.shapes, o.shapes);
    set(c.phantom.drift, o.drift);
    if (!o.levels.empty()) c.phantom.levels = o.levels;
    set(c.phantom.seed, o.phantom_seed);

    if (o.noise_model) c.noise.model = parse_noise_model(*o.noise_model);
    set(c.noise.level, o.noise_level);
    set(c.noise.half_width, o.half_width);
    set(c.noise.seed, o.noise_seed);

    set(c.train.th, o.th);
    if (o.nlm_h || o.nlm_sigma) c.lpf_from_noise = false;
    set(c.lpf.h, o.nlm_h);
    set(c.lpf.sigma, o.nlm_sigma);
    if (o.noise_estimate) {
        const auto d = LpfParams::for_noise_level(*o.noise_estimate);
        c.lpf.h = d.h;
        c.lpf.sigma = d.sigma;
        c.lpf_from_noise = false;
    }
    set(c.lpf.patch_radius, o.patch_radius);
    set(c.lpf.search_radius, o.search_radius);
    set(c.lpf.median_size, o.median_size);

    set(c.train.epochs, o.epochs);
    set(c.train.batch_size, o.batch_size);
    set(c.train.checkpoint_every, o.checkpoint_every);
    set(c.train.lambda_rc, o.lambda_rc);
    set(c.train.lambda_ic, o.lambda_ic);
    set(c.train.adam.base_lr, o.lr);
    set(c.train.seed, o.train_seed);
    if (o.ablate) apply_ablation(c.train, *o.ablate);
    if (o.deterministic) c.train.deterministic = true;

    set(c.model.levels, o.levels_model);
    set(c.model.base_channels, o.base_channels);
    set(c.model.kernel_size, o.kernel_size);
    set(c.model.leaky_slope, o.leaky_slope);

    set(c.workdir, o.workdir);
    set(c.threads, o.threads);
}

namespace detail {

inline void add_phantom_flags(CLI::App* s, Overrides& o)
{
    s->add_option("--width", o.width, "slice width in pixels");
    s->add_option("--height", o.height, "slice height in pixels");
    s->add_option("--depth", o.depth, "number of slices");
    s->add_option("--shapes", o.shapes, "number of nested ellipses");
    s->add_option("--drift", o.drift, "per-slice drift as a fraction of the extent");
    s->add_option("--levels", o.levels, "ellipse intensity levels in (0, 1]")->delimiter(',');
    s->add_option("--phantom-seed", o.phantom_seed, "phantom seed");
}

inline void add_noise_flags(CLI::App* s, Overrides& o)
{
    s->add_option("--model", o.noise_model, "gaussian, rician or correlated");
    s->add_option("--level", o.noise_level, "noise std as a fraction of the volume maximum");
    s->add_option("--half-width", o.half_width, "box kernel half-width (correlated model)");
    s->add_option("--noise-seed", o.noise_seed, "noise seed");
}

inline void add_lpf_flags(CLI::App* s, Overrides& o)
{
    s->add_option("--th", o.th, "weight-matrix threshold");
    s->add_option("--nlm-h", o.nlm_h, "NLM strength h");
    s->add_option("--nlm-sigma", o.nlm_sigma, "NLM noise compensation sigma");
    s->add_option("--noise-estimate", o.noise_estimate, "derive NLM h and sigma from this noise level");
    s->add_option("--patch-radius", o.patch_radius, "NLM patch radius");
    s->add_option("--search-radius", o.search_radius, "NLM search radius");
    s->add_option("--median-size", o.median_size, "median kernel size");
}

inline void add_train_flags(CLI::App* s, Overrides& o)
{
    s->add_option("--epochs", o.epochs, "training epochs");
    s->add_option("--batch-size", o.batch_size, "pairs per optimizer step");
    s->add_option("--checkpoint-every", o.checkpoint_every, "checkpoint cadence in epochs (0 = off)");
    s->add_option("--lambda-rc", o.lambda_rc, "weight of the regional consistency term");
    s->add_option("--lambda-ic", o.lambda_ic, "weight of the inter-slice continuity term");
    s->add_option("--lr", o.lr, "initial learning rate");
    s->add_option("--seed", o.train_seed, "training seed");
    s->add_option("--ablate", o.ablate, "comma list of no-w, no-rc, no-ic, w-only, no-w-all, full");
    s->add_flag("--deterministic", o.deterministic, "reproducible output files (no timings)");
    s->add_option("--unet-levels", o.levels_model, "U-Net depth");
    s->add_option("--base-channels", o.base_channels, "channels at the first level");
    s->add_option("--kernel-size", o.kernel_size, "convolution kernel size");
    s->add_option("--leaky-slope", o.leaky_slope, "leaky rectifier slope");
}

inline std::string fixed(double v, int digits = 2)
{
    if (!std::isfinite(v)) return format_number(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int epoch)
{
    char name[40];
    std::snprintf(name, sizeof name, "checkpoint_e%03d.json", epoch);
    return dir / name;
}

inline std::string run_label(const std::string& arg, std::string& path)
{
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
        path = arg.substr(eq + 1);
        return arg.substr(0, eq);
    }
    path = arg;
    const std::filesystem::path p(arg);
    const auto parent = p.parent_path().filename().string();
    return parent.empty() ? p.stem().string() : parent;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each reads and writes files only.

inline void cmd_synth(const RunConfig& c, const std::filesystem::path& out, std::ostream& log)
{
    const auto v = make_phantom(c.phantom);
    save_volume(v, out);
    log << "synth: wrote " << out.string() << " (" << v.width() << "x" << v.height() << "x" << v.depth()
        << "), min consecutive overlap " << detail::fixed(min_consecutive_overlap(v), 4) << "\n";
}

inline void cmd_corrupt(const RunConfig& c, const std::filesystem::path& in, const std::filesystem::path& out,
                        std::ostream& log)
{
    const auto clean = load_volume(in);
    const auto noisy = add_noise(clean, c.noise);
    save_volume(noisy, out);
    log << "corrupt: " << to_string(c.noise.model) << " noise at level " << c.noise.level << " -> " << out.string()
        << "\n";
}

inline void cmd_pairs(const RunConfig& c, const std::filesystem::path& in, const std::filesystem::path& out,
                      const std::vector<double>& sweep, std::ostream& log)
{
    const auto volume = load_volume(in);
    const auto params = c.effective_lpf();
    if (!sweep.empty()) {
        std::filesystem::create_directories(out);
        const auto d = weight_diagnostics(volume, params, sweep, out);
        nlohmann::json rows = nlohmann::json::array();
        std::ostringstream csv;
        csv << "th,matched_fraction,min_pair_fraction\n";
        log << "th          matched   min_pair\n";
        for (const auto& r : d.rows) {
            rows.push_back({{"th", threshold_to_json(r.th)},
                            {"matched_fraction", r.matched_fraction},
                            {"min_pair_fraction", r.min_pair_fraction}});
            csv << format_number(r.th) << ',' << format_number(r.matched_fraction, 8) << ','
                << format_number(r.min_pair_fraction, 8) << '\n';
            char line[96];
            std::snprintf(line, sizeof line, "%-10s  %.4f    %.4f\n", format_number(r.th).c_str(), r.matched_fraction,
                          r.min_pair_fraction);
            log << line;
        }
        nlohmann::json j = {{"lpf", params},
                            {"rows", rows},
                            {"histogram", {{"bin_width", d.histogram.bin_width}, {"counts", d.histogram.counts}}}};
        io::write_text(out / "diagnostics.json", j.dump(2) + "\n");
        io::write_text(out / "diagnostics.csv", csv.str());
        return;
    }
    const auto set = build_training_set(volume, c.train.th, params);
    save_training_set(set, out);
    double mean = 0.0;
    for (const auto& p : set.pairs) mean += p.weights.matched_fraction();
    mean /= static_cast<double>(set.pairs.size());
    log << "pairs: " << set.pairs.size() << " pairs at th " << format_number(c.train.th)
        << ", mean matched fraction " << detail::fixed(mean, 4) << " -> " << out.string() << "\n";
}

struct TrainPaths {
    std::filesystem::path in;
    std::filesystem::path out;
    std::filesystem::path pairs; // optional
    std::filesystem::path truth; // optional
};

inline void cmd_train(const RunConfig& c, const TrainPaths& p, std::ostream& log, bool quiet = false)
{
    const auto volume = load_volume(p.in);
    std::optional<TrainingSet> set;
    if (!p.pairs.empty()) set = load_training_set(p.pairs, volume);
    std::optional<Volume> truth;
    if (!p.truth.empty()) truth = load_volume(p.truth);
    std::filesystem::create_directories(p.out);

    TrainOptions opts;
    if (set) opts.training_set = &*set;
    if (truth) opts.ground_truth = &*truth;
    const int every = c.train.checkpoint_every;
    opts.on_epoch = [&](const EpochRecord& r, const DenoiserModel<float>& m) {
        if (!quiet) {
            log << "epoch " << r.epoch << "/" << c.train.epochs << "  lr " << format_number(r.lr) << "  loss "
                << format_number(r.loss_total) << " (recon " << format_number(r.loss_recon) << ", rc "
                << format_number(r.loss_rc) << ", ic " << format_number(r.loss_ic) << ")";
            if (r.psnr) log << "  psnr " << detail::fixed(*r.psnr) << " dB";
            if (!c.train.deterministic) log << "  " << detail::fixed(r.seconds) << " s";
            log << "\n";
        }
        if (every > 0 && r.epoch % every == 0) save_checkpoint(m, detail::checkpoint_name(p.out, r.epoch), {r.epoch, c.train.adam});
    };
    const auto result = train(volume, c.train, c.model, set ? set->params : c.effective_lpf(), opts);
    save_checkpoint(result.model, p.out / "model.json", {c.train.epochs, c.train.adam});
    const bool timings = !c.train.deterministic;
    io::write_text(p.out / "history.csv", history_to_csv(result.history, timings));
    io::write_text(p.out / "history.json", history_to_json(result.history, timings).dump(2) + "\n");
    nlohmann::json used = c;
    used.erase("workdir");
    used.erase("threads");
    io::write_text(p.out / "config.json", used.dump(2) + "\n");
    log << "train: " << result.history.records.size() << " epochs, final loss "
        << format_number(result.history.records.back().loss_total) << " -> " << (p.out / "model.json").string()
        << "\n";
}

inline void cmd_denoise(const std::filesystem::path& model_path, const std::filesystem::path& in,
                        const std::filesystem::path& out, std::ostream& log)
{
    const auto model = load_checkpoint(model_path);
    const auto volume = load_volume(in);
    save_volume(denoise_volume(model, volume), out);
    log << "denoise: " << volume.depth() << " slices -> " << out.string() << "\n";
}

inline MetricsReport cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& truth,
                              const std::filesystem::path& out_json, const std::filesystem::path& out_csv,
                              double data_range, std::ostream& log)
{
    const auto r = evaluate_volume(load_volume(pred), load_volume(truth), data_range);
    if (!out_json.empty()) io::write_text(out_json, report_to_json(r).dump(2) + "\n");
    if (!out_csv.empty()) io::write_text(out_csv, report_to_csv(r));
    log << table_line(r) << "\n";
    return r;
}

/// Merges training histories into one per-epoch table.
inline std::size_t cmd_report(const std::vector<std::string>& histories, const std::filesystem::path& out,
                              std::ostream& log)
{
    if (histories.empty()) throw std::invalid_argument("report needs at least one --history");
    std::vector<std::pair<std::string, TrainHistory>> runs;
    for (const auto& arg : histories) {
        std::string path;
        const auto label = detail::run_label(arg, path);
        if (!std::filesystem::exists(path)) throw std::invalid_argument("history file not found: " + path);
        runs.emplace_back(label, history_from_csv(io::read_file(path)));
    }
    std::map<int, std::vector<const EpochRecord*>> rows;
    for (std::size_t k = 0; k < runs.size(); ++k)
        for (const auto& r : runs[k].second.records) {
            auto& row = rows[r.epoch];
            row.resize(runs.size(), nullptr);
            row[k] = &r;
        }
    std::ostringstream os;
    os << "epoch";
    for (const auto& [label, _] : runs)
        for (const char* col : {"psnr", "loss_total", "loss_recon", "loss_rc", "loss_ic"}) os << ',' << label << '.' << col;
    os << '\n';
    for (auto& [epoch, row] : rows) {
        row.resize(runs.size(), nullptr);
        os << epoch;
        for (const auto* r : row) {
            if (!r) {
                os << ",,,,,";
                continue;
            }
            os << ',' << (r->psnr ? format_number(*r->psnr, 10) : std::string()) << ','
               << format_number(r->loss_total, 10) << ',' << format_number(r->loss_recon, 10) << ','
               << format_number(r->loss_rc, 10) << ',' << format_number(r->loss_ic, 10);
        }
        os << '\n';
    }
    if (out.empty()) log << os.str();
    else io::write_text(out, os.str());
    log << "report: " << rows.size() << " rows from " << runs.size() << " run(s)\n";
    return rows.size();
}

/// All stages in sequence, communicating through files under workdir.
inline void cmd_pipeline(const RunConfig& c, std::ostream& log, bool quiet = false)
{
    namespace fs = std::filesystem;
    const fs::path wd = c.workdir;
    fs::create_directories(wd);
    {
        nlohmann::json j = c;
        j.erase("threads");
        io::write_text(wd / "config.json", j.dump(2) + "\n");
    }
    cmd_synth(c, wd / "clean.json", log);
    cmd_corrupt(c, wd / "clean.json", wd / "noisy.json", log);
    cmd_pairs(c, wd / "noisy.json", wd / "pairs", {}, log);
    cmd_train(c, {wd / "noisy.json", wd / "train", wd / "pairs", wd / "clean.json"}, log, quiet);
    cmd_denoise(wd / "train" / "model.json", wd / "noisy.json", wd / "denoised.json", log);
    log << "noisy:    ";
    const auto base = cmd_eval(wd / "noisy.json", wd / "clean.json", wd / "baseline_metrics.json", {}, 1.0, log);
    log << "denoised: ";
    const auto den = cmd_eval(wd / "denoised.json", wd / "clean.json", wd / "metrics.json", wd / "metrics.csv", 1.0, log);
    cmd_report({"run=" + (wd / "train" / "history.csv").string()}, wd / "report.csv", log);
    const nlohmann::json summary = {
        {"noisy", {{"psnr_db", number_to_json(base.psnr_summary.mean)}, {"ssim", number_to_json(base.ssim_summary.mean)}}},
        {"denoised", {{"psnr_db", number_to_json(den.psnr_summary.mean)}, {"ssim", number_to_json(den.ssim_summary.mean)}}},
        {"gain", {{"psnr_db", number_to_json(den.psnr_summary.mean - base.psnr_summary.mean)},
                  {"ssim", number_to_json(den.ssim_summary.mean - base.ssim_summary.mean)}}}};
    io::write_text(wd / "summary.json", summary.dump(2) + "\n");
    log << "pipeline: PSNR gain " << detail::fixed(den.psnr_summary.mean - base.psnr_summary.mean) << " dB, SSIM gain "
        << detail::fixed(den.ssim_summary.mean - base.ssim_summary.mean, 4) << "\n";
}

// ---------------------------------------------------------------------------

/// Runs the program on argv-style arguments (without the program name) and
/// returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Neighboring-slice self-supervised volume denoising", "nsn2n"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides ov;
    std::string config_path;
    bool print_config = false;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--threads", ov.threads, "worker thread cap");
    app.add_flag("--print-config", print_config, "print the effective configuration and exit");
    app.add_flag("--quiet", quiet, "suppress per-epoch progress lines");

    std::string in, out_path, pairs_dir, truth, model_path, pred, sweep, out_csv;
    double data_range = 1.0;
    std::vector<std::string> histories;

    auto* synth = app.add_subcommand("synth", "generate a clean phantom volume");
    detail::add_phantom_flags(synth, ov);
    synth->add_option("--out", out_path, "output volume header")->default_val("phantom.json");

    auto* corrupt = app.add_subcommand("corrupt", "add noise to a volume");
    corrupt->add_option("--in", in, "clean volume header")->required()->check(CLI::ExistingFile);
    corrupt->add_option("--out", out_path, "output volume header")->required();
    detail::add_noise_flags(corrupt, ov);

    auto* pairs = app.add_subcommand("pairs", "build the weighted neighboring-slice training set");
    pairs->add_option("--in", in, "noisy volume header")->required()->check(CLI::ExistingFile);
    pairs->add_option("--out", out_path, "output directory")->required();
    pairs->add_option("--sweep", sweep, "comma-separated thresholds for diagnostics instead of pairing");
    detail::add_lpf_flags(pairs, ov);

    auto* trn = app.add_subcommand("train", "train the denoiser on one noisy volume");
    trn->add_option("--in", in, "noisy volume header")->required()->check(CLI::ExistingFile);
    trn->add_option("--out", out_path, "output directory for checkpoints and history")->required();
    trn->add_option("--pairs", pairs_dir, "precomputed training set directory")->check(CLI::ExistingDirectory);
    trn->add_option("--truth", truth, "clean volume for per-epoch PSNR")->check(CLI::ExistingFile);
    detail::add_lpf_flags(trn, ov);
    detail::add_train_flags(trn, ov);

    auto* den = app.add_subcommand("denoise", "run a trained model over a volume");
    den->add_option("--model", model_path, "checkpoint header")->required()->check(CLI::ExistingFile);
    den->add_option("--in", in, "volume header")->required()->check(CLI::ExistingFile);
    den->add_option("--out", out_path, "output volume header")->required();

    auto* ev = app.add_subcommand("eval", "PSNR and SSIM against a reference");
    ev->add_option("--pred", pred, "predicted volume header")->required()->check(CLI::ExistingFile);
    ev->add_option("--truth", truth, "reference volume header")->required()->check(CLI::ExistingFile);
    ev->add_option("--out", out_path, "JSON report path");
    ev->add_option("--csv", out_csv, "per-slice CSV path");
    ev->add_option("--data-range", data_range, "intensity span")->check(CLI::PositiveNumber);

    auto* rep = app.add_subcommand("report", "merge training histories into one per-epoch table");
    rep->add_option("--history", histories, "history CSV, optionally label=path")->required();
    rep->add_option("--out", out_path, "output CSV (stdout when omitted)");

    auto* pipe = app.add_subcommand("pipeline", "synth, corrupt, pairs, train, denoise, eval and report");
    pipe->add_option("--workdir", ov.workdir, "output directory");
    detail::add_phantom_flags(pipe, ov);
    detail::add_noise_flags(pipe, ov);
    detail::add_lpf_flags(pipe, ov);
    detail::add_train_flags(pipe, ov);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        apply_overrides(cfg, ov);
        cfg.validate();
        if (print_config) {
            out << nlohmann::json(cfg).dump(2) << "\n";
            return kExitOk;
        }
        set_max_threads(cfg.threads);

        if (*synth) {
            cmd_synth(cfg, out_path, out);
        } else if (*corrupt) {
            cmd_corrupt(cfg, in, out_path, out);
        } else if (*pairs) {
            std::vector<double> ths;
            if (!sweep.empty()) {
                std::stringstream ss(sweep);
                for (std::string tok; std::getline(ss, tok, ',');) {
                    if (tok == "inf") {
                        ths.push_back(std::numeric_limits<double>::infinity());
                        continue;
                    }
                    try {
                        ths.push_back(std::stod(tok));
                    } catch (const std::logic_error&) {
                        throw std::invalid_argument("bad --sweep value '" + tok + "'");
                    }
                }
            }
            cmd_pairs(cfg, in, out_path, ths, out);
        } else if (*trn) {
            cmd_train(cfg, {in, out_path, pairs_dir, truth}, out, quiet);
        } else if (*den) {
            cmd_denoise(model_path, in, out_path, out);
        } else if (*ev) {
            cmd_eval(pred, truth, out_path, out_csv, data_range, out);
        } else if (*rep) {
            cmd_report(histories, out_path, out);
        } else if (*pipe) {
            cmd_pipeline(cfg, out, quiet);
        }
        return kExitOk;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace nsn2n::cli
