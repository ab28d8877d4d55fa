#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "nsn2n/filters.hpp"
#include "nsn2n/losses.hpp"
#include "nsn2n/model.hpp"
#include "nsn2n/synth.hpp"

namespace nsn2n {

/// Everything one experiment needs. Values come from the built-in defaults,
/// then a JSON file, then command-line flags, each layer overriding the
/// previous one field by field.
struct RunConfig {
    PhantomSpec phantom;
    NoiseSpec noise;
    LpfParams lpf;
    /// Derive the NLM strength and noise estimate from noise.level instead
    /// of using lpf.h / lpf.sigma as given.
    bool lpf_from_noise = true;
    TrainConfig train;
    ModelConfig model;
    std::string workdir = "nsn2n_run";
    int threads = 1;

    LpfParams effective_lpf() const
    {
        if (!lpf_from_noise) return lpf;
        auto p = lpf;
        const auto derived = LpfParams::for_noise_level(noise.level);
        p.h = derived.h > 0.0 ? derived.h : lpf.h;
        p.sigma = derived.sigma;
        return p;
    }

    void validate() const
    {
        phantom.validate();
        noise.validate();
        effective_lpf().validate();
        train.validate();
        model.validate();
        if (threads < 1) throw std::invalid_argument("threads must be >= 1");
        if (workdir.empty()) throw std::invalid_argument("workdir must not be empty");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c)
{
    nlohmann::json lpf = c.lpf;
    lpf["from_noise_level"] = c.lpf_from_noise;
    j = {{"phantom", c.phantom}, {"noise", c.noise},   {"lpf", lpf},          {"train", c.train},
         {"model", c.model},     {"workdir", c.workdir}, {"threads", c.threads}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c)
{
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    static const char* known[] = {"phantom", "noise", "lpf", "train", "model", "workdir", "threads"};
    for (const auto& [key, _] : j.items())
        if (std::find(std::begin(known), std::end(known), key) == std::end(known))
            throw std::invalid_argument("unknown config key '" + key + "'");
    if (j.contains("phantom")) from_json(j.at("phantom"), c.phantom);
    if (j.contains("noise")) from_json(j.at("noise"), c.noise);
    if (j.contains("lpf")) {
        const auto& l = j.at("lpf");
        from_json(l, c.lpf);
        // Explicit filter strengths switch off the derivation unless asked for.
        if (l.contains("h") || l.contains("sigma")) c.lpf_from_noise = false;
        c.lpf_from_noise = l.value("from_noise_level", c.lpf_from_noise);
    }
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (j.contains("model")) from_json(j.at("model"), c.model);
    c.workdir = j.value("workdir", c.workdir);
    c.threads = j.value("threads", c.threads);
}

/// Overlays the fields present in a JSON config file onto cfg.
inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file " + path.string());
    try {
        from_json(nlohmann::json::parse(is), cfg);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("invalid config file " + path.string() + ": " + e.what());
    }
}

} // namespace nsn2n
