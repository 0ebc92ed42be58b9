#include "fusion/experiment.hpp"

#include <set>

#include "fusion/errors.hpp"
#include "fusion/io.hpp"

namespace fusion {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.contains(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
}

/// Keys accepted for a section are the keys its defaults serialize to.
template <typename T>
T get_section(const json& j, const std::string& where)
{
    const json defaults = T{};
    std::set<std::string> known;
    for (const auto& [key, value] : defaults.items())
        known.insert(key);
    reject_unknown(j, known, where);
    return j.get<T>();
}

} // namespace

void to_json(json& j, const ModelConfig& c)
{
    j = {{"strategy", c.strategy.name()},
         {"groups", c.strategy.groups},
         {"input_shape", {c.height, c.width, c.in_channels}},
         {"filters", c.filters},
         {"num_classes", c.num_classes}};
}

void from_json(const json& j, ModelConfig& c)
{
    reject_unknown(j, {"strategy", "groups", "input_shape", "filters", "num_classes"}, "model");
    c = ModelConfig::for_strategy(FusionStrategy::parse(j.value("strategy", std::string("early"))).kind);
    if (j.contains("groups") && j.at("groups").get<std::array<Index, 3>>() != c.strategy.groups)
        throw ConfigError("model.groups disagrees with strategy " + c.strategy.name());
    if (j.contains("input_shape")) {
        const auto s = j.at("input_shape").get<std::array<Index, 3>>();
        c.height = s[0];
        c.width = s[1];
        c.in_channels = s[2];
    }
    c.filters = j.value("filters", c.filters);
    c.num_classes = j.value("num_classes", c.num_classes);
}

void ExperimentConfig::validate() const
{
    model.validate();
    if (model.height != kFrameSize || model.width != kFrameSize)
        throw ConfigError("sensor frames are 8x8; model.input_shape must match");
    train.validate();
    generator.validate(folds);
    power.validate();
    if (folds < 2)
        throw ConfigError("folds must be >= 2");
    if (calibration_samples < 1 || agreement_samples < 1)
        throw ConfigError("calibration_samples and agreement_samples must be positive");
}

void to_json(json& j, const ExperimentConfig& c)
{
    j = {{"paths", {{"dataset", c.paths.dataset}, {"checkpoints", c.paths.checkpoints}, {"reports", c.paths.reports}}},
         {"model", c.model},
         {"train", c.train},
         {"generator", c.generator},
         {"power", c.power},
         {"folds", c.folds},
         {"calibration_samples", c.calibration_samples},
         {"agreement_samples", c.agreement_samples},
         {"seed", c.seed}};
}

void from_json(const json& j, ExperimentConfig& c)
{
    reject_unknown(j, {"paths", "model", "train", "generator", "power", "folds", "calibration_samples",
                       "agreement_samples", "seed"},
                   "experiment config");
    c = ExperimentConfig{};
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        reject_unknown(p, {"dataset", "checkpoints", "reports"}, "paths");
        c.paths.dataset = p.value("dataset", c.paths.dataset);
        c.paths.checkpoints = p.value("checkpoints", c.paths.checkpoints);
        c.paths.reports = p.value("reports", c.paths.reports);
    }
    if (j.contains("model"))
        c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train"))
        c.train = get_section<TrainConfig>(j.at("train"), "train");
    if (j.contains("generator"))
        c.generator = get_section<GeneratorConfig>(j.at("generator"), "generator");
    if (j.contains("power"))
        c.power = get_section<PowerConfig>(j.at("power"), "power");
    c.folds = j.value("folds", c.folds);
    c.calibration_samples = j.value("calibration_samples", c.calibration_samples);
    c.agreement_samples = j.value("agreement_samples", c.agreement_samples);
    c.seed = j.value("seed", c.seed);
}

ExperimentConfig parse_experiment_config(const std::string& text)
{
    ExperimentConfig c;
    try {
        c = json::parse(text).get<ExperimentConfig>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    return parse_experiment_config(io::read_text(path));
}

void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path)
{
    io::write_text_atomic(path, json(config).dump(2) + "\n");
}

} // namespace fusion
