#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fusion/checkpoint.hpp"
#include "fusion/experiment.hpp"
#include "fixtures.hpp"

using namespace fusion;

namespace {

std::filesystem::path temp_path(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("fusion_test_" + name);
}

bool same_model(const Model& a, const Model& b)
{
    for (std::size_t l = 0; l < 3; ++l) {
        const auto &x = a.blocks[l], &y = b.blocks[l];
        if (!(x.conv.kernel == y.conv.kernel && x.conv.bias == y.conv.bias && x.conv.groups == y.conv.groups))
            return false;
        if (x.bn.has_value() != y.bn.has_value())
            return false;
        if (x.bn && !(x.bn->gamma == y.bn->gamma && x.bn->beta == y.bn->beta &&
                      x.bn->moving_mean == y.bn->moving_mean && x.bn->moving_var == y.bn->moving_var))
            return false;
    }
    return a.config.strategy.kind == b.config.strategy.kind && a.dense_weights == b.dense_weights &&
           a.dense_bias == b.dense_bias && a.normalization == b.normalization;
}

} // namespace

TEST_CASE("checkpoint round-trip is exact")
{
    for (Strategy s : {Strategy::vanilla, Strategy::early, Strategy::mid, Strategy::late, Strategy::ir_only,
                       Strategy::tof_only}) {
        Model m = fixture::trained_looking_model(ModelConfig::for_strategy(s), 40);
        m.normalization.mean[0] = 23.456789012345678;
        m.normalization.std[0] = 0.1 + 0.2; // not representable in short decimal form
        const auto path = temp_path("ckpt.json");
        save_checkpoint(m, path);
        const Model back = load_checkpoint(path);
        CHECK(same_model(m, back));
        CHECK(model_to_json(back).dump() == model_to_json(m).dump());

        std::ifstream first(path);
        const std::string text1((std::istreambuf_iterator<char>(first)), {});
        const auto path2 = temp_path("ckpt2.json");
        save_checkpoint(back, path2);
        std::ifstream second(path2);
        const std::string text2((std::istreambuf_iterator<char>(second)), {});
        CHECK(text1 == text2);
        std::filesystem::remove(path);
        std::filesystem::remove(path2);
    }
}

TEST_CASE("checkpoint rejects malformed documents")
{
    const Model m = build_model(ModelConfig::for_strategy(Strategy::early), 1);
    auto j = model_to_json(m);
    CHECK(j.at("format") == kCheckpointFormat);

    auto bad = j;
    bad["format"] = "something-else/2";
    CHECK_THROWS_AS(model_from_json(bad), FormatError);
    bad = j;
    bad.erase("blocks");
    CHECK_THROWS_AS(model_from_json(bad), FormatError);
    bad = j;
    bad["config"]["groups"] = {1, 1, 1};
    CHECK_THROWS_AS(model_from_json(bad), FormatError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), FormatError);

    CHECK(tensor_from_json(tensor_to_json(m.dense_weights)) == m.dense_weights);
}

TEST_CASE("experiment config defaults and round-trip")
{
    const ExperimentConfig d;
    CHECK(d.folds == 5);
    CHECK(d.calibration_samples == 512);
    CHECK(d.model.strategy.kind == Strategy::early);
    CHECK_NOTHROW(d.validate());

    ExperimentConfig c;
    c.model = ModelConfig::for_strategy(Strategy::late);
    c.train.max_epochs = 12;
    c.generator.samples_per_class = 40;
    c.power.inference_latency = 11.56;
    c.seed = 123;
    c.paths.dataset = "x/y.fgd";
    const auto path = temp_path("experiment.json");
    save_experiment_config(c, path);
    const ExperimentConfig back = load_experiment_config(path);
    CHECK(back.model.strategy.kind == Strategy::late);
    CHECK(back.train.max_epochs == 12);
    CHECK(back.generator.samples_per_class == 40);
    CHECK(back.power.inference_latency == 11.56);
    CHECK(back.seed == 123);
    CHECK(back.paths.dataset == "x/y.fgd");
    CHECK(nlohmann::json(back).dump() == nlohmann::json(c).dump());
    std::filesystem::remove(path);

    // missing keys take defaults
    const ExperimentConfig partial = parse_experiment_config(R"({"seed": 7, "train": {"batch_size": 64}})");
    CHECK(partial.seed == 7);
    CHECK(partial.train.batch_size == 64);
    CHECK(partial.train.learning_rate == 1e-3);
}

TEST_CASE("experiment config rejects bad input")
{
    CHECK_THROWS_AS(parse_experiment_config(R"({"sede": 7})"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"lr": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"model": {"strategy": "early", "groups": [2, 2, 2]}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"model": {"input_shape": [16, 16, 2]}})"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"folds": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("[1, 2]"), ConfigError);
}

TEST_CASE("shipped example config parses")
{
    const ExperimentConfig c = load_experiment_config(FUSION_CONFIG_DIR "/example.json");
    CHECK_NOTHROW(c.validate());
    CHECK(c.generator.samples_per_class == 1200);
}
