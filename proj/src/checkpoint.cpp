#include "fusion/checkpoint.hpp"

#include "fusion/io.hpp"

namespace fusion {

using nlohmann::json;

json tensor_to_json(const TensorD& t)
{
    json values = json::array();
    for (Index i = 0; i < t.size(); ++i)
        values.push_back(t[i]);
    return {{"shape", t.shape()}, {"values", std::move(values)}};
}

TensorD tensor_from_json(const json& j)
{
    const auto shape = j.at("shape").get<std::vector<Index>>();
    const auto& values = j.at("values");
    TensorD::Storage data(static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        data[static_cast<Index>(i)] = values[i].get<double>();
    return TensorD(shape, std::move(data));
}

json model_to_json(const Model& model)
{
    const auto& c = model.config;
    json blocks = json::array();
    for (const auto& b : model.blocks) {
        json jb = {{"groups", b.conv.groups}, {"kernel", tensor_to_json(b.conv.kernel)}, {"bias", tensor_to_json(b.conv.bias)}};
        if (b.bn) {
            jb["batchnorm"] = {{"epsilon", b.bn->epsilon},
                               {"momentum", b.bn->momentum},
                               {"gamma", tensor_to_json(b.bn->gamma)},
                               {"beta", tensor_to_json(b.bn->beta)},
                               {"moving_mean", tensor_to_json(b.bn->moving_mean)},
                               {"moving_var", tensor_to_json(b.bn->moving_var)}};
        }
        blocks.push_back(std::move(jb));
    }
    return {{"format", kCheckpointFormat},
            {"config",
             {{"strategy", c.strategy.name()},
              {"groups", c.strategy.groups},
              {"input_shape", {c.height, c.width, c.in_channels}},
              {"filters", c.filters},
              {"num_classes", c.num_classes},
              {"activation", "relu"},
              {"kernel_size", kKernelSize},
              {"padding", "same"}}},
            {"seed", model.seed},
            {"normalization", {{"channels", c.strategy.input_channels()}, {"mean", model.normalization.mean}, {"std", model.normalization.std}}},
            {"blocks", std::move(blocks)},
            {"dense", {{"weights", tensor_to_json(model.dense_weights)}, {"bias", tensor_to_json(model.dense_bias)}}}};
}

Model model_from_json(const json& j)
{
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat)
            throw FormatError("unsupported checkpoint format '" + j.at("format").get<std::string>() + "'");
        const auto& jc = j.at("config");
        Model m;
        m.config = ModelConfig::for_strategy(FusionStrategy::parse(jc.at("strategy").get<std::string>()).kind);
        const auto shape = jc.at("input_shape").get<std::vector<Index>>();
        if (shape.size() != 3)
            throw FormatError("checkpoint input_shape must have 3 entries");
        m.config.height = shape[0];
        m.config.width = shape[1];
        m.config.in_channels = shape[2];
        m.config.filters = jc.at("filters").get<std::array<Index, 3>>();
        m.config.num_classes = jc.at("num_classes").get<Index>();
        if (jc.at("groups").get<std::array<Index, 3>>() != m.config.strategy.groups)
            throw FormatError("checkpoint groups do not match strategy " + m.config.strategy.name());
        m.config.validate();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.normalization.mean = j.at("normalization").at("mean").get<std::vector<double>>();
        m.normalization.std = j.at("normalization").at("std").get<std::vector<double>>();

        const auto& jb = j.at("blocks");
        if (jb.size() != 3)
            throw FormatError("checkpoint must contain 3 conv blocks");
        for (std::size_t l = 0; l < 3; ++l) {
            auto& b = m.blocks[l];
            b.conv.groups = jb[l].at("groups").get<Index>();
            b.conv.kernel = tensor_from_json(jb[l].at("kernel"));
            b.conv.bias = tensor_from_json(jb[l].at("bias"));
            b.conv.validate();
            if (jb[l].contains("batchnorm")) {
                const auto& bn = jb[l]["batchnorm"];
                BatchNormParams<double> p{tensor_from_json(bn.at("gamma")), tensor_from_json(bn.at("beta")),
                                          tensor_from_json(bn.at("moving_mean")), tensor_from_json(bn.at("moving_var")),
                                          bn.at("epsilon").get<double>(), bn.at("momentum").get<double>()};
                p.validate();
                b.bn = std::move(p);
            }
        }
        m.dense_weights = tensor_from_json(j.at("dense").at("weights"));
        m.dense_bias = tensor_from_json(j.at("dense").at("bias"));
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(std::string("inconsistent checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path)
{
    io::write_text_atomic(path, model_to_json(model).dump(1) + "\n");
}

Model load_checkpoint(const std::filesystem::path& path)
{
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

} // namespace fusion
