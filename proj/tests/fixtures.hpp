#pragma once

#include "fusion/model.hpp"
#include "oracles.hpp"

namespace fixture {

using fusion::Model;

/// Freshly built model with non-trivial biases and BN statistics.
inline Model trained_looking_model(const fusion::ModelConfig& config, std::uint64_t seed)
{
    Model m = fusion::build_model(config, seed);
    fusion::Rng rng(seed ^ 0xabcdef);
    for (auto& b : m.blocks) {
        b.conv.bias = oracle::random_tensor(b.conv.bias.shape(), rng, -0.1, 0.1);
        b.bn->gamma = oracle::random_tensor(b.bn->gamma.shape(), rng, 0.5, 1.5);
        b.bn->beta = oracle::random_tensor(b.bn->beta.shape(), rng, -0.3, 0.3);
        b.bn->moving_mean = oracle::random_tensor(b.bn->moving_mean.shape(), rng, -0.5, 0.5);
        b.bn->moving_var = oracle::random_tensor(b.bn->moving_var.shape(), rng, 0.2, 2.0);
    }
    m.dense_bias = oracle::random_tensor(m.dense_bias.shape(), rng, -0.2, 0.2);
    m.normalization.mean.assign(static_cast<std::size_t>(config.in_channels), 0.0);
    m.normalization.std.assign(static_cast<std::size_t>(config.in_channels), 1.0);
    return m;
}

} // namespace fixture
