#pragma once

// Central-difference gradient checking shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "fusion/model.hpp"
#include "fusion/nn.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace fusion;

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-4;
// Below this magnitude both gradients are noise-level for a central
// difference at h = 1e-5, so the comparison becomes absolute.
constexpr double kFloor = 1e-6;

inline double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

struct Worst {
    double error = 0.0;
    std::string where;
    long checked = 0;
    long failed = 0;
    long kinks = 0; ///< parameters whose +-h probe flips a ReLU; not a valid difference quotient

    void record(double analytic, double numeric, const std::string& name, Index i)
    {
        const double e = relative_error(analytic, numeric);
        ++checked;
        if (e >= kTolerance)
            ++failed;
        if (e > error) {
            error = e;
            where = name + "[" + std::to_string(i) + "]";
        }
    }
};

/// Central differences of `loss` with respect to every entry of `value`.
inline void check_tensor(TensorD& value, const TensorD& grad, const std::function<double()>& loss, const std::string& name,
                  Worst& worst)
{
    for (Index i = 0; i < value.size(); ++i) {
        const double saved = value[i];
        value[i] = saved + kStep;
        const double up = loss();
        value[i] = saved - kStep;
        const double down = loss();
        value[i] = saved;
        worst.record(grad[i], (up - down) / (2.0 * kStep), name, i);
    }
}

inline ModelConfig toy_config(Strategy s)
{
    ModelConfig c = ModelConfig::for_strategy(s);
    c.height = 4;
    c.width = 4;
    return c;
}

inline Model randomized_model(const ModelConfig& c, std::uint64_t seed)
{
    Model m = build_model(c, seed);
    Rng rng(seed + 100);
    for (auto& b : m.blocks) {
        b.conv.bias = oracle::random_tensor(b.conv.bias.shape(), rng, -0.2, 0.2);
        b.bn->gamma = oracle::random_tensor(b.bn->gamma.shape(), rng, 0.5, 1.5);
        b.bn->beta = oracle::random_tensor(b.bn->beta.shape(), rng, -0.2, 0.2);
    }
    m.dense_bias = oracle::random_tensor(m.dense_bias.shape(), rng, -0.2, 0.2);
    return m;
}

/// ReLU on/off pattern of a training forward pass.
inline std::vector<bool> relu_pattern(const TrainingCache& cache)
{
    std::vector<bool> mask;
    for (const auto& t : cache.pre_relu)
        for (Index i = 0; i < t.size(); ++i)
            mask.push_back(t[i] > 0.0);
    return mask;
}

/// As check_tensor, but a probe that changes the ReLU pattern straddles a
/// kink: it is counted, re-checked with a 100x smaller step and left out of
/// the h = 1e-5 sample.
inline void check_model_tensor(Model& model, const TensorD& x, std::span<const int> labels, double lambda, TensorD& value,
                        const TensorD& grad, const std::string& name, Worst& worst, Worst& fine)
{
    const auto base = relu_pattern(forward_train(model, x));
    const auto probe = [&](std::vector<bool>* pattern) {
        const auto cache = forward_train(model, x);
        if (pattern)
            *pattern = relu_pattern(cache);
        return backward(model, cache, labels, lambda).loss;
    };
    for (Index i = 0; i < value.size(); ++i) {
        const double saved = value[i];
        std::vector<bool> pu, pd;
        value[i] = saved + kStep;
        const double up = probe(&pu);
        value[i] = saved - kStep;
        const double down = probe(&pd);
        value[i] = saved;
        if (pu != base || pd != base) {
            ++worst.kinks;
            const double h = kStep / 100.0;
            value[i] = saved + h;
            const double u2 = probe(nullptr);
            value[i] = saved - h;
            const double d2 = probe(nullptr);
            value[i] = saved;
            fine.record(grad[i], (u2 - d2) / (2.0 * h), name, i);
            continue;
        }
        worst.record(grad[i], (up - down) / (2.0 * kStep), name, i);
    }
}


/// Checks every learnable parameter of a randomized toy model; `fine` holds
/// the re-checked kink probes.
inline void check_model(Strategy s, Worst& worst, Worst& fine)
{
    const std::vector<int> labels{0, 3, 6, 2};
    const double lambda = 1e-2;
    const ModelConfig cfg = toy_config(s);
    Model model = randomized_model(cfg, 7 + static_cast<std::uint64_t>(s));
    Rng rng(99);
    const TensorD x = oracle::random_tensor({4, 4, 4, cfg.in_channels}, rng, -2.0, 2.0);
    const auto analytic = backward(model, forward_train(model, x), labels, lambda);
    auto grads = analytic.grads;
    for (auto& p : learnable_params(model, grads))
        check_model_tensor(model, x, labels, lambda, *p.value, *p.grad, p.name, worst, fine);
}

} // namespace gradcheck
