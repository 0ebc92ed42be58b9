#include "fusion/model.hpp"

#include <cmath>

#include "fusion/rng.hpp"

namespace fusion {

FusionStrategy FusionStrategy::of(Strategy kind)
{
    switch (kind) {
    case Strategy::vanilla:
        return {kind, {1, 1, 1}};
    case Strategy::early:
        return {kind, {2, 1, 1}};
    case Strategy::mid:
        return {kind, {2, 2, 1}};
    case Strategy::late:
        return {kind, {2, 2, 2}};
    case Strategy::ir_only:
    case Strategy::tof_only:
        return {kind, {1, 1, 1}};
    }
    throw ConfigError("unknown strategy");
}

FusionStrategy FusionStrategy::parse(std::string_view name)
{
    if (name == "vanilla")
        return of(Strategy::vanilla);
    if (name == "early")
        return of(Strategy::early);
    if (name == "mid")
        return of(Strategy::mid);
    if (name == "late")
        return of(Strategy::late);
    if (name == "ir_only" || name == "ir")
        return of(Strategy::ir_only);
    if (name == "tof_only" || name == "tof")
        return of(Strategy::tof_only);
    throw ConfigError("unknown strategy '" + std::string(name) + "' (expected vanilla|early|mid|late|ir_only|tof_only)");
}

std::string FusionStrategy::name() const
{
    switch (kind) {
    case Strategy::vanilla:
        return "vanilla";
    case Strategy::early:
        return "early";
    case Strategy::mid:
        return "mid";
    case Strategy::late:
        return "late";
    case Strategy::ir_only:
        return "ir_only";
    case Strategy::tof_only:
        return "tof_only";
    }
    return "?";
}

std::vector<Index> FusionStrategy::input_channels() const
{
    switch (kind) {
    case Strategy::ir_only:
        return {0};
    case Strategy::tof_only:
        return {1};
    default:
        return {0, 1};
    }
}

ModelConfig ModelConfig::for_strategy(Strategy kind)
{
    ModelConfig c;
    c.strategy = FusionStrategy::of(kind);
    c.in_channels = c.strategy.in_channels();
    return c;
}

void ModelConfig::validate() const
{
    if (filters != kFilters)
        throw ConfigError("filters are fixed to [8, 16, 32]");
    if (num_classes != kNumClasses)
        throw ConfigError("num_classes is fixed to 7");
    if (height < 1 || width < 1)
        throw ConfigError("input spatial size must be positive");
    if (in_channels != strategy.in_channels())
        throw ConfigError("strategy " + strategy.name() + " expects " + std::to_string(strategy.in_channels()) +
                          " input channels, got " + std::to_string(in_channels));
    Index cin = in_channels;
    for (std::size_t l = 0; l < 3; ++l) {
        const Index g = strategy.groups[l];
        if (g < 1 || cin % g != 0 || filters[l] % g != 0)
            throw ShapeError("groups " + std::to_string(g) + " incompatible with layer " + std::to_string(l) +
                             " (Cin=" + std::to_string(cin) + ", Cout=" + std::to_string(filters[l]) + ")");
        cin = filters[l];
    }
}

bool Model::has_batchnorm() const
{
    return blocks[0].bn.has_value();
}

namespace {

void he_uniform(TensorD& t, Index fan_in, Rng& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Index i = 0; i < t.size(); ++i)
        t[i] = rng.uniform(-limit, limit);
}

} // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    Model m;
    m.config = config;
    m.seed = seed;
    Rng rng(derive_seed(seed, 0x6d6f64656cULL));
    Index cin = config.in_channels;
    for (std::size_t l = 0; l < 3; ++l) {
        const Index cout = config.filters[l];
        auto& block = m.blocks[l];
        block.conv = ConvParams<double>::zeros(cin, cout, config.strategy.groups[l]);
        he_uniform(block.conv.kernel, kKernelSize * kKernelSize * block.conv.group_in(), rng);
        block.bn = BatchNormParams<double>::identity(cout);
        cin = cout;
    }
    m.dense_weights = TensorD({cin, config.num_classes});
    he_uniform(m.dense_weights, cin, rng);
    m.dense_bias = TensorD({config.num_classes});
    m.normalization.mean.assign(static_cast<std::size_t>(config.in_channels), 0.0);
    m.normalization.std.assign(static_cast<std::size_t>(config.in_channels), 1.0);
    return m;
}

Index count_params(const Model& model)
{
    Index total = model.dense_weights.size() + model.dense_bias.size();
    for (const auto& b : model.blocks) {
        total += b.conv.kernel.size() + b.conv.bias.size();
        if (b.bn)
            total += b.bn->gamma.size() + b.bn->beta.size() + b.bn->moving_mean.size() + b.bn->moving_var.size();
    }
    return total;
}

Index count_params(const ModelConfig& config)
{
    config.validate();
    Index total = 0, cin = config.in_channels;
    for (std::size_t l = 0; l < 3; ++l) {
        const Index cout = config.filters[l];
        total += kKernelSize * kKernelSize * (cin / config.strategy.groups[l]) * cout + cout + 4 * cout;
        cin = cout;
    }
    return total + cin * config.num_classes + config.num_classes;
}

Index count_macs(const ModelConfig& config)
{
    config.validate();
    Index total = 0, cin = config.in_channels;
    for (std::size_t l = 0; l < 3; ++l) {
        const Index cout = config.filters[l];
        total += config.height * config.width * kKernelSize * kKernelSize * (cin / config.strategy.groups[l]) * cout;
        cin = cout;
    }
    return total + cin * config.num_classes;
}

std::vector<std::vector<Index>> activation_shapes(const ModelConfig& config)
{
    std::vector<std::vector<Index>> shapes;
    shapes.push_back({config.height, config.width, config.in_channels});
    for (Index f : config.filters) {
        shapes.push_back({config.height, config.width, f}); // conv
        shapes.push_back({config.height, config.width, f}); // BN + ReLU
    }
    shapes.push_back({config.filters.back()});
    shapes.push_back({config.num_classes});
    return shapes;
}

namespace {

TensorD as_model_batch(const Model& model, const TensorD& batch)
{
    const auto& c = model.config;
    TensorD b = batch.rank() == 3 ? batch.reshaped({1, batch.dim(0), batch.dim(1), batch.dim(2)}) : batch;
    if (b.rank() != 4 || b.dim(1) != c.height || b.dim(2) != c.width || b.dim(3) != c.in_channels)
        throw ShapeError("model expects " + std::to_string(c.height) + "x" + std::to_string(c.width) + "x" +
                         std::to_string(c.in_channels) + " inputs, got " + batch.shape_string());
    return b;
}

} // namespace

Activations forward(const Model& model, const TensorD& batch)
{
    Activations a;
    TensorD x = as_model_batch(model, batch);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& block = model.blocks[l];
        TensorD z = conv2d_grouped(x, block.conv);
        if (block.bn)
            z = batchnorm_infer(z, *block.bn);
        a.blocks[l] = relu(z);
        x = a.blocks[l];
    }
    a.embedding = global_avg_pool(x);
    a.logits = dense(a.embedding, model.dense_weights, model.dense_bias);
    return a;
}

TensorD forward_logits(const Model& model, const TensorD& batch)
{
    return forward(model, batch).logits;
}

Eigen::MatrixXd softmax_rows(const TensorD& logits)
{
    const auto m = logits.matrix();
    Eigen::MatrixXd probs(m.rows(), m.cols());
    for (Index r = 0; r < m.rows(); ++r)
        probs.row(r) = softmax<double>(m.row(r).transpose()).transpose();
    return probs;
}

Eigen::VectorXd predict(const Model& model, const TensorD& input)
{
    if (input.rank() != 3)
        throw ShapeError("predict expects a single HxWxC input, got " + input.shape_string());
    return softmax_rows(forward_logits(model, input)).row(0).transpose();
}

Eigen::VectorXd extract_embedding(const Model& model, const TensorD& input)
{
    if (input.rank() != 3)
        throw ShapeError("extract_embedding expects a single HxWxC input, got " + input.shape_string());
    return forward(model, input).embedding.matrix().row(0).transpose();
}

TrainingCache forward_train(const Model& model, const TensorD& batch)
{
    if (!model.has_batchnorm())
        throw ConfigError("training requires batch-norm layers (model is folded)");
    TrainingCache c;
    c.input = as_model_batch(model, batch);
    TensorD x = c.input;
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& block = model.blocks[l];
        c.conv_in[l] = x;
        TensorD z = conv2d_grouped(x, block.conv);
        auto [y, bn_cache] = batchnorm_train(z, *block.bn);
        c.bn[l] = std::move(bn_cache);
        x = relu(y);
        c.pre_relu[l] = std::move(y);
    }
    c.pooled_in = x;
    c.embedding = global_avg_pool(x);
    c.logits = dense(c.embedding, model.dense_weights, model.dense_bias);
    return c;
}

double l2_penalty(const Model& model)
{
    double s = model.dense_weights.array().square().sum();
    for (const auto& b : model.blocks)
        s += b.conv.kernel.array().square().sum();
    return s;
}

LossAndGradients backward(const Model& model, const TrainingCache& cache, std::span<const int> labels,
                          double l2_lambda)
{
    const Index n = cache.logits.dim(0);
    if (cache.logits.rank() != 2 || static_cast<Index>(labels.size()) != n)
        throw ShapeError("backward: " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(n));
    if (!model.has_batchnorm())
        throw ConfigError("backward requires batch-norm layers");

    LossAndGradients out;
    TensorD d_logits(cache.logits.shape());
    const auto logits = cache.logits.matrix();
    for (Index i = 0; i < n; ++i) {
        const auto r = softmax_cross_entropy<double>(logits.row(i).transpose(), labels[static_cast<std::size_t>(i)]);
        out.data_loss += r.loss;
        Index arg = 0;
        r.probs.maxCoeff(&arg);
        out.correct += arg == labels[static_cast<std::size_t>(i)];
        Eigen::VectorXd g = r.probs;
        g[labels[static_cast<std::size_t>(i)]] -= 1.0;
        d_logits.matrix().row(i) = g.transpose() / static_cast<double>(n);
    }
    out.data_loss /= static_cast<double>(n);
    out.loss = out.data_loss + l2_lambda * l2_penalty(model);

    auto& g = out.grads;
    auto dd = dense_backward(cache.embedding, model.dense_weights, d_logits);
    g.dense_weights = std::move(dd.weights);
    g.dense_weights.array() += 2.0 * l2_lambda * model.dense_weights.array();
    g.dense_bias = std::move(dd.bias);

    TensorD d = global_avg_pool_backward(cache.pooled_in.shape(), dd.input);
    for (int l = 2; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const auto& block = model.blocks[li];
        d = relu_backward(cache.pre_relu[li], d);
        auto bg = batchnorm_backward(*block.bn, cache.bn[li], d);
        g.gamma[li] = std::move(bg.gamma);
        g.beta[li] = std::move(bg.beta);
        auto cg = conv2d_grouped_backward(cache.conv_in[li], block.conv, bg.input, l > 0);
        g.kernel[li] = std::move(cg.kernel);
        g.kernel[li].array() += 2.0 * l2_lambda * block.conv.kernel.array();
        g.bias[li] = std::move(cg.bias);
        d = std::move(cg.input);
    }
    return out;
}

void update_moving_stats(Model& model, const TrainingCache& cache)
{
    for (std::size_t l = 0; l < 3; ++l)
        update_moving_stats(*model.blocks[l].bn, cache.bn[l]);
}

std::vector<ParamView> learnable_params(Model& model, const Gradients& grads)
{
    std::vector<ParamView> v;
    for (std::size_t l = 0; l < 3; ++l) {
        auto& b = model.blocks[l];
        const std::string p = "conv" + std::to_string(l + 1);
        v.push_back({p + ".kernel", &b.conv.kernel, &grads.kernel[l], true});
        v.push_back({p + ".bias", &b.conv.bias, &grads.bias[l], false});
        if (b.bn) {
            v.push_back({p + ".bn.gamma", &b.bn->gamma, &grads.gamma[l], false});
            v.push_back({p + ".bn.beta", &b.bn->beta, &grads.beta[l], false});
        }
    }
    v.push_back({"dense.weights", &model.dense_weights, &grads.dense_weights, true});
    v.push_back({"dense.bias", &model.dense_bias, &grads.dense_bias, false});
    return v;
}

} // namespace fusion
