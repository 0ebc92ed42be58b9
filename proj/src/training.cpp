#include "fusion/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <thread>

#include "fusion/rng.hpp"

namespace fusion {

using nlohmann::json;

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0))
        throw ConfigError("learning_rate must be positive");
    if (batch_size < 1)
        throw ConfigError("batch_size must be positive");
    if (l2_lambda < 0.0)
        throw ConfigError("l2_lambda must be non-negative");
    if (patience < 0)
        throw ConfigError("patience must be non-negative");
    if (max_epochs < 1)
        throw ConfigError("max_epochs must be positive");
    if (flip_probability < 0.0 || flip_probability > 1.0)
        throw ConfigError("flip_probability must lie in [0, 1]");
    if (es_holdout_fraction < 0.0 || es_holdout_fraction >= 1.0)
        throw ConfigError("es_holdout_fraction must lie in [0, 1)");
}

void to_json(json& j, const TrainConfig& c)
{
    j = {{"learning_rate", c.learning_rate},     {"batch_size", c.batch_size},
         {"l2_lambda", c.l2_lambda},             {"patience", c.patience},
         {"max_epochs", c.max_epochs},           {"flip_probability", c.flip_probability},
         {"es_holdout_fraction", c.es_holdout_fraction}, {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c)
{
    const TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.l2_lambda = j.value("l2_lambda", d.l2_lambda);
    c.patience = j.value("patience", d.patience);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.flip_probability = j.value("flip_probability", d.flip_probability);
    c.es_holdout_fraction = j.value("es_holdout_fraction", d.es_holdout_fraction);
    c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<ParamSlot> slots, AdamState& state, double learning_rate)
{
    if (state.m.empty()) {
        for (const auto& s : slots) {
            state.m.push_back(Eigen::ArrayXd::Zero(s.value.size()));
            state.v.push_back(Eigen::ArrayXd::Zero(s.value.size()));
        }
    }
    if (state.m.size() != slots.size())
        throw ShapeError("adam: slot count changed between steps");
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& s = slots[i];
        if (s.value.size() != s.grad.size() || s.value.size() != state.m[i].size())
            throw ShapeError("adam: parameter and gradient sizes disagree");
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * s.grad;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * s.grad.square();
        s.value -= learning_rate * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + state.eps);
    }
}

void adam_step(Model& model, const Gradients& grads, AdamState& state, double learning_rate)
{
    std::vector<ParamSlot> slots;
    for (auto& p : learnable_params(model, grads)) {
        if (!p.value->same_shape(*p.grad))
            throw ShapeError("adam: gradient shape mismatch for " + p.name);
        slots.push_back({Eigen::Map<Eigen::ArrayXd>(p.value->data(), p.value->size()),
                         Eigen::Map<const Eigen::ArrayXd>(p.grad->data(), p.grad->size())});
    }
    adam_step(slots, state, learning_rate);
}

// ---------------------------------------------------------------------------
// Folds

std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed,
                                        double holdout_fraction)
{
    if (k < 2)
        throw ConfigError("k must be at least 2");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw ConfigError("holdout fraction must lie in [0, 1)");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(i);
    if (by_class.empty())
        throw ConfigError("cannot split an empty label list");
    for (const auto& [label, idx] : by_class)
        if (static_cast<int>(idx.size()) < k)
            throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(idx.size()) +
                              " samples of class " + std::to_string(label));

    Rng rng(derive_seed(seed, 0x666f6c6473ULL));
    std::vector<int> fold_of(labels.size(), 0);
    std::size_t offset = 0;
    for (auto& [label, idx] : by_class) {
        rng.shuffle(idx);
        for (std::size_t j = 0; j < idx.size(); ++j)
            fold_of[idx[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(k));
        offset = (offset + idx.size()) % static_cast<std::size_t>(k);
    }

    std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        auto& split = folds[static_cast<std::size_t>(f)];
        split.k = f;
        for (const auto& [label, idx] : by_class) {
            std::vector<std::size_t> pool;
            for (std::size_t i : idx) {
                if (fold_of[i] == f)
                    split.test.push_back(i);
                else
                    pool.push_back(i);
            }
            const auto n_val = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(pool.size())));
            split.validation.insert(split.validation.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
            split.train.insert(split.train.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
        }
        std::sort(split.train.begin(), split.train.end());
        std::sort(split.validation.begin(), split.validation.end());
        std::sort(split.test.begin(), split.test.end());
    }
    return folds;
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr Index kEvalChunk = 1024;

std::vector<int> labels_of(const Dataset& d, std::span<const std::size_t> indices)
{
    std::vector<int> l;
    l.reserve(indices.size());
    for (std::size_t i : indices)
        l.push_back(d.samples.at(i).label);
    return l;
}

TensorD slice_batch(const TensorD& all, Index begin, Index end)
{
    const Index stride = all.size() / all.dim(0);
    TensorD::Storage data = all.array().segment(begin * stride, (end - begin) * stride);
    return TensorD({end - begin, all.dim(1), all.dim(2), all.dim(3)}, std::move(data));
}

TensorD chunked_logits(const Model& model, const TensorD& inputs)
{
    const Index n = inputs.dim(0);
    TensorD logits({n, model.config.num_classes});
    for (Index b = 0; b < n; b += kEvalChunk) {
        const Index e = std::min(n, b + kEvalChunk);
        logits.matrix().middleRows(b, e - b) = forward_logits(model, slice_batch(inputs, b, e)).matrix();
    }
    return logits;
}

} // namespace

EvalLoss evaluate_loss(const Model& model, const TensorD& inputs, std::span<const int> labels, double l2_lambda)
{
    EvalLoss r;
    if (labels.empty())
        return r;
    const TensorD logits = chunked_logits(model, inputs);
    const auto m = logits.matrix();
    Index correct = 0;
    for (Index i = 0; i < m.rows(); ++i) {
        const auto lr = softmax_cross_entropy<double>(m.row(i).transpose(), labels[static_cast<std::size_t>(i)]);
        r.loss += lr.loss;
        Index arg = 0;
        m.row(i).maxCoeff(&arg);
        correct += arg == labels[static_cast<std::size_t>(i)];
    }
    r.loss = r.loss / static_cast<double>(m.rows()) + l2_lambda * l2_penalty(model);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(m.rows());
    return r;
}

TrainResult train_fold(const Dataset& dataset, const FoldSplit& split, const ModelConfig& model_config,
                       const TrainConfig& cfg)
{
    cfg.validate();
    model_config.validate();
    if (split.train.empty())
        throw ConfigError("fold " + std::to_string(split.k) + " has an empty training split");

    const auto channels = model_config.strategy.input_channels();
    const auto stats = select_channels(compute_normalization(dataset, split.train), channels);
    const std::uint64_t fold_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(split.k));

    Model model = build_model(model_config, derive_seed(fold_seed, 1));
    model.normalization = stats;

    const TensorD val_inputs = split.validation.empty() ? TensorD() : make_batch(dataset, split.validation, stats, channels);
    const auto val_labels = labels_of(dataset, split.validation);

    Rng order_rng(derive_seed(fold_seed, 2));
    Rng flip_rng(derive_seed(fold_seed, 3));
    AdamState adam;

    TrainResult result;
    result.model = model;
    double best = std::numeric_limits<double>::infinity();
    int wait = 0;
    std::vector<std::size_t> order = split.train;
    const Index cin = static_cast<Index>(channels.size());
    const Index sample_size = kFrameSize * kFrameSize * cin;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        Index correct = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            const Index n = static_cast<Index>(e - b);
            TensorD batch({n, kFrameSize, kFrameSize, cin});
            std::vector<int> labels(e - b);
            for (std::size_t i = b; i < e; ++i) {
                const FramePair sample = augment_hflip(dataset.samples[order[i]], flip_rng, cfg.flip_probability);
                const TensorD x = model_input(sample, stats, channels);
                std::copy(x.data(), x.data() + sample_size, batch.data() + static_cast<Index>(i - b) * sample_size);
                labels[i - b] = sample.label;
            }
            const TrainingCache cache = forward_train(model, batch);
            const LossAndGradients lg = backward(model, cache, labels, cfg.l2_lambda);
            if (!std::isfinite(lg.loss))
                throw NumericalError("non-finite training loss in fold " + std::to_string(split.k) + ", epoch " +
                                     std::to_string(epoch));
            update_moving_stats(model, cache);
            adam_step(model, lg.grads, adam, cfg.learning_rate);
            loss_sum += lg.loss * static_cast<double>(n);
            correct += lg.correct;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!split.validation.empty()) {
            const auto v = evaluate_loss(model, val_inputs, val_labels, cfg.l2_lambda);
            rec.val_loss = v.loss;
            rec.val_accuracy = v.accuracy;
        } else {
            rec.val_loss = rec.train_loss;
            rec.val_accuracy = rec.train_accuracy;
        }
        result.history.push_back(rec);

        if (rec.val_loss < best) {
            best = rec.val_loss;
            result.model = model;
            result.best_epoch = epoch;
            wait = 0;
        } else if (++wait >= cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }
    return result;
}

std::vector<int> predict_classes(const Model& model, const Dataset& dataset, std::span<const std::size_t> indices)
{
    const auto channels = model.config.strategy.input_channels();
    const TensorD logits = chunked_logits(model, make_batch(dataset, indices, model.normalization, channels));
    std::vector<int> preds(indices.size());
    for (Index i = 0; i < logits.dim(0); ++i) {
        Index arg = 0;
        logits.matrix().row(i).maxCoeff(&arg);
        preds[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return preds;
}

Eigen::MatrixXd embeddings(const Model& model, const Dataset& dataset, std::span<const std::size_t> indices)
{
    const auto channels = model.config.strategy.input_channels();
    const TensorD inputs = make_batch(dataset, indices, model.normalization, channels);
    Eigen::MatrixXd out(inputs.dim(0), model.config.filters.back());
    for (Index b = 0; b < inputs.dim(0); b += kEvalChunk) {
        const Index e = std::min(inputs.dim(0), b + kEvalChunk);
        out.middleRows(b, e - b) = forward(model, slice_batch(inputs, b, e)).embedding.matrix();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

json to_json(const CrossValReport& r)
{
    json folds = json::array();
    for (const auto& f : r.folds)
        folds.push_back({{"k", f.k},
                         {"accuracy", f.accuracy},
                         {"epochs", f.epochs},
                         {"best_epoch", f.best_epoch},
                         {"checkpoint", f.checkpoint},
                         {"test_indices", f.test_indices}});
    return {{"strategy", r.strategy},
            {"seed", r.seed},
            {"folds", std::move(folds)},
            {"mean_accuracy", r.mean_accuracy},
            {"std_accuracy", r.std_accuracy}};
}

CrossValReport cross_val_report_from_json(const json& j)
{
    try {
        CrossValReport r;
        r.strategy = j.at("strategy").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& jf : j.at("folds")) {
            FoldResult f;
            f.k = jf.at("k").get<int>();
            f.accuracy = jf.at("accuracy").get<double>();
            f.epochs = jf.at("epochs").get<int>();
            f.best_epoch = jf.at("best_epoch").get<int>();
            f.checkpoint = jf.at("checkpoint").get<std::string>();
            f.test_indices = jf.at("test_indices").get<std::vector<std::size_t>>();
            r.folds.push_back(std::move(f));
        }
        r.mean_accuracy = j.at("mean_accuracy").get<double>();
        r.std_accuracy = j.at("std_accuracy").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed fold report: ") + e.what());
    }
}

void summarize(CrossValReport& report)
{
    if (report.folds.empty())
        return;
    const double n = static_cast<double>(report.folds.size());
    double sum = 0.0;
    for (const auto& f : report.folds)
        sum += f.accuracy;
    report.mean_accuracy = sum / n;
    double sq = 0.0;
    for (const auto& f : report.folds)
        sq += (f.accuracy - report.mean_accuracy) * (f.accuracy - report.mean_accuracy);
    report.std_accuracy = std::sqrt(sq / n);
}

CrossValReport evaluate_folds(const Dataset& dataset, std::span<const FoldSplit> folds,
                              const std::function<std::vector<int>(const FoldSplit&)>& fit_predict)
{
    CrossValReport report;
    for (const auto& split : folds) {
        const auto preds = fit_predict(split);
        if (preds.size() != split.test.size())
            throw ShapeError("fit_predict returned " + std::to_string(preds.size()) + " predictions for " +
                             std::to_string(split.test.size()) + " test samples");
        std::size_t hits = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            hits += preds[i] == dataset.samples.at(split.test[i]).label;
        FoldResult f;
        f.k = split.k;
        f.accuracy = split.test.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(split.test.size());
        f.test_indices = split.test;
        report.folds.push_back(std::move(f));
    }
    summarize(report);
    return report;
}

CrossValResult cross_validate(const Dataset& dataset, Strategy strategy, const TrainConfig& train_config,
                              std::uint64_t seed, int k, int jobs)
{
    return cross_validate(dataset, ModelConfig::for_strategy(strategy), train_config, seed, k, jobs);
}

CrossValResult cross_validate(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& train_config,
                              std::uint64_t seed, int k, int jobs)
{
    model_config.validate();
    TrainConfig cfg = train_config;
    cfg.seed = seed;
    cfg.validate();
    const auto labels = dataset.labels();
    CrossValResult out;
    out.splits = stratified_kfold(labels, k, seed, cfg.es_holdout_fraction);
    const ModelConfig& mc = model_config;

    out.runs.resize(out.splits.size());
    std::vector<std::exception_ptr> errors(out.splits.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < out.splits.size(); i = next++) {
            try {
                out.runs[i] = train_fold(dataset, out.splits[i], mc, cfg);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n_threads = std::clamp(jobs, 1, static_cast<int>(out.splits.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back(worker);
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    std::size_t fold = 0;
    out.report = evaluate_folds(dataset, out.splits, [&](const FoldSplit& split) {
        return predict_classes(out.runs[fold++].model, dataset, split.test);
    });
    out.report.strategy = model_config.strategy.name();
    out.report.seed = seed;
    for (std::size_t i = 0; i < out.runs.size(); ++i) {
        out.report.folds[i].epochs = static_cast<int>(out.runs[i].history.size());
        out.report.folds[i].best_epoch = out.runs[i].best_epoch;
        out.models.push_back(out.runs[i].model);
    }
    return out;
}

} // namespace fusion
