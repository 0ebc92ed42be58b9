#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusion/data.hpp"
#include "fusion/model.hpp"

namespace fusion {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 128;
    double l2_lambda = 1e-2;
    int patience = 8;
    int max_epochs = 200;
    double flip_probability = 0.5;
    double es_holdout_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<Eigen::ArrayXd> m;
    std::vector<Eigen::ArrayXd> v;
};

/// One parameter tensor and its gradient, both flat.
struct ParamSlot {
    Eigen::Map<Eigen::ArrayXd> value;
    Eigen::Map<const Eigen::ArrayXd> grad;
};

/// Bias-corrected Adam update. Moments are allocated on the first call and
/// must keep the same slot layout afterwards.
void adam_step(std::span<ParamSlot> slots, AdamState& state, double learning_rate);

/// Adam over every learnable tensor of the model.
void adam_step(Model& model, const Gradients& grads, AdamState& state, double learning_rate);

// ---------------------------------------------------------------------------
// Folds

struct FoldSplit {
    int k = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation; ///< early-stopping holdout, carved from the training folds
    std::vector<std::size_t> test;
};

/// Per-class shuffle and round-robin assignment to k folds; a stratified
/// `holdout_fraction` of each fold's training portion becomes its
/// early-stopping set.
std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed,
                                        double holdout_fraction = 0.1);

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    Model model; ///< weights of the best validation-loss epoch
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    bool early_stopped = false;
};

/// Mean cross-entropy plus L2 penalty, and accuracy, in inference mode.
struct EvalLoss {
    double loss = 0.0;
    double accuracy = 0.0;
};
EvalLoss evaluate_loss(const Model& model, const TensorD& inputs, std::span<const int> labels, double l2_lambda);

TrainResult train_fold(const Dataset& dataset, const FoldSplit& split, const ModelConfig& model_config,
                       const TrainConfig& train_config);

/// Argmax predictions of a model over dataset samples.
std::vector<int> predict_classes(const Model& model, const Dataset& dataset, std::span<const std::size_t> indices);

/// 32-d embeddings, one row per index.
Eigen::MatrixXd embeddings(const Model& model, const Dataset& dataset, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldResult {
    int k = 0;
    double accuracy = 0.0;
    int epochs = 0;
    int best_epoch = 0;
    std::string checkpoint;
    std::vector<std::size_t> test_indices;
};

struct CrossValReport {
    std::string strategy;
    std::uint64_t seed = 0;
    std::vector<FoldResult> folds;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0; ///< population std over folds
};

nlohmann::json to_json(const CrossValReport& report);
CrossValReport cross_val_report_from_json(const nlohmann::json& j);

/// Fills mean and population std from the per-fold accuracies.
void summarize(CrossValReport& report);

/// Fits on each split and scores argmax predictions on its test set.
/// `fit_predict` returns predictions for split.test in order.
CrossValReport evaluate_folds(const Dataset& dataset, std::span<const FoldSplit> folds,
                              const std::function<std::vector<int>(const FoldSplit&)>& fit_predict);

struct CrossValResult {
    CrossValReport report;
    std::vector<Model> models;
    std::vector<FoldSplit> splits;
    std::vector<TrainResult> runs;
};

/// One model per fold on splits drawn from `seed` (identical across
/// strategies for the same seed). Folds run on up to `jobs` threads; per-fold
/// RNG streams make the result independent of the job count.
CrossValResult cross_validate(const Dataset& dataset, Strategy strategy, const TrainConfig& train_config,
                              std::uint64_t seed, int k = 5, int jobs = 1);
CrossValResult cross_validate(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& train_config,
                              std::uint64_t seed, int k = 5, int jobs = 1);

} // namespace fusion
