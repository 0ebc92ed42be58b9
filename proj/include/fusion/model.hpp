#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fusion/nn.hpp"

namespace fusion {

inline constexpr Index kNumClasses = 7;
inline constexpr Index kFrameSize = 8;
inline constexpr std::array<Index, 3> kFilters{8, 16, 32};
inline constexpr Index kEmbeddingDim = kFilters.back();

/// Which modalities the network sees and how deep the grouped (per-modality)
/// processing extends.
enum class Strategy { vanilla, early, mid, late, ir_only, tof_only };

struct FusionStrategy {
    Strategy kind = Strategy::early;
    std::array<Index, 3> groups{2, 1, 1};

    static FusionStrategy of(Strategy kind);
    static FusionStrategy parse(std::string_view name);

    std::string name() const;
    bool multimodal() const { return kind != Strategy::ir_only && kind != Strategy::tof_only; }
    Index in_channels() const { return multimodal() ? 2 : 1; }
    /// Fused-tensor channels consumed, in model input order (0 = thermal, 1 = depth).
    std::vector<Index> input_channels() const;
};

inline const std::array<Strategy, 4>& fusion_strategies()
{
    static const std::array<Strategy, 4> all{Strategy::vanilla, Strategy::early, Strategy::mid, Strategy::late};
    return all;
}

struct ModelConfig {
    Index height = kFrameSize;
    Index width = kFrameSize;
    Index in_channels = 2;
    std::array<Index, 3> filters = kFilters;
    Index num_classes = kNumClasses;
    FusionStrategy strategy;

    static ModelConfig for_strategy(Strategy kind);
    void validate() const;
};

/// Per-channel z-score statistics of the model's input channels.
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> std;

    friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

struct ConvBlock {
    ConvParams<double> conv;
    std::optional<BatchNormParams<double>> bn; ///< absent once folded into conv
};

/// conv -> BN -> ReLU, three times, then global average pooling and a dense
/// classifier. Groups per conv layer come from the fusion strategy.
struct Model {
    ModelConfig config;
    std::uint64_t seed = 0;
    std::array<ConvBlock, 3> blocks;
    TensorD dense_weights; ///< 32 x 7
    TensorD dense_bias;    ///< 7
    NormalizationStats normalization;

    bool has_batchnorm() const;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Conv, dense and all four per-channel BN vectors (the running statistics
/// are part of the stored model).
Index count_params(const Model& model);
Index count_params(const ModelConfig& config);

/// Multiply-accumulates of conv and dense layers; BN and ReLU excluded.
Index count_macs(const ModelConfig& config);
inline Index count_macs(const Model& model) { return count_macs(model.config); }

/// Shapes of every intermediate activation for a single input.
std::vector<std::vector<Index>> activation_shapes(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Forward passes

/// Inference-mode activations of a batch at each stage.
struct Activations {
    std::array<TensorD, 3> blocks; ///< post-ReLU outputs of the conv blocks
    TensorD embedding;             ///< N x 32
    TensorD logits;                ///< N x 7
};

/// Input: NxHxWxCin batch (or HxWxCin single sample), already normalized.
Activations forward(const Model& model, const TensorD& batch);
TensorD forward_logits(const Model& model, const TensorD& batch);

/// Softmax probabilities for a single normalized HxWxCin input.
Eigen::VectorXd predict(const Model& model, const TensorD& input);
/// Post-GAP, pre-dense 32-vector for a single normalized input.
Eigen::VectorXd extract_embedding(const Model& model, const TensorD& input);

/// Applies softmax row-wise.
Eigen::MatrixXd softmax_rows(const TensorD& logits);

// ---------------------------------------------------------------------------
// Training-mode forward/backward

struct TrainingCache {
    TensorD input;
    std::array<TensorD, 3> conv_in;  ///< input of each conv
    std::array<TensorD, 3> pre_relu; ///< BN output
    std::array<BatchNormCache<double>, 3> bn;
    TensorD pooled_in; ///< last block output (input of GAP)
    TensorD embedding;
    TensorD logits;
};

TrainingCache forward_train(const Model& model, const TensorD& batch);

/// Gradients for every learnable tensor, mirroring the model layout.
struct Gradients {
    std::array<TensorD, 3> kernel;
    std::array<TensorD, 3> bias;
    std::array<TensorD, 3> gamma;
    std::array<TensorD, 3> beta;
    TensorD dense_weights;
    TensorD dense_bias;
};

struct LossAndGradients {
    double loss = 0.0;       ///< mean cross-entropy plus the L2 penalty
    double data_loss = 0.0;  ///< mean cross-entropy only
    Index correct = 0;       ///< argmax hits in the batch
    Gradients grads;
};

/// Sum of squared conv and dense weights (biases and BN excluded).
double l2_penalty(const Model& model);

/// Mean batch loss = mean CE + l2_lambda * sum(w^2), and its gradient.
LossAndGradients backward(const Model& model, const TrainingCache& cache, std::span<const int> labels,
                          double l2_lambda);

/// Folds the batch statistics of a training pass into the running averages.
void update_moving_stats(Model& model, const TrainingCache& cache);

/// Visits each learnable tensor together with its gradient. `decayed` marks
/// tensors that receive the L2 penalty.
struct ParamView {
    std::string name;
    TensorD* value;
    const TensorD* grad;
    bool decayed;
};
std::vector<ParamView> learnable_params(Model& model, const Gradients& grads);

} // namespace fusion
