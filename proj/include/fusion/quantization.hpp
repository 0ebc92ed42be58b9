#pragma once

// Post-training int8 quantization.
//
// Weights: symmetric per output channel, int8 in [-127, 127], zero point 0.
// Activations: asymmetric per tensor, signed int8 in [-128, 127] with a zero
// point. Biases: int32 at scale input_scale * weight_scale[c]. Conv outputs
// are requantized with a Q31 fixed-point multiplier and a rounding right
// shift; ReLU is the clamp at the output zero point.
//
// Accumulator bound: the widest conv (3x3 taps over 16 input channels) sums
// 144 products of |x - zp| <= 255 and |w| <= 127, i.e. |acc| <= 4,663,440
// plus the bias, far inside int32.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fusion/data.hpp"
#include "fusion/model.hpp"

namespace fusion {

struct QuantParams {
    double scale = 1.0;
    std::int32_t zero_point = 0;

    std::int8_t quantize(double x) const;
    double dequantize(std::int32_t q) const { return scale * static_cast<double>(q - zero_point); }
    friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline constexpr double kMinScale = 1e-8;

/// Asymmetric signed-int8 parameters covering [min, max] (widened to include 0).
QuantParams activation_params(double min, double max);

/// real ~= multiplier * 2^-31 * 2^-right_shift. right_shift may be negative
/// for multipliers >= 1.
struct FixedPointMultiplier {
    std::int32_t multiplier = 0;
    std::int32_t right_shift = 0;
    friend bool operator==(const FixedPointMultiplier&, const FixedPointMultiplier&) = default;
};

FixedPointMultiplier quantize_multiplier(double real);
/// round(acc * real) computed in integer arithmetic.
std::int32_t apply_multiplier(std::int32_t acc, const FixedPointMultiplier& m);

// ---------------------------------------------------------------------------
// BN folding and calibration

/// Returns a copy with every BN absorbed into the preceding conv:
/// w' = w * gamma / sqrt(var + eps), b' = (b - mean) * gamma / sqrt(var + eps) + beta.
Model fold_batchnorm(const Model& model);

struct ActivationRange {
    double min = 0.0;
    double max = 0.0;
    friend bool operator==(const ActivationRange&, const ActivationRange&) = default;
};

/// Boundaries: model input, the three post-ReLU block outputs and the pooled
/// embedding.
inline constexpr std::size_t kBoundaryCount = 5;

struct CalibrationRanges {
    std::array<ActivationRange, kBoundaryCount> boundaries{};
    std::size_t samples = 0;

    /// Extends the ranges with the activations of another batch.
    void observe(const Model& model, const TensorD& batch);
};

/// Min/max of every boundary over a normalized NxHxWxCin calibration batch.
CalibrationRanges calibrate(const Model& model, const TensorD& calibration_batch);

// ---------------------------------------------------------------------------
// Quantized model

enum class LayerKind : std::uint8_t { conv = 0, dense = 1 };

struct QuantizedLayer {
    LayerKind kind = LayerKind::conv;
    bool relu = true;
    std::int32_t in_channels = 0;
    std::int32_t out_channels = 0;
    std::int32_t groups = 1;
    std::vector<std::int8_t> weights; ///< same row-major layout as the float tensor
    std::vector<double> weight_scales;
    std::vector<std::int8_t> weight_zero_points; ///< all zero (symmetric)
    std::vector<std::int32_t> bias;
    std::vector<FixedPointMultiplier> requant; ///< conv only: in*w/out per channel

    friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

struct QuantizedModel {
    ModelConfig config;
    NormalizationStats normalization;
    std::array<QuantParams, kBoundaryCount> activations{};
    std::array<QuantizedLayer, 3> convs;
    QuantizedLayer dense;
    FixedPointMultiplier pool_multiplier; ///< block-3 scale / (H*W * pooled scale)

    friend bool operator==(const QuantizedModel& a, const QuantizedModel& b)
    {
        return a.config.strategy.kind == b.config.strategy.kind && a.config.in_channels == b.config.in_channels &&
               a.normalization == b.normalization && a.activations == b.activations && a.convs == b.convs &&
               a.dense == b.dense && a.pool_multiplier == b.pool_multiplier;
    }
};

/// Requires a folded model (no BN) and ranges for every boundary.
QuantizedModel quantize_model(const Model& folded, const CalibrationRanges& ranges);

/// Quantizes a normalized HxWxCin input with the input boundary parameters.
std::vector<std::int8_t> quantize_input(const QuantizedModel& qm, const TensorD& input);

/// Integer forward pass; returns dequantized logits.
Eigen::VectorXd quantized_logits(const QuantizedModel& qm, std::span<const std::int8_t> input);
Eigen::VectorXd quantized_logits(const QuantizedModel& qm, const TensorD& input);
/// Softmax over the dequantized logits.
Eigen::VectorXd quantized_infer(const QuantizedModel& qm, const TensorD& input);

/// Fold, calibrate on a normalized NxHxWxCin batch and quantize.
QuantizedModel post_training_quantize(const Model& model, const TensorD& calibration_batch);

struct AgreementReport {
    std::size_t samples = 0;
    std::size_t agreed = 0;      ///< int8 argmax == float argmax
    std::size_t float_correct = 0;
    std::size_t int8_correct = 0;
    double max_prob_error = 0.0;   ///< largest |p_int8 - p_float| over samples and classes
    double mean_prob_error = 0.0;  ///< mean |p_int8 - p_float| over samples and classes
    double logit_correlation = 0.0; ///< Pearson r between float and dequantized int8 logits

    double rate() const { return samples ? static_cast<double>(agreed) / static_cast<double>(samples) : 0.0; }
};

/// Top-1 agreement between a float model and its quantized form.
AgreementReport agreement(const Model& model, const QuantizedModel& qm, const Dataset& dataset,
                          std::span<const std::size_t> indices);

/// int8 weights + int32 biases.
std::size_t weight_payload_bytes(const QuantizedModel& qm);

// ---------------------------------------------------------------------------
// QFG1 file (layout in docs/formats.md)

std::vector<std::uint8_t> encode_quantized(const QuantizedModel& qm);
QuantizedModel decode_quantized(std::span<const std::uint8_t> bytes);
void save_quantized(const QuantizedModel& qm, const std::filesystem::path& path);
QuantizedModel load_quantized(const std::filesystem::path& path);

} // namespace fusion
