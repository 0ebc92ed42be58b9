#pragma once

// Synthetic paired thermal/depth gesture frames, the FGD1 dataset file and
// per-channel input normalization.
//
// The renderer draws each gesture as a union of axis-aligned rectangles on
// the 8x8 grid (palm plus finger strips), supersampled to get fractional
// cell occupancy. Depth is the hand distance over occupied cells and the
// background distance elsewhere; thermal is the hand temperature with a
// vertical gradient whose sign encodes palm orientation, over an ambient
// floor. Two class pairs are deliberately ambiguous in one modality:
//   One / Peace      share a thermal template (only depth separates them)
//   Stop / Stop Inv  share a depth template (only thermal orientation does)

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusion/model.hpp"
#include "fusion/rng.hpp"

namespace fusion {

using Frame = Eigen::Matrix<float, kFrameSize, kFrameSize, Eigen::RowMajor>;

enum class Gesture : int { call = 0, fist, okay, one, peace, stop, stop_inv };

inline constexpr std::array<const char*, kNumClasses> kGestureNames{"Call", "Fist", "Okay", "One",
                                                                   "Peace", "Stop", "Stop Inv"};

inline constexpr double kThermalMin = 0.0;  // sensor range, degC
inline constexpr double kThermalMax = 80.0;
inline constexpr double kDepthMin = 1.0;    // mm; ToF distances are strictly positive
inline constexpr double kDepthMax = 4000.0;

/// Synchronized thermal (degC) and depth (mm) frames plus the class label.
/// Rows run along height (top to bottom), columns along width.
struct FramePair {
    Frame thermal = Frame::Zero();
    Frame depth = Frame::Zero();
    int label = 0;

    friend bool operator==(const FramePair& a, const FramePair& b)
    {
        return a.label == b.label && a.thermal == b.thermal && a.depth == b.depth;
    }
};

struct Dataset {
    std::vector<FramePair> samples;

    std::size_t size() const { return samples.size(); }
    std::vector<int> labels() const;
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GeneratorConfig {
    int samples_per_class = 1200;
    double hand_distance_min = 150.0; ///< mm
    double hand_distance_max = 400.0; ///< mm
    double hand_temp_mean = 33.0;     ///< degC
    double hand_temp_std = 1.0;
    double ambient_temp = 23.0;
    double thermal_gradient = 2.5;           ///< degC, palm-to-fingertip swing
    double thermal_noise_std = 2.5 / 3.0;    ///< +-2.5 degC accuracy read as 3 sigma
    double depth_noise_std = 20.0;           ///< mm
    double background_depth = 1200.0;        ///< mm
    double jitter_translation = 1.0;         ///< cells, uniform in +-value
    double jitter_scale = 0.1;               ///< relative, uniform in +-value
    bool ambiguity_pairs = true;
    std::uint64_t seed = 0;

    void validate(int folds = 5) const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

/// Balanced dataset; sample i has label i % 7 and its own RNG substream, so
/// the result does not depend on generation order.
Dataset generate_dataset(const GeneratorConfig& config);
FramePair generate_sample(const GeneratorConfig& config, std::size_t index);

/// Noise-free, jitter-free render of a class at nominal distance and
/// temperature.
Frame thermal_template(Gesture g, const GeneratorConfig& config = {});
Frame depth_template(Gesture g, const GeneratorConfig& config = {});

// ---------------------------------------------------------------------------
// FGD1 file: "FGD1", u32 count, then per sample u8 label, 64 thermal and
// 64 depth float32, all little-endian, row-major frames.

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Normalization

/// Per-channel mean and population std over the given samples (channel 0 =
/// thermal, 1 = depth), std floored at 1e-6.
NormalizationStats compute_normalization(const Dataset& dataset, std::span<const std::size_t> indices);
NormalizationStats compute_normalization(const Dataset& dataset);

/// Keeps only the listed fused channels.
NormalizationStats select_channels(const NormalizationStats& stats, std::span<const Index> channels);

/// z-scored 8x8x2 tensor, channel 0 = thermal, channel 1 = depth.
TensorD apply_normalization(const FramePair& frame, const NormalizationStats& stats);

/// z-scored 8x8xCin tensor for the given fused channels; `stats` covers those
/// channels in the same order (a model's own normalization block).
TensorD model_input(const FramePair& frame, const NormalizationStats& stats, std::span<const Index> channels);
inline TensorD model_input(const FramePair& frame, const Model& model)
{
    const auto ch = model.config.strategy.input_channels();
    return model_input(frame, model.normalization, ch);
}

/// Stacks model_input for each index into an Nx8x8xCin batch.
TensorD make_batch(const Dataset& dataset, std::span<const std::size_t> indices, const NormalizationStats& stats,
                   std::span<const Index> channels);

// ---------------------------------------------------------------------------
// Augmentation

/// Both frames mirrored along the width axis; label unchanged.
FramePair hflip(const FramePair& frame);
/// hflip with probability `probability`, one draw for both channels.
FramePair augment_hflip(const FramePair& frame, Rng& rng, double probability = 0.5);

} // namespace fusion
