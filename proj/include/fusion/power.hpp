#pragma once

// Duty-cycle energy model for an always-on sensing node: both sensors draw
// constant power, the MCU is active for one inference per frame and idles
// (deep sleep by default) for the rest of the frame period.

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fusion {

struct PowerConfig {
    double p_sensor_ir = 14.9;    ///< mW, thermopile array at 5 Hz
    double p_sensor_tof = 32.3;   ///< mW, 8x8 ToF ranging at 5 Hz
    double p_mcu_active = 0.0;    ///< mW while inferring
    double p_mcu_idle = 0.0;      ///< mW between inferences
    double frame_rate = 5.0;      ///< Hz
    double inference_latency = 0.0; ///< ms
    double battery_energy = 740.0;   ///< mWh: 200 mAh at a 3.7 V nominal cell

    void validate() const;
};

struct PowerEstimate {
    double duty_cycle = 0.0;   ///< fraction of the frame period the MCU is active
    double mean_power = 0.0;   ///< mW
    double battery_life = 0.0; ///< hours
};

PowerEstimate estimate(const PowerConfig& config);

void to_json(nlohmann::json& j, const PowerConfig& c);
void from_json(const nlohmann::json& j, PowerConfig& c);

/// One row of a latency table: strategy, platform, latency_ms, p_active_mW.
struct LatencyEntry {
    std::string strategy;
    std::string platform;
    double latency_ms = 0.0;
    double p_active_mw = 0.0;
};

std::vector<LatencyEntry> parse_latency_csv(std::istream& in);
std::vector<LatencyEntry> read_latency_csv(const std::string& path);

struct StrategyEstimate {
    LatencyEntry entry;
    PowerEstimate estimate;
};

/// Estimates each entry with `base` supplying the sensor, idle and battery
/// terms; sorted by platform, then mean power.
std::vector<StrategyEstimate> compare_strategies(const std::vector<LatencyEntry>& table, const PowerConfig& base);

nlohmann::json to_json(const std::vector<StrategyEstimate>& estimates);
std::string to_csv(const std::vector<StrategyEstimate>& estimates);

} // namespace fusion
