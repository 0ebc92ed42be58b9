#include "fusion/power.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fusion/errors.hpp"

namespace fusion {

void PowerConfig::validate() const
{
    if (p_sensor_ir < 0 || p_sensor_tof < 0 || p_mcu_active < 0 || p_mcu_idle < 0)
        throw ConfigError("power terms must be non-negative");
    if (!(frame_rate > 0))
        throw ConfigError("frame_rate must be positive");
    if (inference_latency < 0)
        throw ConfigError("inference latency must be non-negative");
    if (!(battery_energy > 0))
        throw ConfigError("battery energy must be positive");
    const double period_ms = 1000.0 / frame_rate;
    if (inference_latency >= period_ms)
        throw ConfigError("inference latency " + std::to_string(inference_latency) + " ms does not fit the " +
                          std::to_string(period_ms) + " ms frame period");
}

PowerEstimate estimate(const PowerConfig& c)
{
    c.validate();
    PowerEstimate e;
    e.duty_cycle = c.inference_latency * 1e-3 * c.frame_rate;
    e.mean_power = c.p_sensor_ir + c.p_sensor_tof + e.duty_cycle * c.p_mcu_active + (1.0 - e.duty_cycle) * c.p_mcu_idle;
    e.battery_life = c.battery_energy / e.mean_power;
    return e;
}

void to_json(nlohmann::json& j, const PowerConfig& c)
{
    j = {{"p_sensor_ir", c.p_sensor_ir},   {"p_sensor_tof", c.p_sensor_tof},
         {"p_mcu_active", c.p_mcu_active}, {"p_mcu_idle", c.p_mcu_idle},
         {"frame_rate", c.frame_rate},     {"inference_latency", c.inference_latency},
         {"battery_energy", c.battery_energy}};
}

void from_json(const nlohmann::json& j, PowerConfig& c)
{
    const PowerConfig d;
    c.p_sensor_ir = j.value("p_sensor_ir", d.p_sensor_ir);
    c.p_sensor_tof = j.value("p_sensor_tof", d.p_sensor_tof);
    c.p_mcu_active = j.value("p_mcu_active", d.p_mcu_active);
    c.p_mcu_idle = j.value("p_mcu_idle", d.p_mcu_idle);
    c.frame_rate = j.value("frame_rate", d.frame_rate);
    c.inference_latency = j.value("inference_latency", d.inference_latency);
    c.battery_energy = j.value("battery_energy", d.battery_energy);
}

namespace {

std::string trim(std::string s)
{
    const auto ws = [](unsigned char ch) { return std::isspace(ch); };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

double parse_number(const std::string& field, int line)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size())
            throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw FormatError("latency table line " + std::to_string(line) + ": '" + field + "' is not a number");
    }
}

} // namespace

std::vector<LatencyEntry> parse_latency_csv(std::istream& in)
{
    std::vector<LatencyEntry> rows;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        line = trim(line);
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');)
            fields.push_back(trim(f));
        if (fields.size() != 4)
            throw FormatError("latency table line " + std::to_string(n) + ": expected 4 fields, got " +
                              std::to_string(fields.size()));
        if (fields[0] == "strategy")
            continue; // header
        rows.push_back({fields[0], fields[1], parse_number(fields[2], n), parse_number(fields[3], n)});
    }
    return rows;
}

std::vector<LatencyEntry> read_latency_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open latency table " + path);
    return parse_latency_csv(in);
}

std::vector<StrategyEstimate> compare_strategies(const std::vector<LatencyEntry>& table, const PowerConfig& base)
{
    std::vector<StrategyEstimate> out;
    for (const auto& row : table) {
        PowerConfig c = base;
        c.inference_latency = row.latency_ms;
        c.p_mcu_active = row.p_active_mw;
        out.push_back({row, estimate(c)});
    }
    std::stable_sort(out.begin(), out.end(), [](const StrategyEstimate& a, const StrategyEstimate& b) {
        if (a.entry.platform != b.entry.platform)
            return a.entry.platform < b.entry.platform;
        return a.estimate.mean_power < b.estimate.mean_power;
    });
    return out;
}

nlohmann::json to_json(const std::vector<StrategyEstimate>& estimates)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : estimates)
        rows.push_back({{"strategy", e.entry.strategy},
                        {"platform", e.entry.platform},
                        {"latency_ms", e.entry.latency_ms},
                        {"p_active_mw", e.entry.p_active_mw},
                        {"duty_cycle", e.estimate.duty_cycle},
                        {"mean_power_mw", e.estimate.mean_power},
                        {"battery_life_h", e.estimate.battery_life}});
    return rows;
}

std::string to_csv(const std::vector<StrategyEstimate>& estimates)
{
    std::ostringstream os;
    os.precision(10);
    os << "strategy,platform,latency_ms,p_active_mW,duty_cycle,mean_power_mW,battery_life_h\n";
    for (const auto& e : estimates)
        os << e.entry.strategy << ',' << e.entry.platform << ',' << e.entry.latency_ms << ',' << e.entry.p_active_mw
           << ',' << e.estimate.duty_cycle << ',' << e.estimate.mean_power << ',' << e.estimate.battery_life << '\n';
    return os.str();
}

} // namespace fusion
