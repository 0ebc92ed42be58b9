#include <doctest.h>

#include <sstream>

#include "fusion/errors.hpp"
#include "fusion/power.hpp"

using namespace fusion;

namespace {

PowerConfig f4(double latency_ms, double active_mw)
{
    PowerConfig c;
    c.inference_latency = latency_ms;
    c.p_mcu_active = active_mw;
    return c;
}

} // namespace

TEST_CASE("sensor floor and battery defaults")
{
    const PowerConfig c;
    CHECK(c.p_sensor_ir + c.p_sensor_tof == doctest::Approx(47.2));
    CHECK(c.battery_energy == doctest::Approx(200.0 * 3.7));
    CHECK(c.frame_rate == 5.0);
}

TEST_CASE("early fusion on the F4")
{
    const auto e = estimate(f4(11.56, 47.65));
    CHECK(e.duty_cycle == doctest::Approx(0.0578).epsilon(1e-12));
    CHECK(e.duty_cycle < 0.06);
    // 47.2 + 0.0578 * 47.65
    CHECK(e.mean_power == doctest::Approx(47.2 + 0.0578 * 47.65).epsilon(1e-12));
    CHECK(std::abs(e.mean_power - 49.95) <= 0.5);
    CHECK(std::abs(e.battery_life - 14.8) <= 0.3);
    CHECK(e.battery_life * e.mean_power == doctest::Approx(740.0));
}

TEST_CASE("limiting cases")
{
    CHECK(estimate(f4(11.56, 0.0)).mean_power == doctest::Approx(47.2));
    PowerConfig idle = f4(0.0, 100.0);
    idle.p_mcu_idle = 0.3;
    const auto e = estimate(idle);
    CHECK(e.duty_cycle == 0.0);
    CHECK(e.mean_power == doctest::Approx(47.5));
}

TEST_CASE("occupancy across strategies and platforms")
{
    const auto late = estimate(f4(29.03, 38.66));
    CHECK(late.duty_cycle == doctest::Approx(0.14515));
    CHECK(late.duty_cycle > estimate(f4(11.56, 47.65)).duty_cycle);
    const auto h7 = estimate(f4(1.175, 374.14));
    CHECK(h7.duty_cycle == doctest::Approx(0.005875));
    CHECK(h7.duty_cycle < 0.006);
}

TEST_CASE("mean power is monotone in latency and active power")
{
    double prev = 0.0;
    for (double lat = 0.0; lat < 190.0; lat += 10.0) {
        const double p = estimate(f4(lat, 40.0)).mean_power;
        CHECK(p >= prev);
        prev = p;
    }
    prev = 0.0;
    for (double act = 0.0; act < 500.0; act += 25.0) {
        const double p = estimate(f4(11.56, act)).mean_power;
        CHECK(p >= prev);
        prev = p;
    }
    // idle above active makes longer inference cheaper, still consistent with the formula
    PowerConfig odd = f4(50.0, 1.0);
    odd.p_mcu_idle = 10.0;
    CHECK(estimate(odd).mean_power == doctest::Approx(47.2 + 0.25 * 1.0 + 0.75 * 10.0));
}

TEST_CASE("invalid configurations")
{
    CHECK_THROWS_AS(estimate(f4(200.0, 10.0)), ConfigError); // equals the 5 Hz period
    CHECK_THROWS_AS(estimate(f4(-1.0, 10.0)), ConfigError);
    CHECK_THROWS_AS(estimate(f4(1.0, -10.0)), ConfigError);
    PowerConfig c;
    c.frame_rate = 0.0;
    CHECK_THROWS_AS(estimate(c), ConfigError);
    c = PowerConfig{};
    c.battery_energy = 0.0;
    CHECK_THROWS_AS(estimate(c), ConfigError);
}

TEST_CASE("latency table")
{
    std::istringstream in("# comment\n"
                          "strategy,platform,latency_ms,p_active_mw\n"
                          "early,F4,11.56,47.65\n"
                          "\n"
                          " late , F4 , 29.03 , 38.66 \n"
                          "early,H7,1.175,374.14\n");
    const auto t = parse_latency_csv(in);
    REQUIRE(t.size() == 3);
    CHECK(t[1].strategy == "late");
    CHECK(t[1].platform == "F4");
    CHECK(t[1].latency_ms == 29.03);

    const auto cmp = compare_strategies(t, PowerConfig{});
    REQUIRE(cmp.size() == 3);
    CHECK(cmp[0].entry.platform == "F4");
    CHECK(cmp[0].estimate.mean_power <= cmp[1].estimate.mean_power);
    CHECK(cmp[2].entry.platform == "H7");
    CHECK(to_json(cmp).size() == 3);
    CHECK(to_csv(cmp).find("early,F4") != std::string::npos);

    std::istringstream bad("strategy,platform,latency_ms,p_active_mw\nearly,F4,abc,1\n");
    CHECK_THROWS_AS(parse_latency_csv(bad), FormatError);
    std::istringstream short_row("early,F4,1\n");
    CHECK_THROWS_AS(parse_latency_csv(short_row), FormatError);
}

TEST_CASE("shipped latency table")
{
    const auto t = read_latency_csv(FUSION_DATA_DIR "/mcu_latency.csv");
    CHECK(t.size() == 10);
    for (const auto& e : t)
        if (e.strategy == "early" && e.platform == "F4") {
            CHECK(e.latency_ms == 11.56);
            CHECK(e.p_active_mw == 47.65);
        }
}

TEST_CASE("power config JSON")
{
    PowerConfig c = f4(3.0, 9.0);
    c.battery_energy = 1000.0;
    const PowerConfig back = nlohmann::json(c).get<PowerConfig>();
    CHECK(back.inference_latency == 3.0);
    CHECK(back.battery_energy == 1000.0);
}
