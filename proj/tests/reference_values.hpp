#pragma once

// Published per-class results for the three sensing configurations: row-percent
// confusion matrices (rows true, columns predicted) and the matching per-class
// F1 scores. Class order: Call, Fist, Okay, One, Peace, Stop, Stop Inv.

#include <array>

#include <Eigen/Dense>

namespace reference {

struct ModalityResult {
    const char* name;
    std::array<double, 49> percent;
    std::array<double, 7> f1;
};

inline const std::array<ModalityResult, 3> kModalities{{
    {"ir_only",
     {98, 0, 0, 1, 0, 1, 0,  //
      0, 84, 0, 13, 2, 1, 0, //
      1, 0, 97, 0, 0, 1, 1,  //
      0, 1, 0, 92, 7, 0, 0,  //
      0, 1, 0, 21, 78, 0, 0, //
      1, 8, 3, 0, 3, 82, 3,  //
      0, 2, 3, 2, 2, 1, 90},
     {0.98, 0.86, 0.95, 0.80, 0.81, 0.88, 0.92}},
    {"tof_only",
     {99, 0, 1, 0, 0, 0, 0,  //
      1, 87, 0, 0, 0, 8, 4,  //
      1, 1, 93, 0, 1, 1, 3,  //
      1, 1, 1, 85, 10, 0, 2, //
      2, 2, 0, 5, 87, 1, 3,  //
      0, 6, 1, 1, 0, 85, 7,  //
      1, 1, 0, 1, 0, 0, 97},
     {0.96, 0.89, 0.95, 0.88, 0.88, 0.87, 0.90}},
    {"early",
     {98, 1, 1, 0, 0, 0, 0,  //
      0, 91, 0, 0, 4, 5, 0,  //
      1, 0, 99, 0, 0, 0, 0,  //
      1, 3, 0, 84, 12, 0, 0, //
      0, 2, 0, 1, 96, 0, 1,  //
      0, 6, 0, 0, 1, 91, 2,  //
      0, 0, 1, 0, 2, 1, 96},
     {0.99, 0.89, 0.98, 0.90, 0.89, 0.92, 0.96}},
}};

inline constexpr double kEarlyMacroF1 = 0.93;

inline Eigen::MatrixXd matrix(const ModalityResult& r)
{
    Eigen::MatrixXd m(7, 7);
    for (int i = 0; i < 49; ++i)
        m(i / 7, i % 7) = r.percent[static_cast<std::size_t>(i)];
    return m;
}

} // namespace reference
