#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace sfkd {

/// Physical vehicle state: planar position, heading, forward speed.
struct VehicleState {
    double px = 0.0;   // position x [m]
    double py = 0.0;   // position y [m]
    double psi = 0.0;  // heading [rad], wrapped to (-pi, pi]
    double v = 0.0;    // forward speed [m/s], >= 0
};

/// Commanded control: front steering angle and longitudinal acceleration.
struct ControlInput {
    double delta = 0.0;  // steering angle [rad]
    double a = 0.0;      // longitudinal acceleration [m/s^2]
};

/// Exogenous environment condition: tire friction and lateral wind.
struct EnvInput {
    double mu = 0.9;  // friction coefficient, in [0.3, 0.9]
    double w = 0.0;   // lateral wind speed [m/s], |w| <= 8
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double x) {
    double y = std::fmod(x + M_PI, 2.0 * M_PI);
    if (y <= 0.0) y += 2.0 * M_PI;
    return y - M_PI;
}

inline bool is_finite(double x) { return std::isfinite(x); }

inline bool is_finite(const VehicleState& s) {
    return std::isfinite(s.px) && std::isfinite(s.py) && std::isfinite(s.psi) && std::isfinite(s.v);
}

inline bool is_finite(const ControlInput& u) {
    return std::isfinite(u.delta) && std::isfinite(u.a);
}

inline bool is_finite(const EnvInput& e) {
    return std::isfinite(e.mu) && std::isfinite(e.w);
}

}  // namespace sfkd
