#pragma once

#include <algorithm>

namespace rlab {

// Degree-7 smooth step: 0 below 0, 1 above 1, C^3 at both ends. The cone
// metric's curvature needs second derivatives of the flow maps, which
// contain one derivative of the step already.
inline double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double t2 = t * t;
  const double t4 = t2 * t2;
  return t4 * (35.0 - 84.0 * t + 70.0 * t2 - 20.0 * t2 * t);
}

inline double smoothstep_derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double s = t * (1.0 - t);
  return 140.0 * s * s * s;
}

inline double smoothstep_second_derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double s = t * (1.0 - t);
  return 420.0 * s * s * (1.0 - 2.0 * t);
}

// Sup norms of the first two derivatives on [0,1]: 140/64 at t=1/2, and
// 420 s^2 (1-2t) maximized at t = 1/2 - 1/(2 sqrt 5).
inline constexpr double kSmoothstepMaxSlope = 140.0 / 64.0;
inline double smoothstep_max_curvature() {
  const double t = 0.5 - 0.5 / 2.23606797749979;
  return smoothstep_second_derivative(t);
}

}  // namespace rlab
