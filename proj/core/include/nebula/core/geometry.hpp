#pragma once

#include "nebula/core/types.hpp"

namespace nebula {

struct Projection {
  Vec2 screen = Vec2::Zero();
  double depth = 0.0;
  bool behind = false;  // depth <= 0; screen is meaningless
};

Projection project_point(const Camera& camera, const Vec3& p);

// Inverse of project_point for a known depth.
Vec3 back_project(const Camera& camera, const Vec2& screen, double depth);

// Per-side screen rectangle extension, in pixels.
struct ScreenMargin {
  double left = 0.0;
  double right = 0.0;
  double top = 0.0;
  double bottom = 0.0;

  static ScreenMargin uniform(double m) { return {m, m, m, m}; }
};

// True iff the projected center lies in the margin-expanded screen rectangle
// and near <= depth <= far.
bool frustum_test(const Camera& camera, const Gaussian& g, const ScreenMargin& margin);
inline bool frustum_test(const Camera& camera, const Gaussian& g, double margin) {
  return frustum_test(camera, g, ScreenMargin::uniform(margin));
}

// Rotation angle (radians) between two camera orientations.
double rotation_angle(const Mat3& a, const Mat3& b);

}  // namespace nebula
