#include "nebula/core/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace nebula {

Projection project_point(const Camera& camera, const Vec3& p) {
  const Vec3 pc = camera.to_camera(p);
  Projection out;
  out.depth = pc.z();
  if (pc.z() <= 0.0) {
    out.behind = true;
    return out;
  }
  out.screen = Vec2(camera.focal * pc.x() / pc.z() + camera.principal.x(),
                    camera.focal * pc.y() / pc.z() + camera.principal.y());
  return out;
}

Vec3 back_project(const Camera& camera, const Vec2& screen, double depth) {
  const Vec3 pc((screen.x() - camera.principal.x()) * depth / camera.focal,
                (screen.y() - camera.principal.y()) * depth / camera.focal, depth);
  return camera.rotation.transpose() * (pc - camera.translation);
}

bool frustum_test(const Camera& camera, const Gaussian& g, const ScreenMargin& margin) {
  const Projection pr = project_point(camera, g.position);
  if (pr.behind || pr.depth < camera.near || pr.depth > camera.far) return false;
  return pr.screen.x() >= -margin.left && pr.screen.x() <= camera.width + margin.right &&
         pr.screen.y() >= -margin.top && pr.screen.y() <= camera.height + margin.bottom;
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  return Quat(a).angularDistance(Quat(b));
}

}  // namespace nebula
