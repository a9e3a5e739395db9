#include "nebula/core/types.hpp"

#include <cmath>
#include <string>

#include "nebula/core/errors.hpp"

namespace nebula {

int Gaussian::sh_degree() const {
  for (int d = 0; d <= kMaxShDegree; ++d) {
    if (static_cast<int>(sh.size()) == sh_coeff_count(d)) return d;
  }
  throw ContractViolation("Gaussian " + std::to_string(id) + ": SH length " +
                          std::to_string(sh.size()) + " is not (d+1)^2 for d <= 3");
}

Mat3 Gaussian::covariance() const {
  const Mat3 r = rotation.normalized().toRotationMatrix();
  const Vec3 s2 = scale.cwiseProduct(scale);
  return r * s2.asDiagonal() * r.transpose();
}

void Gaussian::validate() const {
  const std::string tag = "Gaussian " + std::to_string(id) + ": ";
  NEBULA_EXPECT(opacity >= 0.0 && opacity <= 1.0, tag + "opacity outside [0,1]");
  NEBULA_EXPECT(scale.minCoeff() > 0.0, tag + "non-positive scale");
  NEBULA_EXPECT(std::abs(rotation.norm() - 1.0) <= 1e-6, tag + "rotation not unit-norm");
  NEBULA_EXPECT(position.allFinite() && scale.allFinite(), tag + "non-finite geometry");
  (void)sh_degree();
}

Camera Camera::from_pose(const Vec3& center, const Quat& orientation, double focal, int width,
                         int height, double near, double far) {
  Camera c;
  c.rotation = orientation.normalized().toRotationMatrix().transpose();
  c.translation = -c.rotation * center;
  c.focal = focal;
  c.width = width;
  c.height = height;
  c.principal = Vec2(width / 2.0, height / 2.0);
  c.near = near;
  c.far = far;
  return c;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                       int width, int height, double near, double far) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-12) x = z.unitOrthogonal();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 cam_to_world;
  cam_to_world.col(0) = x;
  cam_to_world.col(1) = y;
  cam_to_world.col(2) = z;
  return from_pose(eye, Quat(cam_to_world), focal, width, height, near, far);
}

void Camera::validate(int tile_size) const {
  NEBULA_EXPECT(near > 0.0 && near < far, "camera requires 0 < near < far");
  NEBULA_EXPECT(width > 0 && height > 0, "camera resolution must be positive");
  NEBULA_EXPECT(width % tile_size == 0 && height % tile_size == 0,
                "camera resolution must be divisible by the tile size");
  NEBULA_EXPECT(focal > 0.0, "focal length must be positive");
}

StereoRig::StereoRig(Camera left, double baseline) : left_(std::move(left)), baseline_(baseline) {
  NEBULA_EXPECT(baseline_ >= 0.0, "stereo baseline must be non-negative");
}

Camera StereoRig::right() const {
  Camera r = left_;
  // Right center = left center + B * left x-axis, so camera-space x shifts by -B.
  r.translation.x() -= baseline_;
  return r;
}

void RenderConfig::validate() const {
  NEBULA_EXPECT(tile_size > 0, "tile_size must be positive");
  NEBULA_EXPECT(max_disparity_px == 4.0 * tile_size,
                "max_disparity_px must equal four tiles (four offset lists)");
  NEBULA_EXPECT(alpha_star > 0.0 && alpha_star < alpha_cap && alpha_cap <= 1.0,
                "require 0 < alpha_star < alpha_cap <= 1");
  NEBULA_EXPECT(transmittance_floor > 0.0 && transmittance_floor < 1.0,
                "transmittance_floor must lie in (0,1)");
  NEBULA_EXPECT(sh_degree >= 0 && sh_degree <= kMaxShDegree, "sh_degree must be 0..3");
  NEBULA_EXPECT(tau_star > 0.0, "tau_star must be positive");
}

}  // namespace nebula
