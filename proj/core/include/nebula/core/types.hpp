#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace nebula {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr int kMaxShDegree = 3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// One splat. sh holds (degree+1)^2 RGB coefficient triples in the standard
// real-SH basis order (l-major, m ascending).
struct Gaussian {
  std::uint32_t id = 0;
  Vec3 position = Vec3::Zero();
  Vec3 scale = Vec3::Ones();
  Quat rotation = Quat::Identity();
  double opacity = 1.0;
  std::vector<Vec3> sh{Vec3::Zero()};

  int sh_degree() const;
  double max_scale() const { return scale.maxCoeff(); }
  // R diag(s^2) R^T
  Mat3 covariance() const;
  // Throws ContractViolation when an invariant (opacity range, positive scale,
  // unit quaternion, SH length) does not hold.
  void validate() const;
};

// Pinhole camera, x right / y down / z forward. Pose maps world to camera:
// p_cam = rotation * p_world + translation.
struct Camera {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double focal = 100.0;
  Vec2 principal = Vec2::Zero();
  int width = 64;
  int height = 64;
  double near = 0.1;
  double far = 1000.0;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 position() const { return -rotation.transpose() * translation; }

  // Builds the camera from a world-space center and a camera-to-world orientation.
  static Camera from_pose(const Vec3& center, const Quat& orientation, double focal, int width,
                          int height, double near, double far);
  // Centered principal point, looking from eye towards target with world up hint.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                        int width, int height, double near, double far);

  // Positive near/far ordering and tile-divisible resolution.
  void validate(int tile_size) const;
};

// Rectified stereo pair. The right camera is derived from the left one and
// never stored, so the rig cannot become unrectified.
class StereoRig {
 public:
  static constexpr double kDefaultBaseline = 0.06;

  StereoRig(Camera left, double baseline = kDefaultBaseline);

  const Camera& left() const { return left_; }
  Camera right() const;
  double baseline() const { return baseline_; }
  // Largest disparity any point at depth >= near can produce.
  double max_disparity() const { return baseline_ * left_.focal / left_.near; }

 private:
  Camera left_;
  double baseline_;
};

struct RenderConfig {
  int tile_size = 4;
  double tau_star = 4.0;
  double alpha_star = 1.0 / 255.0;
  double alpha_cap = 0.99;
  double transmittance_floor = 1e-4;
  double max_disparity_px = 16.0;
  int sh_degree = 1;

  void validate() const;
};

}  // namespace nebula
