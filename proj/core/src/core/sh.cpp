#include "nebula/core/sh.hpp"

#include <string>

#include "nebula/core/errors.hpp"

namespace nebula {
namespace {

constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

}  // namespace

Vec3 evaluate_sh(std::span<const Vec3> sh, const Vec3& dir, int degree) {
  NEBULA_EXPECT(degree >= 0 && degree <= kMaxShDegree, "SH degree must be 0..3");
  bool valid_count = false;
  for (int d = 0; d <= kMaxShDegree; ++d) valid_count |= sh.size() == std::size_t(sh_coeff_count(d));
  NEBULA_EXPECT(valid_count, "SH coefficient count " + std::to_string(sh.size()) +
                                 " is not (d+1)^2");
  NEBULA_EXPECT(sh.size() >= std::size_t(sh_coeff_count(degree)),
                "requested SH degree exceeds stored coefficients");

  Vec3 c = kShC0 * sh[0];
  if (degree > 0) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    c += -kShC1 * y * sh[1] + kShC1 * z * sh[2] - kShC1 * x * sh[3];
    if (degree > 1) {
      const double xx = x * x, yy = y * y, zz = z * z;
      const double xy = x * y, yz = y * z, xz = x * z;
      c += kC2[0] * xy * sh[4] + kC2[1] * yz * sh[5] + kC2[2] * (2.0 * zz - xx - yy) * sh[6] +
           kC2[3] * xz * sh[7] + kC2[4] * (xx - yy) * sh[8];
      if (degree > 2) {
        c += kC3[0] * y * (3.0 * xx - yy) * sh[9] + kC3[1] * xy * z * sh[10] +
             kC3[2] * y * (4.0 * zz - xx - yy) * sh[11] +
             kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[12] +
             kC3[4] * x * (4.0 * zz - xx - yy) * sh[13] + kC3[5] * z * (xx - yy) * sh[14] +
             kC3[6] * x * (xx - 3.0 * yy) * sh[15];
      }
    }
  }
  c.array() += 0.5;
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace nebula
