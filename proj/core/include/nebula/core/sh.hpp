#pragma once

#include <span>

#include "nebula/core/types.hpp"

namespace nebula {

// Real SH basis constants as used by the reference 3DGS rasterizer.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

// Color = 0.5 + sum_k basis_k(dir) * sh_k, clamped to [0,1]. Uses the first
// (degree+1)^2 coefficients; throws ContractViolation if fewer are stored.
Vec3 evaluate_sh(std::span<const Vec3> sh, const Vec3& view_dir, int degree);

}  // namespace nebula
