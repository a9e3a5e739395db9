#pragma once

#include <cstdint>
#include <vector>

#include "nebula/core/types.hpp"

namespace nebula::scene {

// A city-like block grid: every cell holds one building cluster plus a patch
// of ground splats.
struct SyntheticSceneSpec {
  int cells_x = 10;
  int cells_y = 10;
  int gaussians_per_cell = 50;
  double cell_size = 20.0;  // meters
  int sh_degree = 1;
  std::uint64_t seed = 1;
};

// Deterministic for a fixed spec. Throws ContractViolation on zero extents.
std::vector<Gaussian> generate_synthetic_scene(const SyntheticSceneSpec& spec);

}  // namespace nebula::scene
