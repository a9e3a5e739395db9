#pragma once

#include <string>
#include <vector>

#include "nebula/core/types.hpp"

namespace nebula::scene {

// Reads the standard 3DGS vertex layout from a binary_little_endian 1.0 PLY.
// Scales are exponentiated, opacity goes through the logistic, quaternions
// (rot_0 = w) are normalized and ids follow file order. Throws FormatError
// naming a missing property and DataError with the record index on NaN.
std::vector<Gaussian> load_ply(const std::string& path);

// Inverse of load_ply: log scales, logit opacity, f_dc/f_rest channel-major.
void write_ply(const std::string& path, const std::vector<Gaussian>& gaussians);

}  // namespace nebula::scene
