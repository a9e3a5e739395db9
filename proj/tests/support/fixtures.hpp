#pragma once

#include <cstdint>
#include <vector>

#include "nebula/core/types.hpp"
#include "nebula/render/render.hpp"
#include "nebula/scene/lod_tree.hpp"
#include "nebula/scene/synthetic.hpp"

namespace nebula::testing {

// Synthetic city with roughly `leaves` Gaussians on a square grid of cells.
scene::SyntheticSceneSpec city_spec(std::size_t leaves, std::uint64_t seed);

// Built and partitioned tree over city_spec(leaves, seed).
scene::LodTree city_tree(std::size_t leaves, std::uint64_t seed, std::size_t subtree_target = 64);

// Camera path circling the scene center at walking-speed steps, looking
// slightly down at the city. `step` is the arc advance per pose in radians.
std::vector<Camera> orbit_path(const scene::SyntheticSceneSpec& spec, int poses, double step, std::uint64_t seed,
                               int width = 128, int height = 128, double focal = 120.0);

// Hand-built tree: node i has children given by `children[i]`, positions on a
// line, extents halving per level. Nodes must be listed in level order.
scene::LodTree manual_tree(const std::vector<std::vector<std::uint32_t>>& children);

// Camera at the world origin looking down +z with a centered principal point.
Camera origin_camera(int width, int height, double focal, double near = 0.25, double far = 100.0);

struct SplatOptions {
  double depth_min = 2.0;
  double depth_max = 20.0;
  double pixel_scale_min = 0.5;  // projected standard deviation, pixels
  double pixel_scale_max = 4.0;
  double opacity_min = 0.05;
  double opacity_max = 1.0;
  double screen_pad = 8.0;  // centers may fall this far outside the image
  int sh_degree = 1;
};

// Random anisotropic splats scattered through the camera's view.
std::vector<Gaussian> random_splats(std::size_t n, const Camera& camera, std::uint64_t seed,
                                    const SplatOptions& options = {});

// Splats for origin_camera() placed on fronto-parallel layers whose disparity
// under `rig` is an exact power of two (1, 2, 4 or 8 px). Left x >= 8 px.
std::vector<Gaussian> layered_splats(std::size_t n, const StereoRig& rig, std::uint64_t seed, double opacity_max);

// Every pixel blends every Gaussian in order; no tiles, no spans.
render::Framebuffer naive_render(std::span<const render::ProjectedGaussian> sorted, const Camera& camera,
                                 const RenderConfig& config);

}  // namespace nebula::testing
