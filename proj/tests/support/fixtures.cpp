#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nebula/core/geometry.hpp"

namespace nebula::testing {

scene::SyntheticSceneSpec city_spec(std::size_t leaves, std::uint64_t seed) {
  scene::SyntheticSceneSpec spec;
  spec.gaussians_per_cell = 50;
  const int cells = std::max<int>(1, static_cast<int>(std::lround(std::sqrt(double(leaves) / spec.gaussians_per_cell))));
  spec.cells_x = spec.cells_y = cells;
  spec.gaussians_per_cell = std::max<int>(1, static_cast<int>(leaves / (std::size_t(cells) * cells)));
  spec.seed = seed;
  return spec;
}

scene::LodTree city_tree(std::size_t leaves, std::uint64_t seed, std::size_t subtree_target) {
  scene::LodTree tree = scene::build_lod_tree(scene::generate_synthetic_scene(city_spec(leaves, seed)));
  tree.set_partition(scene::partition_subtrees(tree, subtree_target));
  return tree;
}

std::vector<Camera> orbit_path(const scene::SyntheticSceneSpec& spec, int poses, double step, std::uint64_t seed,
                               int width, int height, double focal) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double half = 0.5 * spec.cells_x * spec.cell_size;
  const double radius = half * (0.5 + 0.5 * u(rng));
  const double height_m = 1.7 + 10.0 * u(rng);
  const double phase = 2.0 * M_PI * u(rng);
  std::vector<Camera> out;
  for (int i = 0; i < poses; ++i) {
    const double a = phase + step * i;
    const Vec3 eye(radius * std::cos(a), radius * std::sin(a), height_m);
    // Look along the tangent, bent inward so the city stays in view.
    const Vec3 target = eye + Vec3(-std::sin(a), std::cos(a), 0.0) * 20.0 - eye.normalized() * 8.0 - Vec3(0, 0, 3.0);
    out.push_back(Camera::look_at(eye, target, Vec3::UnitZ(), focal, width, height, 0.2, 1000.0));
  }
  return out;
}

scene::LodTree manual_tree(const std::vector<std::vector<std::uint32_t>>& children) {
  std::vector<scene::LodNode> nodes(children.size());
  for (std::uint32_t i = 0; i < children.size(); ++i)
    for (std::uint32_t c : children[i]) nodes[c].parent = i;
  std::vector<int> level(children.size(), 0);
  for (std::uint32_t i = 1; i < children.size(); ++i) level[i] = level[nodes[i].parent] + 1;
  for (std::uint32_t i = 0; i < children.size(); ++i) {
    Gaussian& g = nodes[i].gaussian;
    g.id = i;
    g.position = Vec3(0.0, 0.0, 0.0);
    g.scale = Vec3::Constant(std::ldexp(1.0, -level[i]));
    nodes[i].extent = 3.0 * g.scale.x();
  }
  return scene::level_order_layout(std::move(nodes));
}

Camera origin_camera(int width, int height, double focal, double near, double far) {
  Camera c;
  c.focal = focal;
  c.width = width;
  c.height = height;
  c.principal = Vec2(width / 2.0, height / 2.0);
  c.near = near;
  c.far = far;
  return c;
}

namespace {

Gaussian splat_at(const Camera& camera, const Vec2& screen, double depth, double sigma_px, double opacity,
                  int sh_degree, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Gaussian g;
  g.position = back_project(camera, screen, depth);
  const double world = sigma_px * depth / camera.focal;
  g.scale = Vec3(world * (0.3 + 0.7 * u(rng)), world * (0.3 + 0.7 * u(rng)), world * (0.3 + 0.7 * u(rng)));
  g.rotation = Quat(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5).normalized();
  g.opacity = opacity;
  g.sh.assign(sh_coeff_count(sh_degree), Vec3::Zero());
  g.sh[0] = Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5) * 3.0;
  for (std::size_t k = 1; k < g.sh.size(); ++k) g.sh[k] = Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5) * 0.4;
  return g;
}

}  // namespace

std::vector<Gaussian> random_splats(std::size_t n, const Camera& camera, std::uint64_t seed,
                                    const SplatOptions& o) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Gaussian> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 screen(-o.screen_pad + u(rng) * (camera.width + 2 * o.screen_pad),
                      -o.screen_pad + u(rng) * (camera.height + 2 * o.screen_pad));
    const double depth = o.depth_min + u(rng) * (o.depth_max - o.depth_min);
    const double sigma = o.pixel_scale_min + u(rng) * (o.pixel_scale_max - o.pixel_scale_min);
    const double opacity = o.opacity_min + u(rng) * (o.opacity_max - o.opacity_min);
    out.push_back(splat_at(camera, screen, depth, sigma, opacity, o.sh_degree, rng));
    out.back().id = static_cast<std::uint32_t>(i);
  }
  return out;
}

std::vector<Gaussian> layered_splats(std::size_t n, const StereoRig& rig, std::uint64_t seed, double opacity_max) {
  const Camera& cam = rig.left();
  const double bf = rig.baseline() * cam.focal;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Gaussian> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(1 << (rng() % 4));
    const Vec2 screen(10.0 + u(rng) * (cam.width - 10.0), u(rng) * cam.height);
    out.push_back(splat_at(cam, screen, bf / d, 0.5 + 1.5 * u(rng), 0.05 + u(rng) * (opacity_max - 0.05), 1, rng));
    out.back().id = static_cast<std::uint32_t>(i);
  }
  return out;
}

render::Framebuffer naive_render(std::span<const render::ProjectedGaussian> sorted, const Camera& camera,
                                 const RenderConfig& config) {
  render::Framebuffer fb(camera.width, camera.height);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      double T = 1.0;
      Vec3 C = Vec3::Zero();
      for (const auto& g : sorted) {
        const double a = g.alpha_at(x + 0.5, y + 0.5, config.alpha_cap);
        if (a < config.alpha_star) continue;
        C += g.rgb * (a * T);
        T *= 1.0 - a;
        if (T < config.transmittance_floor) break;
      }
      const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
      for (int c = 0; c < 3; ++c) fb.rgb[p * 3 + c] = static_cast<float>(std::clamp(C[c], 0.0, 1.0));
      fb.transmittance[p] = static_cast<float>(T);
    }
  }
  return fb;
}

}  // namespace nebula::testing
