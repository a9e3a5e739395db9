#include "nebula/scene/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "nebula/core/errors.hpp"
#include "nebula/core/sh.hpp"

namespace nebula::scene {
namespace {

// Facade / roof / ground colors.
constexpr std::array<std::array<double, 3>, 8> kPalette{{{0.78, 0.74, 0.66},
                                                          {0.55, 0.52, 0.50},
                                                          {0.70, 0.42, 0.32},
                                                          {0.36, 0.40, 0.48},
                                                          {0.85, 0.82, 0.76},
                                                          {0.45, 0.30, 0.22},
                                                          {0.62, 0.66, 0.70},
                                                          {0.30, 0.33, 0.30}}};
constexpr std::array<double, 3> kGround{0.35, 0.36, 0.34};

Quat align_z_to(const Vec3& normal, double spin) {
  const Quat q = Quat::FromTwoVectors(Vec3::UnitZ(), normal);
  return (q * Quat(Eigen::AngleAxisd(spin, Vec3::UnitZ()))).normalized();
}

}  // namespace

std::vector<Gaussian> generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  NEBULA_EXPECT(spec.cells_x > 0 && spec.cells_y > 0, "synthetic scene: zero grid extents");
  NEBULA_EXPECT(spec.gaussians_per_cell > 0, "synthetic scene: zero Gaussians per cell");
  NEBULA_EXPECT(spec.cell_size > 0.0, "synthetic scene: non-positive cell size");
  NEBULA_EXPECT(spec.sh_degree >= 0 && spec.sh_degree <= kMaxShDegree, "synthetic scene: SH degree 0..3");

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  const int coeffs = sh_coeff_count(spec.sh_degree);

  auto make_sh = [&](const std::array<double, 3>& base) {
    std::vector<Vec3> sh(coeffs, Vec3::Zero());
    for (int ch = 0; ch < 3; ++ch) {
      const double c = std::clamp(base[ch] + uni(-0.04, 0.04), 0.0, 1.0);
      sh[0][ch] = (c - 0.5) / kShC0;
    }
    for (int k = 1; k < coeffs; ++k)
      for (int ch = 0; ch < 3; ++ch) sh[k][ch] = uni(-0.05, 0.05);
    return sh;
  };

  std::vector<Gaussian> out;
  out.reserve(std::size_t(spec.cells_x) * spec.cells_y * spec.gaussians_per_cell);
  const double half_x = 0.5 * spec.cells_x * spec.cell_size;
  const double half_y = 0.5 * spec.cells_y * spec.cell_size;

  for (int cy = 0; cy < spec.cells_y; ++cy) {
    for (int cx = 0; cx < spec.cells_x; ++cx) {
      const Vec3 cell_origin(cx * spec.cell_size - half_x, cy * spec.cell_size - half_y, 0.0);
      const double margin = 0.15 * spec.cell_size;
      const double bw = uni(0.25, 0.6) * spec.cell_size;
      const double bd = uni(0.25, 0.6) * spec.cell_size;
      const double bh = uni(0.3, 1.8) * spec.cell_size;
      const Vec3 bmin = cell_origin + Vec3(uni(margin, spec.cell_size - margin - bw),
                                           uni(margin, spec.cell_size - margin - bd), 0.0);
      const auto& color = kPalette[static_cast<std::size_t>(u01(rng) * kPalette.size()) % kPalette.size()];

      for (int i = 0; i < spec.gaussians_per_cell; ++i) {
        Gaussian g;
        g.id = static_cast<std::uint32_t>(out.size());
        const double splat = uni(0.04, 0.02 * spec.cell_size + 0.04);
        Vec3 normal;
        std::array<double, 3> base = color;
        if (u01(rng) < 0.2) {
          // Ground patch across the whole cell.
          g.position = cell_origin + Vec3(uni(0, spec.cell_size), uni(0, spec.cell_size), 0.0);
          normal = Vec3::UnitZ();
          base = kGround;
        } else {
          // Building surface: four walls and a roof, area-weighted.
          const double walls_x = bw * bh, walls_y = bd * bh, roof = bw * bd;
          const double pick = u01(rng) * (2 * walls_x + 2 * walls_y + roof);
          const double s = u01(rng), t = u01(rng);
          if (pick < 2 * walls_x) {
            const bool far = pick >= walls_x;
            g.position = bmin + Vec3(s * bw, far ? bd : 0.0, t * bh);
            normal = far ? Vec3(Vec3::UnitY()) : Vec3(-Vec3::UnitY());
          } else if (pick < 2 * walls_x + 2 * walls_y) {
            const bool far = pick >= 2 * walls_x + walls_y;
            g.position = bmin + Vec3(far ? bw : 0.0, s * bd, t * bh);
            normal = far ? Vec3(Vec3::UnitX()) : Vec3(-Vec3::UnitX());
          } else {
            g.position = bmin + Vec3(s * bw, t * bd, bh);
            normal = Vec3::UnitZ();
          }
        }
        g.scale = Vec3(splat * uni(0.6, 1.4), splat * uni(0.6, 1.4), splat * uni(0.08, 0.2));
        g.rotation = align_z_to(normal, uni(0.0, 2.0 * M_PI));
        g.opacity = uni(0.45, 0.95);
        g.sh = make_sh(base);
        out.push_back(std::move(g));
      }
    }
  }
  return out;
}

}  // namespace nebula::scene
