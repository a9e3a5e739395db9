#include <algorithm>
#include <cmath>
#include <fstream>

#include "nebula/core/errors.hpp"
#include "nebula/core/parallel.hpp"
#include "nebula/core/sh.hpp"
#include "nebula/render/render.hpp"
#include "tile_render.hpp"

namespace nebula::render {

TileGrid::TileGrid(const Camera& camera, int tile_size)
    : tile(tile_size),
      width(camera.width),
      height(camera.height),
      tiles_x((camera.width + tile_size - 1) / tile_size),
      tiles_y((camera.height + tile_size - 1) / tile_size) {
  NEBULA_EXPECT(tile_size > 0 && camera.width > 0 && camera.height > 0, "tile grid: invalid dimensions");
}

TileRect TileGrid::span(const Vec2& center, double radius) const {
  // Pixel x has its center at x + 0.5.
  const double px0 = std::ceil(center.x() - radius - 0.5), px1 = std::floor(center.x() + radius - 0.5);
  const double py0 = std::ceil(center.y() - radius - 0.5), py1 = std::floor(center.y() + radius - 0.5);
  if (!(px1 >= 0.0 && py1 >= 0.0 && px0 <= width - 1.0 && py0 <= height - 1.0) || px0 > px1 || py0 > py1) return {};
  const int x0 = static_cast<int>(std::max(px0, 0.0)), x1 = static_cast<int>(std::min(px1, width - 1.0));
  const int y0 = static_cast<int>(std::max(py0, 0.0)), y1 = static_cast<int>(std::min(py1, height - 1.0));
  return {x0 / tile, y0 / tile, x1 / tile, y1 / tile};
}

// ---------------------------------------------------------------------------
// Preprocessing

CullView widened_fov(const StereoRig& rig) {
  const Camera& left = rig.left();
  ScreenMargin m;
  m.right = std::ceil(rig.baseline() * left.focal / left.near);
  return {left, m};
}

namespace {

std::vector<ProjectedGaussian> project_all(std::span<const Gaussian> gaussians, const Camera& camera,
                                           const ScreenMargin& margin, const Vec3& eye, const RenderConfig& config) {
  config.validate();
  const TileGrid grid(camera, config.tile_size);
  const double f = camera.focal;
  std::vector<ProjectedGaussian> out;
  out.reserve(gaussians.size());
  for (const Gaussian& g : gaussians) {
    if (g.opacity < config.alpha_star) continue;  // can never pass the alpha check
    if (!frustum_test(camera, g, margin)) continue;
    const Vec3 pc = camera.to_camera(g.position);
    const double z = pc.z();
    ProjectedGaussian p;
    p.id = g.id;
    p.depth = z;
    p.center = Vec2(f * pc.x() / z + camera.principal.x(), f * pc.y() / z + camera.principal.y());

    Eigen::Matrix<double, 2, 3> J;
    J << f / z, 0.0, -f * pc.x() / (z * z), 0.0, f / z, -f * pc.y() / (z * z);
    const Mat3 cam_cov = camera.rotation * g.covariance() * camera.rotation.transpose();
    Mat2 cov = J * cam_cov * J.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov += kLowPassFloor * Mat2::Identity();
    p.cov = cov;
    const double a = cov(0, 0), b = cov(0, 1), c = cov(1, 1);
    const double det = a * c - b * b;
    p.conic_a = c / det;
    p.conic_b = -b / det;
    p.conic_c = a / det;

    p.opacity = g.opacity;
    const double lambda_max = 0.5 * (a + c) + std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    const double q_max = 2.0 * std::log(g.opacity / config.alpha_star);
    p.radius = std::sqrt(lambda_max) * std::max(3.0, std::sqrt(std::max(q_max, 0.0)));
    p.radius = p.radius * (1.0 + 1e-9) + 1e-9;
    p.span = grid.span(p.center, p.radius);

    const Vec3 dir = (g.position - eye).normalized();
    p.rgb = evaluate_sh(g.sh, dir, std::min(config.sh_degree, g.sh_degree()));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<ProjectedGaussian> preprocess(std::span<const Gaussian> gaussians, const StereoRig& rig,
                                          const RenderConfig& config) {
  const CullView view = widened_fov(rig);
  const Camera& left = rig.left();
  const Vec3 mid_eye = left.position() + 0.5 * rig.baseline() * left.rotation.transpose().col(0);
  return project_all(gaussians, left, view.margin, mid_eye, config);
}

std::vector<ProjectedGaussian> preprocess(std::span<const Gaussian> gaussians, const Camera& camera,
                                          const RenderConfig& config) {
  return project_all(gaussians, camera, ScreenMargin{}, camera.position(), config);
}

namespace {

bool depth_less(const ProjectedGaussian& a, const ProjectedGaussian& b) {
  return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
}

}  // namespace

void depth_sort(std::vector<ProjectedGaussian>& projected) {
  std::stable_sort(projected.begin(), projected.end(), depth_less);
}

bool is_depth_sorted(std::span<const ProjectedGaussian> projected) {
  for (std::size_t i = 1; i < projected.size(); ++i)
    if (depth_less(projected[i], projected[i - 1])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Framebuffer

Framebuffer::Framebuffer(int w, int h)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0f),
      transmittance(static_cast<std::size_t>(w) * h, 1.0f) {}

Vec3 Framebuffer::pixel(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

std::vector<std::uint8_t> Framebuffer::to_u8() const {
  std::vector<std::uint8_t> out(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

void write_ppm(const std::string& path, const Framebuffer& fb) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P6\n" << fb.width << ' ' << fb.height << "\n255\n";
  const auto bytes = fb.to_u8();
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Mono rasterization

std::vector<std::vector<std::uint32_t>> bin_tiles(std::span<const ProjectedGaussian> sorted, const TileGrid& grid) {
  std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(grid.count()));
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const TileRect& s = sorted[i].span;
    for (int ty = s.y0; ty <= s.y1; ++ty)
      for (int tx = s.x0; tx <= s.x1; ++tx) bins[grid.index(tx, ty)].push_back(static_cast<std::uint32_t>(i));
  }
  return bins;
}

namespace detail {

void render_tile(std::span<const ProjectedGaussian> gs, std::span<const std::uint32_t> list, int tx, int ty,
                 const TileGrid& grid, const RenderConfig& cfg, Framebuffer& fb, std::vector<char>* passed,
                 RasterStats& stats) {
  if (passed) passed->assign(list.size(), 0);
  const int x_end = std::min((tx + 1) * grid.tile, grid.width);
  const int y_end = std::min((ty + 1) * grid.tile, grid.height);
  for (int y = ty * grid.tile; y < y_end; ++y) {
    for (int x = tx * grid.tile; x < x_end; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double T = 1.0;
      Vec3 C = Vec3::Zero();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const ProjectedGaussian& g = gs[list[i]];
        const double alpha = g.alpha_at(px, py, cfg.alpha_cap);
        ++stats.alpha_evals;
        if (alpha < cfg.alpha_star) continue;
        ++stats.alpha_passes;
        if (passed) (*passed)[i] = 1;
        C += g.rgb * (alpha * T);
        T *= 1.0 - alpha;
        if (T < cfg.transmittance_floor) break;
      }
      const std::size_t p = static_cast<std::size_t>(y) * fb.width + x;
      for (int c = 0; c < 3; ++c) fb.rgb[p * 3 + c] = static_cast<float>(std::clamp(C[c], 0.0, 1.0));
      fb.transmittance[p] = static_cast<float>(T);
    }
  }
  stats.tile_entries += list.size();
}

void sum_into(RasterStats& acc, const RasterStats& s) {
  acc.alpha_evals += s.alpha_evals;
  acc.alpha_passes += s.alpha_passes;
  acc.tile_entries += s.tile_entries;
}

}  // namespace detail

Framebuffer rasterize_mono(std::span<const ProjectedGaussian> sorted, const Camera& camera, const RenderConfig& config,
                           RasterStats* stats, int workers) {
  config.validate();
  NEBULA_EXPECT(is_depth_sorted(sorted), "rasterize_mono: input is not depth-sorted");
  const TileGrid grid(camera, config.tile_size);
  const auto bins = bin_tiles(sorted, grid);
  Framebuffer fb(camera.width, camera.height);
  std::vector<RasterStats> per_tile(bins.size());
  parallel_dispatch(bins.size(), workers, [&](std::size_t t, int) {
    const int tx = static_cast<int>(t) % grid.tiles_x, ty = static_cast<int>(t) / grid.tiles_x;
    detail::render_tile(sorted, bins[t], tx, ty, grid, config, fb, nullptr, per_tile[t]);
  });
  if (stats) {
    *stats = {};
    for (const auto& s : per_tile) detail::sum_into(*stats, s);
  }
  return fb;
}

std::vector<std::vector<std::uint32_t>> effective_tile_lists(std::span<const ProjectedGaussian> sorted,
                                                             const Camera& camera, const RenderConfig& config) {
  config.validate();
  NEBULA_EXPECT(is_depth_sorted(sorted), "effective_tile_lists: input is not depth-sorted");
  const TileGrid grid(camera, config.tile_size);
  const auto bins = bin_tiles(sorted, grid);
  Framebuffer fb(camera.width, camera.height);
  std::vector<std::vector<std::uint32_t>> out(bins.size());
  std::vector<char> passed;
  RasterStats stats;
  for (std::size_t t = 0; t < bins.size(); ++t) {
    detail::render_tile(sorted, bins[t], static_cast<int>(t) % grid.tiles_x, static_cast<int>(t) / grid.tiles_x, grid,
                        config, fb, &passed, stats);
    for (std::size_t i = 0; i < bins[t].size(); ++i)
      if (passed[i]) out[t].push_back(bins[t][i]);
  }
  return out;
}

}  // namespace nebula::render
