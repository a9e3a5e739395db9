#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nebula/core/geometry.hpp"
#include "nebula/core/types.hpp"

namespace nebula::render {

// Inclusive tile rectangle; empty when x0 > x1 or y0 > y1.
struct TileRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool empty() const { return x0 > x1 || y0 > y1; }
  bool contains(int tx, int ty) const { return tx >= x0 && tx <= x1 && ty >= y0 && ty <= y1; }
};

struct TileGrid {
  int tile = 4;
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;

  TileGrid() = default;
  TileGrid(const Camera& camera, int tile_size);
  int count() const { return tiles_x * tiles_y; }
  int index(int tx, int ty) const { return ty * tiles_x + tx; }
  // Tiles holding a pixel center within [cx - r, cx + r] x [cy - r, cy + r].
  TileRect span(const Vec2& center, double radius) const;
};

struct ProjectedGaussian {
  std::uint32_t id = 0;
  Vec2 center = Vec2::Zero();  // pixels
  double depth = 0.0;          // camera-space z, shared by both eyes
  Mat2 cov = Mat2::Identity(); // screen covariance including the low-pass floor
  double conic_a = 1.0, conic_b = 0.0, conic_c = 1.0;  // inverse of cov
  Vec3 rgb = Vec3::Zero();
  double opacity = 0.0;
  // Half-width of the square screen footprint. Covers the 3-sigma disk and
  // every point where the blended alpha can reach alpha_star.
  double radius = 0.0;
  TileRect span;

  // min(cap, opacity * exp(-0.5 d^T conic d)) at a pixel-space point.
  double alpha_at(double px, double py, double cap) const {
    const double dx = px - center.x(), dy = py - center.y();
    const double power = -0.5 * (conic_a * dx * dx + 2.0 * conic_b * dx * dy + conic_c * dy * dy);
    const double a = opacity * std::exp(power);
    return a < cap ? a : cap;
  }
};

inline constexpr double kLowPassFloor = 0.3;

// Left camera used for culling only: its screen rectangle is widened by
// ceil(f*B/near) pixels on the right, the side the right camera sits on.
struct CullView {
  Camera camera;
  ScreenMargin margin;
};
CullView widened_fov(const StereoRig& rig);

// Cull against the widened view, project with the left camera, EWA
// covariance plus the low-pass floor, color toward the mid-eye point.
std::vector<ProjectedGaussian> preprocess(std::span<const Gaussian> gaussians, const StereoRig& rig,
                                          const RenderConfig& config);
// Single-eye variant: no widening, color toward the camera center.
std::vector<ProjectedGaussian> preprocess(std::span<const Gaussian> gaussians, const Camera& camera,
                                          const RenderConfig& config);

// Ascending depth, ties by ascending id.
void depth_sort(std::vector<ProjectedGaussian>& projected);
bool is_depth_sorted(std::span<const ProjectedGaussian> projected);

struct Framebuffer {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;           // 3 per pixel, row-major
  std::vector<float> transmittance; // final T per pixel

  Framebuffer() = default;
  Framebuffer(int w, int h);
  Vec3 pixel(int x, int y) const;
  std::vector<std::uint8_t> to_u8() const;
  bool operator==(const Framebuffer& o) const = default;
};

void write_ppm(const std::string& path, const Framebuffer& fb);

struct RasterStats {
  std::uint64_t alpha_evals = 0;
  std::uint64_t alpha_passes = 0;
  std::uint64_t tile_entries = 0;  // sum of per-tile list lengths
};

// Per-tile lists of indices into a depth-sorted array, in depth order.
std::vector<std::vector<std::uint32_t>> bin_tiles(std::span<const ProjectedGaussian> sorted, const TileGrid& grid);

// Front-to-back tile renderer. Throws ContractViolation on a depth inversion.
Framebuffer rasterize_mono(std::span<const ProjectedGaussian> sorted, const Camera& camera, const RenderConfig& config,
                           RasterStats* stats = nullptr, int workers = 1);

// For every tile, the indices that passed the alpha check at one or more of
// its pixels before the pixel terminated, in depth order.
std::vector<std::vector<std::uint32_t>> effective_tile_lists(std::span<const ProjectedGaussian> sorted,
                                                             const Camera& camera, const RenderConfig& config);

// d = B*f/depth. Throws ContractViolation below the near plane.
double disparity(double depth, const StereoRig& rig);

// The shared projection seen from the right eye: centers moved left by the
// disparity, spans recomputed; conic and color unchanged.
std::vector<ProjectedGaussian> right_eye_view(std::span<const ProjectedGaussian> sorted, const StereoRig& rig,
                                              const RenderConfig& config);

struct TileEntry {
  double depth = 0.0;
  std::uint32_t id = 0;
  bool operator==(const TileEntry&) const = default;
};

// Sorted, duplicate-free union of four lists each sorted by (depth, id).
std::vector<TileEntry> merge_tile_lists(const std::array<std::span<const TileEntry>, 4>& lists);

struct StereoStats {
  RasterStats left;
  RasterStats right;
  int list_tiles = 0;    // right tiles fed by offset lists
  int border_tiles = 0;  // right tiles rendered by the mono path
  std::uint64_t list_entries = 0;       // sum of merged list lengths
  std::uint64_t border_entries = 0;     // sum of border bin lengths
  std::uint64_t reused_passes = 0;      // alpha passes in list tiles
  std::uint64_t border_passes = 0;      // alpha passes in border tiles
  std::uint64_t overflow_entries = 0;   // survivors needing a fifth offset list
  std::uint64_t straddles = 0;          // survivors inserted into two offset lists

  std::uint64_t alpha_evals() const { return left.alpha_evals + right.alpha_evals; }
  double reuse_fraction() const {
    const double total = static_cast<double>(reused_passes + border_passes);
    return total > 0.0 ? static_cast<double>(reused_passes) / total : 1.0;
  }
};

struct StereoOptions {
  int workers = 1;
  bool keep_lists = false;     // fill StereoResult::merged
  bool keep_schedule = false;  // fill StereoResult::schedule
};

struct StereoResult {
  Framebuffer left;
  Framebuffer right;
  StereoStats stats;
  // Per right tile: merged list (indices into the sorted array); border tiles
  // hold their mono bin. Only with keep_lists.
  std::vector<std::vector<std::uint32_t>> merged;
  std::vector<char> border;  // per right tile
  // Per right tile: indices that passed the alpha check there. Only with keep_lists.
  std::vector<std::vector<std::uint32_t>> right_survivors;
  // Task completion order: left tile t is t, right tile r is tiles + r.
  std::vector<int> schedule;
};

// Left eye as rasterize_mono; every Gaussian passing an alpha check in left
// tile t is placed in offset list k of t for each right tile t-k its shifted
// pixels reach. Right tiles blend the 4-way merge of their source lists; the
// three rightmost tile columns have no left source and use the mono path.
StereoResult rasterize_stereo(std::span<const ProjectedGaussian> sorted, const StereoRig& rig,
                              const RenderConfig& config, const StereoOptions& options = {});

}  // namespace nebula::render
