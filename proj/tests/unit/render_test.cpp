#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "nebula/core/errors.hpp"
#include "nebula/core/geometry.hpp"
#include "nebula/render/render.hpp"

namespace nebula::render {
namespace {

using testing::origin_camera;

ProjectedGaussian flat_splat(std::uint32_t id, Vec2 center, double depth, double opacity, Vec3 rgb,
                             const TileGrid& grid, double sigma = 1.0) {
  ProjectedGaussian p;
  p.id = id;
  p.center = center;
  p.depth = depth;
  p.cov = Mat2::Identity() * sigma * sigma;
  p.conic_a = p.conic_c = 1.0 / (sigma * sigma);
  p.conic_b = 0.0;
  p.rgb = rgb;
  p.opacity = opacity;
  p.radius = 4.0 * sigma;
  p.span = grid.span(center, p.radius);
  return p;
}

std::vector<ProjectedGaussian> sorted_projection(const std::vector<Gaussian>& gs, const StereoRig& rig,
                                                 const RenderConfig& cfg) {
  auto p = preprocess(gs, rig, cfg);
  depth_sort(p);
  return p;
}

// ---------------------------------------------------------------------------

TEST(WidenedFov, MarginMatchesDisparityCap) {
  Camera c = origin_camera(64, 64, 1000.0, 3.75);
  EXPECT_DOUBLE_EQ(widened_fov(StereoRig(c, 0.06)).margin.right, 16.0);
  EXPECT_DOUBLE_EQ(widened_fov(StereoRig(c, 0.06)).margin.left, 0.0);
}

TEST(WidenedFov, ZeroBaselineLeavesCameraUnchanged) {
  Camera c = origin_camera(64, 64, 1000.0, 3.75);
  const CullView v = widened_fov(StereoRig(c, 0.0));
  EXPECT_EQ(v.margin.right, 0.0);
  EXPECT_EQ(v.camera.rotation, c.rotation);
  EXPECT_EQ(v.camera.translation, c.translation);
}

TEST(WidenedFov, RightEyeVisibleImpliesWidenedVisible) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Camera c = origin_camera(96, 64, 80.0, 0.3);
    const StereoRig rig(c, 0.06);
    testing::SplatOptions o;
    o.depth_min = 0.1;
    o.depth_max = 30.0;
    o.screen_pad = 60.0;
    const auto gs = testing::random_splats(5000, c, seed, o);
    const CullView v = widened_fov(rig);
    int right_visible = 0;
    for (const Gaussian& g : gs) {
      if (!frustum_test(rig.right(), g, 0.0)) continue;
      ++right_visible;
      EXPECT_TRUE(frustum_test(v.camera, g, v.margin)) << "id " << g.id;
    }
    EXPECT_GT(right_visible, 100);
  }
}

// ---------------------------------------------------------------------------

TEST(Preprocess, IsotropicOnAxisCovariance) {
  const Camera c = origin_camera(64, 64, 100.0);
  Gaussian g;
  g.position = Vec3(0.0, 0.0, 5.0);
  g.scale = Vec3::Constant(0.2);
  RenderConfig cfg;
  cfg.sh_degree = 0;
  const auto p = preprocess(std::vector<Gaussian>{g}, c, cfg);
  ASSERT_EQ(p.size(), 1u);
  const double s = 100.0 * 0.2 / 5.0;
  EXPECT_NEAR(p[0].cov(0, 0), s * s + 0.3, 1e-12);
  EXPECT_NEAR(p[0].cov(1, 1), s * s + 0.3, 1e-12);
  EXPECT_NEAR(p[0].cov(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(p[0].center.x(), 32.0, 1e-12);
  EXPECT_DOUBLE_EQ(p[0].depth, 5.0);
}

TEST(Preprocess, BelowNearIsCulled) {
  const Camera c = origin_camera(64, 64, 100.0, 1.0);
  Gaussian g;
  g.position = Vec3(0.0, 0.0, 0.5);
  g.scale = Vec3::Constant(0.01);
  EXPECT_TRUE(preprocess(std::vector<Gaussian>{g}, c, RenderConfig{}).empty());
}

TEST(Preprocess, ColorUsesMidEye) {
  const Camera c = origin_camera(64, 64, 100.0);
  const StereoRig rig(c, 0.5);
  Gaussian g;
  g.position = Vec3(0.25, 0.0, 2.0);
  g.scale = Vec3::Constant(0.01);
  g.sh.assign(4, Vec3::Zero());
  g.sh[3] = Vec3(1.0, 1.0, 1.0);  // x basis
  RenderConfig cfg;
  const auto p = preprocess(std::vector<Gaussian>{g}, rig, cfg);
  ASSERT_EQ(p.size(), 1u);
  // Mid-eye at x = 0.25 looks straight down +z: the x term vanishes.
  EXPECT_NEAR(p[0].rgb.x(), 0.5, 1e-12);
}

TEST(Preprocess, SpanCoversEveryPassingPixel) {
  const Camera c = origin_camera(64, 48, 60.0, 0.3);
  RenderConfig cfg;
  testing::SplatOptions o;
  o.screen_pad = 20.0;
  o.pixel_scale_max = 9.0;
  const auto gs = testing::random_splats(400, c, 11, o);
  const auto proj = preprocess(gs, c, cfg);
  const TileGrid grid(c, cfg.tile_size);
  for (const auto& p : proj) {
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x)
        if (p.alpha_at(x + 0.5, y + 0.5, cfg.alpha_cap) >= cfg.alpha_star)
          ASSERT_TRUE(p.span.contains(x / grid.tile, y / grid.tile)) << "id " << p.id << " pixel " << x << "," << y;
  }
}

TEST(Preprocess, SpanWithinGrid) {
  const Camera c = origin_camera(64, 48, 60.0, 0.3);
  const TileGrid grid(c, 4);
  const auto proj = preprocess(testing::random_splats(500, c, 2), c, RenderConfig{});
  for (const auto& p : proj) {
    if (p.span.empty()) continue;
    EXPECT_GE(p.span.x0, 0);
    EXPECT_GE(p.span.y0, 0);
    EXPECT_LT(p.span.x1, grid.tiles_x);
    EXPECT_LT(p.span.y1, grid.tiles_y);
  }
}

// ---------------------------------------------------------------------------

TEST(DepthSort, SortedInputUnchanged) {
  const TileGrid grid(origin_camera(16, 16, 10.0), 4);
  std::vector<ProjectedGaussian> v;
  for (std::uint32_t i = 0; i < 5; ++i) v.push_back(flat_splat(i, Vec2(8, 8), 1.0 + i, 0.5, Vec3::Ones(), grid));
  auto w = v;
  depth_sort(w);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(w[i].id, v[i].id);
}

TEST(DepthSort, EqualDepthsFollowId) {
  const TileGrid grid(origin_camera(16, 16, 10.0), 4);
  std::vector<ProjectedGaussian> v;
  for (std::uint32_t i : {7u, 3u, 5u}) v.push_back(flat_splat(i, Vec2(8, 8), 2.0, 0.5, Vec3::Ones(), grid));
  depth_sort(v);
  EXPECT_EQ(v[0].id, 3u);
  EXPECT_EQ(v[1].id, 5u);
  EXPECT_EQ(v[2].id, 7u);
}

TEST(DepthSort, RandomPermutationIsSortedAndIdempotent) {
  const Camera c = origin_camera(32, 32, 30.0);
  auto v = preprocess(testing::random_splats(300, c, 9), c, RenderConfig{});
  std::mt19937_64 rng(1);
  std::shuffle(v.begin(), v.end(), rng);
  depth_sort(v);
  EXPECT_TRUE(is_depth_sorted(v));
  auto w = v;
  depth_sort(w);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(w[i].id, v[i].id);
}

// ---------------------------------------------------------------------------

TEST(RasterizeMono, SingleGaussianCenterPixel) {
  const Camera c = origin_camera(16, 16, 10.0);
  const TileGrid grid(c, 4);
  const std::vector<ProjectedGaussian> v{flat_splat(0, Vec2(8.5, 8.5), 1.0, 0.5, Vec3(1, 0, 0), grid)};
  const Framebuffer fb = rasterize_mono(v, c, RenderConfig{});
  EXPECT_EQ(fb.pixel(8, 8), Vec3(0.5, 0.0, 0.0));
  EXPECT_EQ(fb.pixel(0, 0), Vec3::Zero());
}

TEST(RasterizeMono, TwoOverlappingGaussiansBlendFrontToBack) {
  const Camera c = origin_camera(16, 16, 10.0);
  const TileGrid grid(c, 4);
  const std::vector<ProjectedGaussian> v{flat_splat(0, Vec2(8.5, 8.5), 1.0, 0.5, Vec3(1, 0, 0), grid),
                                         flat_splat(1, Vec2(8.5, 8.5), 1.0, 0.5, Vec3(1, 0, 0), grid)};
  const Framebuffer fb = rasterize_mono(v, c, RenderConfig{});
  EXPECT_EQ(fb.pixel(8, 8), Vec3(0.75, 0.0, 0.0));
  EXPECT_FLOAT_EQ(fb.transmittance[8 * 16 + 8], 0.25f);
}

TEST(RasterizeMono, UnsortedInputThrows) {
  const Camera c = origin_camera(16, 16, 10.0);
  const TileGrid grid(c, 4);
  const std::vector<ProjectedGaussian> v{flat_splat(0, Vec2(8, 8), 2.0, 0.5, Vec3::Ones(), grid),
                                         flat_splat(1, Vec2(8, 8), 1.0, 0.5, Vec3::Ones(), grid)};
  EXPECT_THROW(rasterize_mono(v, c, RenderConfig{}), ContractViolation);
}

TEST(RasterizeMono, MatchesNaiveRendererBitExactly) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Camera c = origin_camera(64, 64, 50.0, 0.3);
    RenderConfig cfg;
    auto proj = preprocess(testing::random_splats(600, c, seed), c, cfg);
    depth_sort(proj);
    const Framebuffer tiled = rasterize_mono(proj, c, cfg);
    const Framebuffer naive = testing::naive_render(proj, c, cfg);
    EXPECT_TRUE(tiled == naive) << "seed " << seed;
  }
}

TEST(RasterizeMono, WorkerCountDoesNotChangeOutput) {
  const Camera c = origin_camera(64, 64, 50.0, 0.3);
  RenderConfig cfg;
  auto proj = preprocess(testing::random_splats(800, c, 4), c, cfg);
  depth_sort(proj);
  RasterStats a, b;
  const Framebuffer one = rasterize_mono(proj, c, cfg, &a, 1);
  const Framebuffer many = rasterize_mono(proj, c, cfg, &b, 4);
  EXPECT_TRUE(one == many);
  EXPECT_EQ(a.alpha_evals, b.alpha_evals);
  EXPECT_EQ(a.alpha_passes, b.alpha_passes);
}

TEST(RasterizeMono, ColorAndTransmittanceBounds) {
  const Camera c = origin_camera(64, 64, 50.0, 0.3);
  RenderConfig cfg;
  auto proj = preprocess(testing::random_splats(2000, c, 8), c, cfg);
  depth_sort(proj);
  const Framebuffer fb = rasterize_mono(proj, c, cfg);
  for (float v : fb.rgb) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  for (float t : fb.transmittance) {
    EXPECT_GE(t, 0.0f);
    EXPECT_LE(t, 1.0f);
  }
}

// ---------------------------------------------------------------------------

TEST(Disparity, Examples) {
  const StereoRig rig(origin_camera(64, 64, 1000.0, 3.75, 500.0), 0.06);
  EXPECT_NEAR(disparity(10.0, rig), 6.0, 1e-12);
  EXPECT_NEAR(disparity(500.0, rig), 0.06 * 1000.0 / 500.0, 1e-15);
  EXPECT_NEAR(disparity(3.75, rig), 16.0, 1e-12);
  EXPECT_THROW(disparity(3.0, rig), ContractViolation);
}

TEST(Disparity, RightViewMatchesRightCameraProjection) {
  const Camera c = origin_camera(64, 64, 80.0, 0.5);
  const StereoRig rig(c, 0.06);
  const RenderConfig cfg;
  const auto gs = testing::random_splats(200, c, 3);
  auto proj = preprocess(gs, rig, cfg);
  const auto right = right_eye_view(proj, rig, cfg);
  for (std::size_t i = 0; i < proj.size(); ++i) {
    const Projection pr = project_point(rig.right(), gs[proj[i].id].position);
    EXPECT_NEAR(right[i].center.x(), pr.screen.x(), 1e-9);
    EXPECT_NEAR(right[i].center.y(), pr.screen.y(), 1e-9);
    EXPECT_NEAR(pr.depth, proj[i].depth, 1e-12);
  }
}

// ---------------------------------------------------------------------------

std::vector<TileEntry> entries(std::initializer_list<std::pair<double, std::uint32_t>> v) {
  std::vector<TileEntry> out;
  for (auto [d, id] : v) out.push_back({d, id});
  return out;
}

TEST(MergeTileLists, FourSingletons) {
  const auto a = entries({{1.0, 1}}), b = entries({{2.0, 2}}), c = entries({{3.0, 3}}), d = entries({{4.0, 4}});
  const auto m = merge_tile_lists({a, b, c, d});
  EXPECT_EQ(m, entries({{1.0, 1}, {2.0, 2}, {3.0, 3}, {4.0, 4}}));
}

TEST(MergeTileLists, DuplicateAppearsOnce) {
  const auto a = entries({{1.0, 1}, {2.0, 5}}), b = entries({{2.0, 5}});
  const auto m = merge_tile_lists({a, b, {}, {}});
  EXPECT_EQ(m, entries({{1.0, 1}, {2.0, 5}}));
}

TEST(MergeTileLists, UnsortedInputThrows) {
  const auto a = entries({{2.0, 1}, {1.0, 2}});
  EXPECT_THROW(merge_tile_lists({a, {}, {}, {}}), ContractViolation);
}

TEST(MergeTileLists, FuzzAgainstSortDedup) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10000; ++trial) {
    // Ids carry a fixed depth so duplicates agree on their key.
    std::array<std::vector<TileEntry>, 4> lists;
    for (auto& l : lists) {
      const int n = static_cast<int>(rng() % 12);
      for (int i = 0; i < n; ++i) {
        const std::uint32_t id = static_cast<std::uint32_t>(rng() % 30);
        l.push_back({static_cast<double>(id % 7), id});
      }
      std::sort(l.begin(), l.end(), [](auto& x, auto& y) { return std::tie(x.depth, x.id) < std::tie(y.depth, y.id); });
    }
    std::vector<TileEntry> all;
    for (auto& l : lists) all.insert(all.end(), l.begin(), l.end());
    std::sort(all.begin(), all.end(), [](auto& x, auto& y) { return std::tie(x.depth, x.id) < std::tie(y.depth, y.id); });
    all.erase(std::unique(all.begin(), all.end()), all.end());
    ASSERT_EQ(merge_tile_lists({lists[0], lists[1], lists[2], lists[3]}), all) << "trial " << trial;
  }
}

// ---------------------------------------------------------------------------

TEST(RasterizeStereo, ZeroBaselineRightEqualsLeft) {
  const Camera c = origin_camera(64, 48, 60.0, 0.3);
  const StereoRig rig(c, 0.0);
  RenderConfig cfg;
  const auto proj = sorted_projection(testing::random_splats(800, c, 5), rig, cfg);
  const StereoResult r = rasterize_stereo(proj, rig, cfg);
  EXPECT_TRUE(r.left == r.right);
  EXPECT_TRUE(r.left == rasterize_mono(proj, c, cfg));
}

TEST(RasterizeStereo, LayeredSceneIsBitIdenticalToIndependentRender) {
  // B*f = 4 makes every layer's disparity an exact power of two.
  const Camera c = origin_camera(96, 64, 64.0, 0.25);
  const StereoRig rig(c, 0.0625);
  RenderConfig cfg;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto proj = sorted_projection(testing::layered_splats(400, rig, seed, 0.4), rig, cfg);
    StereoOptions opt;
    opt.keep_lists = true;
    const StereoResult r = rasterize_stereo(proj, rig, cfg, opt);
    const auto right = right_eye_view(proj, rig, cfg);
    const auto oracle = effective_tile_lists(right, rig.right(), cfg);
    for (std::size_t t = 0; t < oracle.size(); ++t) {
      if (r.border[t]) continue;
      const std::set<std::uint32_t> merged(r.merged[t].begin(), r.merged[t].end());
      for (std::uint32_t g : oracle[t]) ASSERT_TRUE(merged.count(g)) << "right-only Gaussian in tile " << t;
      EXPECT_EQ(r.right_survivors[t], oracle[t]) << "tile " << t;
    }
    EXPECT_TRUE(r.right == rasterize_mono(right, rig.right(), cfg)) << "seed " << seed;
  }
}

TEST(RasterizeStereo, ListEquivalenceHoldsWhereAntecedentHolds) {
  const Camera c = origin_camera(128, 64, 100.0, 0.5);
  const StereoRig rig(c, 0.06);
  RenderConfig cfg;
  int checked = 0, violations = 0;
  long mismatched = 0, pixels = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    testing::SplatOptions o;
    o.depth_min = 0.6;
    o.depth_max = 30.0;
    const auto proj = sorted_projection(testing::random_splats(3000, c, seed, o), rig, cfg);
    StereoOptions opt;
    opt.keep_lists = true;
    const StereoResult r = rasterize_stereo(proj, rig, cfg, opt);
    const auto right = right_eye_view(proj, rig, cfg);
    const auto oracle = effective_tile_lists(right, rig.right(), cfg);
    const Framebuffer indep = rasterize_mono(right, rig.right(), cfg);
    const TileGrid grid(c, cfg.tile_size);
    for (std::size_t t = 0; t < oracle.size(); ++t) {
      const int tx = static_cast<int>(t) % grid.tiles_x, ty = static_cast<int>(t) / grid.tiles_x;
      bool tile_equal = true;
      for (int y = ty * 4; y < ty * 4 + 4; ++y)
        for (int x = tx * 4; x < tx * 4 + 4; ++x) tile_equal &= r.right.pixel(x, y) == indep.pixel(x, y);
      if (r.border[t]) {
        EXPECT_TRUE(tile_equal);
        continue;
      }
      const std::set<std::uint32_t> merged(r.merged[t].begin(), r.merged[t].end());
      const bool antecedent =
          std::all_of(oracle[t].begin(), oracle[t].end(), [&](std::uint32_t g) { return merged.count(g) > 0; });
      if (!antecedent) {
        ++violations;
        continue;
      }
      ++checked;
      EXPECT_EQ(r.right_survivors[t], oracle[t]) << "tile " << t;
      EXPECT_TRUE(tile_equal) << "tile " << t;
    }
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) {
        ++pixels;
        mismatched += r.right.pixel(x, y) != indep.pixel(x, y);
      }
  }
  EXPECT_GT(checked, violations);
  // Random depth noise disoccludes heavily; the mismatch stays confined to violating tiles.
  EXPECT_LT(static_cast<double>(mismatched), 0.1 * static_cast<double>(pixels));
}

TEST(RasterizeStereo, ScheduleRespectsDependenciesAndIsDeterministic) {
  const Camera c = origin_camera(64, 32, 60.0, 0.3);
  const StereoRig rig(c, 0.06);
  RenderConfig cfg;
  const auto proj = sorted_projection(testing::random_splats(1500, c, 3), rig, cfg);
  StereoOptions one;
  one.keep_schedule = true;
  StereoOptions many = one;
  many.workers = 6;
  const StereoResult a = rasterize_stereo(proj, rig, cfg, one);
  const StereoResult b = rasterize_stereo(proj, rig, cfg, many);
  EXPECT_TRUE(a.left == b.left);
  EXPECT_TRUE(a.right == b.right);
  EXPECT_EQ(a.stats.alpha_evals(), b.stats.alpha_evals());
  const TileGrid grid(c, 4);
  const int tiles = grid.count();
  for (const auto& sched : {a.schedule, b.schedule}) {
    ASSERT_EQ(static_cast<int>(sched.size()), 2 * tiles);
    std::vector<int> when(2 * tiles);
    for (int i = 0; i < 2 * tiles; ++i) when[sched[i]] = i;
    for (int r = 0; r < tiles; ++r) {
      const int rx = r % grid.tiles_x, ty = r / grid.tiles_x;
      if (rx >= grid.tiles_x - 3) continue;
      for (int k = 0; k < 4; ++k) EXPECT_LT(when[grid.index(rx + k, ty)], when[tiles + r]);
    }
  }
}

TEST(RasterizeStereo, RigBeyondDisparityCapThrows) {
  const Camera c = origin_camera(64, 32, 1000.0, 3.0);
  const StereoRig rig(c, 0.06);  // 20 px at the near plane
  EXPECT_THROW(rasterize_stereo({}, rig, RenderConfig{}), ContractViolation);
}

TEST(RasterizeStereo, FewerAlphaEvaluationsThanTwoMonoRenders) {
  const Camera c = origin_camera(256, 128, 200.0, 0.75);
  const StereoRig rig(c, 0.06);
  RenderConfig cfg;
  testing::SplatOptions o;
  o.depth_min = 1.0;
  o.depth_max = 40.0;
  const auto proj = sorted_projection(testing::random_splats(20000, c, 21, o), rig, cfg);
  const StereoResult s = rasterize_stereo(proj, rig, cfg);
  RasterStats l, r;
  rasterize_mono(proj, c, cfg, &l);
  rasterize_mono(right_eye_view(proj, rig, cfg), rig.right(), cfg, &r);
  EXPECT_EQ(s.stats.left.alpha_evals, l.alpha_evals);
  EXPECT_LT(s.stats.alpha_evals(), l.alpha_evals + r.alpha_evals);
  EXPECT_GT(s.stats.reuse_fraction(), 0.9);
}

}  // namespace
}  // namespace nebula::render
