#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "nebula/core/errors.hpp"
#include "nebula/harness/harness.hpp"

namespace nebula::harness {
namespace {

render::Framebuffer flat(int w, int h, float v) {
  render::Framebuffer fb(w, h);
  std::fill(fb.rgb.begin(), fb.rgb.end(), v);
  return fb;
}

TEST(Psnr, IdenticalImagesHitTheCap) {
  const auto a = flat(8, 8, 0.3f);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
}

TEST(Psnr, UniformOffsetOfOneTenth) {
  // MSE 0.01 -> 20 dB.
  const auto a = flat(4, 4, 0.25f), b = flat(4, 4, 0.35f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
}

TEST(Psnr, SizeMismatchThrows) { EXPECT_THROW(psnr(flat(4, 4, 0), flat(4, 5, 0)), ContractViolation); }

TEST(Overlap, Examples) {
  using V = std::vector<std::uint32_t>;
  EXPECT_DOUBLE_EQ(overlap_ratio(V{1, 2, 3, 4}, V{2, 4, 9}), 0.5);
  EXPECT_DOUBLE_EQ(overlap_ratio(V{}, V{1}), 1.0);
  EXPECT_DOUBLE_EQ(overlap_ratio(V{5}, V{}), 0.0);
  EXPECT_DOUBLE_EQ(overlap_ratio(V{1, 2}, V{1, 2}), 1.0);
}

TEST(Trajectory, RoundTripIsExact) {
  const Trajectory t = walk_trajectory(50, WalkOptions{});
  const Trajectory back = parse_trajectory(format_trajectory(t));
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back.points[i].frame, t.points[i].frame);
    EXPECT_EQ(back.points[i].position, t.points[i].position);
    EXPECT_EQ(back.points[i].orientation.coeffs(), t.points[i].orientation.coeffs());
    EXPECT_EQ(back.points[i].time, t.points[i].time);
  }
}

TEST(Trajectory, CommentsAndBlankLinesSkipped) {
  const Trajectory t = parse_trajectory("# header\n\n0,1,2,3,1,0,0,0,0  # first\n2,0,0,0,1,0,0,0,0.5\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.points[1].frame, 2u);
  EXPECT_EQ(t.points[0].position, Vec3(1, 2, 3));
}

TEST(Trajectory, MalformedInputRejected) {
  EXPECT_THROW(parse_trajectory("0,1,2,3,1,0,0,0\n"), FormatError);
  EXPECT_THROW(parse_trajectory("0,1,2,x,1,0,0,0,0\n"), FormatError);
  EXPECT_THROW(parse_trajectory("1.5,1,2,3,1,0,0,0,0\n"), FormatError);
  EXPECT_THROW(parse_trajectory("0,0,0,0,1,0,0,0,0\n0,0,0,0,1,0,0,0,0\n"), DataError);
  EXPECT_THROW(parse_trajectory("0,0,0,0,2,0,0,0,0\n"), DataError);
}

TEST(Trajectory, WalkMovesAtConfiguredSpeed) {
  WalkOptions o;
  o.radius = 30.0;
  const Trajectory t = walk_trajectory(91, o);
  double length = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) length += (t.points[i].position - t.points[i - 1].position).norm();
  EXPECT_NEAR(length, o.speed * 1.0, 1e-3);
  for (const auto& p : t.points) EXPECT_DOUBLE_EQ(p.position.z(), o.height);
}

TEST(Trajectory, OrbitLooksAtCenter) {
  const Vec3 c(3, -2, 0);
  const Trajectory t = orbit_trajectory(10, c, 20.0, 5.0, 0.1, 90.0);
  for (const auto& p : t.points) {
    const Camera cam = camera_at(p, Intrinsics{});
    const Vec3 v = cam.to_camera(c);
    EXPECT_GT(v.z(), 0.0);
    EXPECT_NEAR(v.x() / v.z(), 0.0, 1e-9);
    EXPECT_NEAR(v.y() / v.z(), 0.0, 1e-9);
  }
}

TEST(Metrics, CsvHasSchemaLineAndOneRowPerFrame) {
  std::vector<MetricsRow> rows(3);
  for (std::uint32_t i = 0; i < 3; ++i) rows[i].frame = i;
  std::ostringstream os;
  write_metrics_csv(os, rows);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# schema=nebula-metrics/1");
  std::getline(in, line);
  const std::size_t columns = std::count(line.begin(), line.end(), ',') + 1;
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',') + 1), columns);
    ++n;
  }
  EXPECT_EQ(n, 3);
}

// ---------------------------------------------------------------------------
// Replay

struct Scene {
  scene::LodTree tree;
  codec::Codebook book;
  codec::QuantParams params;
  scene::SyntheticSceneSpec spec;

  Scene(std::size_t leaves, std::uint64_t seed)
      : tree(testing::city_tree(leaves, seed, 8)), spec(testing::city_spec(leaves, seed)) {
    std::vector<Gaussian> all;
    std::vector<std::vector<double>> sh;
    for (const auto& n : tree.nodes()) {
      all.push_back(n.gaussian);
      sh.push_back(codec::flatten_sh(n.gaussian));
    }
    book = codec::train_codebook(sh, 256, seed);
    params = codec::QuantParams::fit(all);
  }

  double half_width() const { return 0.5 * spec.cells_x * spec.cell_size; }
};

Scene& small_scene() {
  static Scene s(3000, 11);
  return s;
}

ReplayConfig small_config() {
  ReplayConfig c;
  c.intrinsics.width = 64;
  c.intrinsics.height = 64;
  c.intrinsics.focal = 60.0;
  c.intrinsics.near = 0.25;
  c.cloud.verify_search = true;
  return c;
}

Trajectory static_trajectory(int frames, const Vec3& pos, const Quat& q) {
  Trajectory t;
  for (int i = 0; i < frames; ++i) t.points.push_back({static_cast<std::uint32_t>(i), pos, q, i / 90.0});
  return t;
}

TEST(Replay, SingleFrameGivesOneRow) {
  Scene& s = small_scene();
  WalkOptions o;
  o.radius = 0.6 * s.half_width();
  const ReplayResult r = replay(s.tree, s.book, s.params, walk_trajectory(1, o), small_config());
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_TRUE(r.rows[0].lod_round);
  EXPECT_GT(r.rows[0].cut_size, 0u);
  EXPECT_EQ(r.rows[0].delta_size, r.rows[0].cut_size);
  EXPECT_GT(r.rows[0].queue_size, 0u);
  EXPECT_GT(r.rows[0].alpha_evals, 0u);
  EXPECT_EQ(r.rounds.size(), 1u);
}

TEST(Replay, StaticPoseSendsNoDeltaAfterFirstRound) {
  Scene& s = small_scene();
  const Trajectory walk = walk_trajectory(1, WalkOptions{.radius = 0.6 * s.half_width()});
  const Trajectory t = static_trajectory(100, walk.points[0].position, walk.points[0].orientation);
  const ReplayResult r = replay(s.tree, s.book, s.params, t, small_config());
  ASSERT_EQ(r.rows.size(), 100u);
  std::size_t rounds = 0;
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.lod_round, row.frame % 4 == 0);
    if (!row.lod_round) {
      EXPECT_EQ(row.wire_bytes, 0u);
      continue;
    }
    ++rounds;
    if (row.frame > 0) {
      EXPECT_EQ(row.delta_size, 0u);
      EXPECT_EQ(row.delta_bytes, 0u);
      EXPECT_DOUBLE_EQ(row.overlap, 1.0);
      EXPECT_TRUE(row.verified);
    }
  }
  EXPECT_EQ(rounds, 25u);
  EXPECT_TRUE(r.all_verified);
  EXPECT_DOUBLE_EQ(r.mean_overlap, 1.0);
}

TEST(Replay, OrbitKeepsCutsStableAndVerified) {
  Scene& s = small_scene();
  const Trajectory t = orbit_trajectory(200, Vec3::Zero(), 0.6 * s.half_width(), 8.0, 0.05, 90.0);
  const ReplayResult r = replay(s.tree, s.book, s.params, t, small_config());
  EXPECT_TRUE(r.all_verified);
  EXPECT_GE(r.mean_overlap, 0.95);
  EXPECT_EQ(r.bandwidth.rows.size(), 50u);
  std::uint64_t sum = 0;
  double energy = 0.0;
  for (const auto& row : r.rows) {
    sum += row.wire_bytes;
    energy += row.energy_j;
  }
  // Everything but the handshake is attributed to some frame.
  EXPECT_LT(sum, r.total_wire_bytes);
  EXPECT_NEAR(r.energy_j - energy, static_cast<double>(r.total_wire_bytes - sum) * 100e-9, 1e-12);
}

TEST(Replay, PsnrAgainstLosslessRenderIsHigh) {
  Scene& s = small_scene();
  ReplayConfig c = small_config();
  c.compute_psnr = true;
  const ReplayResult r =
      replay(s.tree, s.book, s.params, walk_trajectory(8, WalkOptions{.radius = 0.6 * s.half_width()}), c);
  for (const auto& row : r.rows) {
    EXPECT_GT(row.psnr_db, 30.0);
    EXPECT_LE(row.psnr_db, kPsnrCap);
  }
}

TEST(Replay, CsvIsDeterministic) {
  Scene& s = small_scene();
  ReplayConfig c = small_config();
  c.workers = 3;
  const Trajectory t = walk_trajectory(24, WalkOptions{.radius = 0.6 * s.half_width()});
  std::ostringstream a, b;
  write_metrics_csv(a, replay(s.tree, s.book, s.params, t, c).rows);
  c.workers = 1;
  write_metrics_csv(b, replay(s.tree, s.book, s.params, t, c).rows);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Replay, FailureCarriesFrameId) {
  Scene& s = small_scene();
  ReplayConfig c = small_config();
  c.image_every = 5;
  c.image_dir = "/nonexistent/dir/for/images";
  const Trajectory t = walk_trajectory(8, WalkOptions{.radius = 0.6 * s.half_width()});
  try {
    replay(s.tree, s.book, s.params, t, c);
    FAIL() << "expected ReplayError";
  } catch (const ReplayError& e) {
    EXPECT_EQ(e.frame(), 0u);
  }
}

TEST(Bench, TemporalSearchAndStereoDoLessWork) {
  Scene& s = small_scene();
  ReplayConfig c = small_config();
  const Trajectory t = walk_trajectory(40, WalkOptions{.radius = 0.6 * s.half_width()});
  const BenchReport rep = bench(s.tree, t, c);
  EXPECT_EQ(rep.frames, 40u);
  EXPECT_EQ(rep.rounds, 10u);
  ASSERT_NE(rep.stage("temporal_search"), nullptr);
  EXPECT_LT(rep.stage("temporal_search")->work, rep.stage("full_search_later")->work);
  EXPECT_LT(rep.stage("stereo_raster")->work, rep.stage("mono_raster_x2")->work);
  EXPECT_EQ(rep.stage("missing"), nullptr);
  EXPECT_NE(rep.to_table().find("stereo_raster"), std::string::npos);
}

TEST(Bench, EmptyTrajectory) {
  Scene& s = small_scene();
  const BenchReport rep = bench(s.tree, Trajectory{}, small_config());
  EXPECT_EQ(rep.frames, 0u);
  for (const auto& st : rep.stages) EXPECT_EQ(st.work, 0u);
}

}  // namespace
}  // namespace nebula::harness
