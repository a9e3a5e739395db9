#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "nebula/core/errors.hpp"
#include "nebula/scene/lod_tree.hpp"
#include "nebula/scene/ply.hpp"
#include "nebula/scene/synthetic.hpp"

namespace nebula::scene {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("nebula_scene_" + name)).string();
}

Gaussian splat(std::uint32_t id, Vec3 pos, double s, double opacity) {
  Gaussian g;
  g.id = id;
  g.position = pos;
  g.scale = Vec3::Constant(s);
  g.opacity = opacity;
  g.sh = {Vec3(0.1 * id, 0.2, 0.3)};
  return g;
}

TEST(Synthetic, DeterministicForSpec) {
  SyntheticSceneSpec spec;
  spec.cells_x = spec.cells_y = 3;
  const auto a = generate_synthetic_scene(spec);
  const auto b = generate_synthetic_scene(spec);
  ASSERT_EQ(a.size(), 9u * spec.gaussians_per_cell);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, i);
    EXPECT_EQ(a[i].position, b[i].position);
    EXPECT_NO_THROW(a[i].validate());
  }
  spec.seed = 2;
  EXPECT_NE(generate_synthetic_scene(spec)[0].position, a[0].position);
}

TEST(Synthetic, ZeroCellsRejected) {
  SyntheticSceneSpec spec;
  spec.cells_x = 0;
  EXPECT_THROW(generate_synthetic_scene(spec), ContractViolation);
}

TEST(MergeGaussians, SingletonIsUnchangedApartFromId) {
  const Gaussian g = splat(3, Vec3(1, 2, 3), 0.5, 0.7);
  const Gaussian m = merge_gaussians(std::vector<Gaussian>{g}, 9);
  EXPECT_EQ(m.id, 9u);
  EXPECT_TRUE(m.position.isApprox(g.position));
  EXPECT_TRUE(m.covariance().isApprox(g.covariance(), 1e-9));
}

TEST(MergeGaussians, EqualPairMeanAndSpread) {
  // Equal weights: mean at the midpoint, covariance gains the spread of the means.
  const std::vector<Gaussian> pair{splat(0, Vec3(-1, 0, 0), 0.5, 0.5), splat(1, Vec3(1, 0, 0), 0.5, 0.5)};
  const Gaussian m = merge_gaussians(pair, 2);
  EXPECT_NEAR(m.position.norm(), 0.0, 1e-12);
  const Mat3 c = m.covariance();
  EXPECT_NEAR(c(0, 0), 0.25 + 1.0, 1e-9);
  EXPECT_NEAR(c(1, 1), 0.25, 1e-9);
  EXPECT_NEAR(c(2, 2), 0.25, 1e-9);
  EXPECT_NEAR(m.sh[0].x(), 0.05, 1e-12);
  EXPECT_GE(m.opacity, 0.5);
  EXPECT_LE(m.opacity, 1.0);
}

TEST(BuildLodTree, LeavesAreTheInputAndExtentsNest) {
  const auto input = generate_synthetic_scene(testing::city_spec(2000, 4));
  const LodTree tree = build_lod_tree(input);
  EXPECT_NO_THROW(tree.check());
  EXPECT_TRUE(tree.extents_nested());
  std::set<std::uint32_t> leaf_ids;
  std::uint32_t max_id = 0;
  for (const auto& n : tree.nodes()) {
    if (n.is_leaf()) leaf_ids.insert(n.gaussian.id);
    max_id = std::max(max_id, n.gaussian.id);
    EXPECT_GE(n.extent, 3.0 * n.gaussian.max_scale() * (1 - 1e-12));
  }
  EXPECT_EQ(leaf_ids.size(), input.size());
  EXPECT_EQ(*leaf_ids.rbegin(), input.size() - 1);
  EXPECT_EQ(max_id, tree.size() - 1);
  EXPECT_TRUE(tree.node(0).is_root());
}

TEST(BuildLodTree, SingleGaussianIsRootLeaf) {
  const LodTree tree = build_lod_tree({splat(0, Vec3::Zero(), 1.0, 0.5)});
  ASSERT_EQ(tree.size(), 1u);
  EXPECT_TRUE(tree.node(0).is_leaf());
  EXPECT_EQ(tree.level_count(), 1u);
}

TEST(BuildLodTree, EmptyInputRejected) { EXPECT_THROW(build_lod_tree({}), ContractViolation); }

TEST(Partition, CoversTreeWithBoundedSubtrees) {
  const LodTree tree = testing::city_tree(3000, 5, 8);
  const SubtreePartition& p = tree.partition();
  EXPECT_NO_THROW(p.check(tree));
  EXPECT_LE(p.max_subtree_size(), 16u);
  std::size_t covered = p.top_tree.size();
  for (const auto& m : p.members) covered += m.size();
  EXPECT_EQ(covered, tree.size());
}

TEST(Partition, OwnerConflictDetected) {
  const LodTree tree = testing::city_tree(500, 5, 8);
  std::vector<std::uint32_t> owner = tree.partition().owner;
  // Detach a subtree root's child into a different subtree: no longer connected.
  const std::uint32_t r = tree.partition().roots.at(0);
  std::uint32_t other = 1;
  for (; other < tree.partition().subtree_count(); ++other)
    if (tree.partition().roots[other] != r) break;
  ASSERT_LT(other, tree.partition().subtree_count());
  owner[tree.partition().roots[other]] = 0;
  EXPECT_THROW(SubtreePartition::from_owner(tree, owner, 8).check(tree), DataError);
}

TEST(LevelOrderLayout, ShuffledParentsRebuildSameShape) {
  const LodTree tree = testing::city_tree(400, 6, 8);
  std::vector<std::uint32_t> perm(tree.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin() + 1, perm.end(), std::mt19937(1));
  std::vector<std::uint32_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = static_cast<std::uint32_t>(i);
  std::vector<LodNode> nodes(tree.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    nodes[i] = tree.node(perm[i]);
    if (!nodes[i].is_root()) nodes[i].parent = inverse[nodes[i].parent];
  }
  const LodTree rebuilt = level_order_layout(nodes);
  EXPECT_NO_THROW(rebuilt.check());
  ASSERT_EQ(rebuilt.size(), tree.size());
  EXPECT_EQ(rebuilt.level_count(), tree.level_count());
  for (std::size_t l = 0; l + 1 < tree.level_offsets().size(); ++l)
    EXPECT_EQ(rebuilt.level_offsets()[l], tree.level_offsets()[l]);
}

TEST(LevelOrderLayout, TwoRootsRejected) {
  std::vector<LodNode> nodes(2);
  EXPECT_THROW(level_order_layout(nodes), DataError);
  nodes[0].parent = 1;
  nodes[1].parent = 0;
  EXPECT_THROW(level_order_layout(nodes), DataError);
}

TEST(Nlod, RoundTripPreservesTree) {
  const LodTree tree = testing::city_tree(600, 8, 8);
  const auto bytes = encode_nlod(tree);
  EXPECT_EQ(bytes.size(), 16u + tree.size() * kNlodRecordSize);
  const LodTree back = decode_nlod(bytes);
  EXPECT_EQ(back.uid(), tree.uid());
  ASSERT_EQ(back.size(), tree.size());
  for (std::size_t i = 0; i < tree.size(); ++i) {
    EXPECT_EQ(back.node(i).parent, tree.node(i).parent);
    EXPECT_EQ(back.node(i).extent, tree.node(i).extent);
    EXPECT_EQ(back.node(i).gaussian.position, tree.node(i).gaussian.position);
  }
  const std::string path = temp_path("rt.nlod");
  save_nlod(path, tree);
  EXPECT_EQ(load_nlod(path).uid(), tree.uid());
  std::filesystem::remove(path);
}

TEST(Nlod, CorruptionRejected) {
  auto bytes = encode_nlod(testing::city_tree(100, 8, 8));
  auto bad = bytes;
  bad[0] ^= 0xFF;
  EXPECT_THROW(decode_nlod(bad), FormatError);
  bad = bytes;
  bad.resize(bad.size() - 1);
  EXPECT_THROW(decode_nlod(bad), FormatError);
}

TEST(Ply, RoundTripWithinFloatPrecision) {
  SyntheticSceneSpec spec;
  spec.cells_x = spec.cells_y = 2;
  spec.sh_degree = 2;
  const auto in = generate_synthetic_scene(spec);
  const std::string path = temp_path("rt.ply");
  write_ply(path, in);
  const auto out = load_ply(path);
  std::filesystem::remove(path);
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_EQ(out[i].id, i);
    EXPECT_TRUE(out[i].position.isApprox(in[i].position, 1e-6));
    EXPECT_TRUE(out[i].scale.isApprox(in[i].scale, 1e-5));
    EXPECT_NEAR(out[i].opacity, in[i].opacity, 1e-5);
    EXPECT_NEAR(std::abs(out[i].rotation.dot(in[i].rotation)), 1.0, 1e-6);
    ASSERT_EQ(out[i].sh.size(), in[i].sh.size());
    for (std::size_t k = 0; k < in[i].sh.size(); ++k) EXPECT_TRUE(out[i].sh[k].isApprox(in[i].sh[k], 1e-5));
  }
}

TEST(Ply, MissingPropertyNamed) {
  const std::string path = temp_path("bad.ply");
  {
    std::ofstream f(path, std::ios::binary);
    f << "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
         "end_header\n";
    const float v[2] = {1.f, 2.f};
    f.write(reinterpret_cast<const char*>(v), sizeof v);
  }
  try {
    load_ply(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("z"), std::string::npos);
  }
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace nebula::scene
