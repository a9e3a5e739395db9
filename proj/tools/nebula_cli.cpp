#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nebula/codec/codec.hpp"
#include "nebula/core/errors.hpp"
#include "nebula/harness/harness.hpp"
#include "nebula/scene/lod_tree.hpp"
#include "nebula/scene/ply.hpp"
#include "nebula/scene/synthetic.hpp"
#include "nebula/stream/stream.hpp"

namespace {

using namespace nebula;

// Options shared by every command that moves a camera through a scene.
struct SessionOptions {
  std::string tree_path;
  std::string codebook_path;
  std::string trajectory_path;
  int walk_frames = 0;
  int orbit_frames = 0;
  double path_radius = 0.0;  // 0: 0.6 of the scene half-width
  double orbit_height = 8.0;
  double orbit_speed = 0.05;
  harness::ReplayConfig config;
  std::string csv = "-";
};

void add_session_options(CLI::App& cmd, SessionOptions& o, bool needs_codebook) {
  cmd.add_option("--tree", o.tree_path, "LoD tree (.nlod)")->required()->check(CLI::ExistingFile);
  if (needs_codebook)
    cmd.add_option("--codebook", o.codebook_path, "SH codebook file")->required()->check(CLI::ExistingFile);
  auto* traj = cmd.add_option("--trajectory", o.trajectory_path, "trajectory file (frame,px,py,pz,qw,qx,qy,qz,t)")
                   ->check(CLI::ExistingFile);
  auto* walk = cmd.add_option("--walk", o.walk_frames, "generate a street-level walk of N frames");
  auto* orbit = cmd.add_option("--orbit", o.orbit_frames, "generate an orbit of N frames");
  traj->excludes(walk, orbit);
  walk->excludes(orbit);
  cmd.add_option("--radius", o.path_radius, "walk/orbit radius in meters (0: 0.6 x scene half-width)");
  cmd.add_option("--orbit-height", o.orbit_height, "orbit height in meters");
  cmd.add_option("--orbit-speed", o.orbit_speed, "orbit angular speed in rad/s");

  auto& c = o.config;
  cmd.add_option("--width", c.intrinsics.width, "image width in pixels");
  cmd.add_option("--height", c.intrinsics.height, "image height in pixels");
  cmd.add_option("--focal", c.intrinsics.focal, "focal length in pixels");
  cmd.add_option("--near", c.intrinsics.near, "near plane in meters");
  cmd.add_option("--far", c.intrinsics.far, "far plane in meters");
  cmd.add_option("--baseline", c.baseline, "stereo baseline in meters");
  cmd.add_option("--tau", c.cloud.search.tau_star, "LoD pixel threshold");
  cmd.add_option("--frustum-margin", c.cloud.search.frustum_margin_px, "LoD visibility margin in pixels");
  cmd.add_option("--block-size", c.cloud.search.block_size, "nodes per search block");
  cmd.add_option("-w,--frame-interval", c.cloud.management.frame_interval, "frames between LoD rounds");
  cmd.add_option("--reuse-threshold", c.cloud.management.reuse_threshold, "frames before an unused node is evicted");
  cmd.add_option("--tile-size", c.render.tile_size, "raster tile size in pixels");
  cmd.add_option("--alpha-star", c.render.alpha_star, "alpha skip threshold");
  cmd.add_option("--max-disparity", c.render.max_disparity_px, "disparity cap in pixels");
  cmd.add_option("--sh-degree", c.render.sh_degree, "SH degree used for color");
  cmd.add_option("--fps", c.target_fps, "target frame rate");
  cmd.add_option("--rate", c.channel.rate_bps, "channel rate in bit/s");
  cmd.add_option("--energy-per-byte", c.channel.joules_per_byte, "channel energy in J/B");
  cmd.add_option("--latency", c.channel.latency_s, "channel latency in seconds");
  cmd.add_option("-j,--workers", c.workers, "worker threads for search and raster")->check(CLI::PositiveNumber);
  cmd.add_flag_function("--full-search", [&c](std::int64_t) { c.cloud.temporal = false; }, "disable temporal search");
  cmd.add_option("--csv", o.csv, "CSV output path, - for stdout");
}

harness::Trajectory make_trajectory(const SessionOptions& o, const scene::LodTree& tree) {
  if (!o.trajectory_path.empty()) return harness::load_trajectory(o.trajectory_path);
  double half = 1.0;
  if (tree.size() > 0) {
    const scene::LodNode& root = tree.node(0);
    half = std::max(root.extent * 0.7071, 1.0);
  }
  const double radius = o.path_radius > 0.0 ? o.path_radius : 0.6 * half;
  const Vec3 center = tree.size() > 0 ? Vec3(tree.node(0).gaussian.position.x(), tree.node(0).gaussian.position.y(), 0.0)
                                      : Vec3::Zero();
  if (o.orbit_frames > 0)
    return harness::orbit_trajectory(o.orbit_frames, center, radius, o.orbit_height, o.orbit_speed, o.config.target_fps);
  harness::WalkOptions walk;
  walk.center = center;
  walk.radius = radius;
  walk.fps = o.config.target_fps;
  return harness::walk_trajectory(o.walk_frames > 0 ? o.walk_frames : 1, walk);
}

std::vector<Gaussian> node_gaussians(const scene::LodTree& tree) {
  std::vector<Gaussian> all;
  all.reserve(tree.size());
  for (const auto& n : tree.nodes()) all.push_back(n.gaussian);
  return all;
}

template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  fn(out);
}

void print_exception(const std::exception& e, int depth = 0) {
  std::cerr << (depth == 0 ? "error: " : "  caused by: ") << e.what() << "\n";
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    print_exception(inner, depth + 1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nebula: LoD streaming and stereo splat rendering driver"};
  app.set_config("--config", "", "key-value config file; options go under [subcommand] sections");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  // gen-scene
  scene::SyntheticSceneSpec spec;
  std::string scene_out;
  auto* gen = app.add_subcommand("gen-scene", "generate a synthetic city as a 3DGS PLY");
  gen->add_option("--cells-x", spec.cells_x, "blocks along x");
  gen->add_option("--cells-y", spec.cells_y, "blocks along y");
  gen->add_option("--per-cell", spec.gaussians_per_cell, "Gaussians per block");
  gen->add_option("--cell-size", spec.cell_size, "block size in meters");
  gen->add_option("--sh-degree", spec.sh_degree, "SH degree")->check(CLI::Range(0, kMaxShDegree));
  gen->add_option("--seed", spec.seed, "random seed");
  gen->add_option("-o,--out", scene_out, "output PLY")->required();

  // build-tree
  std::string ply_in, tree_out;
  int bucket = 8;
  std::size_t build_target = 0;
  auto* build = app.add_subcommand("build-tree", "build a LoD tree from a PLY");
  build->add_option("-i,--in", ply_in, "input PLY")->required()->check(CLI::ExistingFile);
  build->add_option("--bucket", bucket, "leaves gathered under one parent");
  build->add_option("--partition", build_target, "also partition into subtrees of this target size (0: skip)");
  build->add_option("-o,--out", tree_out, "output .nlod")->required();

  // partition
  std::string part_in, part_out;
  std::size_t part_target = 8;
  auto* part = app.add_subcommand("partition", "partition a tree into subtrees");
  part->add_option("-i,--in", part_in, "input .nlod")->required()->check(CLI::ExistingFile);
  part->add_option("--target", part_target, "subtree target size")->check(CLI::PositiveNumber);
  part->add_option("-o,--out", part_out, "output .nlod (default: overwrite input)");

  // train-codebook
  std::string cb_tree, cb_out;
  std::size_t cb_k = 256;
  std::uint64_t cb_seed = 1;
  codec::TrainOptions cb_opts;
  auto* train = app.add_subcommand("train-codebook", "train the SH vector-quantization codebook over every node");
  train->add_option("--tree", cb_tree, "input .nlod")->required()->check(CLI::ExistingFile);
  train->add_option("-k,--entries", cb_k, "codebook entries")->check(CLI::Range(1, 65536));
  train->add_option("--seed", cb_seed, "random seed");
  train->add_option("--iterations", cb_opts.max_iterations, "Lloyd iterations");
  train->add_option("--samples", cb_opts.max_samples, "training subsample size");
  train->add_option("-j,--workers", cb_opts.workers, "worker threads");
  train->add_option("-o,--out", cb_out, "output codebook")->required();

  // replay
  SessionOptions rep;
  bool rep_verify = false;
  auto* replay_cmd = app.add_subcommand("replay", "co-simulate cloud and client over a trajectory, emit metrics CSV");
  add_session_options(*replay_cmd, rep, true);
  replay_cmd->add_flag("--verify", rep_verify, "check every temporal cut against a full search");
  replay_cmd->add_flag("--psnr", rep.config.compute_psnr, "PSNR of the client image against a lossless render");
  replay_cmd->add_flag("--times", rep.config.record_times, "record stage wall times (CSV no longer deterministic)");
  replay_cmd->add_option("--images-every", rep.config.image_every, "write PPM pairs every N frames");
  replay_cmd->add_option("--image-dir", rep.config.image_dir, "PPM output directory");
  std::string bandwidth_csv;
  replay_cmd->add_option("--bandwidth-csv", bandwidth_csv, "per-round required-rate CSV");

  // bench
  SessionOptions ben;
  auto* bench_cmd = app.add_subcommand("bench", "time full vs temporal search and stereo vs dual mono");
  add_session_options(*bench_cmd, ben, false);

  // serve
  SessionOptions srv;
  std::uint16_t port = 7878;
  int clients = 1;
  auto* serve = app.add_subcommand("serve", "stream a tree to socket clients");
  serve->add_option("--tree", srv.tree_path, "LoD tree (.nlod)")->required()->check(CLI::ExistingFile);
  serve->add_option("--codebook", srv.codebook_path, "SH codebook file")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "TCP port (0 picks one)");
  serve->add_option("--clients", clients, "clients to serve before exiting");
  serve->add_option("-w,--frame-interval", srv.config.cloud.management.frame_interval, "frames between LoD rounds");
  serve->add_option("--reuse-threshold", srv.config.cloud.management.reuse_threshold, "eviction threshold in frames");
  serve->add_option("--tau", srv.config.cloud.search.tau_star, "LoD pixel threshold");
  serve->add_option("-j,--workers", srv.config.cloud.workers, "search worker threads");

  // client
  std::string host = "127.0.0.1";
  std::uint16_t client_port = 7878;
  SessionOptions cli;
  std::string traj_tree;
  auto* client_cmd = app.add_subcommand("client", "connect to a server, render a trajectory, emit metrics CSV");
  client_cmd->add_option("--host", host, "server host");
  client_cmd->add_option("--port", client_port, "server port");
  client_cmd->add_option("--trajectory", cli.trajectory_path, "trajectory file")->required()->check(CLI::ExistingFile);
  client_cmd->add_option("--width", cli.config.intrinsics.width, "image width");
  client_cmd->add_option("--height", cli.config.intrinsics.height, "image height");
  client_cmd->add_option("--focal", cli.config.intrinsics.focal, "focal length in pixels");
  client_cmd->add_option("--near", cli.config.intrinsics.near, "near plane in meters");
  client_cmd->add_option("--far", cli.config.intrinsics.far, "far plane in meters");
  client_cmd->add_option("--baseline", cli.config.baseline, "stereo baseline in meters");
  client_cmd->add_option("-j,--workers", cli.config.workers, "raster worker threads");
  client_cmd->add_option("--csv", cli.csv, "CSV output path, - for stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto gs = scene::generate_synthetic_scene(spec);
      scene::write_ply(scene_out, gs);
      std::cerr << "wrote " << gs.size() << " Gaussians to " << scene_out << "\n";
    } else if (*build) {
      scene::LodTree tree = scene::build_lod_tree(scene::load_ply(ply_in), bucket);
      if (build_target > 0) tree.set_partition(scene::partition_subtrees(tree, build_target));
      scene::save_nlod(tree_out, tree);
      std::cerr << "tree: " << tree.size() << " nodes, " << tree.level_count() << " levels\n";
    } else if (*part) {
      scene::LodTree tree = scene::load_nlod(part_in);
      tree.set_partition(scene::partition_subtrees(tree, part_target));
      scene::save_nlod(part_out.empty() ? part_in : part_out, tree);
      std::cerr << "partition: " << tree.partition().subtree_count() << " subtrees, largest "
                << tree.partition().max_subtree_size() << ", top tree " << tree.partition().top_tree.size() << "\n";
    } else if (*train) {
      const scene::LodTree tree = scene::load_nlod(cb_tree);
      std::vector<std::vector<double>> sh;
      sh.reserve(tree.size());
      for (const auto& n : tree.nodes()) sh.push_back(codec::flatten_sh(n.gaussian));
      std::vector<double> distortion;
      const codec::Codebook book = codec::train_codebook(sh, cb_k, cb_seed, cb_opts, &distortion);
      codec::save_codebook(cb_out, book);
      std::cerr << "codebook: " << book.size() << " entries";
      if (!distortion.empty()) std::cerr << ", final distortion " << distortion.back();
      std::cerr << "\n";
    } else if (*replay_cmd) {
      const scene::LodTree tree = scene::load_nlod(rep.tree_path);
      const codec::Codebook book = codec::load_codebook(rep.codebook_path);
      rep.config.cloud.verify_search = rep_verify;
      rep.config.cloud.workers = rep.config.workers;
      const auto traj = make_trajectory(rep, tree);
      const auto res =
          harness::replay(tree, book, codec::QuantParams::fit(node_gaussians(tree)), traj, rep.config);
      with_output(rep.csv, [&](std::ostream& os) { harness::write_metrics_csv(os, res.rows); });
      if (!bandwidth_csv.empty())
        with_output(bandwidth_csv, [&](std::ostream& os) { os << res.bandwidth.to_csv(); });
      std::cerr << "frames " << res.rows.size() << ", rounds " << res.rounds.size() << ", wire bytes "
                << res.total_wire_bytes << ", energy " << res.energy_j << " J, mean overlap " << res.mean_overlap
                << ", mean rate " << res.bandwidth.mean_bps << " bit/s";
      if (rep_verify) std::cerr << ", verified " << (res.all_verified ? "yes" : "NO");
      std::cerr << "\n";
      if (rep_verify && !res.all_verified) return 3;
    } else if (*bench_cmd) {
      const scene::LodTree tree = scene::load_nlod(ben.tree_path);
      ben.config.cloud.workers = ben.config.workers;
      const auto report = harness::bench(tree, make_trajectory(ben, tree), ben.config);
      with_output(ben.csv, [&](std::ostream& os) { os << report.to_table(); });
    } else if (*serve) {
      const scene::LodTree tree = scene::load_nlod(srv.tree_path);
      const codec::Codebook book = codec::load_codebook(srv.codebook_path);
      const auto params = codec::QuantParams::fit(node_gaussians(tree));
      stream::SocketTransport::Listener listener(port);
      std::cerr << "listening on port " << listener.port() << "\n";
      for (int served = 0; served < clients; ++served) {
        auto conn = listener.accept();
        stream::CloudSession cloud(tree, book, params, srv.config.cloud);
        std::size_t messages = 0;
        while (auto m = conn->receive()) {
          ++messages;
          for (const auto& reply : cloud.handle(*m)) conn->send(reply);
        }
        std::cerr << "client " << served << " done: " << cloud.log().size() << " rounds, " << messages
                  << " messages\n";
      }
    } else if (*client_cmd) {
      const auto traj = harness::load_trajectory(cli.trajectory_path);
      const auto& in = cli.config.intrinsics;
      stream::ClientSession client(stream::ClientHello{stream::kProtocolVersion, in.focal,
                                                       static_cast<std::uint32_t>(in.width),
                                                       static_cast<std::uint32_t>(in.height), in.near, in.far});
      auto conn = stream::SocketTransport::connect(host, client_port);
      conn->send(client.hello());
      while (!client.ready()) {
        auto m = conn->receive();
        if (!m) throw ProtocolError("server closed the connection during the handshake");
        client.handle(*m);
      }
      const std::uint32_t w = client.server().management.frame_interval;
      std::vector<harness::MetricsRow> rows;
      for (std::size_t i = 0; i < traj.points.size(); ++i) {
        const auto& p = traj.points[i];
        const Camera camera = harness::camera_at(p, in);
        harness::MetricsRow row;
        row.frame = p.frame;
        if (i % w == 0) {
          const auto pose = stream::encode_pose(stream::camera_pose(camera, p.frame));
          conn->send(pose);
          auto m = conn->receive();
          if (!m) throw ProtocolError("server closed the connection at frame " + std::to_string(p.frame));
          row.lod_round = true;
          row.wire_bytes = pose.wire_size() + m->wire_size();
          if (auto ack = client.handle(*m)) {
            row.wire_bytes += ack->wire_size();
            conn->send(*ack);
          }
          row.energy_j = static_cast<double>(row.wire_bytes) * cli.config.channel.joules_per_byte;
          row.required_bps = stream::required_rate(m->wire_size(), w, cli.config.target_fps);
        }
        row.cut_size = client.subgraph().last_cut.size();
        const auto gs = client.queue_gaussians(camera);
        row.queue_size = gs.size();
        const StereoRig rig(camera, cli.config.baseline);
        auto proj = render::preprocess(gs, rig, cli.config.render);
        render::depth_sort(proj);
        render::StereoOptions opt;
        opt.workers = cli.config.workers;
        row.alpha_evals = render::rasterize_stereo(proj, rig, cli.config.render, opt).stats.alpha_evals();
        rows.push_back(row);
      }
      with_output(cli.csv, [&](std::ostream& os) { harness::write_metrics_csv(os, rows); });
    }
  } catch (const std::exception& e) {
    print_exception(e);
    return 1;
  }
  return 0;
}
