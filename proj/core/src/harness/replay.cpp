#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "nebula/core/errors.hpp"
#include "nebula/harness/harness.hpp"

namespace nebula::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::vector<Gaussian> tree_gaussians(const scene::LodTree& tree, std::span<const std::uint32_t> ids) {
  std::vector<Gaussian> out;
  out.reserve(ids.size());
  for (std::uint32_t id : ids) {
    out.push_back(tree.node(id).gaussian);
    out.back().id = id;
  }
  return out;
}

std::string frame_image_path(const std::string& dir, std::uint32_t frame, const char* eye) {
  char name[64];
  std::snprintf(name, sizeof name, "frame_%06u_%s.ppm", frame, eye);
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

ReplayResult replay(const scene::LodTree& tree, const codec::Codebook& book, const codec::QuantParams& params,
                    const Trajectory& trajectory, const ReplayConfig& config) {
  trajectory.validate();
  config.render.validate();
  const std::uint32_t w = config.cloud.management.frame_interval;
  NEBULA_EXPECT(w >= 1, "replay: frame interval must be at least 1");

  stream::SimulatedLink link(config.channel, config.channel);
  stream::Transport& cloud_end = link.endpoint(stream::SimulatedLink::Side::cloud);
  stream::Transport& client_end = link.endpoint(stream::SimulatedLink::Side::client);
  stream::CloudSession cloud(tree, book, params, config.cloud);
  const Intrinsics& in = config.intrinsics;
  stream::ClientSession client(stream::ClientHello{stream::kProtocolVersion, in.focal, static_cast<std::uint32_t>(in.width),
                                                   static_cast<std::uint32_t>(in.height), in.near, in.far});
  double apply_seconds = 0.0;
  // Delivers everything queued in both directions until the link is idle.
  auto pump = [&] {
    for (bool moved = true; moved;) {
      moved = false;
      while (auto m = cloud_end.receive()) {
        moved = true;
        for (auto& reply : cloud.handle(*m)) cloud_end.send(reply);
      }
      while (auto m = client_end.receive()) {
        moved = true;
        const auto start = Clock::now();
        auto ack = client.handle(*m);
        apply_seconds += seconds_since(start);
        if (ack) client_end.send(*ack);
      }
    }
  };
  client_end.send(client.hello());
  pump();

  ReplayResult result;
  const std::size_t record_bytes = codec::record_size(book) + 3;
  std::vector<std::uint32_t> prev_cut;
  bool have_prev = false;
  double overlap_sum = 0.0;
  std::size_t overlap_count = 0;

  for (std::size_t i = 0; i < trajectory.points.size(); ++i) {
    const TrajectoryPoint& point = trajectory.points[i];
    try {
      MetricsRow row;
      row.frame = point.frame;
      link.set_time(point.time);
      const std::uint64_t bytes_before = link.downlink().bytes_sent + link.uplink().bytes_sent;
      const double energy_before = link.downlink().energy_j + link.uplink().energy_j;
      const Camera camera = camera_at(point, in);

      if (i % w == 0) {
        apply_seconds = 0.0;
        client_end.send(stream::encode_pose(stream::camera_pose(camera, point.frame)));
        pump();
        const stream::RoundRecord& rec = cloud.log().back();
        row.lod_round = true;
        row.cut_size = rec.cut.members.size();
        row.delta_size = rec.update.delta.size();
        row.delta_bytes = row.delta_size * record_bytes;
        row.overlap = have_prev ? overlap_ratio(prev_cut, rec.cut.members) : 1.0;
        if (have_prev) {
          overlap_sum += row.overlap;
          ++overlap_count;
        }
        row.required_bps = stream::required_rate(rec.delta_bytes, w, config.target_fps);
        row.nodes_visited = rec.stats.nodes_visited;
        row.verified = rec.temporal && config.cloud.verify_search && rec.verified;
        result.all_verified = result.all_verified && rec.verified;
        prev_cut = rec.cut.members;
        have_prev = true;
        if (config.record_times) {
          row.times.search = rec.search_seconds;
          row.times.encode = rec.encode_seconds;
          row.times.apply = apply_seconds;
        }
      } else {
        row.cut_size = prev_cut.size();
      }
      row.wire_bytes = link.downlink().bytes_sent + link.uplink().bytes_sent - bytes_before;
      row.energy_j = link.downlink().energy_j + link.uplink().energy_j - energy_before;

      auto start = Clock::now();
      const auto queue = client.select_queue(camera);
      std::vector<Gaussian> gs;
      gs.reserve(queue.size());
      for (std::uint32_t id : queue) gs.push_back(client.subgraph().nodes.at(id).gaussian);
      row.queue_size = queue.size();
      const double t_queue = seconds_since(start);

      const StereoRig rig(camera, config.baseline);
      start = Clock::now();
      auto proj = render::preprocess(gs, rig, config.render);
      const double t_pre = seconds_since(start);
      start = Clock::now();
      render::depth_sort(proj);
      const double t_sort = seconds_since(start);
      start = Clock::now();
      render::StereoOptions opt;
      opt.workers = config.workers;
      const render::StereoResult frame = render::rasterize_stereo(proj, rig, config.render, opt);
      const double t_raster = seconds_since(start);
      row.alpha_evals = frame.stats.alpha_evals();
      if (config.record_times) {
        row.times.queue = t_queue;
        row.times.preprocess = t_pre;
        row.times.sort = t_sort;
        row.times.raster = t_raster;
      }

      if (config.compute_psnr) {
        auto ref = render::preprocess(tree_gaussians(tree, queue), rig, config.render);
        render::depth_sort(ref);
        row.psnr_db = psnr(frame.left, render::rasterize_mono(ref, camera, config.render, nullptr, config.workers));
      }
      if (config.image_every > 0 && point.frame % static_cast<std::uint32_t>(config.image_every) == 0) {
        render::write_ppm(frame_image_path(config.image_dir, point.frame, "left"), frame.left);
        render::write_ppm(frame_image_path(config.image_dir, point.frame, "right"), frame.right);
      }
      result.rows.push_back(row);
    } catch (const std::exception& e) {
      std::throw_with_nested(ReplayError(point.frame, e.what()));
    }
  }

  result.rounds = cloud.log();
  result.bandwidth = stream::bandwidth_report(result.rounds, w, config.target_fps);
  result.energy_j = link.downlink().energy_j + link.uplink().energy_j;
  result.total_wire_bytes = link.downlink().bytes_sent + link.uplink().bytes_sent;
  result.mean_overlap = overlap_count ? overlap_sum / static_cast<double>(overlap_count) : 1.0;
  return result;
}

// ---------------------------------------------------------------------------
// Bench

const BenchStage* BenchReport::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

std::string BenchReport::to_table() const {
  std::ostringstream os;
  os << "# build: " << (optimized_build ? "optimized" : "debug (timings not representative)") << "\n";
  os << "# frames " << frames << ", LoD rounds " << rounds << "\n";
  os << std::left << std::setw(24) << "stage" << std::right << std::setw(14) << "wall_ms" << std::setw(18) << "work"
     << "  unit\n";
  for (const auto& s : stages) {
    os << std::left << std::setw(24) << s.name << std::right << std::setw(14) << std::fixed << std::setprecision(3)
       << s.wall_s * 1e3 << std::setw(18) << s.work << "  " << s.unit << "\n";
  }
  auto ratio = [&](const char* a, const char* b, bool by_work) {
    const BenchStage *x = stage(a), *y = stage(b);
    if (!x || !y) return;
    const double num = by_work ? static_cast<double>(x->work) : x->wall_s;
    const double den = by_work ? static_cast<double>(y->work) : y->wall_s;
    os << "# " << a << " / " << b << (by_work ? " work: " : " time: ");
    if (den > 0.0)
      os << std::setprecision(4) << num / den << "\n";
    else
      os << "n/a\n";
  };
  ratio("temporal_search", "full_search_later", true);
  ratio("temporal_search", "full_search_later", false);
  ratio("stereo_raster", "mono_raster_x2", true);
  ratio("stereo_raster", "mono_raster_x2", false);
  return os.str();
}

BenchReport bench(const scene::LodTree& tree, const Trajectory& trajectory, const ReplayConfig& config) {
  trajectory.validate();
  config.render.validate();
  const std::uint32_t w = config.cloud.management.frame_interval;
  NEBULA_EXPECT(w >= 1, "bench: frame interval must be at least 1");
  BenchStage full_first{"full_search_first", 0, 0, "nodes visited"};
  BenchStage full_later{"full_search_later", 0, 0, "nodes visited"};
  BenchStage temporal{"temporal_search", 0, 0, "nodes visited"};
  BenchStage pre{"preprocess", 0, 0, "gaussians in"};
  BenchStage sort{"sort", 0, 0, "gaussians sorted"};
  BenchStage stereo{"stereo_raster", 0, 0, "alpha evaluations"};
  BenchStage mono{"mono_raster_x2", 0, 0, "alpha evaluations"};

  BenchReport rep;
#ifdef NDEBUG
  rep.optimized_build = true;
#endif
  std::optional<search::Cut> prev;
  std::vector<std::uint32_t> members;
  for (std::size_t i = 0; i < trajectory.points.size(); ++i) {
    const Camera camera = camera_at(trajectory.points[i], config.intrinsics);
    if (i % w == 0 && tree.size() > 0) {
      auto start = Clock::now();
      auto full = search::full_cut_search(tree, camera, config.cloud.search, config.cloud.workers);
      const double t_full = seconds_since(start);
      if (!prev) {
        full_first.wall_s += t_full;
        full_first.work += full.stats.nodes_visited;
        prev = full.cut;
      } else {
        full_later.wall_s += t_full;
        full_later.work += full.stats.nodes_visited;
        start = Clock::now();
        auto res = search::temporal_cut_search(tree, camera, *prev, config.cloud.search, config.cloud.workers);
        temporal.wall_s += seconds_since(start);
        temporal.work += res.stats.nodes_visited;
        prev = std::move(res.cut);
      }
      members = prev->members;
      ++rep.rounds;
    }
    ++rep.frames;
    const auto gs = tree_gaussians(tree, members);
    const StereoRig rig(camera, config.baseline);
    auto start = Clock::now();
    auto proj = render::preprocess(gs, rig, config.render);
    pre.wall_s += seconds_since(start);
    pre.work += gs.size();
    start = Clock::now();
    render::depth_sort(proj);
    sort.wall_s += seconds_since(start);
    sort.work += proj.size();
    render::StereoOptions opt;
    opt.workers = config.workers;
    start = Clock::now();
    const auto st = render::rasterize_stereo(proj, rig, config.render, opt);
    stereo.wall_s += seconds_since(start);
    stereo.work += st.stats.alpha_evals();
    render::RasterStats l, r;
    start = Clock::now();
    render::rasterize_mono(proj, camera, config.render, &l, config.workers);
    const auto right = render::right_eye_view(proj, rig, config.render);
    render::rasterize_mono(right, rig.right(), config.render, &r, config.workers);
    mono.wall_s += seconds_since(start);
    mono.work += l.alpha_evals + r.alpha_evals;
  }
  rep.stages = {full_first, full_later, temporal, pre, sort, stereo, mono};
  return rep;
}

}  // namespace nebula::harness
