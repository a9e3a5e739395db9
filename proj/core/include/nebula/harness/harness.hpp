#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nebula/codec/codec.hpp"
#include "nebula/core/types.hpp"
#include "nebula/render/render.hpp"
#include "nebula/scene/lod_tree.hpp"
#include "nebula/search/cut_search.hpp"
#include "nebula/stream/stream.hpp"

namespace nebula::harness {

// ---------------------------------------------------------------------------
// Metrics

inline constexpr double kPsnrCap = 100.0;

// 10 log10(1/MSE) over RGB in [0,1]; identical images give kPsnrCap.
double psnr(const render::Framebuffer& a, const render::Framebuffer& b);

// |prev ∩ curr| / |prev| over ascending id lists; 1 when prev is empty.
double overlap_ratio(std::span<const std::uint32_t> prev, std::span<const std::uint32_t> curr);
inline double overlap_ratio(const search::Cut& prev, const search::Cut& curr) {
  return overlap_ratio(prev.members, curr.members);
}

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectoryPoint {
  std::uint32_t frame = 0;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();  // camera-to-world
  double time = 0.0;                    // seconds
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;

  // Frame ids strictly increasing, unit quaternions. Throws DataError.
  void validate() const;
  std::size_t size() const { return points.size(); }
};

// One "frame,px,py,pz,qw,qx,qy,qz,t" record per line; '#' starts a comment.
Trajectory parse_trajectory(const std::string& text);
std::string format_trajectory(const Trajectory& trajectory);
Trajectory load_trajectory(const std::string& path);
void save_trajectory(const std::string& path, const Trajectory& trajectory);

// near must stay at or above baseline * focal / max_disparity_px for stereo.
struct Intrinsics {
  double focal = 120.0;
  int width = 128;
  int height = 128;
  double near = 0.45;
  double far = 1000.0;
};

Camera camera_at(const TrajectoryPoint& point, const Intrinsics& intrinsics);

// Walk around a circle at eye height, heading along the tangent with a slow
// sinusoidal yaw sway and a slight downward pitch.
struct WalkOptions {
  Vec3 center = Vec3::Zero();
  double radius = 50.0;
  double height = 1.7;
  double speed = 1.4;  // m/s
  double fps = 90.0;
  double yaw_amplitude = 0.3;  // radians
  double yaw_period = 8.0;     // seconds
  double pitch = -0.15;        // direction z component before normalizing
};
Trajectory walk_trajectory(int frames, const WalkOptions& options);

// Circle around center looking inwards at it.
Trajectory orbit_trajectory(int frames, const Vec3& center, double radius, double height, double angular_speed,
                            double fps);

// ---------------------------------------------------------------------------
// Replay

inline constexpr const char* kMetricsSchema = "nebula-metrics/1";

struct StageTimes {
  double search = 0.0;
  double encode = 0.0;
  double apply = 0.0;
  double queue = 0.0;
  double preprocess = 0.0;
  double sort = 0.0;
  double raster = 0.0;
};

struct MetricsRow {
  std::uint32_t frame = 0;
  bool lod_round = false;
  std::size_t cut_size = 0;
  std::size_t delta_size = 0;
  std::size_t delta_bytes = 0;  // codec records plus per-node extent block of the delta nodes
  std::size_t wire_bytes = 0;   // every byte sent on the link this frame, both directions
  double overlap = 1.0;         // against the previous round's cut
  double required_bps = 0.0;
  double energy_j = 0.0;
  double psnr_db = 0.0;  // 0 when not computed
  std::uint64_t nodes_visited = 0;
  std::uint64_t alpha_evals = 0;
  std::size_t queue_size = 0;
  bool verified = false;  // temporal cut checked against the full search
  StageTimes times;       // zero unless timing is enabled
};

std::string metrics_header();
std::string metrics_row_csv(const MetricsRow& row);
void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows);

struct ReplayConfig {
  stream::CloudConfig cloud;
  Intrinsics intrinsics;
  double baseline = StereoRig::kDefaultBaseline;
  RenderConfig render;
  stream::ChannelModel channel;
  double target_fps = 90.0;
  bool compute_psnr = false;  // compare the client's left image with a lossless render
  bool record_times = false;  // wall times break byte-identical CSV output
  int image_every = 0;        // dump PPMs every n frames; 0 disables
  std::string image_dir = ".";
  int workers = 1;
};

struct ReplayResult {
  std::vector<MetricsRow> rows;
  std::vector<stream::RoundRecord> rounds;
  stream::BandwidthReport bandwidth;
  double energy_j = 0.0;
  std::uint64_t total_wire_bytes = 0;
  bool all_verified = true;  // meaningful with cloud.verify_search
  double mean_overlap = 1.0; // over rounds after the first
};

// Raised by replay with the original exception nested inside.
class ReplayError : public std::runtime_error {
 public:
  ReplayError(std::uint32_t frame, const std::string& what)
      : std::runtime_error("frame " + std::to_string(frame) + ": " + what), frame_(frame) {}
  std::uint32_t frame() const noexcept { return frame_; }

 private:
  std::uint32_t frame_;
};

// Cloud and client sessions over a simulated link. A LoD round runs on every
// frame whose index is a multiple of w; every frame renders the client's
// queue in stereo. Stage failures are rethrown with the frame id attached.
ReplayResult replay(const scene::LodTree& tree, const codec::Codebook& book, const codec::QuantParams& params,
                    const Trajectory& trajectory, const ReplayConfig& config);

// ---------------------------------------------------------------------------
// Bench

struct BenchStage {
  std::string name;
  double wall_s = 0.0;
  std::uint64_t work = 0;
  std::string unit;
};

struct BenchReport {
  std::vector<BenchStage> stages;
  bool optimized_build = false;
  std::uint64_t rounds = 0;
  std::uint64_t frames = 0;

  const BenchStage* stage(const std::string& name) const;
  std::string to_table() const;
};

// Times full against temporal search on every LoD round and stereo against
// two mono renders on every frame, at full attribute precision.
BenchReport bench(const scene::LodTree& tree, const Trajectory& trajectory, const ReplayConfig& config);

}  // namespace nebula::harness
