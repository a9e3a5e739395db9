#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "nebula/core/errors.hpp"
#include "nebula/harness/harness.hpp"

namespace nebula::harness {

double psnr(const render::Framebuffer& a, const render::Framebuffer& b) {
  NEBULA_EXPECT(a.width == b.width && a.height == b.height, "psnr: image dimensions differ");
  if (a.rgb.empty()) return kPsnrCap;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.rgb.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double overlap_ratio(std::span<const std::uint32_t> prev, std::span<const std::uint32_t> curr) {
  if (prev.empty()) return 1.0;
  std::size_t common = 0;
  std::size_t i = 0, j = 0;
  while (i < prev.size() && j < curr.size()) {
    if (prev[i] < curr[j]) {
      ++i;
    } else if (curr[j] < prev[i]) {
      ++j;
    } else {
      ++common;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(common) / static_cast<double>(prev.size());
}

// ---------------------------------------------------------------------------
// Trajectories

void Trajectory::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const TrajectoryPoint& p = points[i];
    if (i > 0 && p.frame <= points[i - 1].frame)
      throw DataError("trajectory: frame ids not strictly increasing at record " + std::to_string(i));
    if (std::abs(p.orientation.norm() - 1.0) > 1e-6)
      throw DataError("trajectory: non-unit quaternion at frame " + std::to_string(p.frame));
    if (!p.position.allFinite() || !std::isfinite(p.time))
      throw DataError("trajectory: non-finite value at frame " + std::to_string(p.frame));
  }
}

Trajectory parse_trajectory(const std::string& text) {
  Trajectory t;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string field;
    std::vector<double> v;
    while (std::getline(fields, field, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(field, &used));
        if (field.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw FormatError("trajectory line " + std::to_string(line_no) + ": bad number '" + field + "'");
      }
    }
    if (v.size() != 9)
      throw FormatError("trajectory line " + std::to_string(line_no) + ": expected 9 fields, got " +
                        std::to_string(v.size()));
    if (v[0] < 0.0 || v[0] != std::floor(v[0]) || v[0] > 4294967295.0)
      throw FormatError("trajectory line " + std::to_string(line_no) + ": frame id must be a u32");
    TrajectoryPoint p;
    p.frame = static_cast<std::uint32_t>(v[0]);
    p.position = Vec3(v[1], v[2], v[3]);
    p.orientation = Quat(v[4], v[5], v[6], v[7]);
    p.time = v[8];
    t.points.push_back(p);
  }
  t.validate();
  return t;
}

std::string format_trajectory(const Trajectory& trajectory) {
  std::ostringstream os;
  os.precision(17);
  os << "# frame,px,py,pz,qw,qx,qy,qz,t\n";
  for (const auto& p : trajectory.points) {
    os << p.frame << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ','
       << p.orientation.w() << ',' << p.orientation.x() << ',' << p.orientation.y() << ',' << p.orientation.z() << ','
       << p.time << '\n';
  }
  return os.str();
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open trajectory " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_trajectory(ss.str());
}

void save_trajectory(const std::string& path, const Trajectory& trajectory) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << format_trajectory(trajectory);
}

Camera camera_at(const TrajectoryPoint& point, const Intrinsics& in) {
  return Camera::from_pose(point.position, point.orientation, in.focal, in.width, in.height, in.near, in.far);
}

namespace {

Quat look_orientation(const Vec3& dir) {
  const Camera c = Camera::look_at(Vec3::Zero(), dir, Vec3::UnitZ(), 1.0, 4, 4, 0.1, 1.0);
  return Quat(Mat3(c.rotation.transpose())).normalized();
}

}  // namespace

Trajectory walk_trajectory(int frames, const WalkOptions& o) {
  NEBULA_EXPECT(frames >= 0 && o.radius > 0.0 && o.fps > 0.0, "walk_trajectory: invalid options");
  Trajectory t;
  for (int i = 0; i < frames; ++i) {
    const double time = i / o.fps;
    const double a = o.speed * time / o.radius;
    const double yaw = a + 0.5 * M_PI + o.yaw_amplitude * std::sin(2.0 * M_PI * time / o.yaw_period);
    TrajectoryPoint p;
    p.frame = static_cast<std::uint32_t>(i);
    p.time = time;
    p.position = o.center + Vec3(o.radius * std::cos(a), o.radius * std::sin(a), o.height);
    p.orientation = look_orientation(Vec3(std::cos(yaw), std::sin(yaw), o.pitch));
    t.points.push_back(p);
  }
  return t;
}

Trajectory orbit_trajectory(int frames, const Vec3& center, double radius, double height, double angular_speed,
                            double fps) {
  NEBULA_EXPECT(frames >= 0 && radius > 0.0 && fps > 0.0, "orbit_trajectory: invalid options");
  Trajectory t;
  for (int i = 0; i < frames; ++i) {
    const double time = i / fps;
    const double a = angular_speed * time;
    TrajectoryPoint p;
    p.frame = static_cast<std::uint32_t>(i);
    p.time = time;
    p.position = center + Vec3(radius * std::cos(a), radius * std::sin(a), height);
    p.orientation = look_orientation(center - p.position);
    t.points.push_back(p);
  }
  return t;
}

// ---------------------------------------------------------------------------
// CSV

std::string metrics_header() {
  return std::string("# schema=") + kMetricsSchema +
         "\nframe,lod_round,cut_size,delta_size,delta_bytes,wire_bytes,overlap,required_bps,energy_j,psnr_db,"
         "nodes_visited,alpha_evals,queue_size,verified,t_search,t_encode,t_apply,t_queue,t_preprocess,t_sort,"
         "t_raster\n";
}

std::string metrics_row_csv(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(10);
  const StageTimes& t = r.times;
  os << r.frame << ',' << (r.lod_round ? 1 : 0) << ',' << r.cut_size << ',' << r.delta_size << ',' << r.delta_bytes
     << ',' << r.wire_bytes << ',' << r.overlap << ',' << r.required_bps << ',' << r.energy_j << ',' << r.psnr_db
     << ',' << r.nodes_visited << ',' << r.alpha_evals << ',' << r.queue_size << ',' << (r.verified ? 1 : 0) << ','
     << t.search << ',' << t.encode << ',' << t.apply << ',' << t.queue << ',' << t.preprocess << ',' << t.sort << ','
     << t.raster << '\n';
  return os.str();
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << metrics_header();
  for (const auto& r : rows) os << metrics_row_csv(r);
}

}  // namespace nebula::harness
