#include <algorithm>
#include <cmath>
#include <atomic>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#include "nebula/core/errors.hpp"
#include "nebula/render/render.hpp"
#include "tile_render.hpp"

namespace nebula::render {

double disparity(double depth, const StereoRig& rig) {
  NEBULA_EXPECT(depth >= rig.left().near, "disparity: depth below the near plane");
  return rig.baseline() * rig.left().focal / depth;
}

std::vector<ProjectedGaussian> right_eye_view(std::span<const ProjectedGaussian> sorted, const StereoRig& rig,
                                              const RenderConfig& config) {
  const TileGrid grid(rig.left(), config.tile_size);
  std::vector<ProjectedGaussian> out(sorted.begin(), sorted.end());
  for (ProjectedGaussian& p : out) {
    p.center.x() -= disparity(p.depth, rig);
    p.span = grid.span(p.center, p.radius);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Merge

namespace {

template <class T, class Less>
void merge4(const std::array<std::span<const T>, 4>& lists, Less less, std::vector<T>& out) {
  std::size_t total = 0;
  for (const auto& l : lists) {
    for (std::size_t i = 1; i < l.size(); ++i)
      NEBULA_EXPECT(!less(l[i], l[i - 1]), "merge_tile_lists: input list is not sorted");
    total += l.size();
  }
  out.clear();
  out.reserve(total);
  std::array<std::size_t, 4> pos{};
  for (;;) {
    int best = -1;
    for (int k = 0; k < 4; ++k)
      if (pos[k] < lists[k].size() && (best < 0 || less(lists[k][pos[k]], lists[best][pos[best]]))) best = k;
    if (best < 0) break;
    const T& v = lists[best][pos[best]++];
    if (out.empty() || less(out.back(), v)) out.push_back(v);
  }
}

}  // namespace

std::vector<TileEntry> merge_tile_lists(const std::array<std::span<const TileEntry>, 4>& lists) {
  std::vector<TileEntry> out;
  merge4(
      lists, [](const TileEntry& a, const TileEntry& b) { return a.depth < b.depth || (a.depth == b.depth && a.id < b.id); },
      out);
  return out;
}

// ---------------------------------------------------------------------------
// Task graph

namespace {

// Runs fn(task) for every task once all of its prerequisites finished.
// Returns the completion order.
template <class Fn>
std::vector<int> run_task_graph(const std::vector<std::vector<int>>& dependents, std::vector<int> pending, int workers,
                                Fn&& fn) {
  const int n = static_cast<int>(pending.size());
  std::deque<int> ready;
  for (int t = 0; t < n; ++t)
    if (pending[t] == 0) ready.push_back(t);
  std::vector<int> order;
  order.reserve(n);

  if (workers <= 1) {
    while (!ready.empty()) {
      const int t = ready.front();
      ready.pop_front();
      fn(t);
      order.push_back(t);
      for (int d : dependents[t])
        if (--pending[d] == 0) ready.push_back(d);
    }
    NEBULA_EXPECT(static_cast<int>(order.size()) == n, "task graph has a cycle");
    return order;
  }

  // Roots are handed out through an atomic cursor. A task whose last
  // prerequisite finishes is run next by the worker that finished it, so no
  // worker ever waits: when its stack and the roots are both exhausted, every
  // remaining task is owned by someone else.
  std::vector<int> roots(ready.begin(), ready.end());
  std::vector<std::atomic<int>> remaining(pending.size());
  for (std::size_t t = 0; t < pending.size(); ++t) remaining[t].store(pending[t], std::memory_order_relaxed);
  order.resize(n);
  std::atomic<std::size_t> next_root{0};
  std::atomic<int> finished{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    std::vector<int> local;
    try {
      for (;;) {
        int t;
        if (!local.empty()) {
          t = local.back();
          local.pop_back();
        } else {
          const std::size_t r = next_root.fetch_add(1, std::memory_order_relaxed);
          if (r >= roots.size()) return;
          t = roots[r];
        }
        if (stop.load(std::memory_order_relaxed)) return;
        fn(t);
        order[finished.fetch_add(1, std::memory_order_acq_rel)] = t;
        for (int d : dependents[t])
          if (remaining[d].fetch_sub(1, std::memory_order_acq_rel) == 1) local.push_back(d);
      }
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!error) error = std::current_exception();
      stop = true;
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
  }
  if (error) std::rethrow_exception(error);
  NEBULA_EXPECT(finished.load() == n, "task graph has a cycle");
  return order;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stereo

StereoResult rasterize_stereo(std::span<const ProjectedGaussian> sorted, const StereoRig& rig,
                              const RenderConfig& config, const StereoOptions& options) {
  config.validate();
  NEBULA_EXPECT(rig.max_disparity() <= config.max_disparity_px,
                "rasterize_stereo: rig disparity at the near plane exceeds max_disparity_px");
  NEBULA_EXPECT(is_depth_sorted(sorted), "rasterize_stereo: input is not depth-sorted");

  const Camera& left_cam = rig.left();
  const TileGrid grid(left_cam, config.tile_size);
  const int tiles = grid.count();
  const int ts = grid.tile;
  const std::vector<ProjectedGaussian> right_view = right_eye_view(sorted, rig, config);
  std::vector<double> disp(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) disp[i] = disparity(sorted[i].depth, rig);

  const auto left_bins = bin_tiles(sorted, grid);
  // Right tiles in the last three columns have no complete set of left sources.
  auto is_border = [&](int rx) { return rx >= grid.tiles_x - 3; };
  std::vector<std::vector<std::uint32_t>> border_bins(static_cast<std::size_t>(tiles));
  for (std::size_t i = 0; i < right_view.size(); ++i) {
    const TileRect& s = right_view[i].span;
    if (s.empty()) continue;
    for (int ty = s.y0; ty <= s.y1; ++ty)
      for (int tx = std::max(s.x0, grid.tiles_x - 3); tx <= s.x1; ++tx)
        border_bins[grid.index(tx, ty)].push_back(static_cast<std::uint32_t>(i));
  }

  StereoResult res;
  res.left = Framebuffer(left_cam.width, left_cam.height);
  res.right = Framebuffer(left_cam.width, left_cam.height);
  std::vector<std::array<std::vector<std::uint32_t>, 4>> offsets(static_cast<std::size_t>(tiles));
  std::vector<RasterStats> left_stats(tiles), right_stats(tiles);
  std::vector<std::uint64_t> overflow(tiles, 0), straddle(tiles, 0);
  std::vector<std::vector<std::uint32_t>> merged(tiles), survivors(tiles);

  auto left_task = [&](int t) {
    const int tx = t % grid.tiles_x, ty = t / grid.tiles_x;
    thread_local std::vector<char> passed;
    detail::render_tile(sorted, left_bins[t], tx, ty, grid, config, res.left, &passed, left_stats[t]);
    const double lo = static_cast<double>(tx) * ts, hi = lo + ts;
    for (std::size_t i = 0; i < left_bins[t].size(); ++i) {
      if (!passed[i]) continue;
      const std::uint32_t g = left_bins[t][i];
      // Right pixel p samples left position p + 0.5 + d; keep those landing in this tile.
      const double p0 = std::max(std::ceil(lo - 0.5 - disp[g]), 0.0);
      const double p1 = std::ceil(hi - 0.5 - disp[g]) - 1.0;
      if (p1 < p0) continue;
      const int r0 = static_cast<int>(p0) / ts, r1 = static_cast<int>(p1) / ts;
      if (r1 > r0) ++straddle[t];
      for (int rx = r0; rx <= r1; ++rx) {
        // Outside its right-eye footprint bound it can never pass.
        if (!right_view[g].span.contains(rx, ty)) continue;
        const int k = tx - rx;
        if (k > 3) {
          ++overflow[t];
          continue;
        }
        offsets[t][k].push_back(g);
      }
    }
  };

  auto right_task = [&](int r) {
    const int rx = r % grid.tiles_x, ty = r / grid.tiles_x;
    thread_local std::vector<char> passed;
    thread_local std::vector<std::uint32_t> scratch;
    std::span<const std::uint32_t> list;
    if (is_border(rx)) {
      list = border_bins[r];
    } else {
      std::array<std::span<const std::uint32_t>, 4> src;
      for (int k = 0; k < 4; ++k) src[k] = offsets[grid.index(rx + k, ty)][k];
      std::vector<std::uint32_t>& out = options.keep_lists ? merged[r] : scratch;
      merge4(src, std::less<std::uint32_t>{}, out);
      list = out;
    }
    detail::render_tile(right_view, list, rx, ty, grid, config, res.right, &passed, right_stats[r]);
    if (options.keep_lists) {
      if (is_border(rx)) merged[r] = border_bins[r];
      for (std::size_t i = 0; i < list.size(); ++i)
        if (passed[i]) survivors[r].push_back(list[i]);
    }
  };

  std::vector<std::vector<int>> dependents(static_cast<std::size_t>(2 * tiles));
  std::vector<int> pending(static_cast<std::size_t>(2 * tiles), 0);
  for (int r = 0; r < tiles; ++r) {
    const int rx = r % grid.tiles_x, ty = r / grid.tiles_x;
    if (is_border(rx)) continue;
    for (int k = 0; k < 4; ++k) {
      dependents[grid.index(rx + k, ty)].push_back(tiles + r);
      ++pending[tiles + r];
    }
  }
  auto order = run_task_graph(dependents, std::move(pending), options.workers, [&](int task) {
    if (task < tiles)
      left_task(task);
    else
      right_task(task - tiles);
  });

  StereoStats& st = res.stats;
  for (int t = 0; t < tiles; ++t) {
    detail::sum_into(st.left, left_stats[t]);
    detail::sum_into(st.right, right_stats[t]);
    st.overflow_entries += overflow[t];
    st.straddles += straddle[t];
    const bool border = is_border(t % grid.tiles_x);
    if (border) {
      ++st.border_tiles;
      st.border_entries += right_stats[t].tile_entries;
      st.border_passes += right_stats[t].alpha_passes;
    } else {
      ++st.list_tiles;
      st.list_entries += right_stats[t].tile_entries;
      st.reused_passes += right_stats[t].alpha_passes;
    }
  }
  if (options.keep_lists) {
    res.merged = std::move(merged);
    res.right_survivors = std::move(survivors);
    res.border.resize(tiles);
    for (int t = 0; t < tiles; ++t) res.border[t] = is_border(t % grid.tiles_x) ? 1 : 0;
  }
  if (options.keep_schedule) res.schedule = std::move(order);
  return res;
}

}  // namespace nebula::render
