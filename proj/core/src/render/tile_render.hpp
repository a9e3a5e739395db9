#pragma once

#include <vector>

#include "nebula/render/render.hpp"

namespace nebula::render::detail {

// Blends one tile from a depth-ordered index list. passed[i] is set when
// list[i] passes the alpha check at one or more pixels.
void render_tile(std::span<const ProjectedGaussian> gs, std::span<const std::uint32_t> list, int tx, int ty,
                 const TileGrid& grid, const RenderConfig& cfg, Framebuffer& fb, std::vector<char>* passed,
                 RasterStats& stats);

void sum_into(RasterStats& acc, const RasterStats& s);

}  // namespace nebula::render::detail
