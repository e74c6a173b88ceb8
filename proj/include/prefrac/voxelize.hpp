// Copyright 2026 The Prefrac Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "prefrac/common.hpp"
#include "prefrac/mesh.hpp"

namespace prefrac::geom {

struct VoxelGrid {
  Vec3 origin;          // lattice corner (0,0,0) in model units
  double voxel_size = 0.0;
  std::array<std::int64_t, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> occupancy;  // dims[0]*dims[1]*dims[2], row-major x-fastest

  std::int64_t cell_count() const { return dims[0] * dims[1] * dims[2]; }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }

  std::array<std::int64_t, 3> coords(std::int64_t linear) const {
    const std::int64_t x = linear % dims[0];
    const std::int64_t y = (linear / dims[0]) % dims[1];
    const std::int64_t z = linear / (dims[0] * dims[1]);
    return {x, y, z};
  }

  bool in_bounds(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }

  bool occupied(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return in_bounds(x, y, z) && occupancy[index(x, y, z)] != 0;
  }

  Vec3 voxel_center(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return origin + Vec3{(static_cast<double>(x) + 0.5) * voxel_size,
                         (static_cast<double>(y) + 0.5) * voxel_size,
                         (static_cast<double>(z) + 0.5) * voxel_size};
  }

  Vec3 voxel_center(std::int64_t linear) const {
    const auto c = coords(linear);
    return voxel_center(c[0], c[1], c[2]);
  }

  std::vector<std::int64_t> occupied_indices() const {
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < cell_count(); ++i)
      if (occupancy[i]) out.push_back(i);
    return out;
  }
};

namespace detail {

// One +x ray per (y,z) voxel column. A crossing list is accepted only when no
// triangle edge/vertex lies on the ray and no triangle is hit tangentially;
// otherwise the whole column retries with a deterministic epsilon offset, so
// classification is reproducible bit-for-bit across platforms.
struct ColumnClassifier {
  const TriMesh& mesh;
  const VoxelGrid& grid;
  std::vector<std::vector<int>> buckets;  // triangles per (y,z) column
  double tie_area;  // edge-function tolerance (length² units)
  double tie_x;     // crossing-coordinate tolerance (length units)

  ColumnClassifier(const TriMesh& m, const VoxelGrid& g) : mesh(m), grid(g) {
    const double scale =
        g.voxel_size * static_cast<double>(std::max({g.dims[0], g.dims[1], g.dims[2]}));
    tie_area = 1e-12 * std::max(1.0, scale * scale);
    tie_x = 1e-12 * std::max(1.0, scale);
    buckets.assign(static_cast<std::size_t>(g.dims[1] * g.dims[2]), {});
    for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) {
      const auto& tri = m.triangles[t];
      Vec3 lo = m.vertices[tri[0]], hi = lo;
      for (int k = 1; k < 3; ++k) {
        lo = vmin(lo, m.vertices[tri[k]]);
        hi = vmax(hi, m.vertices[tri[k]]);
      }
      auto clamp_cell = [&](double v, int axis) {
        double f = (v - (axis == 1 ? g.origin.y : g.origin.z)) / g.voxel_size;
        return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(f)), 0,
                                        g.dims[axis] - 1);
      };
      const std::int64_t y0 = clamp_cell(lo.y, 1), y1 = clamp_cell(hi.y, 1);
      const std::int64_t z0 = clamp_cell(lo.z, 2), z1 = clamp_cell(hi.z, 2);
      for (std::int64_t z = z0; z <= z1; ++z)
        for (std::int64_t y = y0; y <= y1; ++y)
          buckets[static_cast<std::size_t>(y + grid.dims[1] * z)].push_back(t);
    }
  }

  // Collects x-coordinates where the ray at (y,z) crosses the surface.
  // Returns false when the ray grazes an edge/vertex or a tangent triangle.
  bool trace(double y, double z, const std::vector<int>& tris,
             std::vector<double>& crossings) const {
    crossings.clear();
    for (int t : tris) {
      const auto& tri = mesh.triangles[t];
      const Vec3 a = mesh.vertices[tri[0]], b = mesh.vertices[tri[1]], c = mesh.vertices[tri[2]];
      // 2-D edge functions in the (y,z) plane; the sign pattern decides
      // containment and e0+e1+e2 equals twice the projected triangle area.
      const double e0 = (b.y - a.y) * (z - a.z) - (b.z - a.z) * (y - a.y);
      const double e1 = (c.y - b.y) * (z - b.z) - (c.z - b.z) * (y - b.y);
      const double e2 = (a.y - c.y) * (z - c.z) - (a.z - c.z) * (y - c.y);
      const bool inside_pos = e0 > tie_area && e1 > tie_area && e2 > tie_area;
      const bool inside_neg = e0 < -tie_area && e1 < -tie_area && e2 < -tie_area;
      if (!inside_pos && !inside_neg) {
        const bool has_pos = e0 > tie_area || e1 > tie_area || e2 > tie_area;
        const bool has_neg = e0 < -tie_area || e1 < -tie_area || e2 < -tie_area;
        if (has_pos && has_neg) continue;  // clearly misses the projected triangle
        return false;                      // grazes an edge/vertex (or tangent face)
      }
      // Interpolate x barycentrically; the margin test above bounds the
      // denominator away from zero.
      crossings.push_back((e1 * a.x + e2 * b.x + e0 * c.x) / (e0 + e1 + e2));
    }
    std::sort(crossings.begin(), crossings.end());
    return true;
  }

  void classify_column(std::int64_t iy, std::int64_t iz, std::vector<std::uint8_t>& occ) const {
    const auto& tris = buckets[static_cast<std::size_t>(iy + grid.dims[1] * iz)];
    if (tris.empty()) return;  // nothing to hit: entire column stays outside
    const double y0 = grid.origin.y + (static_cast<double>(iy) + 0.5) * grid.voxel_size;
    const double z0 = grid.origin.z + (static_cast<double>(iz) + 0.5) * grid.voxel_size;
    std::vector<double> crossings;
    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
      const double step = grid.voxel_size * 1e-9 * static_cast<double>(attempt);
      ok = trace(y0 + step, z0 + step * 0.6180339887498949, tris, crossings);
    }
    if (!ok) throw DataError("voxelize: could not resolve a grazing ray after 64 retries");
    for (std::int64_t ix = 0; ix < grid.dims[0]; ++ix) {
      const double cx =
          grid.origin.x + (static_cast<double>(ix) + 0.5) * grid.voxel_size;
      // Parity of crossings strictly ahead of the center; a crossing within
      // the tie band (center exactly on the surface) counts as ahead.
      std::size_t ahead = 0;
      for (double x : crossings)
        if (x > cx || std::abs(x - cx) <= tie_x) ++ahead;
      if (ahead % 2 == 1) occ[static_cast<std::size_t>(grid.index(ix, iy, iz))] = 1;
    }
  }
};

}  // namespace detail

// Marks grid cells whose center lies inside the mesh; requires watertightness
// (ray parity is meaningless on open surfaces).
inline void classify_on_grid(const TriMesh& mesh, VoxelGrid& grid) {
  if (!mesh.watertight())
    throw DataError("voxelize: mesh is not watertight (every edge must join exactly two "
                    "triangles); repair the mesh first");
  detail::ColumnClassifier cls(mesh, grid);
  for (std::int64_t z = 0; z < grid.dims[2]; ++z)
    for (std::int64_t y = 0; y < grid.dims[1]; ++y) cls.classify_column(y, z, grid.occupancy);
}

// Builds a grid over the mesh bounds (one voxel of padding on every side,
// `resolution` cells across the longest extent) and classifies cell centers.
inline VoxelGrid voxelize(const TriMesh& mesh, int resolution) {
  if (resolution < 4) throw ContractError("voxelize: resolution must be at least 4");
  mesh.validate();
  const Vec3 lo = mesh.bbox_min(), hi = mesh.bbox_max(), ext = hi - lo;
  const double longest = std::max({ext.x, ext.y, ext.z});
  if (longest <= 0.0) throw DataError("voxelize: mesh has zero extent");
  VoxelGrid g;
  g.voxel_size = longest / static_cast<double>(resolution);
  g.origin = lo - Vec3{g.voxel_size, g.voxel_size, g.voxel_size};
  for (int a = 0; a < 3; ++a) {
    const double e = (a == 0) ? ext.x : (a == 1) ? ext.y : ext.z;
    g.dims[a] = static_cast<std::int64_t>(std::ceil(e / g.voxel_size - 1e-9)) + 2;
  }
  g.occupancy.assign(static_cast<std::size_t>(g.cell_count()), 0);
  classify_on_grid(mesh, g);
  return g;
}

}  // namespace prefrac::geom
