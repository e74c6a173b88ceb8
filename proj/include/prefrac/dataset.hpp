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

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefrac/common.hpp"
#include "prefrac/fracture.hpp"
#include "prefrac/mesh.hpp"
#include "prefrac/voxelize.hpp"

namespace prefrac::data {

// Centering/scaling applied to a point cloud, kept so predictions can be
// mapped back into the source mesh frame.
struct NormalizeTransform {
  Vec3 centroid{0.0, 0.0, 0.0};
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - centroid) / scale; }
  Vec3 invert(const Vec3& p) const { return p * scale + centroid; }
};

// Subtracts the centroid and divides by the max point norm so the cloud fits
// the unit ball. A degenerate cloud (all points at the centroid) keeps scale 1.
inline std::pair<std::vector<Vec3>, NormalizeTransform> normalize(
    const std::vector<Vec3>& points) {
  if (points.empty()) throw ContractError("normalize: need at least one point");
  NormalizeTransform t;
  for (const Vec3& p : points) t.centroid += p;
  t.centroid = t.centroid / static_cast<double>(points.size());
  double max_norm = 0.0;
  for (const Vec3& p : points) max_norm = std::max(max_norm, (p - t.centroid).norm());
  t.scale = max_norm > 0.0 ? max_norm : 1.0;
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(t.apply(p));
  return {std::move(out), t};
}

// One supervised clustering example: a normalized piece-center cloud, one
// group label per piece, and the requested group count. Labels are unordered;
// any bijective relabeling denotes the same clustering.
struct TrainingExample {
  std::vector<Vec3> points;
  std::vector<int> labels;
  int num_groups = 0;
  std::string source;
};

inline nlohmann::json example_to_json(const TrainingExample& ex) {
  nlohmann::json j;
  j["format_version"] = 1;
  auto pts = nlohmann::json::array();
  for (const Vec3& p : ex.points) pts.push_back({p.x, p.y, p.z});
  j["points"] = std::move(pts);
  j["labels"] = ex.labels;
  j["num_groups"] = ex.num_groups;
  j["source"] = ex.source;
  return j;
}

inline TrainingExample example_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("format_version") || !j.at("format_version").is_number_integer())
      throw DataError("training example: missing or malformed \"format_version\"");
    if (j.at("format_version").get<int>() != 1)
      throw DataError("training example: unsupported format_version " +
                      j.at("format_version").dump());
    for (const char* field : {"points", "labels", "num_groups", "source"})
      if (!j.contains(field))
        throw DataError(std::string("training example: missing \"") + field + "\" field");
    TrainingExample ex;
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 3)
        throw DataError("training example: malformed \"points\" entry");
      ex.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    }
    ex.labels = j.at("labels").get<std::vector<int>>();
    ex.num_groups = j.at("num_groups").get<int>();
    ex.source = j.at("source").get<std::string>();
    if (ex.labels.size() != ex.points.size())
      throw DataError("training example: label count does not match point count");
    if (ex.num_groups <= 0) throw DataError("training example: num_groups must be positive");
    for (int l : ex.labels)
      if (l < 0) throw DataError("training example: negative label");
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("training example: malformed JSON: ") + e.what());
  }
}

inline void write_example(const std::string& path, const TrainingExample& ex) {
  std::ofstream out(path);
  if (!out) throw DataError("write_example: cannot open " + path);
  out << example_to_json(ex).dump(2) << "\n";
}

inline TrainingExample read_example(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_example: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed JSON: " + e.what());
  }
  return example_from_json(j);
}

// ---------------------------------------------------------------------------
// Synthetic structural-weakness shapes
// ---------------------------------------------------------------------------

enum class ShapeFamily { kDumbbell, kHourglass, kLBracket, kMultilobe };

inline ShapeFamily parse_family(const std::string& name) {
  if (name == "dumbbell") return ShapeFamily::kDumbbell;
  if (name == "hourglass") return ShapeFamily::kHourglass;
  if (name == "lbracket") return ShapeFamily::kLBracket;
  if (name == "multilobe") return ShapeFamily::kMultilobe;
  throw ContractError("unknown shape family: " + name);
}

inline std::string family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kDumbbell: return "dumbbell";
    case ShapeFamily::kHourglass: return "hourglass";
    case ShapeFamily::kLBracket: return "lbracket";
    case ShapeFamily::kMultilobe: return "multilobe";
  }
  throw ContractError("unknown shape family enum value");
}

struct SynthShape {
  geom::TriMesh whole;
  std::vector<geom::TriMesh> fragments;  // ground-truth groups, index = label
};

namespace detail {

// Shapes are authored as unit-cell occupancy on a small lattice: convex
// primitive boxes joined by thin neck boxes. Building meshes through
// voxel_surface_mesh makes every whole and fragment watertight by
// construction, and cell ownership gives an exact fragment partition.
struct LatticeShape {
  // cell -> owning primitive index; necks are folded into a primitive before
  // meshing, so ownership is the ground-truth fragment id.
  std::map<std::array<int, 3>, int> cells;

  void fill_box(std::array<int, 3> lo, std::array<int, 3> size, int owner) {
    for (int x = lo[0]; x < lo[0] + size[0]; ++x)
      for (int y = lo[1]; y < lo[1] + size[1]; ++y)
        for (int z = lo[2]; z < lo[2] + size[2]; ++z) cells[{x, y, z}] = owner;
  }

  SynthShape to_meshes(const std::string& whole_name, int num_fragments) const {
    if (cells.empty()) throw ContractError("synth_shape: empty lattice");
    std::array<int, 3> lo{INT32_MAX, INT32_MAX, INT32_MAX}, hi{INT32_MIN, INT32_MIN, INT32_MIN};
    for (const auto& [c, owner] : cells) {
      (void)owner;
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], c[a]);
        hi[a] = std::max(hi[a], c[a]);
      }
    }
    geom::VoxelGrid grid;
    grid.origin = {static_cast<double>(lo[0]), static_cast<double>(lo[1]),
                   static_cast<double>(lo[2])};
    grid.voxel_size = 1.0;
    for (int a = 0; a < 3; ++a) grid.dims[a] = hi[a] - lo[a] + 1;
    grid.occupancy.assign(static_cast<std::size_t>(grid.cell_count()), 0);

    std::vector<std::int64_t> all;
    std::vector<std::vector<std::int64_t>> per_fragment(
        static_cast<std::size_t>(num_fragments));
    for (const auto& [c, owner] : cells) {
      const std::int64_t idx = grid.index(c[0] - lo[0], c[1] - lo[1], c[2] - lo[2]);
      all.push_back(idx);
      per_fragment.at(static_cast<std::size_t>(owner)).push_back(idx);
    }
    SynthShape shape;
    shape.whole = geom::voxel_surface_mesh(grid, all, whole_name);
    for (int f = 0; f < num_fragments; ++f) {
      if (per_fragment[static_cast<std::size_t>(f)].empty())
        throw ContractError("synth_shape: fragment " + std::to_string(f) + " has no cells");
      shape.fragments.push_back(geom::voxel_surface_mesh(
          grid, per_fragment[static_cast<std::size_t>(f)],
          whole_name + "_fragment_" + std::to_string(f)));
    }
    return shape;
  }
};

// Neck ownership: the larger adjoining primitive wins; ties go to the lower
// primitive index.
inline int neck_owner(int prim_a, std::int64_t cells_a, int prim_b, std::int64_t cells_b) {
  if (cells_a != cells_b) return cells_a > cells_b ? prim_a : prim_b;
  return std::min(prim_a, prim_b);
}

}  // namespace detail

// Deterministically generates a shape with unambiguous structural weaknesses:
// convex lobes joined by thin necks. Fragments are the lobes, with each neck
// attached to the larger adjoining lobe.
inline SynthShape synth_shape(ShapeFamily family, std::uint64_t params_seed) {
  Rng rng(params_seed ^ 0x5f3759df9e3779b9ull);
  detail::LatticeShape lat;
  const std::string name = family_name(family) + "_" + std::to_string(params_seed);

  auto box_cells = [](const std::array<int, 3>& s) {
    return static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  };

  switch (family) {
    case ShapeFamily::kDumbbell: {
      // Two lobes on a shared x axis, joined by a 2x2 neck.
      const std::array<int, 3> s0{rng.uniform_int(4, 7), rng.uniform_int(4, 7),
                                  rng.uniform_int(4, 7)};
      const std::array<int, 3> s1{rng.uniform_int(4, 7), rng.uniform_int(4, 7),
                                  rng.uniform_int(4, 7)};
      const int neck_len = rng.uniform_int(3, 5);
      const int owner = detail::neck_owner(0, box_cells(s0), 1, box_cells(s1));
      // Center both lobes and the neck on the y/z axis of the neck tube.
      lat.fill_box({0, -s0[1] / 2, -s0[2] / 2}, s0, 0);
      lat.fill_box({s0[0], 0, 0}, {neck_len, 2, 2}, owner);
      lat.fill_box({s0[0] + neck_len, -s1[1] / 2, -s1[2] / 2}, s1, 1);
      return lat.to_meshes(name, 2);
    }
    case ShapeFamily::kHourglass: {
      // Two slabs stacked on z with a narrow waist.
      const std::array<int, 3> s0{rng.uniform_int(5, 8), rng.uniform_int(5, 8),
                                  rng.uniform_int(3, 5)};
      const std::array<int, 3> s1{rng.uniform_int(5, 8), rng.uniform_int(5, 8),
                                  rng.uniform_int(3, 5)};
      const int waist_len = rng.uniform_int(2, 4);
      const int owner = detail::neck_owner(0, box_cells(s0), 1, box_cells(s1));
      lat.fill_box({-s0[0] / 2, -s0[1] / 2, 0}, s0, 0);
      lat.fill_box({0, 0, s0[2]}, {2, 2, waist_len}, owner);
      lat.fill_box({-s1[0] / 2, -s1[1] / 2, s0[2] + waist_len}, s1, 1);
      return lat.to_meshes(name, 2);
    }
    case ShapeFamily::kLBracket: {
      // A horizontal arm with a vertical riser joined by a short neck at the
      // arm's far end.
      const std::array<int, 3> arm{rng.uniform_int(8, 12), rng.uniform_int(3, 5),
                                   rng.uniform_int(3, 5)};
      const std::array<int, 3> riser{rng.uniform_int(3, 5), rng.uniform_int(3, 5),
                                     rng.uniform_int(8, 12)};
      const int neck_len = rng.uniform_int(2, 3);
      const int owner = detail::neck_owner(0, box_cells(arm), 1, box_cells(riser));
      lat.fill_box({0, 0, 0}, arm, 0);
      lat.fill_box({arm[0] - 2, 0, arm[2]}, {2, 2, neck_len}, owner);
      lat.fill_box({arm[0] - riser[0], 0, arm[2] + neck_len}, riser, 1);
      return lat.to_meshes(name, 2);
    }
    case ShapeFamily::kMultilobe: {
      // A chain of strongly size-varied lobes along x. Alternating draws from
      // disjoint small/large ranges keep adjacent lobes asymmetric so the
      // structural grouping is unambiguous.
      const int lobes = rng.uniform_int(3, 5);
      std::vector<std::array<int, 3>> sizes;
      for (int i = 0; i < lobes; ++i) {
        const bool small = i % 2 == 1;
        const int lo = small ? 3 : 6, hi = small ? 4 : 8;
        sizes.push_back({rng.uniform_int(lo, hi), rng.uniform_int(lo, hi),
                         rng.uniform_int(lo, hi)});
      }
      std::vector<int> neck_lens;
      for (int i = 0; i + 1 < lobes; ++i) neck_lens.push_back(rng.uniform_int(3, 5));
      int x = 0;
      for (int i = 0; i < lobes; ++i) {
        lat.fill_box({x, -sizes[static_cast<std::size_t>(i)][1] / 2,
                      -sizes[static_cast<std::size_t>(i)][2] / 2},
                     sizes[static_cast<std::size_t>(i)], i);
        x += sizes[static_cast<std::size_t>(i)][0];
        if (i + 1 < lobes) {
          const int owner =
              detail::neck_owner(i, box_cells(sizes[static_cast<std::size_t>(i)]), i + 1,
                                 box_cells(sizes[static_cast<std::size_t>(i + 1)]));
          lat.fill_box({x, 0, 0}, {neck_lens[static_cast<std::size_t>(i)], 2, 2}, owner);
          x += neck_lens[static_cast<std::size_t>(i)];
        }
      }
      return lat.to_meshes(name, lobes);
    }
  }
  throw ContractError("synth_shape: unknown family");
}

// ---------------------------------------------------------------------------
// Flipping a fracture into a supervised example
// ---------------------------------------------------------------------------

// Fractures `whole` into fine pieces and labels each piece by the fragment
// whose voxelization (on the same grid) contains the voxel holding the
// piece's center of mass. Pieces whose com voxel no fragment claims fall back
// to the fragment with the nearest occupied voxel (ties -> lowest index).
inline std::pair<TrainingExample, geom::PieceSet> flip_example(
    const geom::TriMesh& whole, const std::vector<geom::TriMesh>& fragments, int num_sites,
    int resolution, std::uint64_t seed) {
  if (fragments.empty()) throw ContractError("flip_example: need at least one fragment");
  const geom::VoxelGrid grid = geom::voxelize(whole, resolution);
  const geom::PieceSet ps = geom::fracture(grid, num_sites, seed);

  std::vector<std::vector<std::uint8_t>> frag_occ;
  for (std::size_t f = 0; f < fragments.size(); ++f) {
    geom::VoxelGrid fg = grid;
    fg.occupancy.assign(static_cast<std::size_t>(grid.cell_count()), 0);
    geom::classify_on_grid(fragments[f], fg);
    bool any = false;
    for (std::uint8_t o : fg.occupancy) any = any || o != 0;
    if (!any)
      throw DataError("flip_example: fragment " + std::to_string(f) + " (\"" +
                      fragments[f].name + "\") voxelizes to zero occupied cells at this "
                      "resolution; increase the resolution");
    frag_occ.push_back(std::move(fg.occupancy));
  }

  TrainingExample ex;
  ex.num_groups = static_cast<int>(fragments.size());
  ex.source = whole.name;
  for (const geom::Piece& piece : ps.pieces) {
    // Voxel holding the com (floor rule; com always lies inside the grid).
    std::array<std::int64_t, 3> cv{};
    const double inv = 1.0 / grid.voxel_size;
    cv[0] = static_cast<std::int64_t>(std::floor((piece.com.x - grid.origin.x) * inv));
    cv[1] = static_cast<std::int64_t>(std::floor((piece.com.y - grid.origin.y) * inv));
    cv[2] = static_cast<std::int64_t>(std::floor((piece.com.z - grid.origin.z) * inv));
    int label = -1;
    if (grid.in_bounds(cv[0], cv[1], cv[2])) {
      const std::size_t lin = static_cast<std::size_t>(grid.index(cv[0], cv[1], cv[2]));
      for (std::size_t f = 0; f < fragments.size(); ++f) {
        if (frag_occ[f][lin] != 0) {
          label = static_cast<int>(f);
          break;
        }
      }
    }
    if (label < 0) {
      // Nearest occupied fragment voxel to the com, by center distance.
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t f = 0; f < fragments.size(); ++f) {
        for (std::int64_t lin = 0; lin < grid.cell_count(); ++lin) {
          if (frag_occ[f][static_cast<std::size_t>(lin)] == 0) continue;
          const double d2 = (grid.voxel_center(lin) - piece.com).norm2();
          if (d2 < best) {
            best = d2;
            label = static_cast<int>(f);
          }
        }
      }
    }
    ex.labels.push_back(label);
  }
  ex.points = normalize(geom::centers_point_cloud(ps)).first;
  return {std::move(ex), ps};
}

}  // namespace prefrac::data
