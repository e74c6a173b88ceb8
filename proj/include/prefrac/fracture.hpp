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
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefrac/common.hpp"
#include "prefrac/mesh.hpp"
#include "prefrac/voxelize.hpp"

namespace prefrac::geom {

struct Piece {
  int id = 0;
  std::vector<std::int64_t> voxels;  // linear indices, ascending
  Vec3 com;
  double volume = 0.0;
};

struct PieceSet {
  VoxelGrid grid;
  std::vector<Piece> pieces;
  std::vector<std::array<int, 2>> adjacency;  // unordered pairs, i < j, sorted
};

namespace detail {

inline void compute_com_volume(const VoxelGrid& grid, Piece& p) {
  Vec3 acc{0, 0, 0};
  for (std::int64_t v : p.voxels) acc += grid.voxel_center(v);
  p.com = acc * (1.0 / static_cast<double>(p.voxels.size()));
  const double vs = grid.voxel_size;
  p.volume = vs * vs * vs * static_cast<double>(p.voxels.size());
}

// 6-connected components of `voxels`, each returned sorted; components are
// ordered by their smallest member so the split is deterministic.
inline std::vector<std::vector<std::int64_t>> connected_components(
    const VoxelGrid& grid, const std::vector<std::int64_t>& voxels) {
  std::set<std::int64_t> remaining(voxels.begin(), voxels.end());
  std::vector<std::vector<std::int64_t>> components;
  while (!remaining.empty()) {
    std::vector<std::int64_t> comp, stack{*remaining.begin()};
    remaining.erase(remaining.begin());
    while (!stack.empty()) {
      const std::int64_t v = stack.back();
      stack.pop_back();
      comp.push_back(v);
      const auto c = grid.coords(v);
      const std::array<std::array<std::int64_t, 3>, 6> nbrs{{{c[0] - 1, c[1], c[2]},
                                                             {c[0] + 1, c[1], c[2]},
                                                             {c[0], c[1] - 1, c[2]},
                                                             {c[0], c[1] + 1, c[2]},
                                                             {c[0], c[1], c[2] - 1},
                                                             {c[0], c[1], c[2] + 1}}};
      for (const auto& n : nbrs) {
        if (!grid.in_bounds(n[0], n[1], n[2])) continue;
        auto it = remaining.find(grid.index(n[0], n[1], n[2]));
        if (it != remaining.end()) {
          stack.push_back(*it);
          remaining.erase(it);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    components.push_back(std::move(comp));
  }
  std::sort(components.begin(), components.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return components;
}

}  // namespace detail

// Voronoi assignment given explicit generator voxels (linear indices, in site
// order). Distances are squared integer voxel-coordinate distances, so
// nearest-site ties resolve exactly to the lowest site index on any platform.
inline PieceSet fracture_with_sites(const VoxelGrid& grid,
                                    const std::vector<std::int64_t>& sites) {
  if (sites.empty()) throw ContractError("fracture: need at least one site");
  PieceSet ps;
  ps.grid = grid;
  const std::vector<std::int64_t> occupied = grid.occupied_indices();

  std::vector<std::array<std::int64_t, 3>> site_coords;
  site_coords.reserve(sites.size());
  for (std::int64_t s : sites) site_coords.push_back(grid.coords(s));

  std::vector<std::vector<std::int64_t>> cell_voxels(sites.size());
  for (std::int64_t v : occupied) {
    const auto c = grid.coords(v);
    std::int64_t best = -1;
    std::size_t best_site = 0;
    for (std::size_t s = 0; s < site_coords.size(); ++s) {
      const std::int64_t dx = c[0] - site_coords[s][0];
      const std::int64_t dy = c[1] - site_coords[s][1];
      const std::int64_t dz = c[2] - site_coords[s][2];
      const std::int64_t d2 = dx * dx + dy * dy + dz * dz;
      if (best < 0 || d2 < best) {
        best = d2;
        best_site = s;
      }
    }
    cell_voxels[best_site].push_back(v);
  }

  // Drop empty cells, split disconnected cells, compact ids.
  for (const auto& cell : cell_voxels) {
    if (cell.empty()) continue;
    for (auto& comp : detail::connected_components(grid, cell)) {
      Piece p;
      p.id = static_cast<int>(ps.pieces.size());
      p.voxels = std::move(comp);
      detail::compute_com_volume(grid, p);
      ps.pieces.push_back(std::move(p));
    }
  }

  // Face-adjacency graph over pieces.
  std::vector<int> owner(static_cast<std::size_t>(grid.cell_count()), -1);
  for (const Piece& p : ps.pieces)
    for (std::int64_t v : p.voxels) owner[static_cast<std::size_t>(v)] = p.id;
  std::set<std::array<int, 2>> edges;
  for (std::int64_t v : occupied) {
    const auto c = grid.coords(v);
    const int a = owner[static_cast<std::size_t>(v)];
    const std::array<std::array<std::int64_t, 3>, 3> fwd{
        {{c[0] + 1, c[1], c[2]}, {c[0], c[1] + 1, c[2]}, {c[0], c[1], c[2] + 1}}};
    for (const auto& n : fwd) {
      if (!grid.occupied(n[0], n[1], n[2])) continue;
      const int b = owner[static_cast<std::size_t>(grid.index(n[0], n[1], n[2]))];
      if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
    }
  }
  ps.adjacency.assign(edges.begin(), edges.end());
  return ps;
}

// Seeded fracture: sites drawn uniformly without replacement from the
// occupied voxels (partial Fisher-Yates), then Voronoi-assigned.
inline PieceSet fracture(const VoxelGrid& grid, int num_sites, std::uint64_t seed) {
  std::vector<std::int64_t> occupied = grid.occupied_indices();
  if (num_sites < 1 || static_cast<std::size_t>(num_sites) > occupied.size())
    throw ContractError("fracture: num_sites must be in [1, occupied voxel count]");
  Rng rng(seed);
  for (int i = 0; i < num_sites; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) + rng.bounded(occupied.size() - static_cast<std::size_t>(i));
    std::swap(occupied[static_cast<std::size_t>(i)], occupied[j]);
  }
  occupied.resize(static_cast<std::size_t>(num_sites));
  return fracture_with_sites(grid, occupied);
}

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

// Boundary surface of a voxel set. Exposed faces become two triangles each,
// and corner vertices are welded per surface *sheet* so the result always
// satisfies the every-edge-shared-by-exactly-two-triangles predicate, even
// where the voxel set pinches (two diagonal voxels sharing only a lattice
// edge or corner).
//
// Around a lattice edge the four surrounding cells are walked cyclically;
// each in/out transition contributes one exposed quad side. Edges with two
// transitions have a forced gluing. "Checker" edges (diagonal solids, four
// transitions) admit two gluings: wrap each solid separately or wrap each
// empty wedge separately. Either choice can collapse the two resulting
// sheets onto the same welded vertex pair (giving a four-triangle edge)
// depending on how the surrounding forced welds already connect the four
// sides, so the choice is made per edge: follow whichever matching the
// surrounding welds already realize at an endpoint. A final verification
// sweep rebuilds with flipped choices in the (never yet observed) case a
// doubled edge slips through, and fails loudly rather than emit a defect.
inline TriMesh voxel_surface_mesh(const VoxelGrid& grid,
                                  const std::vector<std::int64_t>& voxels,
                                  const std::string& name = "voxel_surface") {
  if (voxels.empty()) throw ContractError("voxel_surface_mesh: empty voxel set");
  std::vector<std::uint8_t> member(static_cast<std::size_t>(grid.cell_count()), 0);
  for (std::int64_t v : voxels) {
    if (v < 0 || v >= grid.cell_count())
      throw ContractError("voxel_surface_mesh: voxel index out of range");
    member[static_cast<std::size_t>(v)] = 1;
  }
  auto in_set = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return grid.in_bounds(x, y, z) && member[static_cast<std::size_t>(grid.index(x, y, z))] != 0;
  };

  // Exposed quads; corners stored as lattice coordinates in outward winding.
  // Per direction the corner square is traced (0,0) -> (+u) -> (+u+v) -> (+v)
  // in the two axes that keep the cross product pointing outward.
  struct Quad {
    std::array<std::array<std::int64_t, 3>, 4> corner;
  };
  static constexpr std::array<std::array<std::int64_t, 3>, 6> kDir{
      {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
  static constexpr std::array<std::array<int, 2>, 6> kUV{
      {{2, 1}, {1, 2}, {0, 2}, {2, 0}, {1, 0}, {0, 1}}};  // -x,+x,-y,+y,-z,+z

  std::vector<Quad> quads;
  std::map<std::pair<std::int64_t, int>, int> quad_index;  // (cell, dir) -> quad
  std::vector<std::int64_t> sorted_voxels = voxels;
  std::sort(sorted_voxels.begin(), sorted_voxels.end());
  for (std::int64_t v : sorted_voxels) {
    const auto c = grid.coords(v);
    for (int d = 0; d < 6; ++d) {
      if (in_set(c[0] + kDir[d][0], c[1] + kDir[d][1], c[2] + kDir[d][2])) continue;
      Quad q;
      std::array<std::int64_t, 3> base{c[0], c[1], c[2]};
      for (int a = 0; a < 3; ++a)
        if (kDir[d][a] > 0) base[a] += 1;  // face sits on the far side of the cell
      const int ua = kUV[d][0], va = kUV[d][1];
      q.corner[0] = base;
      q.corner[1] = base;
      q.corner[1][ua] += 1;
      q.corner[2] = base;
      q.corner[2][ua] += 1;
      q.corner[2][va] += 1;
      q.corner[3] = base;
      q.corner[3][va] += 1;
      quad_index[{v, d}] = static_cast<int>(quads.size());
      quads.push_back(q);
    }
  }

  auto slot_at = [&](int quad, const std::array<std::int64_t, 3>& p) {
    for (int k = 0; k < 4; ++k)
      if (quads[static_cast<std::size_t>(quad)].corner[static_cast<std::size_t>(k)] == p)
        return quad * 4 + k;
    throw ContractError("voxel_surface_mesh: internal weld lookup failed");
  };

  // Enumerate lattice edges touched by quad sides, once each.
  struct EdgeRec {
    std::array<std::int64_t, 3> end0, end1;   // edge endpoints (end1 = end0 + axis)
    std::vector<std::array<int, 2>> pairs;    // forced side pairs (quad, quad)
    std::array<int, 4> checker{-1, -1, -1, -1};  // solid0 lo/hi, solid1 lo/hi quads
    bool is_checker = false;
  };
  std::vector<EdgeRec> edges;
  std::set<std::array<std::int64_t, 4>> seen_edges;  // (axis, mx, my, mz)
  for (std::size_t qi = 0; qi < quads.size(); ++qi) {
    for (int side = 0; side < 4; ++side) {
      const auto& p0 = quads[qi].corner[static_cast<std::size_t>(side)];
      const auto& p1 = quads[qi].corner[static_cast<std::size_t>((side + 1) % 4)];
      int axis = 0;
      while (p0[axis] == p1[axis]) ++axis;
      const std::array<std::int64_t, 3> m{std::min(p0[0], p1[0]), std::min(p0[1], p1[1]),
                                          std::min(p0[2], p1[2])};
      if (!seen_edges.insert({axis, m[0], m[1], m[2]}).second) continue;

      const int b = (axis + 1) % 3, c2 = (axis + 2) % 3;
      // Cells around the edge in cyclic order; offsets are (b, c) deltas of
      // the cell's min corner relative to the edge's min endpoint.
      static constexpr std::array<std::array<std::int64_t, 2>, 4> kRing{
          {{-1, -1}, {0, -1}, {0, 0}, {-1, 0}}};
      std::array<std::array<std::int64_t, 3>, 4> cell{};
      std::array<bool, 4> occ{};
      int occ_count = 0;
      for (int q = 0; q < 4; ++q) {
        cell[q][axis] = m[axis];
        cell[q][b] = m[b] + kRing[q][0];
        cell[q][c2] = m[c2] + kRing[q][1];
        occ[q] = in_set(cell[q][0], cell[q][1], cell[q][2]);
        occ_count += occ[q] ? 1 : 0;
      }
      if (occ_count == 0 || occ_count == 4) continue;  // no transitions

      auto quad_between = [&](int solid, int empty) {
        int dir = -1;
        for (int d = 0; d < 6; ++d) {
          bool match = true;
          for (int a = 0; a < 3; ++a)
            if (cell[empty][a] - cell[solid][a] != kDir[d][a]) match = false;
          if (match) dir = d;
        }
        const std::int64_t lin = grid.index(cell[solid][0], cell[solid][1], cell[solid][2]);
        return quad_index.at({lin, dir});
      };

      EdgeRec rec;
      rec.end0 = m;
      rec.end1 = m;
      rec.end1[axis] += 1;
      const bool checker = occ_count == 2 && occ[0] == occ[2] && occ[1] == occ[3];
      if (checker) {
        // Diagonal solids: defer the pairing decision. Record each solid
        // cell's two flanking quads (toward the previous/next ring cell).
        rec.is_checker = true;
        const int s0 = occ[0] ? 0 : 1;                    // first solid ring slot
        rec.checker[0] = quad_between(s0, (s0 + 3) % 4);  // solid0 toward prev
        rec.checker[1] = quad_between(s0, (s0 + 1) % 4);  // solid0 toward next
        rec.checker[2] = quad_between(s0 + 2, (s0 + 1) % 4);
        rec.checker[3] = quad_between(s0 + 2, (s0 + 3) % 4);
      } else {
        // One solid run: each enter transition pairs with the next leave.
        int start = 0;
        while (occ[start]) ++start;
        int entered = -1;
        for (int step = 0; step < 4; ++step) {
          const int q = (start + step) % 4, nq = (start + step + 1) % 4;
          if (!occ[q] && occ[nq]) entered = quad_between(nq, q);
          if (occ[q] && !occ[nq]) rec.pairs.push_back({entered, quad_between(q, nq)});
        }
      }
      edges.push_back(std::move(rec));
    }
  }

  // Weld pass: forced pairs first, then checker edges in deterministic
  // order, choosing per edge the matching the existing welds already realize
  // (wrap-the-solids vs wrap-the-empties). `flip` overrides from the
  // verification loop force the opposite choice.
  std::vector<std::size_t> checker_ids;
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (edges[i].is_checker) checker_ids.push_back(i);

  std::set<std::size_t> flip;
  detail::UnionFind uf(1);
  std::vector<std::array<int, 2>> welded;   // endpoint slots of each welded side pair
  std::vector<std::size_t> welded_edge;     // edge index each weld came from
  for (int attempt = 0;; ++attempt) {
    uf = detail::UnionFind(quads.size() * 4);
    welded.clear();
    welded_edge.clear();
    std::size_t current_edge = 0;
    auto weld_pair = [&](const EdgeRec& rec, int qa, int qb) {
      uf.unite(slot_at(qa, rec.end0), slot_at(qb, rec.end0));
      uf.unite(slot_at(qa, rec.end1), slot_at(qb, rec.end1));
      welded.push_back({slot_at(qa, rec.end0), slot_at(qa, rec.end1)});
      welded_edge.push_back(current_edge);
    };
    for (std::size_t ei = 0; ei < edges.size(); ++ei) {
      const EdgeRec& rec = edges[ei];
      if (rec.is_checker) continue;
      current_edge = ei;
      for (const auto& pr : rec.pairs) weld_pair(rec, pr[0], pr[1]);
    }
    for (std::size_t ci : checker_ids) {
      const EdgeRec& rec = edges[ci];
      current_edge = ci;
      const auto& q = rec.checker;  // [s0-prev, s0-next, s1-prev... ] flanks
      auto connected_at = [&](const std::array<std::int64_t, 3>& p, int a, int b) {
        return uf.find(slot_at(a, p)) == uf.find(slot_at(b, p));
      };
      // Solid matching pairs (q0,q1) and (q2,q3); empty matching pairs
      // (q1,q2) and (q3,q0).
      const bool same = connected_at(rec.end0, q[0], q[1]) ||
                        connected_at(rec.end0, q[2], q[3]) ||
                        connected_at(rec.end1, q[0], q[1]) ||
                        connected_at(rec.end1, q[2], q[3]);
      const bool cross = connected_at(rec.end0, q[1], q[2]) ||
                         connected_at(rec.end0, q[3], q[0]) ||
                         connected_at(rec.end1, q[1], q[2]) ||
                         connected_at(rec.end1, q[3], q[0]);
      bool wrap_solids = same || !cross;
      if (flip.count(ci)) wrap_solids = !wrap_solids;
      if (wrap_solids) {
        weld_pair(rec, q[0], q[1]);
        weld_pair(rec, q[2], q[3]);
      } else {
        weld_pair(rec, q[1], q[2]);
        weld_pair(rec, q[3], q[0]);
      }
    }
    // Verify: no two welded side pairs may collapse onto one vertex pair.
    // Colliding pairs always come from one checker edge (vertex classes are
    // position-bound, so same vertex pair implies same lattice edge).
    std::map<std::pair<int, int>, std::vector<std::size_t>> by_vertex_pair;
    for (std::size_t w = 0; w < welded.size(); ++w) {
      const int a = uf.find(welded[w][0]), b = uf.find(welded[w][1]);
      by_vertex_pair[{std::min(a, b), std::max(a, b)}].push_back(w);
    }
    std::set<std::size_t> to_flip;
    for (const auto& [key, ws] : by_vertex_pair)
      if (ws.size() > 1) to_flip.insert(welded_edge[ws.front()]);
    if (to_flip.empty()) break;
    for (std::size_t ci : to_flip) {
      if (!flip.insert(ci).second) flip.erase(ci);
    }
    if (attempt >= 8)
      throw ContractError("voxel_surface_mesh: could not resolve pinched surface welds");
  }

  // Slot classes become vertices; quads fan into two triangles.
  TriMesh out;
  out.name = name;
  std::map<int, int> rep_to_vertex;
  auto vertex_of = [&](int slot) {
    const int rep = uf.find(slot);
    auto it = rep_to_vertex.find(rep);
    if (it != rep_to_vertex.end()) return it->second;
    const auto& p = quads[static_cast<std::size_t>(rep / 4)].corner[static_cast<std::size_t>(
        rep % 4)];
    out.vertices.push_back(grid.origin + Vec3{static_cast<double>(p[0]) * grid.voxel_size,
                                              static_cast<double>(p[1]) * grid.voxel_size,
                                              static_cast<double>(p[2]) * grid.voxel_size});
    const int id = static_cast<int>(out.vertices.size() - 1);
    rep_to_vertex.emplace(rep, id);
    return id;
  };
  for (std::size_t qi = 0; qi < quads.size(); ++qi) {
    const int v0 = vertex_of(static_cast<int>(qi) * 4 + 0);
    const int v1 = vertex_of(static_cast<int>(qi) * 4 + 1);
    const int v2 = vertex_of(static_cast<int>(qi) * 4 + 2);
    const int v3 = vertex_of(static_cast<int>(qi) * 4 + 3);
    out.triangles.push_back({v0, v1, v2});
    out.triangles.push_back({v0, v2, v3});
  }
  return out;
}

// Surface of the union of the given pieces' voxels.
inline TriMesh piece_mesh(const PieceSet& ps, const std::vector<int>& piece_ids,
                          const std::string& name = "pieces") {
  if (piece_ids.empty()) throw ContractError("piece_mesh: empty piece id set");
  std::vector<std::int64_t> voxels;
  for (int id : piece_ids) {
    if (id < 0 || id >= static_cast<int>(ps.pieces.size()))
      throw ContractError("piece_mesh: piece id out of range");
    const auto& pv = ps.pieces[static_cast<std::size_t>(id)].voxels;
    voxels.insert(voxels.end(), pv.begin(), pv.end());
  }
  return voxel_surface_mesh(ps.grid, voxels, name);
}

// Row i is piece i's center of mass (piece order preserved).
inline std::vector<Vec3> centers_point_cloud(const PieceSet& ps) {
  if (ps.pieces.empty()) throw ContractError("centers_point_cloud: empty piece set");
  std::vector<Vec3> pts;
  pts.reserve(ps.pieces.size());
  for (const Piece& p : ps.pieces) pts.push_back(p.com);
  return pts;
}

// Signed volume (times six) of a closed lattice-aligned mesh, computed in
// exact integer arithmetic after snapping vertices back to lattice indices.
inline std::int64_t lattice_volume_6x(const VoxelGrid& grid, const TriMesh& mesh) {
  std::vector<std::array<std::int64_t, 3>> li;
  li.reserve(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) {
    const Vec3 f = (v - grid.origin) / grid.voxel_size;
    li.push_back({static_cast<std::int64_t>(std::llround(f.x)),
                  static_cast<std::int64_t>(std::llround(f.y)),
                  static_cast<std::int64_t>(std::llround(f.z))});
  }
  std::int64_t six_vol = 0;
  for (const auto& t : mesh.triangles) {
    const auto &a = li[static_cast<std::size_t>(t[0])], &b = li[static_cast<std::size_t>(t[1])],
               &c = li[static_cast<std::size_t>(t[2])];
    const std::int64_t cx = b[1] * c[2] - b[2] * c[1];
    const std::int64_t cy = b[2] * c[0] - b[0] * c[2];
    const std::int64_t cz = b[0] * c[1] - b[1] * c[0];
    six_vol += a[0] * cx + a[1] * cy + a[2] * cz;
  }
  return six_vol;
}

// ---- manifest serialization ----

inline nlohmann::json pieceset_to_json(const PieceSet& ps) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["grid"]["origin"] = {ps.grid.origin.x, ps.grid.origin.y, ps.grid.origin.z};
  j["grid"]["voxel_size"] = ps.grid.voxel_size;
  j["grid"]["dims"] = {ps.grid.dims[0], ps.grid.dims[1], ps.grid.dims[2]};
  j["pieces"] = nlohmann::json::array();
  for (const Piece& p : ps.pieces) {
    nlohmann::json pj;
    pj["id"] = p.id;
    pj["com"] = {p.com.x, p.com.y, p.com.z};
    pj["volume"] = p.volume;
    pj["voxels"] = p.voxels;
    j["pieces"].push_back(std::move(pj));
  }
  j["adjacency"] = nlohmann::json::array();
  for (const auto& e : ps.adjacency) j["adjacency"].push_back({e[0], e[1]});
  return j;
}

inline PieceSet pieceset_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1)
      throw DataError("piece manifest: unsupported format_version");
    PieceSet ps;
    const auto& gj = j.at("grid");
    ps.grid.origin = {gj.at("origin").at(0).get<double>(), gj.at("origin").at(1).get<double>(),
                      gj.at("origin").at(2).get<double>()};
    ps.grid.voxel_size = gj.at("voxel_size").get<double>();
    if (!(ps.grid.voxel_size > 0)) throw DataError("piece manifest: voxel_size must be positive");
    for (int a = 0; a < 3; ++a) {
      ps.grid.dims[static_cast<std::size_t>(a)] = gj.at("dims").at(static_cast<std::size_t>(a)).get<std::int64_t>();
      if (ps.grid.dims[static_cast<std::size_t>(a)] <= 0)
        throw DataError("piece manifest: dims must be positive");
    }
    ps.grid.occupancy.assign(static_cast<std::size_t>(ps.grid.cell_count()), 0);
    for (const auto& pj : j.at("pieces")) {
      Piece p;
      p.id = pj.at("id").get<int>();
      p.com = {pj.at("com").at(0).get<double>(), pj.at("com").at(1).get<double>(),
               pj.at("com").at(2).get<double>()};
      p.volume = pj.at("volume").get<double>();
      for (const auto& vj : pj.at("voxels")) {
        const std::int64_t v = vj.get<std::int64_t>();
        if (v < 0 || v >= ps.grid.cell_count())
          throw DataError("piece manifest: voxel index out of range");
        if (ps.grid.occupancy[static_cast<std::size_t>(v)])
          throw DataError("piece manifest: voxel assigned to two pieces");
        ps.grid.occupancy[static_cast<std::size_t>(v)] = 1;
        p.voxels.push_back(v);
      }
      if (p.voxels.empty()) throw DataError("piece manifest: piece with no voxels");
      if (p.id != static_cast<int>(ps.pieces.size()))
        throw DataError("piece manifest: piece ids must be 0..n-1 in order");
      ps.pieces.push_back(std::move(p));
    }
    if (ps.pieces.empty()) throw DataError("piece manifest: no pieces");
    for (const auto& ej : j.at("adjacency")) {
      const int a = ej.at(0).get<int>(), b = ej.at(1).get<int>();
      if (a < 0 || b < 0 || a >= static_cast<int>(ps.pieces.size()) ||
          b >= static_cast<int>(ps.pieces.size()) || a == b)
        throw DataError("piece manifest: bad adjacency pair");
      ps.adjacency.push_back({a, b});
    }
    return ps;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("piece manifest: ") + e.what());
  }
}

}  // namespace prefrac::geom
