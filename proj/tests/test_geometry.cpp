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

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "prefrac/fracture.hpp"
#include "prefrac/mesh.hpp"
#include "prefrac/voxelize.hpp"

namespace geom = prefrac::geom;
using geom::TriMesh;
using geom::VoxelGrid;
using prefrac::Rng;
using prefrac::Vec3;

namespace {

// All-occupied grid with unit voxels at the origin.
VoxelGrid solid_grid(std::int64_t nx, std::int64_t ny, std::int64_t nz) {
  VoxelGrid g;
  g.origin = {0, 0, 0};
  g.voxel_size = 1.0;
  g.dims = {nx, ny, nz};
  g.occupancy.assign(static_cast<std::size_t>(nx * ny * nz), 1);
  return g;
}

std::string cube_obj_text() {
  std::ostringstream os;
  geom::save_obj(geom::make_box({0, 0, 0}, {1, 1, 1}), os);
  return os.str();
}

}  // namespace

TEST(LoadObj, UnitCubeIsWatertight) {
  std::istringstream in(cube_obj_text());
  TriMesh m = geom::load_obj_stream(in, "cube.obj");
  EXPECT_EQ(m.vertices.size(), 8u);
  EXPECT_EQ(m.triangles.size(), 12u);
  EXPECT_TRUE(m.watertight());
}

TEST(LoadObj, MissingFaceBreaksWatertightness) {
  TriMesh m = geom::make_box({0, 0, 0}, {1, 1, 1});
  m.triangles.pop_back();
  EXPECT_FALSE(m.watertight());
}

TEST(LoadObj, MalformedIndexNamesLine) {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 xyz\n");
  try {
    geom::load_obj_stream(in, "bad.obj");
    FAIL() << "expected parse error";
  } catch (const prefrac::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.obj:4"), std::string::npos) << e.what();
  }
}

TEST(LoadObj, EmptyMeshRejected) {
  std::istringstream in("# nothing here\n");
  EXPECT_THROW(geom::load_obj_stream(in, "empty.obj"), prefrac::DataError);
}

TEST(LoadObj, QuadFacesAreFanTriangulated) {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  TriMesh m = geom::load_obj_stream(in, "quad.obj");
  ASSERT_EQ(m.triangles.size(), 2u);
  EXPECT_EQ(m.triangles[0], (std::array<int, 3>{0, 1, 2}));
  EXPECT_EQ(m.triangles[1], (std::array<int, 3>{0, 2, 3}));
}

TEST(SaveObj, RoundTripBitExact) {
  Rng rng(3);
  TriMesh m = geom::make_box({rng.uniform01(), rng.uniform01(), rng.uniform01()},
                             {2 + rng.uniform01(), 2.5, 3.25});
  std::ostringstream os;
  geom::save_obj(m, os);
  std::istringstream in(os.str());
  TriMesh back = geom::load_obj_stream(in, "roundtrip.obj");
  ASSERT_EQ(back.vertices.size(), m.vertices.size());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    EXPECT_EQ(back.vertices[i].x, m.vertices[i].x);
    EXPECT_EQ(back.vertices[i].y, m.vertices[i].y);
    EXPECT_EQ(back.vertices[i].z, m.vertices[i].z);
  }
  EXPECT_EQ(back.triangles, m.triangles);
}

TEST(Voxelize, UnitCubeResolutionFour) {
  const TriMesh cube = geom::make_box({0, 0, 0}, {1, 1, 1});
  VoxelGrid g = geom::voxelize(cube, 4);
  EXPECT_EQ(g.dims, (std::array<std::int64_t, 3>{6, 6, 6}));
  // Oracle: a voxel center is inside the unit cube iff all coords in (0,1).
  std::int64_t count = 0;
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x) {
        const Vec3 c = g.voxel_center(x, y, z);
        const bool inside =
            c.x > 0 && c.x < 1 && c.y > 0 && c.y < 1 && c.z > 0 && c.z < 1;
        EXPECT_EQ(g.occupied(x, y, z), inside) << x << "," << y << "," << z;
        count += inside ? 1 : 0;
      }
  EXPECT_EQ(count, 64);
}

TEST(Voxelize, SphereVolumeWithinTenPercent) {
  const double r = 0.5;
  const TriMesh sphere = geom::make_sphere({0.5, 0.5, 0.5}, r, 4);
  ASSERT_TRUE(sphere.watertight());
  VoxelGrid g = geom::voxelize(sphere, 32);
  const double occupied = static_cast<double>(g.occupied_indices().size());
  const double volume = occupied * g.voxel_size * g.voxel_size * g.voxel_size;
  const double exact = 4.0 / 3.0 * M_PI * r * r * r;
  EXPECT_NEAR(volume, exact, 0.1 * exact);
}

TEST(Voxelize, NonWatertightRejected) {
  TriMesh plane;
  plane.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  plane.triangles = {{0, 1, 2}, {0, 2, 3}};
  EXPECT_THROW(geom::voxelize(plane, 8), prefrac::DataError);
}

TEST(Voxelize, ResolutionBelowFourRejected) {
  const TriMesh cube = geom::make_box({0, 0, 0}, {1, 1, 1});
  EXPECT_THROW(geom::voxelize(cube, 3), prefrac::ContractError);
}

TEST(Fracture, NearestSiteTieBreaksToLowestIndex) {
  VoxelGrid g = solid_grid(11, 1, 1);
  // Sites at voxel x-coordinates 0 and 10.
  geom::PieceSet ps = geom::fracture_with_sites(g, {g.index(0, 0, 0), g.index(10, 0, 0)});
  ASSERT_EQ(ps.pieces.size(), 2u);
  // Voxels 0..4 are nearer site 0, 6..10 nearer site 1, voxel 5 ties -> site 0.
  EXPECT_EQ(ps.pieces[0].voxels,
            (std::vector<std::int64_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(ps.pieces[1].voxels, (std::vector<std::int64_t>{6, 7, 8, 9, 10}));
}

TEST(Fracture, SiteCountOutOfRangeRejected) {
  VoxelGrid g = solid_grid(2, 2, 1);
  EXPECT_THROW(geom::fracture(g, 0, 1), prefrac::ContractError);
  EXPECT_THROW(geom::fracture(g, 5, 1), prefrac::ContractError);
}

TEST(Fracture, PartitionConnectivitySymmetryDeterminism) {
  const TriMesh cube = geom::make_box({0, 0, 0}, {1, 1, 1});
  VoxelGrid g = geom::voxelize(cube, 8);
  const auto occupied = g.occupied_indices();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    geom::PieceSet ps = geom::fracture(g, 12, seed);
    // Partition: disjoint and covering.
    std::set<std::int64_t> seen;
    for (const auto& p : ps.pieces) {
      EXPECT_FALSE(p.voxels.empty());
      for (std::int64_t v : p.voxels) EXPECT_TRUE(seen.insert(v).second);
    }
    EXPECT_EQ(seen.size(), occupied.size());
    // Connectivity: component split leaves exactly one component per piece.
    for (const auto& p : ps.pieces)
      EXPECT_EQ(geom::detail::connected_components(g, p.voxels).size(), 1u);
    // Adjacency: normalized pairs, no self-loops, consistent with voxel faces.
    for (const auto& e : ps.adjacency) EXPECT_LT(e[0], e[1]);
    // Determinism: bitwise-identical rerun.
    geom::PieceSet again = geom::fracture(g, 12, seed);
    ASSERT_EQ(again.pieces.size(), ps.pieces.size());
    for (std::size_t i = 0; i < ps.pieces.size(); ++i) {
      EXPECT_EQ(again.pieces[i].voxels, ps.pieces[i].voxels);
      EXPECT_EQ(again.pieces[i].com.x, ps.pieces[i].com.x);
      EXPECT_EQ(again.pieces[i].com.y, ps.pieces[i].com.y);
      EXPECT_EQ(again.pieces[i].com.z, ps.pieces[i].com.z);
      EXPECT_EQ(again.pieces[i].volume, ps.pieces[i].volume);
    }
    EXPECT_EQ(again.adjacency, ps.adjacency);
  }
}

TEST(Fracture, MatchesBruteForceOracleOnCube) {
  VoxelGrid g = solid_grid(16, 16, 16);
  const auto occupied = g.occupied_indices();
  geom::PieceSet ps = geom::fracture(g, 8, 1234);

  // Recover the seeded site draw to drive the oracle.
  std::vector<std::int64_t> pool = occupied;
  Rng rng(1234);
  for (int i = 0; i < 8; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + rng.bounded(pool.size() - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(8);

  // Brute-force nearest-site scan; ties to the lowest site index.
  std::vector<int> oracle(occupied.size(), -1);
  for (std::size_t vi = 0; vi < occupied.size(); ++vi) {
    const auto c = g.coords(occupied[vi]);
    std::int64_t best = -1;
    for (std::size_t s = 0; s < pool.size(); ++s) {
      const auto sc = g.coords(pool[s]);
      const std::int64_t d2 = (c[0] - sc[0]) * (c[0] - sc[0]) +
                              (c[1] - sc[1]) * (c[1] - sc[1]) +
                              (c[2] - sc[2]) * (c[2] - sc[2]);
      if (best < 0 || d2 < best) {
        best = d2;
        oracle[vi] = static_cast<int>(s);
      }
    }
  }

  // Every piece must be wholly contained in one oracle cell, and the piece
  // cells must cover the same voxel->site assignment.
  std::vector<int> assigned(static_cast<std::size_t>(g.cell_count()), -1);
  for (std::size_t vi = 0; vi < occupied.size(); ++vi)
    assigned[static_cast<std::size_t>(occupied[vi])] = oracle[vi];
  for (const auto& p : ps.pieces) {
    const int site = assigned[static_cast<std::size_t>(p.voxels.front())];
    for (std::int64_t v : p.voxels)
      EXPECT_EQ(assigned[static_cast<std::size_t>(v)], site);
  }
  std::size_t total = 0;
  for (const auto& p : ps.pieces) total += p.voxels.size();
  EXPECT_EQ(total, occupied.size());
}

TEST(PieceMesh, SingleVoxelIsTwelveTriangles) {
  VoxelGrid g = solid_grid(3, 3, 3);
  TriMesh m = geom::voxel_surface_mesh(g, {g.index(1, 1, 1)});
  EXPECT_EQ(m.vertices.size(), 8u);
  EXPECT_EQ(m.triangles.size(), 12u);
  EXPECT_TRUE(m.watertight());
}

TEST(PieceMesh, TwoAdjacentVoxelsTwentyTriangles) {
  VoxelGrid g = solid_grid(4, 3, 3);
  TriMesh m = geom::voxel_surface_mesh(g, {g.index(1, 1, 1), g.index(2, 1, 1)});
  EXPECT_EQ(m.triangles.size(), 20u);
  EXPECT_TRUE(m.watertight());
}

TEST(PieceMesh, DiagonalVoxelsStayWatertight) {
  // Two voxels sharing only a lattice edge: the shared edge must become two
  // separate welded edges (one per cube), not one edge with four triangles.
  VoxelGrid g = solid_grid(4, 4, 4);
  TriMesh m = geom::voxel_surface_mesh(g, {g.index(1, 1, 1), g.index(2, 2, 1)});
  EXPECT_EQ(m.triangles.size(), 24u);
  EXPECT_EQ(m.vertices.size(), 16u);
  EXPECT_TRUE(m.watertight());
}

TEST(PieceMesh, CornerTouchingVoxelsStayWatertight) {
  VoxelGrid g = solid_grid(4, 4, 4);
  TriMesh m = geom::voxel_surface_mesh(g, {g.index(1, 1, 1), g.index(2, 2, 2)});
  EXPECT_EQ(m.triangles.size(), 24u);
  EXPECT_EQ(m.vertices.size(), 16u);  // the touching corner is not welded
  EXPECT_TRUE(m.watertight());
}

TEST(PieceMesh, RandomSubsetsAlwaysWatertightWithExactVolume) {
  VoxelGrid g = solid_grid(5, 5, 5);
  Rng rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::int64_t> subset;
    for (std::int64_t v = 0; v < g.cell_count(); ++v)
      if (rng.uniform01() < 0.4) subset.push_back(v);
    if (subset.empty()) subset.push_back(static_cast<std::int64_t>(rng.bounded(
        static_cast<std::uint64_t>(g.cell_count()))));
    TriMesh m = geom::voxel_surface_mesh(g, subset);
    EXPECT_TRUE(m.watertight()) << "rep " << rep;
    EXPECT_EQ(geom::lattice_volume_6x(g, m),
              6 * static_cast<std::int64_t>(subset.size()))
        << "rep " << rep;
  }
}

TEST(PieceMesh, EmptyIdSetRejected) {
  VoxelGrid g = solid_grid(2, 2, 2);
  geom::PieceSet ps = geom::fracture(g, 2, 5);
  EXPECT_THROW(geom::piece_mesh(ps, {}), prefrac::ContractError);
}

TEST(Centers, MatchesBruteForceMean) {
  const TriMesh cube = geom::make_box({0, 0, 0}, {1, 1, 1});
  VoxelGrid g = geom::voxelize(cube, 8);
  geom::PieceSet ps = geom::fracture(g, 5, 99);
  const auto pts = geom::centers_point_cloud(ps);
  ASSERT_EQ(pts.size(), ps.pieces.size());
  for (std::size_t i = 0; i < ps.pieces.size(); ++i) {
    Vec3 mean{0, 0, 0};
    for (std::int64_t v : ps.pieces[i].voxels) mean += g.voxel_center(v);
    mean = mean * (1.0 / static_cast<double>(ps.pieces[i].voxels.size()));
    EXPECT_NEAR(pts[i].x, mean.x, 1e-12);
    EXPECT_NEAR(pts[i].y, mean.y, 1e-12);
    EXPECT_NEAR(pts[i].z, mean.z, 1e-12);
  }
}

TEST(Centers, TwoVoxelExample) {
  VoxelGrid g;
  g.origin = {-0.5, -0.5, -0.5};
  g.voxel_size = 1.0;
  g.dims = {2, 1, 1};
  g.occupancy = {1, 1};
  geom::PieceSet ps = geom::fracture_with_sites(g, {0});
  ASSERT_EQ(ps.pieces.size(), 1u);
  EXPECT_DOUBLE_EQ(ps.pieces[0].com.x, 0.5);
  EXPECT_DOUBLE_EQ(ps.pieces[0].com.y, 0.0);
  EXPECT_DOUBLE_EQ(ps.pieces[0].com.z, 0.0);
}

TEST(Manifest, RoundTripIsLossless) {
  const TriMesh cube = geom::make_box({0.25, 0, 0}, {1.25, 1.5, 0.75});
  VoxelGrid g = geom::voxelize(cube, 6);
  geom::PieceSet ps = geom::fracture(g, 4, 42);
  nlohmann::json j = geom::pieceset_to_json(ps);
  geom::PieceSet back = geom::pieceset_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.grid.dims, ps.grid.dims);
  EXPECT_EQ(back.grid.voxel_size, ps.grid.voxel_size);
  EXPECT_EQ(back.grid.origin.x, ps.grid.origin.x);
  ASSERT_EQ(back.pieces.size(), ps.pieces.size());
  for (std::size_t i = 0; i < ps.pieces.size(); ++i) {
    EXPECT_EQ(back.pieces[i].voxels, ps.pieces[i].voxels);
    EXPECT_EQ(back.pieces[i].com.x, ps.pieces[i].com.x);
    EXPECT_EQ(back.pieces[i].volume, ps.pieces[i].volume);
  }
  EXPECT_EQ(back.adjacency, ps.adjacency);
  EXPECT_EQ(back.grid.occupied_indices(), ps.grid.occupied_indices());
}

TEST(Manifest, BadVersionAndMalformedRejected) {
  VoxelGrid g = solid_grid(2, 1, 1);
  geom::PieceSet ps = geom::fracture_with_sites(g, {0});
  nlohmann::json j = geom::pieceset_to_json(ps);
  j["format_version"] = 99;
  EXPECT_THROW(geom::pieceset_from_json(j), prefrac::DataError);
  nlohmann::json j2 = geom::pieceset_to_json(ps);
  j2.erase("pieces");
  EXPECT_THROW(geom::pieceset_from_json(j2), prefrac::DataError);
}
