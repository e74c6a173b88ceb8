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
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "prefrac/common.hpp"

namespace prefrac::geom {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::string name;

  // Every edge shared by exactly two triangles.
  bool watertight() const {
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& t : triangles) {
      for (int e = 0; e < 3; ++e) {
        int a = t[e], b = t[(e + 1) % 3];
        ++edge_count[{std::min(a, b), std::max(a, b)}];
      }
    }
    if (edge_count.empty()) return false;
    for (const auto& [edge, count] : edge_count)
      if (count != 2) return false;
    return true;
  }

  Vec3 bbox_min() const {
    Vec3 lo = vertices.at(0);
    for (const Vec3& v : vertices) lo = vmin(lo, v);
    return lo;
  }

  Vec3 bbox_max() const {
    Vec3 hi = vertices.at(0);
    for (const Vec3& v : vertices) hi = vmax(hi, v);
    return hi;
  }

  // Index range and degeneracy checks; call sites decide when to enforce.
  void validate() const {
    if (vertices.empty() || triangles.empty()) throw DataError("mesh is empty");
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles) {
      for (int i : t)
        if (i < 0 || i >= n) throw DataError("mesh triangle index out of range");
      const Vec3 a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
      if (cross(b - a, c - a).norm() < 1e-12) throw DataError("mesh has a degenerate triangle");
    }
  }
};

// Axis-aligned box surface (12 outward-oriented triangles).
inline TriMesh make_box(const Vec3& lo, const Vec3& hi, std::string name = "box") {
  TriMesh m;
  m.name = std::move(name);
  m.vertices = {
      {lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {lo.x, hi.y, lo.z},
      {lo.x, lo.y, hi.z}, {hi.x, lo.y, hi.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z}};
  m.triangles = {{0, 2, 1}, {0, 3, 2},    // z = lo
                 {4, 5, 6}, {4, 6, 7},    // z = hi
                 {0, 1, 5}, {0, 5, 4},    // y = lo
                 {2, 3, 7}, {2, 7, 6},    // y = hi
                 {1, 2, 6}, {1, 6, 5},    // x = hi
                 {0, 4, 7}, {0, 7, 3}};   // x = lo
  return m;
}

// Watertight sphere from a subdivided octahedron, vertices projected to radius r.
inline TriMesh make_sphere(const Vec3& center, double r, int subdivisions,
                           std::string name = "sphere") {
  TriMesh m;
  m.name = std::move(name);
  m.vertices = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  m.triangles = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
                 {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::make_pair(std::min(a, b), std::max(a, b));
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 p = (m.vertices[a] + m.vertices[b]) * 0.5;
      p = p * (1.0 / p.norm());
      m.vertices.push_back(p);
      int id = static_cast<int>(m.vertices.size() - 1);
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& t : m.triangles) {
      int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  for (Vec3& v : m.vertices) v = center + v * r;
  return m;
}

// Wavefront OBJ reader: `v x y z` vertices and `f` faces with 1-based indices.
// Polygon faces are fan-triangulated; `i/t/n` index forms keep the first field.
inline TriMesh load_obj_stream(std::istream& in, const std::string& origin) {
  TriMesh m;
  m.name = origin;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x >> p.y >> p.z)) fail("malformed vertex line");
      m.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const std::string first = tok.substr(0, tok.find('/'));
        int v = 0;
        try {
          std::size_t used = 0;
          v = std::stoi(first, &used);
          if (used != first.size()) throw std::invalid_argument(first);
        } catch (const std::exception&) {
          fail("malformed face index '" + tok + "'");
        }
        if (v < 0) v = static_cast<int>(m.vertices.size()) + v + 1;  // OBJ negative refs
        if (v < 1 || v > static_cast<int>(m.vertices.size()))
          fail("face index out of range '" + tok + "'");
        idx.push_back(v - 1);
      }
      if (idx.size() < 3) fail("face with fewer than 3 vertices");
      for (std::size_t i = 1; i + 1 < idx.size(); ++i)
        m.triangles.push_back({idx[0], idx[i], idx[i + 1]});
    }
    // Other tags (vn, vt, o, g, s, usemtl, ...) are ignored.
  }
  if (m.vertices.empty() || m.triangles.empty()) throw DataError(origin + ": empty mesh");
  return m;
}

inline TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mesh file: " + path);
  return load_obj_stream(in, path);
}

inline void save_obj(const TriMesh& m, std::ostream& out) {
  char buf[128];
  for (const Vec3& v : m.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    out << buf;
  }
  for (const auto& t : m.triangles)
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

inline void save_obj(const TriMesh& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mesh file: " + path);
  save_obj(m, out);
}

}  // namespace prefrac::geom
