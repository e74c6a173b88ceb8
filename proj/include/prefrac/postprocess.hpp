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
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefrac/common.hpp"
#include "prefrac/decode.hpp"
#include "prefrac/fracture.hpp"
#include "prefrac/mesh.hpp"

namespace prefrac::post {

// Final grouping: a partition of piece ids where every group induces a
// connected subgraph of the piece adjacency graph.
struct GroupSet {
  std::vector<std::vector<int>> groups;  // member piece ids, ascending
  std::vector<int> provenance;           // original label each group came from
};

// Splits each label's piece set into connected components of the induced
// subgraph; every component becomes its own group. Group order is
// (original label ascending, smallest member piece id ascending).
inline GroupSet split_disconnected(const infer::GroupLabeling& labeling,
                                   const std::vector<std::array<int, 2>>& adjacency) {
  const std::size_t n = labeling.labels.size();
  if (n == 0) throw ContractError("split_disconnected: empty labeling");
  for (int l : labeling.labels)
    if (l < 0) throw ContractError("split_disconnected: labels must be non-negative");
  std::vector<std::vector<int>> nbr(n);
  for (const auto& e : adjacency) {
    if (e[0] < 0 || e[1] < 0 || static_cast<std::size_t>(e[0]) >= n ||
        static_cast<std::size_t>(e[1]) >= n)
      throw ContractError("split_disconnected: adjacency references unknown piece");
    if (e[0] == e[1]) continue;
    nbr[static_cast<std::size_t>(e[0])].push_back(e[1]);
    nbr[static_cast<std::size_t>(e[1])].push_back(e[0]);
  }

  GroupSet out;
  std::vector<char> visited(n, 0);
  std::map<int, std::vector<int>> by_label;  // ordered: label ascending
  for (std::size_t i = 0; i < n; ++i)
    by_label[labeling.labels[static_cast<std::size_t>(i)]].push_back(static_cast<int>(i));
  for (const auto& [label, members] : by_label) {
    // Members are ascending, so components emerge ordered by smallest member.
    for (int seed_piece : members) {
      if (visited[static_cast<std::size_t>(seed_piece)]) continue;
      std::vector<int> comp, stack{seed_piece};
      visited[static_cast<std::size_t>(seed_piece)] = 1;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        comp.push_back(cur);
        for (int next : nbr[static_cast<std::size_t>(cur)]) {
          if (visited[static_cast<std::size_t>(next)]) continue;
          if (labeling.labels[static_cast<std::size_t>(next)] != label) continue;
          visited[static_cast<std::size_t>(next)] = 1;
          stack.push_back(next);
        }
      }
      std::sort(comp.begin(), comp.end());
      out.groups.push_back(std::move(comp));
      out.provenance.push_back(label);
    }
  }
  return out;
}

inline void check_groupset(const GroupSet& gs, std::size_t num_pieces) {
  if (gs.groups.size() != gs.provenance.size())
    throw ContractError("group set: provenance size mismatch");
  std::vector<char> seen(num_pieces, 0);
  std::size_t total = 0;
  for (const auto& g : gs.groups) {
    if (g.empty()) throw ContractError("group set: empty group");
    for (int id : g) {
      if (id < 0 || static_cast<std::size_t>(id) >= num_pieces || seen[static_cast<std::size_t>(id)])
        throw ContractError("group set: groups must partition the piece ids");
      seen[static_cast<std::size_t>(id)] = 1;
      ++total;
    }
  }
  if (total != num_pieces)
    throw ContractError("group set: groups must cover every piece id");
}

// One boundary mesh per group over the union of the group's voxels. Faces
// interior to the union never appear, so same-group contact faces vanish.
inline std::vector<geom::TriMesh> merge_group_meshes(const GroupSet& gs,
                                                     const geom::PieceSet& ps) {
  check_groupset(gs, ps.pieces.size());
  std::vector<geom::TriMesh> meshes;
  meshes.reserve(gs.groups.size());
  for (std::size_t gi = 0; gi < gs.groups.size(); ++gi)
    meshes.push_back(geom::piece_mesh(ps, gs.groups[gi], "group_" + std::to_string(gi)));
  return meshes;
}

// Writes group_<index>.obj per group plus a manifest naming each file with
// its member piece ids, total volume, and center of mass.
inline void export_group_set(const GroupSet& gs, const geom::PieceSet& ps,
                             const std::string& mesh_dir, const std::string& manifest_path) {
  const std::vector<geom::TriMesh> meshes = merge_group_meshes(gs, ps);
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["groups"] = nlohmann::json::array();
  for (std::size_t gi = 0; gi < gs.groups.size(); ++gi) {
    const std::string file = "group_" + std::to_string(gi) + ".obj";
    const std::string path = mesh_dir + "/" + file;
    std::ofstream out(path);
    if (!out) throw DataError("export_group_set: cannot open " + path);
    geom::save_obj(meshes[gi], out);
    if (!out) throw DataError("export_group_set: write failed for " + path);

    double volume = 0.0;
    Vec3 com{0.0, 0.0, 0.0};
    std::size_t voxels = 0;
    for (int id : gs.groups[gi]) {
      const geom::Piece& p = ps.pieces[static_cast<std::size_t>(id)];
      volume += p.volume;
      com += p.com * static_cast<double>(p.voxels.size());
      voxels += p.voxels.size();
    }
    com = com / static_cast<double>(voxels);
    nlohmann::json gj;
    gj["file"] = file;
    gj["pieces"] = gs.groups[gi];
    gj["volume"] = volume;
    gj["com"] = {com.x, com.y, com.z};
    manifest["groups"].push_back(std::move(gj));
  }
  std::ofstream out(manifest_path);
  if (!out) throw DataError("export_group_set: cannot open " + manifest_path);
  out << manifest.dump(2) << "\n";
}

}  // namespace prefrac::post
