#pragma once

#include "vemmhd/mesh.hpp"

#include <Eigen/Dense>

#include <string>

namespace vemmhd::testing {

inline std::string data_path(const std::string& name) { return std::string(VEMMHD_TEST_DATA) + "/" + name; }

inline const PolyMesh& unit_cube() {
  static const PolyMesh mesh = build_cube_mesh(1);
  return mesh;
}

inline const PolyMesh& unit_prisms() {
  static const PolyMesh mesh = build_dtp_mesh(1, 0.0, 0);
  return mesh;
}

inline const PolyMesh& distorted_prisms() {
  static const PolyMesh mesh = build_dtp_mesh(3, 0.2, 42);
  return mesh;
}

inline const PolyMesh& voronoi64() {
  static const PolyMesh mesh = import_mesh(data_path("voronoi64.mesh"));
  return mesh;
}

/// Interior cell with the most faces; on a Voronoi mesh this is a genuinely polyhedral cell.
inline int richest_cell(const PolyMesh& mesh) {
  int best = 0;
  for (int c = 0; c < mesh.num_cells(); ++c)
    if (mesh.cell_faces(c).size() > mesh.cell_faces(best).size()) best = c;
  return best;
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace vemmhd::testing
