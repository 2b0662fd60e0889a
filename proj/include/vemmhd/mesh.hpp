#pragma once

#include "vemmhd/core.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace vemmhd {

/// A face referenced from a cell; sign = +1 when the stored face normal
/// points out of the cell.
struct CellFace {
  int face = 0;
  int sign = 1;
};

struct FaceGeom {
  Vec3 centroid = Vec3::Zero();
  Vec3 normal = Vec3::Zero();  ///< unit, stored orientation
  Vec3 axis1 = Vec3::Zero();   ///< in-plane orthonormal frame, axis2 = normal x axis1
  Vec3 axis2 = Vec3::Zero();
  double area = 0.0;
  double diameter = 0.0;
  /// Fan triangles (centroid, v_i, v_{i+1}), counter-clockwise about normal.
  std::vector<std::array<Vec3, 3>> triangles;
};

struct CellGeom {
  Vec3 centroid = Vec3::Zero();
  double volume = 0.0;
  double diameter = 0.0;
  /// Positively oriented tetrahedra (cell centroid, face centroid, v_i, v_{i+1}).
  std::vector<std::array<Vec3, 4>> tets;
  std::vector<int> vertices;  ///< sorted global vertex indices
  std::vector<int> edges;     ///< sorted global edge indices
};

/// Immutable polyhedral mesh with cached geometry. Construction validates
/// closure, planarity, face sharing, the Euler characteristic and tetrahedral
/// positivity, and throws GeometryError naming the offending entity.
class PolyMesh {
public:
  PolyMesh(std::vector<Vec3> vertices, std::vector<std::vector<int>> faces,
           std::vector<std::vector<CellFace>> cells,
           std::optional<std::vector<int>> declared_boundary = std::nullopt)
      : vertices_(std::move(vertices)), faces_(std::move(faces)), cells_(std::move(cells)) {
    build_topology();
    build_face_geometry();
    build_cell_geometry();
    if (declared_boundary) check_declared_boundary(*declared_boundary);
  }

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  int num_faces() const { return static_cast<int>(faces_.size()); }
  int num_cells() const { return static_cast<int>(cells_.size()); }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const Vec3& vertex(int v) const { return vertices_[v]; }
  const std::array<int, 2>& edge(int e) const { return edges_[e]; }
  const std::vector<int>& face_vertices(int f) const { return faces_[f]; }
  /// Edge i of the loop joins face_vertices(f)[i] and [i+1].
  const std::vector<int>& face_edges(int f) const { return face_edges_[f]; }
  const std::vector<CellFace>& cell_faces(int c) const { return cells_[c]; }
  const std::vector<int>& face_cells(int f) const { return face_cells_[f]; }

  bool is_boundary_face(int f) const { return boundary_face_[f]; }
  bool is_boundary_edge(int e) const { return boundary_edge_[e]; }
  bool is_boundary_vertex(int v) const { return boundary_vertex_[v]; }

  const FaceGeom& face_geom(int f) const { return face_geom_[f]; }
  const CellGeom& cell_geom(int c) const { return cell_geom_[c]; }
  double domain_volume() const { return domain_volume_; }

  std::vector<int> boundary_faces() const {
    std::vector<int> out;
    for (int f = 0; f < num_faces(); ++f)
      if (boundary_face_[f]) out.push_back(f);
    return out;
  }

  /// Index of the edge joining a and b, or -1.
  int find_edge(int a, int b) const {
    auto it = edge_index_.find(std::minmax(a, b));
    return it == edge_index_.end() ? -1 : it->second;
  }

private:
  void build_topology() {
    const int nv = num_vertices();
    face_edges_.resize(faces_.size());
    for (int f = 0; f < num_faces(); ++f) {
      const auto& loop = faces_[f];
      if (loop.size() < 3) throw GeometryError("face " + std::to_string(f) + " has fewer than 3 vertices");
      for (std::size_t i = 0; i < loop.size(); ++i) {
        const int a = loop[i];
        const int b = loop[(i + 1) % loop.size()];
        if (a < 0 || a >= nv) throw GeometryError("face " + std::to_string(f) + " references a missing vertex");
        if (a == b) throw GeometryError("face " + std::to_string(f) + " has a repeated vertex");
        auto key = std::minmax(a, b);
        auto [it, inserted] = edge_index_.try_emplace(key, static_cast<int>(edges_.size()));
        if (inserted) edges_.push_back({key.first, key.second});
        face_edges_[f].push_back(it->second);
      }
    }
    face_cells_.assign(faces_.size(), {});
    std::vector<std::vector<int>> face_signs(faces_.size());
    for (int c = 0; c < num_cells(); ++c) {
      for (const auto& cf : cells_[c]) {
        if (cf.face < 0 || cf.face >= num_faces())
          throw GeometryError("cell " + std::to_string(c) + " references a missing face");
        if (cf.sign != 1 && cf.sign != -1)
          throw GeometryError("cell " + std::to_string(c) + " has an invalid face sign");
        face_cells_[cf.face].push_back(c);
        face_signs[cf.face].push_back(cf.sign);
      }
    }
    boundary_face_.assign(faces_.size(), false);
    boundary_edge_.assign(edges_.size(), false);
    boundary_vertex_.assign(vertices_.size(), false);
    for (int f = 0; f < num_faces(); ++f) {
      const auto& owners = face_cells_[f];
      if (owners.size() == 1) {
        boundary_face_[f] = true;
        for (int e : face_edges_[f]) boundary_edge_[e] = true;
        for (int v : faces_[f]) boundary_vertex_[v] = true;
      } else if (owners.size() == 2) {
        if (face_signs[f][0] != -face_signs[f][1])
          throw GeometryError("face " + std::to_string(f) + " shared by cells " + std::to_string(owners[0]) +
                              " and " + std::to_string(owners[1]) + " with equal orientation");
      } else {
        throw GeometryError("face " + std::to_string(f) + " used by " + std::to_string(owners.size()) + " cells");
      }
    }
  }

  void build_face_geometry() {
    face_geom_.resize(faces_.size());
    for (int f = 0; f < num_faces(); ++f) {
      const auto& loop = faces_[f];
      FaceGeom& g = face_geom_[f];
      Vec3 newell = Vec3::Zero();
      Vec3 mean = Vec3::Zero();
      for (std::size_t i = 0; i < loop.size(); ++i) {
        const Vec3& p = vertices_[loop[i]];
        const Vec3& q = vertices_[loop[(i + 1) % loop.size()]];
        newell += p.cross(q);
        mean += p;
      }
      mean /= static_cast<double>(loop.size());
      const double twice_area = newell.norm();
      if (!(twice_area > 0.0)) throw GeometryError("face " + std::to_string(f) + " has zero area");
      g.normal = newell / twice_area;
      g.area = 0.5 * twice_area;
      Vec3 weighted = Vec3::Zero();
      double total = 0.0;
      for (std::size_t i = 0; i < loop.size(); ++i) {
        const Vec3& p = vertices_[loop[i]];
        const Vec3& q = vertices_[loop[(i + 1) % loop.size()]];
        const double a = 0.5 * (p - mean).cross(q - mean).dot(g.normal);
        weighted += a * (mean + p + q) / 3.0;
        total += a;
      }
      g.centroid = weighted / total;
      g.diameter = 0.0;
      for (std::size_t i = 0; i < loop.size(); ++i)
        for (std::size_t j = i + 1; j < loop.size(); ++j)
          g.diameter = std::max(g.diameter, (vertices_[loop[i]] - vertices_[loop[j]]).norm());
      for (int v : loop) {
        if (std::abs((vertices_[v] - g.centroid).dot(g.normal)) > 1e-10 * g.diameter)
          throw GeometryError("face " + std::to_string(f) + " is not planar");
      }
      Vec3 first = vertices_[loop[1]] - vertices_[loop[0]];
      first -= first.dot(g.normal) * g.normal;
      g.axis1 = first.normalized();
      g.axis2 = g.normal.cross(g.axis1);
      for (std::size_t i = 0; i < loop.size(); ++i) {
        const Vec3& p = vertices_[loop[i]];
        const Vec3& q = vertices_[loop[(i + 1) % loop.size()]];
        if ((p - g.centroid).cross(q - g.centroid).dot(g.normal) <= 0.0)
          throw GeometryError("face " + std::to_string(f) + " is not star-shaped about its centroid");
        g.triangles.push_back({g.centroid, p, q});
      }
    }
  }

  void build_cell_geometry() {
    cell_geom_.resize(cells_.size());
    domain_volume_ = 0.0;
    for (int c = 0; c < num_cells(); ++c) {
      const std::string name = "cell " + std::to_string(c);
      CellGeom& g = cell_geom_[c];
      std::set<int> verts;
      std::set<int> edges;
      Vec3 closure = Vec3::Zero();
      for (const auto& cf : cells_[c]) {
        const FaceGeom& fg = face_geom_[cf.face];
        closure += cf.sign * fg.area * fg.normal;
        verts.insert(faces_[cf.face].begin(), faces_[cf.face].end());
        edges.insert(face_edges_[cf.face].begin(), face_edges_[cf.face].end());
      }
      g.vertices.assign(verts.begin(), verts.end());
      g.edges.assign(edges.begin(), edges.end());
      g.diameter = 0.0;
      for (std::size_t i = 0; i < g.vertices.size(); ++i)
        for (std::size_t j = i + 1; j < g.vertices.size(); ++j)
          g.diameter = std::max(g.diameter, (vertices_[g.vertices[i]] - vertices_[g.vertices[j]]).norm());
      if (closure.norm() > 1e-12 * g.diameter * g.diameter)
        throw GeometryError(name + " boundary does not close");
      const long euler = static_cast<long>(g.vertices.size()) - static_cast<long>(g.edges.size()) +
                         static_cast<long>(cells_[c].size());
      if (euler != 2) throw GeometryError(name + " violates Euler's formula");

      // Volume and centroid from a fan about the vertex average, then the
      // final positive fan about the true centroid.
      Vec3 apex = Vec3::Zero();
      for (int v : g.vertices) apex += vertices_[v];
      apex /= static_cast<double>(g.vertices.size());
      double volume = 0.0;
      Vec3 moment = Vec3::Zero();
      for (const auto& cf : cells_[c]) {
        for (const auto& tri : face_geom_[cf.face].triangles) {
          const double v = cf.sign * (tri[1] - tri[0]).cross(tri[2] - tri[0]).dot(tri[0] - apex) / 6.0;
          volume += v;
          moment += v * (apex + tri[0] + tri[1] + tri[2]) / 4.0;
        }
      }
      if (!(volume > 0.0)) throw GeometryError(name + " has non-positive volume");
      g.volume = volume;
      g.centroid = moment / volume;
      for (const auto& cf : cells_[c]) {
        for (const auto& tri : face_geom_[cf.face].triangles) {
          std::array<Vec3, 4> tet{g.centroid, tri[0], tri[1], tri[2]};
          if (cf.sign < 0) std::swap(tet[2], tet[3]);
          const double v = (tet[1] - tet[0]).dot((tet[2] - tet[0]).cross(tet[3] - tet[0])) / 6.0;
          if (!(v > 0.0)) throw GeometryError(name + " has a non-positive tetrahedron");
          g.tets.push_back(tet);
        }
      }
      domain_volume_ += g.volume;
    }
  }

  void check_declared_boundary(const std::vector<int>& declared) const {
    std::set<int> listed(declared.begin(), declared.end());
    for (int f : listed)
      if (f < 0 || f >= num_faces()) throw GeometryError("boundary list references a missing face");
    for (int f = 0; f < num_faces(); ++f)
      if (listed.count(f) != static_cast<std::size_t>(boundary_face_[f]))
        throw GeometryError("face " + std::to_string(f) + " boundary flag disagrees with the boundary list");
  }

  std::vector<Vec3> vertices_;
  std::vector<std::vector<int>> faces_;
  std::vector<std::vector<CellFace>> cells_;
  std::vector<std::array<int, 2>> edges_;
  std::map<std::pair<int, int>, int> edge_index_;
  std::vector<std::vector<int>> face_edges_;
  std::vector<std::vector<int>> face_cells_;
  std::vector<bool> boundary_face_, boundary_edge_, boundary_vertex_;
  std::vector<FaceGeom> face_geom_;
  std::vector<CellGeom> cell_geom_;
  double domain_volume_ = 0.0;
};

/// (|Omega| / number of cells)^(1/3).
inline double mesh_size(const PolyMesh& mesh) {
  return std::cbrt(mesh.domain_volume() / mesh.num_cells());
}

namespace detail {

inline int grid_index(int i, int j, int k, int n) { return i + (n + 1) * (j + (n + 1) * k); }

/// Replaces every non-planar quadrilateral by two triangles split along
/// (v0, v2); cells referencing it take both halves with the same sign.
inline void split_nonplanar_quads(const std::vector<Vec3>& verts, std::vector<std::vector<int>>& faces,
                                  std::vector<std::vector<CellFace>>& cells) {
  std::vector<std::vector<int>> out;
  std::vector<std::vector<int>> replacement(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto& q = faces[f];
    bool planar = true;
    if (q.size() == 4) {
      const Vec3 n = (verts[q[2]] - verts[q[0]]).cross(verts[q[3]] - verts[q[1]]).normalized();
      double diam = 0.0;
      for (int a : q)
        for (int b : q) diam = std::max(diam, (verts[a] - verts[b]).norm());
      for (int a : q)
        if (std::abs((verts[a] - verts[q[0]]).dot(n)) > 1e-13 * diam) planar = false;
    }
    if (planar) {
      replacement[f] = {static_cast<int>(out.size())};
      out.push_back(q);
    } else {
      replacement[f] = {static_cast<int>(out.size()), static_cast<int>(out.size()) + 1};
      out.push_back({q[0], q[1], q[2]});
      out.push_back({q[0], q[2], q[3]});
    }
  }
  for (auto& cell : cells) {
    std::vector<CellFace> updated;
    for (const auto& cf : cell)
      for (int r : replacement[cf.face]) updated.push_back({r, cf.sign});
    cell = std::move(updated);
  }
  faces = std::move(out);
}

}  // namespace detail

/// n^3 axis-aligned cubes tiling the unit cube.
inline PolyMesh build_cube_mesh(int n) {
  if (n < 1) throw GeometryError("cube mesh needs n >= 1");
  std::vector<Vec3> verts;
  verts.reserve((n + 1) * (n + 1) * (n + 1));
  for (int k = 0; k <= n; ++k)
    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i) verts.emplace_back(double(i) / n, double(j) / n, double(k) / n);
  auto id = [n](int i, int j, int k) { return detail::grid_index(i, j, k, n); };
  std::vector<std::vector<int>> faces;
  std::vector<int> xface((n + 1) * n * n), yface((n + 1) * n * n), zface((n + 1) * n * n);
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        xface[i + (n + 1) * (j + n * k)] = static_cast<int>(faces.size());
        faces.push_back({id(i, j, k), id(i, j + 1, k), id(i, j + 1, k + 1), id(i, j, k + 1)});
      }
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) {
        yface[j + (n + 1) * (i + n * k)] = static_cast<int>(faces.size());
        faces.push_back({id(i, j, k), id(i, j, k + 1), id(i + 1, j, k + 1), id(i + 1, j, k)});
      }
  for (int k = 0; k <= n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        zface[k + (n + 1) * (i + n * j)] = static_cast<int>(faces.size());
        faces.push_back({id(i, j, k), id(i + 1, j, k), id(i + 1, j + 1, k), id(i, j + 1, k)});
      }
  std::vector<std::vector<CellFace>> cells;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        cells.push_back({{xface[i + (n + 1) * (j + n * k)], -1},
                         {xface[i + 1 + (n + 1) * (j + n * k)], 1},
                         {yface[j + (n + 1) * (i + n * k)], -1},
                         {yface[j + 1 + (n + 1) * (i + n * k)], 1},
                         {zface[k + (n + 1) * (i + n * j)], -1},
                         {zface[k + 1 + (n + 1) * (i + n * j)], 1}});
  return PolyMesh(std::move(verts), std::move(faces), std::move(cells));
}

/// Each grid cube split into two vertical triangular prisms along the
/// (i,j)-(i+1,j+1) diagonal. Interior vertices get a seeded offset of at most
/// jitter/n per coordinate; boundary vertices move only tangentially.
/// Side quadrilaterals that lose planarity are split into two triangles.
inline PolyMesh build_dtp_mesh(int n, double jitter, unsigned seed) {
  if (n < 1) throw GeometryError("prism mesh needs n >= 1");
  if (!(jitter >= 0.0 && jitter < 0.3)) throw GeometryError("prism mesh jitter must lie in [0, 0.3)");
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Vec3> verts;
  for (int k = 0; k <= n; ++k)
    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i) {
        const std::array<int, 3> ijk{i, j, k};
        Vec3 p(double(i) / n, double(j) / n, double(k) / n);
        for (int d = 0; d < 3; ++d) {
          const double offset = unit(rng) * jitter / n;
          if (ijk[d] != 0 && ijk[d] != n) p[d] += offset;
        }
        verts.push_back(p);
      }
  auto id = [n](int i, int j, int k) { return detail::grid_index(i, j, k, n); };
  std::vector<std::vector<int>> faces;
  auto add = [&faces](std::vector<int> loop) {
    faces.push_back(std::move(loop));
    return static_cast<int>(faces.size()) - 1;
  };
  // Horizontal triangles: lower (a,b,c) and upper (a,c,d) halves of each square.
  std::vector<std::array<int, 2>> htri((n + 1) * n * n);
  for (int k = 0; k <= n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const int a = id(i, j, k), b = id(i + 1, j, k), c = id(i + 1, j + 1, k), d = id(i, j + 1, k);
        htri[i + n * (j + n * k)] = {add({a, b, c}), add({a, c, d})};
      }
  std::vector<int> xq((n + 1) * n * n), yq((n + 1) * n * n), dq(n * n * n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i <= n; ++i)
        xq[i + (n + 1) * (j + n * k)] = add({id(i, j, k), id(i, j + 1, k), id(i, j + 1, k + 1), id(i, j, k + 1)});
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= n; ++j)
        yq[j + (n + 1) * (i + n * k)] = add({id(i, j, k), id(i, j, k + 1), id(i + 1, j, k + 1), id(i + 1, j, k)});
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        dq[i + n * (j + n * k)] = add({id(i, j, k), id(i + 1, j + 1, k), id(i + 1, j + 1, k + 1), id(i, j, k + 1)});
  std::vector<std::vector<CellFace>> cells;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const auto& lo = htri[i + n * (j + n * k)];
        const auto& hi = htri[i + n * (j + n * (k + 1))];
        const int diag = dq[i + n * (j + n * k)];
        cells.push_back({{lo[0], -1}, {hi[0], 1}, {yq[j + (n + 1) * (i + n * k)], -1},
                         {xq[i + 1 + (n + 1) * (j + n * k)], 1}, {diag, -1}});
        cells.push_back({{lo[1], -1}, {hi[1], 1}, {yq[j + 1 + (n + 1) * (i + n * k)], 1},
                         {xq[i + (n + 1) * (j + n * k)], -1}, {diag, 1}});
      }
  detail::split_nonplanar_quads(verts, faces, cells);
  return PolyMesh(std::move(verts), std::move(faces), std::move(cells));
}

/// Writes the canonical text serialization (1-based indices, %.17g coordinates).
inline void write_mesh(const PolyMesh& mesh, std::ostream& out) {
  char buf[96];
  out << "polymesh 1\n";
  out << "vertices " << mesh.num_vertices() << "\n";
  for (const auto& p : mesh.vertices()) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out << buf;
  }
  out << "faces " << mesh.num_faces() << "\n";
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const auto& loop = mesh.face_vertices(f);
    out << loop.size();
    for (int v : loop) out << ' ' << v + 1;
    out << "\n";
  }
  out << "cells " << mesh.num_cells() << "\n";
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const auto& cf = mesh.cell_faces(c);
    out << cf.size();
    for (const auto& x : cf) out << ' ' << x.sign * (x.face + 1);
    out << "\n";
  }
  const auto bnd = mesh.boundary_faces();
  out << "boundary " << bnd.size() << "\n";
  for (std::size_t i = 0; i < bnd.size(); ++i) out << bnd[i] + 1 << (i + 1 == bnd.size() ? "\n" : " ");
}

inline PolyMesh read_mesh(std::istream& in) {
  std::string token;
  auto expect = [&](const std::string& word) {
    if (!(in >> token) || token != word) throw ParseError("mesh file: expected '" + word + "'");
  };
  auto count = [&](const char* what) {
    long n = -1;
    if (!(in >> n) || n < 0) throw ParseError(std::string("mesh file: bad ") + what + " count");
    return n;
  };
  expect("polymesh");
  if (count("version") != 1) throw ParseError("mesh file: unsupported version");
  expect("vertices");
  const long nv = count("vertex");
  std::vector<Vec3> verts(nv);
  for (auto& p : verts)
    if (!(in >> p.x() >> p.y() >> p.z())) throw ParseError("mesh file: bad vertex line");
  expect("faces");
  const long nf = count("face");
  std::vector<std::vector<int>> faces(nf);
  for (auto& loop : faces) {
    const long k = count("face vertex");
    loop.resize(k);
    for (auto& v : loop) {
      long x = 0;
      if (!(in >> x) || x < 1 || x > nv) throw ParseError("mesh file: bad face vertex index");
      v = static_cast<int>(x - 1);
    }
  }
  expect("cells");
  const long nc = count("cell");
  std::vector<std::vector<CellFace>> cells(nc);
  for (auto& cell : cells) {
    const long m = count("cell face");
    cell.resize(m);
    for (auto& cf : cell) {
      long x = 0;
      if (!(in >> x) || x == 0 || std::abs(x) > nf) throw ParseError("mesh file: bad cell face index");
      cf = {static_cast<int>(std::abs(x) - 1), x > 0 ? 1 : -1};
    }
  }
  std::optional<std::vector<int>> boundary;
  if (in >> token) {
    if (token != "boundary") throw ParseError("mesh file: unexpected section '" + token + "'");
    const long nb = count("boundary");
    boundary.emplace(nb);
    for (auto& f : *boundary) {
      long x = 0;
      if (!(in >> x) || x < 1 || x > nf) throw ParseError("mesh file: bad boundary face index");
      f = static_cast<int>(x - 1);
    }
    if (in >> token) throw ParseError("mesh file: trailing content");
  }
  return PolyMesh(std::move(verts), std::move(faces), std::move(cells), std::move(boundary));
}

inline PolyMesh import_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open mesh file " + path);
  return read_mesh(in);
}

inline void export_mesh(const PolyMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write mesh file " + path);
  write_mesh(mesh, out);
}

struct CellRegularity {
  double centroid_to_face = 0.0;  ///< min distance cell centroid to a face plane / h_K
  double face_inradius = 0.0;     ///< min distance face centroid to an edge line / h_K
  double min_edge = 0.0;          ///< min edge length / h_K
  bool flagged = false;
};

/// Surrogate shape-regularity metrics per cell; a cell is flagged when any
/// metric falls below rho. These bound star-shapedness from below only
/// heuristically.
inline std::vector<CellRegularity> regularity_report(const PolyMesh& mesh, double rho) {
  std::vector<CellRegularity> report(mesh.num_cells());
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const CellGeom& g = mesh.cell_geom(c);
    const double h = g.diameter;
    double to_face = 1e300, inradius = 1e300, edge = 1e300;
    for (const auto& cf : mesh.cell_faces(c)) {
      const FaceGeom& fg = mesh.face_geom(cf.face);
      to_face = std::min(to_face, std::abs((g.centroid - fg.centroid).dot(fg.normal)));
      const auto& loop = mesh.face_vertices(cf.face);
      for (std::size_t i = 0; i < loop.size(); ++i) {
        const Vec3& a = mesh.vertex(loop[i]);
        const Vec3& b = mesh.vertex(loop[(i + 1) % loop.size()]);
        const Vec3 t = (b - a).normalized();
        const Vec3 d = fg.centroid - a;
        inradius = std::min(inradius, (d - d.dot(t) * t).norm());
      }
    }
    for (int e : g.edges) {
      const auto& ab = mesh.edge(e);
      edge = std::min(edge, (mesh.vertex(ab[0]) - mesh.vertex(ab[1])).norm());
    }
    CellRegularity& r = report[c];
    r.centroid_to_face = to_face / h;
    r.face_inradius = inradius / h;
    r.min_edge = edge / h;
    r.flagged = r.centroid_to_face < rho || r.face_inradius < rho || r.min_edge < rho;
  }
  return report;
}

}  // namespace vemmhd
