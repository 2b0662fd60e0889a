#include "test_util.hpp"
#include "vemmhd/mesh.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace vemmhd;

namespace {

void expect_mesh_invariants(const PolyMesh& mesh) {
  double total = 0.0;
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const CellGeom& g = mesh.cell_geom(c);
    total += g.volume;
    Vec3 closure = Vec3::Zero();
    for (const auto& cf : mesh.cell_faces(c)) {
      const FaceGeom& fg = mesh.face_geom(cf.face);
      closure += cf.sign * fg.area * fg.normal;
    }
    EXPECT_LT(closure.norm(), 1e-12 * g.diameter * g.diameter) << "cell " << c;
    const int kv = static_cast<int>(g.vertices.size()), ke = static_cast<int>(g.edges.size());
    const int kf = static_cast<int>(mesh.cell_faces(c).size());
    EXPECT_EQ(kv - ke + kf, 2) << "cell " << c;
    for (const auto& t : g.tets) EXPECT_GT((t[1] - t[0]).dot((t[2] - t[0]).cross(t[3] - t[0])), 0.0);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(mesh.domain_volume(), 1.0, 1e-12);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const auto& cells = mesh.face_cells(f);
    if (mesh.is_boundary_face(f)) {
      EXPECT_EQ(cells.size(), 1u);
    } else {
      ASSERT_EQ(cells.size(), 2u);
      int signs = 0;
      for (int c : cells)
        for (const auto& cf : mesh.cell_faces(c))
          if (cf.face == f) signs += cf.sign;
      EXPECT_EQ(signs, 0) << "face " << f;
    }
    const FaceGeom& fg = mesh.face_geom(f);
    for (int v : mesh.face_vertices(f))
      EXPECT_LT(std::abs((mesh.vertex(v) - fg.centroid).dot(fg.normal)), 1e-10 * fg.diameter);
  }
}

std::string serialize(const PolyMesh& mesh) {
  std::ostringstream out;
  write_mesh(mesh, out);
  return out.str();
}

/// Unit cube whose top face is listed with the wrong orientation sign.
std::string broken_cube_file() {
  std::string text = serialize(build_cube_mesh(1));
  const auto pos = text.find("cells 1\n6 ");
  std::istringstream line(text.substr(pos + 8));
  std::string count, first;
  line >> count >> first;
  const std::string flipped = first[0] == '-' ? first.substr(1) : "-" + first;
  text.replace(pos + 8 + count.size() + 1, first.size(), flipped);
  return text;
}

}  // namespace

TEST(CubeMesh, CountsAndSize) {
  const PolyMesh m2 = build_cube_mesh(2);
  EXPECT_EQ(m2.num_vertices(), 27);
  EXPECT_EQ(m2.num_cells(), 8);
  EXPECT_EQ(m2.num_faces(), 36);
  EXPECT_EQ(m2.num_edges(), 54);
  const PolyMesh m4 = build_cube_mesh(4);
  EXPECT_EQ(m4.num_cells(), 64);
  EXPECT_NEAR(mesh_size(m4), 0.25, 1e-15);
  const PolyMesh m1 = build_cube_mesh(1);
  EXPECT_NEAR(mesh_size(m1), 1.0, 1e-15);
  EXPECT_EQ(m1.boundary_faces().size(), 6u);
}

TEST(CubeMesh, Invariants) {
  for (int n : {1, 2, 3}) expect_mesh_invariants(build_cube_mesh(n));
}

TEST(CubeMesh, BoundaryFlags) {
  const PolyMesh m = build_cube_mesh(3);
  for (int f = 0; f < m.num_faces(); ++f) {
    const Vec3& c = m.face_geom(f).centroid;
    bool on = false;
    for (int d = 0; d < 3; ++d) on = on || std::abs(c[d]) < 1e-14 || std::abs(c[d] - 1.0) < 1e-14;
    EXPECT_EQ(m.is_boundary_face(f), on);
  }
  int interior_vertices = 0;
  for (int v = 0; v < m.num_vertices(); ++v) interior_vertices += !m.is_boundary_vertex(v);
  EXPECT_EQ(interior_vertices, 8);
}

TEST(DtpMesh, SizesAndVolume) {
  const PolyMesh m5 = build_dtp_mesh(5, 0.0, 0);
  EXPECT_EQ(m5.num_cells(), 250);
  EXPECT_NEAR(mesh_size(m5), std::cbrt(1.0 / 250.0), 1e-15);
  EXPECT_NEAR(mesh_size(build_dtp_mesh(4, 0.1, 1)), 1.9842513149602492e-01, 1e-15);
  const PolyMesh m1 = build_dtp_mesh(1, 0.0, 0);
  EXPECT_EQ(m1.num_cells(), 2);
  EXPECT_NEAR(m1.cell_geom(0).volume + m1.cell_geom(1).volume, 1.0, 1e-15);
}

TEST(DtpMesh, Invariants) {
  expect_mesh_invariants(build_dtp_mesh(3, 0.0, 0));
  expect_mesh_invariants(build_dtp_mesh(3, 0.2, 42));
  expect_mesh_invariants(build_dtp_mesh(4, 0.2, 7));
}

TEST(DtpMesh, DeterministicForFixedSeed) {
  EXPECT_EQ(serialize(build_dtp_mesh(4, 0.1, 42)), serialize(build_dtp_mesh(4, 0.1, 42)));
  EXPECT_NE(serialize(build_dtp_mesh(4, 0.1, 42)), serialize(build_dtp_mesh(4, 0.1, 43)));
}

TEST(DtpMesh, BoundaryVerticesStayOnBoundary) {
  const PolyMesh m = build_dtp_mesh(3, 0.25, 5);
  for (int v = 0; v < m.num_vertices(); ++v) {
    if (!m.is_boundary_vertex(v)) continue;
    const Vec3& x = m.vertex(v);
    bool on = false;
    for (int d = 0; d < 3; ++d) on = on || x[d] == 0.0 || x[d] == 1.0;
    EXPECT_TRUE(on) << "vertex " << v;
  }
}

TEST(DtpMesh, RejectsExcessiveJitter) {
  EXPECT_THROW(build_dtp_mesh(2, 0.3, 0), GeometryError);
  EXPECT_THROW(build_dtp_mesh(0, 0.0, 0), GeometryError);
}

TEST(MeshIo, RoundTripIsIdentity) {
  for (const PolyMesh& m : {build_cube_mesh(2), build_dtp_mesh(2, 0.2, 3)}) {
    const std::string text = serialize(m);
    std::istringstream in(text);
    const PolyMesh back = read_mesh(in);
    EXPECT_EQ(serialize(back), text);
    EXPECT_EQ(back.num_cells(), m.num_cells());
    for (int v = 0; v < m.num_vertices(); ++v) EXPECT_EQ(back.vertex(v), m.vertex(v));
  }
}

TEST(MeshIo, FileRoundTrip) {
  const std::string path = ::testing::TempDir() + "/cube2.mesh";
  export_mesh(build_cube_mesh(2), path);
  const PolyMesh back = import_mesh(path);
  EXPECT_EQ(serialize(back), serialize(build_cube_mesh(2)));
}

TEST(MeshIo, OpenCellIsRejectedWithCellIndex) {
  std::istringstream in(broken_cube_file());
  try {
    read_mesh(in);
    FAIL() << "expected GeometryError";
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("cell 0"), std::string::npos) << e.what();
  }
}

TEST(MeshIo, MalformedFilesRaiseParseError) {
  for (const char* text : {"", "polymesh 2\n", "polymesh 1\nvertices 1\n0 0\n",
                           "polymesh 1\nvertices 3\n0 0 0\n1 0 0\n0 1 0\nfaces 1\n3 1 2 9\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(read_mesh(in), ParseError) << text;
  }
  EXPECT_THROW(import_mesh("/nonexistent/file.mesh"), ParseError);
}

TEST(MeshIo, VoronoiFixture) {
  const PolyMesh& m = vemmhd::testing::voronoi64();
  EXPECT_EQ(m.num_cells(), 64);
  EXPECT_NEAR(mesh_size(m), 0.25, 1e-12);
  expect_mesh_invariants(m);
  std::set<std::size_t> face_counts;
  for (int c = 0; c < m.num_cells(); ++c) face_counts.insert(m.cell_faces(c).size());
  EXPECT_GT(face_counts.size(), 1u);
}

TEST(MeshSize, ScaleCovariant) {
  const PolyMesh m = build_dtp_mesh(2, 0.1, 9);
  std::vector<Vec3> verts = m.vertices();
  for (auto& v : verts) v *= 2.0;
  std::vector<std::vector<int>> faces;
  for (int f = 0; f < m.num_faces(); ++f) faces.push_back(m.face_vertices(f));
  std::vector<std::vector<CellFace>> cells;
  for (int c = 0; c < m.num_cells(); ++c) cells.push_back(m.cell_faces(c));
  const PolyMesh scaled(verts, faces, cells);
  EXPECT_NEAR(mesh_size(scaled), 2.0 * mesh_size(m), 1e-14);
}

TEST(Regularity, UnitCubeIsNotFlagged) {
  const auto r = regularity_report(build_cube_mesh(1), 0.1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_FALSE(r[0].flagged);
  EXPECT_NEAR(r[0].min_edge, 1.0 / std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(r[0].centroid_to_face, 0.5 / std::sqrt(3.0), 1e-14);
}

TEST(Regularity, UndistortedPrismsAreIdentical) {
  const auto r = regularity_report(build_dtp_mesh(3, 0.0, 0), 0.1);
  for (const auto& x : r) {
    EXPECT_NEAR(x.centroid_to_face, r[0].centroid_to_face, 1e-12);
    EXPECT_NEAR(x.face_inradius, r[0].face_inradius, 1e-12);
    EXPECT_NEAR(x.min_edge, r[0].min_edge, 1e-12);
    EXPECT_FALSE(x.flagged);
  }
}

TEST(Regularity, SliverPrismIsFlagged) {
  // Triangular prism with height 0.01 and unit base.
  const std::vector<Vec3> v = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 0.01}, {1, 0, 0.01}, {0, 1, 0.01}};
  const std::vector<std::vector<int>> faces = {{0, 2, 1}, {3, 4, 5}, {0, 1, 4, 3}, {1, 2, 5, 4}, {2, 0, 3, 5}};
  const std::vector<std::vector<CellFace>> cells = {{{0, 1}, {1, 1}, {2, 1}, {3, 1}, {4, 1}}};
  const PolyMesh sliver(v, faces, cells);
  EXPECT_TRUE(regularity_report(sliver, 0.1)[0].flagged);
}
