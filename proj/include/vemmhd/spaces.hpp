#pragma once

#include "vemmhd/core.hpp"
#include "vemmhd/mesh.hpp"
#include "vemmhd/polybasis.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <vector>

namespace vemmhd {

using VectorField = std::function<Vec3(const Vec3&)>;
using ScalarField = std::function<double(const Vec3&)>;

/// Polynomial degrees of the discretization. Velocity degree is fixed at 2.
struct Degrees {
  int k_u = 2;
  int k_J = 1;
};

/// Geometry and basis data of one face as seen from one cell.
struct FaceContext {
  int face = 0;
  int sign = 1;
  FaceBasis basis;               ///< degree 3, in-plane axes
  QuadratureRule quad;           ///< exactness 6
  Mat face_values;               ///< face P3 monomials at quad points (10 x nq)
  Mat cell_values;               ///< cell P3 monomials at quad points (20 x nq)
  std::vector<int> vertex_local; ///< loop vertex -> local cell vertex index
  std::vector<int> edge_local;   ///< loop edge -> local cell edge index
};

/// Everything a cell needs to build its projectors and local forms.
struct CellContext {
  int cell = 0;
  const PolyMesh* mesh = nullptr;
  Degrees deg;
  CellBasis basis;       ///< degree 3 scaled monomials
  Vec moments;           ///< int_K m_i up to degree 8
  QuadratureRule quad;   ///< exactness 6
  Mat quad_values;       ///< cell P3 monomials at quad points (20 x nq)
  std::vector<FaceContext> faces;
  Mat gperp;             ///< L2-orthonormal complement basis in [P_kJ]^3

  const CellGeom& geom() const { return mesh->cell_geom(cell); }
  double volume() const { return geom().volume; }
  double h() const { return basis.h; }
  int num_vertices() const { return static_cast<int>(geom().vertices.size()); }
  int num_edges() const { return static_cast<int>(geom().edges.size()); }
  int num_faces() const { return static_cast<int>(faces.size()); }

  // Local velocity DOF numbering: vertex triplets, edge-midpoint triplets,
  // face (normal, axis1, axis2) means, then the three divergence moments.
  int u_vertex(int iv, int c) const { return 3 * iv + c; }
  int u_edge(int ie, int c) const { return 3 * num_vertices() + 3 * ie + c; }
  int u_face(int jf, int k) const { return 3 * (num_vertices() + num_edges()) + 3 * jf + k; }
  int u_cell(int k) const { return 3 * (num_vertices() + num_edges() + num_faces()) + k; }
  int num_u() const { return 3 * (num_vertices() + num_edges() + num_faces()) + 3; }

  // Local current DOF numbering: face normal moments, gradient moments,
  // complement moments.
  int j_face_size() const { return dim_face(deg.k_J); }
  int j_face(int jf, int b) const { return jf * j_face_size() + b; }
  int j_grad(int a) const { return num_faces() * j_face_size() + a; }
  int j_perp(int j) const { return j_grad(dim_cell(deg.k_J) - 1) + j; }
  int num_gperp() const { return static_cast<int>(gperp.cols()); }
  int num_j() const { return j_perp(num_gperp()); }

  int num_p() const { return dim_cell(deg.k_u - 1); }
  int num_phi() const { return dim_cell(deg.k_J); }
};

inline CellContext make_cell_context(const PolyMesh& mesh, int c, Degrees deg) {
  CellContext ctx;
  ctx.cell = c;
  ctx.mesh = &mesh;
  ctx.deg = deg;
  const CellGeom& g = mesh.cell_geom(c);
  ctx.basis = CellBasis::of(g, 3);
  const QuadratureRule q8 = quad_cell(g, 8);
  ctx.moments = cell_moments(ctx.basis, q8, 8);
  ctx.quad = quad_cell(g, 6);
  ctx.quad_values.resize(dim_cell(3), ctx.quad.size());
  for (std::size_t q = 0; q < ctx.quad.size(); ++q) ctx.quad_values.col(q) = ctx.basis.values(ctx.quad.points[q]);
  std::map<int, int> vlocal, elocal;
  for (std::size_t i = 0; i < g.vertices.size(); ++i) vlocal[g.vertices[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < g.edges.size(); ++i) elocal[g.edges[i]] = static_cast<int>(i);
  for (const auto& cf : mesh.cell_faces(c)) {
    FaceContext fc;
    fc.face = cf.face;
    fc.sign = cf.sign;
    const FaceGeom& fg = mesh.face_geom(cf.face);
    fc.basis = FaceBasis::of(fg, 3);
    fc.quad = quad_face(fg, 6);
    fc.face_values.resize(dim_face(3), fc.quad.size());
    fc.cell_values.resize(dim_cell(3), fc.quad.size());
    for (std::size_t q = 0; q < fc.quad.size(); ++q) {
      fc.face_values.col(q) = fc.basis.values(fc.quad.points[q]);
      fc.cell_values.col(q) = ctx.basis.values(fc.quad.points[q]);
    }
    for (int v : mesh.face_vertices(cf.face)) fc.vertex_local.push_back(vlocal.at(v));
    for (int e : mesh.face_edges(cf.face)) fc.edge_local.push_back(elocal.at(e));
    ctx.faces.push_back(std::move(fc));
  }
  ctx.gperp = gperp_basis(CellBasis::of(g, deg.k_J), ctx.moments, deg.k_J);
  return ctx;
}

inline std::vector<CellContext> make_cell_contexts(const PolyMesh& mesh, Degrees deg, unsigned workers = 1) {
  std::vector<CellContext> out(mesh.num_cells());
  parallel_for(out.size(), workers, [&](std::size_t c) { out[c] = make_cell_context(mesh, static_cast<int>(c), deg); });
  return out;
}

/// Value of a [P_k]^3 coefficient vector (layout component * dim + monomial)
/// given monomial values.
inline Vec3 eval_vector_poly(const Vec& coeff, const Vec& mono, int k) {
  const int m = dim_cell(k);
  return {coeff.segment(0, m).dot(mono.head(m)), coeff.segment(m, m).dot(mono.head(m)),
          coeff.segment(2 * m, m).dot(mono.head(m))};
}

// ---------------------------------------------------------------------------
// Local interpolation (DOF functionals applied to a known field)

/// Velocity DOFs of `field` on one cell, integrating with rules of the given
/// exactness (6 reuses the cached rules).
inline Vec interpolate_velocity_local(const CellContext& ctx, const VectorField& field, int exactness = 6) {
  const PolyMesh& mesh = *ctx.mesh;
  const CellGeom& g = ctx.geom();
  Vec dofs = Vec::Zero(ctx.num_u());
  for (int iv = 0; iv < ctx.num_vertices(); ++iv) {
    const Vec3 v = field(mesh.vertex(g.vertices[iv]));
    for (int c = 0; c < 3; ++c) dofs[ctx.u_vertex(iv, c)] = v[c];
  }
  for (int ie = 0; ie < ctx.num_edges(); ++ie) {
    const auto& ab = mesh.edge(g.edges[ie]);
    const Vec3 v = field(0.5 * (mesh.vertex(ab[0]) + mesh.vertex(ab[1])));
    for (int c = 0; c < 3; ++c) dofs[ctx.u_edge(ie, c)] = v[c];
  }
  Vec3 div_moment = Vec3::Zero();  // int_K div v m_alpha, |alpha| = 1
  for (int jf = 0; jf < ctx.num_faces(); ++jf) {
    const FaceContext& fc = ctx.faces[jf];
    const FaceGeom& fg = mesh.face_geom(fc.face);
    const QuadratureRule rule = exactness == 6 ? fc.quad : quad_face(fg, exactness);
    Vec3 mean = Vec3::Zero();
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Vec3 v = field(rule.points[q]);
      const double w = rule.weights[q];
      mean += w * Vec3(v.dot(fg.normal), v.dot(fg.axis1), v.dot(fg.axis2));
      const Vec mono = ctx.basis.values_upto(rule.points[q], 1);
      div_moment += fc.sign * w * v.dot(fg.normal) * mono.segment(1, 3);
    }
    for (int k = 0; k < 3; ++k) dofs[ctx.u_face(jf, k)] = mean[k] / fg.area;
  }
  const QuadratureRule rule = exactness == 6 ? ctx.quad : quad_cell(g, exactness);
  Vec3 integral = Vec3::Zero();
  for (std::size_t q = 0; q < rule.size(); ++q) integral += rule.weights[q] * field(rule.points[q]);
  div_moment -= integral / ctx.h();
  for (int k = 0; k < 3; ++k) dofs[ctx.u_cell(k)] = ctx.h() / g.volume * div_moment[k];
  return dofs;
}

/// Current DOFs of `field` on one cell.
inline Vec interpolate_current_local(const CellContext& ctx, const VectorField& field, int exactness = 6) {
  const PolyMesh& mesh = *ctx.mesh;
  const CellGeom& g = ctx.geom();
  const int kJ = ctx.deg.k_J;
  Vec dofs = Vec::Zero(ctx.num_j());
  for (int jf = 0; jf < ctx.num_faces(); ++jf) {
    const FaceContext& fc = ctx.faces[jf];
    const FaceGeom& fg = mesh.face_geom(fc.face);
    const QuadratureRule rule = exactness == 6 ? fc.quad : quad_face(fg, exactness);
    FaceBasis fb = FaceBasis::of(fg, kJ);
    Vec acc = Vec::Zero(fb.size());
    for (std::size_t q = 0; q < rule.size(); ++q)
      acc += rule.weights[q] * field(rule.points[q]).dot(fg.normal) * fb.values(rule.points[q]);
    dofs.segment(ctx.j_face(jf, 0), fb.size()) = acc / fg.area;
  }
  const QuadratureRule rule = exactness == 6 ? ctx.quad : quad_cell(g, exactness);
  const int m = dim_cell(kJ);
  Vec moments = Vec::Zero(3 * m);  // int_K J_c m_alpha
  for (std::size_t q = 0; q < rule.size(); ++q) {
    const Vec3 v = field(rule.points[q]);
    const Vec mono = ctx.basis.values_upto(rule.points[q], kJ);
    for (int c = 0; c < 3; ++c) moments.segment(c * m, m) += rule.weights[q] * v[c] * mono;
  }
  for (int a = 1; a < m; ++a) {
    // grad m_a = e_d / h for linear a; k_J <= 1 keeps this exact.
    const int d = a - 1;
    dofs[ctx.j_grad(a - 1)] = moments[d * m] / g.volume;
  }
  const Vec perp = ctx.gperp.transpose() * moments;
  for (int j = 0; j < ctx.num_gperp(); ++j) dofs[ctx.j_perp(j)] = perp[j] / std::sqrt(g.volume);
  return dofs;
}

/// L2 projection of a scalar field onto P_k(K), as monomial coefficients.
inline Vec project_scalar_local(const CellContext& ctx, const ScalarField& field, int k, int exactness = 6) {
  const QuadratureRule rule = exactness == 6 ? ctx.quad : quad_cell(ctx.geom(), exactness);
  const int m = dim_cell(k);
  Vec b = Vec::Zero(m);
  for (std::size_t q = 0; q < rule.size(); ++q)
    b += rule.weights[q] * field(rule.points[q]) * ctx.basis.values_upto(rule.points[q], k);
  return moment_mass(ctx.moments, k, k).ldlt().solve(b);
}

// ---------------------------------------------------------------------------
// Global layout

/// Global numbering of the velocity, pressure, current and potential DOFs.
class DofLayout {
public:
  DofLayout(const PolyMesh& mesh, Degrees deg, unsigned workers = 1)
      : mesh_(&mesh), deg_(deg), contexts_(make_cell_contexts(mesh, deg, workers)) {
    if (deg.k_u != 2) throw ConfigError("k_u must be 2");
    if (deg.k_J != 0 && deg.k_J != 1) throw ConfigError("k_J must be 0 or 1");
    const int nv = mesh.num_vertices(), ne = mesh.num_edges(), nf = mesh.num_faces(), nc = mesh.num_cells();
    num_u_ = 3 * (nv + ne + nf + nc);
    num_p_ = nc * dim_cell(deg.k_u - 1);
    face_j_ = dim_face(deg.k_J);
    num_phi_ = nc * dim_cell(deg.k_J);
    u_map_.resize(nc);
    j_map_.resize(nc);
    int cell_j_offset = nf * face_j_;
    for (int c = 0; c < nc; ++c) {
      const CellContext& ctx = contexts_[c];
      const CellGeom& g = ctx.geom();
      auto& um = u_map_[c];
      um.resize(ctx.num_u());
      for (int iv = 0; iv < ctx.num_vertices(); ++iv)
        for (int k = 0; k < 3; ++k) um[ctx.u_vertex(iv, k)] = 3 * g.vertices[iv] + k;
      for (int ie = 0; ie < ctx.num_edges(); ++ie)
        for (int k = 0; k < 3; ++k) um[ctx.u_edge(ie, k)] = 3 * nv + 3 * g.edges[ie] + k;
      for (int jf = 0; jf < ctx.num_faces(); ++jf)
        for (int k = 0; k < 3; ++k) um[ctx.u_face(jf, k)] = 3 * (nv + ne) + 3 * ctx.faces[jf].face + k;
      for (int k = 0; k < 3; ++k) um[ctx.u_cell(k)] = 3 * (nv + ne + nf) + 3 * c + k;
      auto& jm = j_map_[c];
      jm.resize(ctx.num_j());
      for (int jf = 0; jf < ctx.num_faces(); ++jf)
        for (int b = 0; b < face_j_; ++b) jm[ctx.j_face(jf, b)] = ctx.faces[jf].face * face_j_ + b;
      for (int i = ctx.j_grad(0); i < ctx.num_j(); ++i) jm[i] = cell_j_offset++;
    }
    num_j_ = cell_j_offset;
    u_fixed_.assign(num_u_, false);
    j_fixed_.assign(num_j_, false);
    for (int v = 0; v < nv; ++v)
      if (mesh.is_boundary_vertex(v))
        for (int k = 0; k < 3; ++k) u_fixed_[3 * v + k] = true;
    for (int e = 0; e < ne; ++e)
      if (mesh.is_boundary_edge(e))
        for (int k = 0; k < 3; ++k) u_fixed_[3 * nv + 3 * e + k] = true;
    for (int f = 0; f < nf; ++f)
      if (mesh.is_boundary_face(f)) {
        for (int k = 0; k < 3; ++k) u_fixed_[3 * (nv + ne) + 3 * f + k] = true;
        for (int b = 0; b < face_j_; ++b) j_fixed_[f * face_j_ + b] = true;
      }
  }

  const PolyMesh& mesh() const { return *mesh_; }
  Degrees degrees() const { return deg_; }
  const CellContext& context(int c) const { return contexts_[c]; }
  const std::vector<CellContext>& contexts() const { return contexts_; }
  int num_cells() const { return mesh_->num_cells(); }

  int num_u() const { return num_u_; }
  int num_p() const { return num_p_; }
  int num_j() const { return num_j_; }
  int num_phi() const { return num_phi_; }
  int p_per_cell() const { return dim_cell(deg_.k_u - 1); }
  int phi_per_cell() const { return dim_cell(deg_.k_J); }
  int j_per_face() const { return face_j_; }

  const std::vector<int>& u_map(int c) const { return u_map_[c]; }
  const std::vector<int>& j_map(int c) const { return j_map_[c]; }
  int p_index(int c, int a) const { return c * p_per_cell() + a; }
  int phi_index(int c, int a) const { return c * phi_per_cell() + a; }
  int u_face_dof(int f, int k) const {
    return 3 * (mesh_->num_vertices() + mesh_->num_edges()) + 3 * f + k;
  }
  int j_face_dof(int f, int b) const { return f * face_j_ + b; }

  bool u_fixed(int i) const { return u_fixed_[i]; }
  bool j_fixed(int i) const { return j_fixed_[i]; }
  const std::vector<bool>& u_fixed_mask() const { return u_fixed_; }
  const std::vector<bool>& j_fixed_mask() const { return j_fixed_; }

  Vec gather_u(const Vec& global, int c) const { return gather(global, u_map_[c]); }
  Vec gather_j(const Vec& global, int c) const { return gather(global, j_map_[c]); }
  Vec gather_p(const Vec& global, int c) const { return global.segment(p_index(c, 0), p_per_cell()); }
  Vec gather_phi(const Vec& global, int c) const { return global.segment(phi_index(c, 0), phi_per_cell()); }

  /// Zero-mean constraint row: entry i is int_Omega of pressure (or potential)
  /// basis function i.
  Vec mean_row(int k) const {
    const int m = dim_cell(k);
    Vec row(num_cells() * m);
    for (int c = 0; c < num_cells(); ++c) row.segment(c * m, m) = contexts_[c].moments.head(m);
    return row;
  }
  Vec pressure_mean_row() const { return mean_row(deg_.k_u - 1); }
  Vec potential_mean_row() const { return mean_row(deg_.k_J); }

private:
  static Vec gather(const Vec& global, const std::vector<int>& map) {
    Vec out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map[i] < 0 || map[i] >= global.size()) throw IndexError("local-to-global map out of range");
      out[i] = global[map[i]];
    }
    return out;
  }

  const PolyMesh* mesh_;
  Degrees deg_;
  std::vector<CellContext> contexts_;
  int num_u_ = 0, num_p_ = 0, num_j_ = 0, num_phi_ = 0, face_j_ = 0;
  std::vector<std::vector<int>> u_map_, j_map_;
  std::vector<bool> u_fixed_, j_fixed_;
};

inline std::shared_ptr<const DofLayout> build_layout(const PolyMesh& mesh, Degrees deg, unsigned workers = 1) {
  return std::make_shared<const DofLayout>(mesh, deg, workers);
}

// ---------------------------------------------------------------------------
// Global interpolation

inline Vec interpolate_velocity(const DofLayout& layout, const VectorField& field, int exactness = 8) {
  Vec out = Vec::Zero(layout.num_u());
  for (int c = 0; c < layout.num_cells(); ++c) {
    const Vec local = interpolate_velocity_local(layout.context(c), field, exactness);
    const auto& map = layout.u_map(c);
    for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] = local[i];
  }
  return out;
}

inline Vec interpolate_current(const DofLayout& layout, const VectorField& field, int exactness = 8) {
  Vec out = Vec::Zero(layout.num_j());
  for (int c = 0; c < layout.num_cells(); ++c) {
    const Vec local = interpolate_current_local(layout.context(c), field, exactness);
    const auto& map = layout.j_map(c);
    for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] = local[i];
  }
  return out;
}

inline Vec interpolate_scalar(const DofLayout& layout, const ScalarField& field, int k, int exactness = 8) {
  const int m = dim_cell(k);
  Vec out(layout.num_cells() * m);
  for (int c = 0; c < layout.num_cells(); ++c)
    out.segment(c * m, m) = project_scalar_local(layout.context(c), field, k, exactness);
  return out;
}

inline Vec interpolate_pressure(const DofLayout& layout, const ScalarField& field, int exactness = 8) {
  return interpolate_scalar(layout, field, layout.degrees().k_u - 1, exactness);
}

inline Vec interpolate_potential(const DofLayout& layout, const ScalarField& field, int exactness = 8) {
  return interpolate_scalar(layout, field, layout.degrees().k_J, exactness);
}

/// Velocity DOF values of `field` on the boundary (vertex, edge and face DOFs
/// of boundary faces); all other entries are zero.
inline Vec boundary_velocity_values(const DofLayout& layout, const VectorField& field, int exactness = 8) {
  const PolyMesh& mesh = layout.mesh();
  const int nv = mesh.num_vertices(), ne = mesh.num_edges();
  Vec out = Vec::Zero(layout.num_u());
  for (int f : mesh.boundary_faces()) {
    for (int v : mesh.face_vertices(f)) out.segment(3 * v, 3) = field(mesh.vertex(v));
    for (int e : mesh.face_edges(f)) {
      const auto& ab = mesh.edge(e);
      out.segment(3 * nv + 3 * e, 3) = field(0.5 * (mesh.vertex(ab[0]) + mesh.vertex(ab[1])));
    }
    const FaceGeom& fg = mesh.face_geom(f);
    const QuadratureRule rule = quad_face(fg, exactness);
    Vec3 mean = Vec3::Zero();
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Vec3 v = field(rule.points[q]);
      mean += rule.weights[q] * Vec3(v.dot(fg.normal), v.dot(fg.axis1), v.dot(fg.axis2));
    }
    out.segment(3 * (nv + ne) + 3 * f, 3) = mean / fg.area;
  }
  return out;
}

/// Current DOF values of `field` on boundary faces; all other entries are zero.
inline Vec boundary_current_values(const DofLayout& layout, const VectorField& field, int exactness = 8) {
  const PolyMesh& mesh = layout.mesh();
  Vec out = Vec::Zero(layout.num_j());
  for (int f : mesh.boundary_faces()) {
    const FaceGeom& fg = mesh.face_geom(f);
    const FaceBasis fb = FaceBasis::of(fg, layout.degrees().k_J);
    const QuadratureRule rule = quad_face(fg, exactness);
    Vec acc = Vec::Zero(fb.size());
    for (std::size_t q = 0; q < rule.size(); ++q)
      acc += rule.weights[q] * field(rule.points[q]).dot(fg.normal) * fb.values(rule.points[q]);
    out.segment(layout.j_face_dof(f, 0), fb.size()) = acc / fg.area;
  }
  return out;
}

/// Outward sign of a boundary face relative to its stored normal.
inline int outward_sign(const PolyMesh& mesh, int f) {
  for (const auto& cf : mesh.cell_faces(mesh.face_cells(f)[0]))
    if (cf.face == f) return cf.sign;
  return 1;
}

/// Shifts the constant normal moments on boundary faces (entries
/// dof_of_face(f)) so that the discrete outflow through the domain boundary
/// is exactly zero.
template <class DofOfFace>
void balance_boundary_flux(const PolyMesh& mesh, Vec& x, DofOfFace dof_of_face) {
  double flux = 0.0, area = 0.0;
  for (int f : mesh.boundary_faces()) {
    flux += outward_sign(mesh, f) * mesh.face_geom(f).area * x[dof_of_face(f)];
    area += mesh.face_geom(f).area;
  }
  for (int f : mesh.boundary_faces()) x[dof_of_face(f)] -= outward_sign(mesh, f) * flux / area;
}

inline void balance_velocity_flux(const DofLayout& layout, Vec& u) {
  balance_boundary_flux(layout.mesh(), u, [&](int f) { return layout.u_face_dof(f, 0); });
}

inline void balance_current_flux(const DofLayout& layout, Vec& J) {
  balance_boundary_flux(layout.mesh(), J, [&](int f) { return layout.j_face_dof(f, 0); });
}

}  // namespace vemmhd
