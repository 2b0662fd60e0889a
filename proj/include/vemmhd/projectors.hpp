#pragma once

#include "vemmhd/core.hpp"
#include "vemmhd/polybasis.hpp"
#include "vemmhd/spaces.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <vector>

namespace vemmhd {

namespace detail {

inline Mat checked_solve(const Mat& A, const Mat& B, const char* what) {
  Eigen::FullPivLU<Mat> lu(A);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw SingularSystemError(std::string(what) + ": singular local system");
  return lu.solve(B);
}

/// Exponent sum lookup: index of m_i * m_j.
inline int product_index(int i, int j) {
  const auto& ex = cell_exponents();
  return cell_index({ex[i][0] + ex[j][0], ex[i][1] + ex[j][1], ex[i][2] + ex[j][2]});
}

}  // namespace detail

/// Scalar projectors of one face acting on its trace vector
/// [vertex values (loop order), edge midpoint values, face mean].
struct FaceProjectors {
  Mat grad;  ///< onto P2(f), 6 x (2m+1)
  Mat l2;    ///< onto P3(f), 10 x (2m+1)
  int trace_size() const { return static_cast<int>(grad.cols()); }
};

inline FaceProjectors build_face_projectors(const PolyMesh& mesh, int f) {
  const FaceGeom& fg = mesh.face_geom(f);
  const auto& loop = mesh.face_vertices(f);
  const int m = static_cast<int>(loop.size());
  const int nloc = 2 * m + 1;
  const FaceBasis fb3 = FaceBasis::of(fg, 3);
  FaceBasis fb2 = fb3;
  fb2.n = 2;
  const QuadratureRule quad = quad_face(fg, 6);
  const Mat M3 = face_mass(fb3, quad);
  const Mat d1 = fb2.derivative(0), d2 = fb2.derivative(1);
  const Mat lap = fb2.laplacian();

  Mat stiff = Mat::Zero(6, 6);
  for (std::size_t q = 0; q < quad.size(); ++q) {
    const Vec v = fb3.values(quad.points[q]).head(3);
    const Vec g1 = d1.transpose() * v, g2 = d2.transpose() * v;
    stiff += quad.weights[q] * (g1 * g1.transpose() + g2 * g2.transpose());
  }
  Mat G = stiff;
  Mat B = Mat::Zero(6, nloc);
  G.row(0).setZero();
  for (int b = 1; b < 6; ++b) B(b, 2 * m) = -lap(0, b) * fg.area;
  for (int i = 0; i < m; ++i) {
    const Vec3& pa = mesh.vertex(loop[i]);
    const Vec3& pb = mesh.vertex(loop[(i + 1) % m]);
    const Vec3 mid = 0.5 * (pa + pb);
    const double len = (pb - pa).norm();
    const Vec3 ne = ((pb - pa) / len).cross(fg.normal);
    const Eigen::Vector2d ne2(ne.dot(fg.axis1), ne.dot(fg.axis2));
    const std::array<Vec3, 3> pts{pa, mid, pb};
    const std::array<int, 3> cols{i, m + i, (i + 1) % m};
    const std::array<double, 3> wts{len / 6.0, 4.0 * len / 6.0, len / 6.0};
    for (int s = 0; s < 3; ++s) {
      const Vec v = fb3.values(pts[s]);
      const Vec dn = (d1.transpose() * v.head(3)) * ne2[0] + (d2.transpose() * v.head(3)) * ne2[1];
      for (int b = 1; b < 6; ++b) B(b, cols[s]) += wts[s] * dn[b];
      G.row(0) += wts[s] * v.head(6).transpose();
      B(0, cols[s]) += wts[s];
    }
  }
  FaceProjectors out;
  out.grad = detail::checked_solve(G, B, "face gradient projector");
  Mat R = Mat::Zero(10, nloc);
  R(0, 2 * m) = fg.area;
  R.bottomRows(9) = M3.block(1, 0, 9, 6) * out.grad;
  out.l2 = detail::checked_solve(M3, R, "face L2 projector");
  return out;
}

/// Velocity projectors of one cell, as matrices acting on local DOF vectors.
/// Vector polynomial coefficients use the layout component * dim + monomial.
struct VelocityProjectors {
  Mat div;       ///< divergence, P1 coefficients (4 x N)
  Mat mean;      ///< int_K v_c (3 x N)
  Mat grad;      ///< Pi-nabla onto [P2]^3 (30 x N)
  Mat l2;        ///< Pi-zero onto [P2]^3 (30 x N)
  Mat gradient;  ///< L2 projection of grad v onto [P1]^{3x3}; row (c*3+j)*4+a (36 x N)
  /// Per local face: int_f v_c m_b for cell monomials b in P3; row c*20+b (60 x N).
  std::vector<Mat> face_moments;
  int num_dofs() const { return static_cast<int>(l2.cols()); }
};

inline VelocityProjectors build_velocity_projectors(const CellContext& ctx) {
  const PolyMesh& mesh = *ctx.mesh;
  const int N = ctx.num_u();
  const double vol = ctx.volume();
  const double h = ctx.h();
  const CellBasis b2(ctx.basis.center, h, 2);
  const CellBasis b3(ctx.basis.center, h, 3);
  const Mat M1 = moment_mass(ctx.moments, 1, 1);
  const Mat M2 = moment_mass(ctx.moments, 2, 2);
  VelocityProjectors P;

  // Face traces: projected trace moments against cell monomials of degree <= 3.
  std::vector<Mat> flux(ctx.num_faces());  // int_f (v.n_f) m_b, 20 x N
  P.face_moments.resize(ctx.num_faces());
  for (int jf = 0; jf < ctx.num_faces(); ++jf) {
    const FaceContext& fc = ctx.faces[jf];
    const FaceGeom& fg = mesh.face_geom(fc.face);
    const FaceProjectors fp = build_face_projectors(mesh, fc.face);
    const int m = static_cast<int>(fc.vertex_local.size());
    Mat X = Mat::Zero(dim_face(3), dim_cell(3));
    for (std::size_t q = 0; q < fc.quad.size(); ++q)
      X += fc.quad.weights[q] * fc.face_values.col(q) * fc.cell_values.col(q).transpose();
    Mat& fm = P.face_moments[jf];
    fm = Mat::Zero(3 * dim_cell(3), N);
    flux[jf] = Mat::Zero(dim_cell(3), N);
    for (int c = 0; c < 3; ++c) {
      Mat T = Mat::Zero(2 * m + 1, N);
      for (int i = 0; i < m; ++i) {
        T(i, ctx.u_vertex(fc.vertex_local[i], c)) = 1.0;
        T(m + i, ctx.u_edge(fc.edge_local[i], c)) = 1.0;
      }
      T(2 * m, ctx.u_face(jf, 0)) = fg.normal[c];
      T(2 * m, ctx.u_face(jf, 1)) = fg.axis1[c];
      T(2 * m, ctx.u_face(jf, 2)) = fg.axis2[c];
      fm.middleRows(c * dim_cell(3), dim_cell(3)) = X.transpose() * (fp.l2 * T);
      flux[jf] += fg.normal[c] * fm.middleRows(c * dim_cell(3), dim_cell(3));
    }
  }
  auto face_row = [&](int jf, int c, int b) { return P.face_moments[jf].row(c * dim_cell(3) + b); };

  // Divergence (P1 coefficients).
  Mat rhs = Mat::Zero(4, N);
  for (int jf = 0; jf < ctx.num_faces(); ++jf)
    rhs(0, ctx.u_face(jf, 0)) += ctx.faces[jf].sign * mesh.face_geom(ctx.faces[jf].face).area;
  for (int d = 0; d < 3; ++d) rhs(1 + d, ctx.u_cell(d)) = vol / h;
  P.div = detail::checked_solve(M1, rhs, "divergence map");

  // Cell integrals of each component, by parts against (x_c - x_K,c).
  P.mean = Mat::Zero(3, N);
  for (int c = 0; c < 3; ++c) {
    P.mean(c, ctx.u_cell(c)) -= vol;
    for (int jf = 0; jf < ctx.num_faces(); ++jf) P.mean.row(c) += ctx.faces[jf].sign * h * flux[jf].row(1 + c);
  }

  // Pi-nabla onto [P2]^3.
  std::array<Mat, 3> D2;
  for (int d = 0; d < 3; ++d) D2[d] = b2.derivative(d);  // 4 x 10
  Mat stiff = Mat::Zero(10, 10);
  for (int d = 0; d < 3; ++d) stiff += D2[d].transpose() * M1 * D2[d];
  const Mat lap = b2.laplacian();  // 1 x 10
  Mat G = stiff;
  G.row(0).setZero();
  for (int jf = 0; jf < ctx.num_faces(); ++jf) {
    const FaceContext& fc = ctx.faces[jf];
    for (std::size_t q = 0; q < fc.quad.size(); ++q)
      G.row(0) += fc.quad.weights[q] * fc.cell_values.col(q).head(10).transpose();
  }
  P.grad = Mat::Zero(30, N);
  for (int c = 0; c < 3; ++c) {
    Mat R = Mat::Zero(10, N);
    for (int b = 1; b < 10; ++b) R.row(b) = -lap(0, b) * P.mean.row(c);
    for (int jf = 0; jf < ctx.num_faces(); ++jf) {
      const FaceContext& fc = ctx.faces[jf];
      const Vec3& n = mesh.face_geom(fc.face).normal;
      R.row(0) += face_row(jf, c, 0);
      for (int b = 1; b < 10; ++b)
        for (int d = 0; d < 3; ++d)
          for (int i = 0; i < 4; ++i)
            if (D2[d](i, b) != 0.0) R.row(b) += fc.sign * n[d] * D2[d](i, b) * face_row(jf, c, i);
    }
    P.grad.middleRows(10 * c, 10) = detail::checked_solve(G, R, "cell gradient projector");
  }

  // Pi-zero onto [P2]^3: tests grad m_beta (beta in P3, |beta| >= 1) and
  // xhat ^ (e_i m_gamma) (gamma in P1), the latter through the enhancement.
  Mat Mbig = Mat::Zero(30, 30);
  for (int c = 0; c < 3; ++c) Mbig.block(10 * c, 10 * c, 10, 10) = M2;
  std::array<Mat, 3> D3;
  for (int d = 0; d < 3; ++d) D3[d] = b3.derivative(d);  // 10 x 20
  const Mat M13 = moment_mass(ctx.moments, 1, 3);
  const int ntest = 19 + 12;
  Mat W = Mat::Zero(ntest, 30);
  Mat B = Mat::Zero(ntest, N);
  for (int beta = 1; beta < 20; ++beta) {
    const int t = beta - 1;
    for (int c = 0; c < 3; ++c) W.block(t, 10 * c, 1, 10) = D3[c].col(beta).transpose();
    B.row(t) = -M13.col(beta).transpose() * P.div;
    for (int jf = 0; jf < ctx.num_faces(); ++jf) B.row(t) += ctx.faces[jf].sign * flux[jf].row(beta);
  }
  const int eps[3][3][3] = {{{0, 0, 0}, {0, 0, 1}, {0, -1, 0}},
                            {{0, 0, -1}, {0, 0, 0}, {1, 0, 0}},
                            {{0, 1, 0}, {-1, 0, 0}, {0, 0, 0}}};
  for (int i = 0; i < 3; ++i)
    for (int gamma = 0; gamma < 4; ++gamma) {
      const int t = 19 + 4 * i + gamma;
      for (int c = 0; c < 3; ++c)
        for (int j = 0; j < 3; ++j)
          if (eps[c][j][i] != 0) W(t, 10 * c + detail::product_index(1 + j, gamma)) += eps[c][j][i];
      B.row(t) = W.row(t) * Mbig * P.grad;
    }
  const Mat A = W * Mbig;
  Eigen::ColPivHouseholderQR<Mat> qr(A);
  qr.setThreshold(1e-12);
  if (qr.rank() != 30) throw SingularSystemError("cell L2 projector: test set does not span [P2]^3");
  P.l2 = qr.solve(B);

  // L2 projection of the gradient onto [P1]^{3x3}.
  P.gradient = Mat::Zero(36, N);
  const Eigen::LDLT<Mat> m1(M1);
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 3; ++j) {
      Mat R = Mat::Zero(4, N);
      R.row(1 + j) -= P.mean.row(c) / h;
      for (int jf = 0; jf < ctx.num_faces(); ++jf) {
        const FaceContext& fc = ctx.faces[jf];
        const double nj = fc.sign * mesh.face_geom(fc.face).normal[j];
        for (int a = 0; a < 4; ++a) R.row(a) += nj * face_row(jf, c, a);
      }
      P.gradient.middleRows((c * 3 + j) * 4, 4) = m1.solve(R);
    }
  return P;
}

/// Current projectors of one cell.
struct CurrentProjectors {
  Mat div;  ///< divergence, P_kJ coefficients (dim P_kJ x NJ)
  Mat l2;   ///< Pi-zero onto [P_kJ]^3 (3 dim P_kJ x NJ)
  int num_dofs() const { return static_cast<int>(l2.cols()); }
};

inline CurrentProjectors build_current_projectors(const CellContext& ctx) {
  const PolyMesh& mesh = *ctx.mesh;
  const int kJ = ctx.deg.k_J;
  const int NJ = ctx.num_j();
  const int mJ = dim_cell(kJ);
  const int mf = dim_face(kJ);
  const int mt = dim_cell(kJ + 1);
  const double vol = ctx.volume();
  const double h = ctx.h();

  // int_f (J.n_f) m_b for cell monomials b of degree <= kJ+1.
  std::vector<Mat> flux(ctx.num_faces());
  for (int jf = 0; jf < ctx.num_faces(); ++jf) {
    const FaceContext& fc = ctx.faces[jf];
    const double area = mesh.face_geom(fc.face).area;
    Mat X = Mat::Zero(mf, mt);
    Mat Mf = Mat::Zero(mf, mf);
    for (std::size_t q = 0; q < fc.quad.size(); ++q) {
      const Vec fv = fc.face_values.col(q).head(mf);
      X += fc.quad.weights[q] * fv * fc.cell_values.col(q).head(mt).transpose();
      Mf += fc.quad.weights[q] * fv * fv.transpose();
    }
    const Mat coeff = area * detail::checked_solve(Mf, Mat::Identity(mf, mf), "face flux mass");
    flux[jf] = Mat::Zero(mt, NJ);
    flux[jf].middleCols(ctx.j_face(jf, 0), mf) = X.transpose() * coeff;
  }

  CurrentProjectors P;
  const Mat Mk = moment_mass(ctx.moments, kJ, kJ);
  Mat rhs = Mat::Zero(mJ, NJ);
  for (int jf = 0; jf < ctx.num_faces(); ++jf) rhs += ctx.faces[jf].sign * flux[jf].topRows(mJ);
  for (int a = 1; a < mJ; ++a) rhs(a, ctx.j_grad(a - 1)) -= vol / h;
  P.div = detail::checked_solve(Mk, rhs, "current divergence map");

  const CellBasis up(ctx.basis.center, h, kJ + 1);
  const Mat Mkt = moment_mass(ctx.moments, kJ, kJ + 1);
  Mat Mbig = Mat::Zero(3 * mJ, 3 * mJ);
  for (int c = 0; c < 3; ++c) Mbig.block(c * mJ, c * mJ, mJ, mJ) = Mk;
  Mat W = Mat::Zero(3 * mJ, 3 * mJ);
  Mat B = Mat::Zero(3 * mJ, NJ);
  int t = 0;
  for (int beta = 1; beta < mt; ++beta, ++t) {
    for (int c = 0; c < 3; ++c) W.block(t, c * mJ, 1, mJ) = up.derivative(c).col(beta).transpose();
    B.row(t) = -Mkt.col(beta).transpose() * P.div;
    for (int jf = 0; jf < ctx.num_faces(); ++jf) B.row(t) += ctx.faces[jf].sign * flux[jf].row(beta);
  }
  for (int j = 0; j < ctx.num_gperp(); ++j, ++t) {
    W.row(t) = ctx.gperp.col(j).transpose();
    B(t, ctx.j_perp(j)) = std::sqrt(vol);
  }
  P.l2 = detail::checked_solve(W * Mbig, B, "current L2 projector");
  return P;
}

/// DOF vectors of the [P2]^3 basis polynomials e_c m_b (N x 30).
inline Mat velocity_dofs_of_polynomials(const CellContext& ctx) {
  Mat out(ctx.num_u(), 30);
  for (int c = 0; c < 3; ++c)
    for (int b = 0; b < 10; ++b) {
      const VectorField field = [&](const Vec3& x) {
        Vec3 v = Vec3::Zero();
        v[c] = ctx.basis.values_upto(x, 2)[b];
        return v;
      };
      out.col(10 * c + b) = interpolate_velocity_local(ctx, field);
    }
  return out;
}

/// DOF vectors of the [P_kJ]^3 basis polynomials (NJ x 3 dim P_kJ).
inline Mat current_dofs_of_polynomials(const CellContext& ctx) {
  const int m = dim_cell(ctx.deg.k_J);
  Mat out(ctx.num_j(), 3 * m);
  for (int c = 0; c < 3; ++c)
    for (int b = 0; b < m; ++b) {
      const VectorField field = [&](const Vec3& x) {
        Vec3 v = Vec3::Zero();
        v[c] = ctx.basis.values_upto(x, ctx.deg.k_J)[b];
        return v;
      };
      out.col(m * c + b) = interpolate_current_local(ctx, field);
    }
  return out;
}

}  // namespace vemmhd
