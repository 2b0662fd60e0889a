#pragma once

#include "vemmhd/core.hpp"
#include "vemmhd/mesh.hpp"

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <vector>

namespace vemmhd {

using Exp3 = std::array<int, 3>;
using Exp2 = std::array<int, 2>;

inline constexpr int dim_cell(int n) { return n < 0 ? 0 : (n + 1) * (n + 2) * (n + 3) / 6; }
inline constexpr int dim_face(int n) { return n < 0 ? 0 : (n + 1) * (n + 2) / 2; }

/// Cell multi-indices of degree <= n, ordered by degree then lexicographically
/// descending, so that index 1+d is the linear monomial in direction d.
inline const std::vector<Exp3>& cell_exponents() {
  static const std::vector<Exp3> table = [] {
    std::vector<Exp3> out;
    for (int d = 0; d <= 12; ++d)
      for (int a = d; a >= 0; --a)
        for (int b = d - a; b >= 0; --b) out.push_back({a, b, d - a - b});
    return out;
  }();
  return table;
}

inline const std::vector<Exp2>& face_exponents() {
  static const std::vector<Exp2> table = [] {
    std::vector<Exp2> out;
    for (int d = 0; d <= 12; ++d)
      for (int a = d; a >= 0; --a) out.push_back({a, d - a});
    return out;
  }();
  return table;
}

inline int cell_index(const Exp3& e) {
  const int d = e[0] + e[1] + e[2];
  if (e[0] < 0 || e[1] < 0 || e[2] < 0) return -1;
  // Position inside degree d: entries with larger a first, then larger b.
  int offset = 0;
  for (int a = d; a > e[0]; --a) offset += d - a + 1;
  offset += (d - e[0]) - e[1];
  return dim_cell(d - 1) + offset;
}

inline int face_index(const Exp2& e) {
  if (e[0] < 0 || e[1] < 0) return -1;
  const int d = e[0] + e[1];
  return dim_face(d - 1) + (d - e[0]);
}

inline int degree(const Exp3& e) { return e[0] + e[1] + e[2]; }

/// Scaled monomials ((x - center)/h)^alpha on a cell.
struct CellBasis {
  Vec3 center = Vec3::Zero();
  double h = 1.0;
  int n = 0;

  CellBasis() = default;
  CellBasis(const Vec3& c, double scale, int deg) : center(c), h(scale), n(deg) {}
  static CellBasis of(const CellGeom& g, int deg) { return {g.centroid, g.diameter, deg}; }

  int size() const { return dim_cell(n); }

  Vec values(const Vec3& x) const { return values_upto(x, n); }

  Vec values_upto(const Vec3& x, int deg) const {
    const Vec3 s = (x - center) / h;
    const int m = dim_cell(deg);
    Vec out(m);
    const auto& ex = cell_exponents();
    std::array<std::array<double, 13>, 3> pw{};
    for (int d = 0; d < 3; ++d) {
      pw[d][0] = 1.0;
      for (int k = 1; k <= deg; ++k) pw[d][k] = pw[d][k - 1] * s[d];
    }
    for (int i = 0; i < m; ++i) out[i] = pw[0][ex[i][0]] * pw[1][ex[i][1]] * pw[2][ex[i][2]];
    return out;
  }

  /// Coefficient map of d/dx_dir from P_n into P_{n-1}.
  Mat derivative(int dir) const {
    Mat D = Mat::Zero(dim_cell(n - 1), size());
    const auto& ex = cell_exponents();
    for (int i = 0; i < size(); ++i) {
      Exp3 e = ex[i];
      if (e[dir] == 0) continue;
      const double factor = e[dir] / h;
      --e[dir];
      D(cell_index(e), i) = factor;
    }
    return D;
  }

  /// Coefficient map of the Laplacian from P_n into P_{n-2}.
  Mat laplacian() const {
    Mat L = Mat::Zero(dim_cell(n - 2), size());
    const auto& ex = cell_exponents();
    for (int i = 0; i < size(); ++i)
      for (int d = 0; d < 3; ++d) {
        Exp3 e = ex[i];
        if (e[d] < 2) continue;
        const double factor = e[d] * (e[d] - 1) / (h * h);
        e[d] -= 2;
        L(cell_index(e), i) += factor;
      }
    return L;
  }
};

/// Scaled monomials in the in-plane axes of a face.
struct FaceBasis {
  Vec3 center = Vec3::Zero();
  Vec3 axis1 = Vec3::UnitX();
  Vec3 axis2 = Vec3::UnitY();
  double h = 1.0;
  int n = 0;

  FaceBasis() = default;
  static FaceBasis of(const FaceGeom& g, int deg) {
    FaceBasis b;
    b.center = g.centroid;
    b.axis1 = g.axis1;
    b.axis2 = g.axis2;
    b.h = g.diameter;
    b.n = deg;
    return b;
  }

  int size() const { return dim_face(n); }

  Eigen::Vector2d local(const Vec3& x) const {
    const Vec3 d = x - center;
    return {d.dot(axis1) / h, d.dot(axis2) / h};
  }

  Vec values(const Vec3& x) const {
    const Eigen::Vector2d s = local(x);
    Vec out(size());
    const auto& ex = face_exponents();
    for (int i = 0; i < size(); ++i) out[i] = std::pow(s[0], ex[i][0]) * std::pow(s[1], ex[i][1]);
    return out;
  }

  /// In-plane gradient coefficient maps (d/da1, d/da2) from P_n into P_{n-1}.
  Mat derivative(int dir) const {
    Mat D = Mat::Zero(dim_face(n - 1), size());
    const auto& ex = face_exponents();
    for (int i = 0; i < size(); ++i) {
      Exp2 e = ex[i];
      if (e[dir] == 0) continue;
      const double factor = e[dir] / h;
      --e[dir];
      D(face_index(e), i) = factor;
    }
    return D;
  }

  Mat laplacian() const {
    Mat L = Mat::Zero(dim_face(n - 2), size());
    const auto& ex = face_exponents();
    for (int i = 0; i < size(); ++i)
      for (int d = 0; d < 2; ++d) {
        Exp2 e = ex[i];
        if (e[d] < 2) continue;
        const double factor = e[d] * (e[d] - 1) / (h * h);
        e[d] -= 2;
        L(face_index(e), i) += factor;
      }
    return L;
  }
};

/// Returns the index range [first, last) of monomials with m+1 <= |alpha| <= n.
inline std::pair<int, int> hat_range(int n, int m) { return {dim_cell(m), dim_cell(n)}; }
inline std::pair<int, int> hat_range_face(int n, int m) { return {dim_face(m), dim_face(n)}; }

/// Hatted sub-basis exponents on a cell.
inline std::vector<Exp3> hat_basis(int n, int m) {
  const auto [first, last] = hat_range(n, m);
  return {cell_exponents().begin() + first, cell_exponents().begin() + std::max(first, last)};
}

struct QuadratureRule {
  std::vector<Vec3> points;
  std::vector<double> weights;
  int exactness = 0;

  std::size_t size() const { return points.size(); }
  double total_weight() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

/// Gauss-Legendre nodes and weights on [0, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre01(int n) {
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    x[i] = 0.5 * (1.0 - z);
    w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

/// Collapsed Gauss rule on a tetrahedron, exact for degree p.
inline void append_tet_rule(const std::array<Vec3, 4>& t, int p, QuadratureRule& rule) {
  const double vol6 = std::abs((t[1] - t[0]).dot((t[2] - t[0]).cross(t[3] - t[0])));
  const auto [xu, wu] = gauss_legendre01((p + 4) / 2);
  const auto [xv, wv] = gauss_legendre01((p + 3) / 2);
  const auto [xw, ww] = gauss_legendre01((p + 2) / 2);
  for (std::size_t i = 0; i < xu.size(); ++i)
    for (std::size_t j = 0; j < xv.size(); ++j)
      for (std::size_t k = 0; k < xw.size(); ++k) {
        const double u = xu[i], v = xv[j], w = xw[k];
        rule.points.push_back(t[0] + u * (t[1] - t[0]) + u * v * (t[2] - t[1]) + u * v * w * (t[3] - t[2]));
        rule.weights.push_back(vol6 * u * u * v * wu[i] * wv[j] * ww[k]);
      }
}

inline void append_triangle_rule(const std::array<Vec3, 3>& t, int p, QuadratureRule& rule) {
  const double area2 = (t[1] - t[0]).cross(t[2] - t[0]).norm();
  const auto [xu, wu] = gauss_legendre01((p + 3) / 2);
  const auto [xv, wv] = gauss_legendre01((p + 2) / 2);
  for (std::size_t i = 0; i < xu.size(); ++i)
    for (std::size_t j = 0; j < xv.size(); ++j) {
      const double u = xu[i], v = xv[j];
      rule.points.push_back(t[0] + u * (t[1] - t[0]) + u * v * (t[2] - t[1]));
      rule.weights.push_back(area2 * u * wu[i] * wv[j]);
    }
}

inline QuadratureRule quad_cell(const CellGeom& g, int exactness) {
  QuadratureRule rule;
  rule.exactness = exactness;
  for (const auto& t : g.tets) append_tet_rule(t, exactness, rule);
  return rule;
}

inline QuadratureRule quad_face(const FaceGeom& g, int exactness) {
  QuadratureRule rule;
  rule.exactness = exactness;
  for (const auto& t : g.triangles) append_triangle_rule(t, exactness, rule);
  return rule;
}

/// Integrals of every cell monomial up to degree n: moments[i] = int_K m_i.
inline Vec cell_moments(const CellBasis& basis, const QuadratureRule& rule, int n) {
  Vec mom = Vec::Zero(dim_cell(n));
  for (std::size_t q = 0; q < rule.size(); ++q) mom += rule.weights[q] * basis.values_upto(rule.points[q], n);
  return mom;
}

/// Mass matrix of P_a x P_b built from a moment table (m_i m_j = m_{i+j}).
inline Mat moment_mass(const Vec& moments, int a, int b) {
  const auto& ex = cell_exponents();
  Mat M(dim_cell(a), dim_cell(b));
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j)
      M(i, j) = moments[cell_index({ex[i][0] + ex[j][0], ex[i][1] + ex[j][1], ex[i][2] + ex[j][2]})];
  return M;
}

inline Mat face_mass(const FaceBasis& basis, const QuadratureRule& rule) {
  Mat M = Mat::Zero(basis.size(), basis.size());
  for (std::size_t q = 0; q < rule.size(); ++q) {
    const Vec v = basis.values(rule.points[q]);
    M += rule.weights[q] * v * v.transpose();
  }
  return M;
}

/// L2(K)-orthonormal basis of the orthogonal complement of grad P_{k+1}
/// inside [P_k]^3. Columns are coefficient vectors in the layout
/// component * dim P_k + monomial.
inline Mat gperp_basis(const CellBasis& cell, const Vec& moments, int k) {
  const int m = dim_cell(k);
  const int n = 3 * m;
  const Mat Mk = moment_mass(moments, k, k);
  Mat G = Mat::Zero(n, n);
  for (int c = 0; c < 3; ++c) G.block(c * m, c * m, m, m) = Mk;
  auto inner = [&G](const Vec& a, const Vec& b) { return a.dot(G * b); };

  const CellBasis up(cell.center, cell.h, k + 1);
  std::vector<Vec> accepted;
  auto project_out = [&](Vec v) {
    for (int pass = 0; pass < 2; ++pass)
      for (const Vec& q : accepted) v -= inner(q, v) * q;
    return v;
  };
  for (int b = 1; b < dim_cell(k + 1); ++b) {
    Vec g = Vec::Zero(n);
    for (int c = 0; c < 3; ++c) g.segment(c * m, m) = up.derivative(c).col(b);
    const double before = std::sqrt(inner(g, g));
    const Vec r = project_out(g);
    const double after = std::sqrt(inner(r, r));
    if (after <= 1e-10 * before) throw NumericalRankError("gradient subspace is rank deficient");
    accepted.push_back(r / after);
  }
  const int gradient_dim = static_cast<int>(accepted.size());
  const int target = n - gradient_dim;
  std::vector<bool> used(n, false);
  Mat out(n, target);
  for (int j = 0; j < target; ++j) {
    int best = -1;
    double best_ratio = 0.0;
    Vec best_r;
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      Vec e = Vec::Zero(n);
      e[i] = 1.0;
      const Vec r = project_out(e);
      const double ratio = std::sqrt(inner(r, r) / inner(e, e));
      if (ratio > best_ratio) best_ratio = ratio, best = i, best_r = r;
    }
    if (best < 0 || best_ratio <= 1e-10) throw NumericalRankError("complement basis is rank deficient");
    used[best] = true;
    best_r /= std::sqrt(inner(best_r, best_r));
    accepted.push_back(best_r);
    out.col(j) = best_r;
  }
  return out;
}

}  // namespace vemmhd
