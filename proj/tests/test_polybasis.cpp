#include "test_util.hpp"
#include "vemmhd/polybasis.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace vemmhd;
using vemmhd::testing::max_abs;

namespace {

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

const CellGeom& voronoi_geom() {
  const PolyMesh& m = vemmhd::testing::voronoi64();
  return m.cell_geom(vemmhd::testing::richest_cell(m));
}

/// Weighted L2(K) inner-product matrix of [P_k]^3 in the component-major layout.
Mat vector_mass(const Vec& moments, int k) {
  const int m = dim_cell(k);
  Mat G = Mat::Zero(3 * m, 3 * m);
  for (int c = 0; c < 3; ++c) G.block(c * m, c * m, m, m) = moment_mass(moments, k, k);
  return G;
}

}  // namespace

TEST(Dimensions, CellAndFace) {
  EXPECT_EQ(dim_cell(2), 10);
  EXPECT_EQ(dim_cell(1), 4);
  EXPECT_EQ(dim_cell(0), 1);
  EXPECT_EQ(dim_cell(-1), 0);
  EXPECT_EQ(dim_face(2), 6);
  EXPECT_EQ(dim_face(-1), 0);
  for (int i = 0; i < dim_cell(4); ++i) EXPECT_EQ(cell_index(cell_exponents()[i]), i);
  for (int i = 0; i < dim_face(4); ++i) EXPECT_EQ(face_index(face_exponents()[i]), i);
}

TEST(CellBasis, CentroidValuesAndOrdering) {
  const CellGeom& g = voronoi_geom();
  const CellBasis b = CellBasis::of(g, 1);
  const Vec v = b.values(g.centroid);
  ASSERT_EQ(v.size(), 4);
  EXPECT_EQ(v[0], 1.0);
  EXPECT_EQ(v.tail(3).norm(), 0.0);
  for (int i = 1; i < dim_cell(3); ++i) EXPECT_GE(degree(cell_exponents()[i]), degree(cell_exponents()[i - 1]));
}

TEST(CellBasis, DerivativeMatchesFiniteDifferences) {
  const CellBasis b(Vec3(0.3, -0.2, 0.5), 0.7, 3);
  const Vec3 x(0.41, 0.13, -0.27);
  const double eps = 1e-6;
  for (int d = 0; d < 3; ++d) {
    const Vec fd = (b.values(x + eps * Vec3::Unit(d)) - b.values(x - eps * Vec3::Unit(d))) / (2 * eps);
    const Vec exact = b.derivative(d).transpose() * b.values_upto(x, 2);
    EXPECT_LT((fd - exact).lpNorm<Eigen::Infinity>(), 1e-8);
  }
  Vec lap = Vec::Zero(b.size());
  for (int d = 0; d < 3; ++d) {
    const Vec3 e = eps * 100 * Vec3::Unit(d);
    lap += (b.values(x + e) - 2 * b.values(x) + b.values(x - e)) / (e.squaredNorm());
  }
  EXPECT_LT((lap - b.laplacian().transpose() * b.values_upto(x, 1)).lpNorm<Eigen::Infinity>(), 1e-5);
}

TEST(FaceBasis, InPlaneDerivative) {
  const PolyMesh& m = vemmhd::testing::distorted_prisms();
  const FaceGeom& fg = m.face_geom(7);
  const FaceBasis fb = FaceBasis::of(fg, 2);
  const Vec3 x = fg.centroid + 0.1 * fg.axis1 - 0.05 * fg.axis2;
  EXPECT_NEAR(fb.local(fg.centroid).norm(), 0.0, 1e-15);
  FaceBasis lower = fb;
  lower.n = 1;
  const double eps = 1e-6;
  const Vec3 axes[2] = {fg.axis1, fg.axis2};
  for (int d = 0; d < 2; ++d) {
    const Vec fd = (fb.values(x + eps * axes[d]) - fb.values(x - eps * axes[d])) / (2 * eps);
    EXPECT_LT((fd - fb.derivative(d).transpose() * lower.values(x)).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST(HatBasis, Counts) {
  EXPECT_EQ(hat_basis(1, 0).size(), 3u);
  EXPECT_TRUE(hat_basis(0, 0).empty());
  EXPECT_EQ(hat_basis(2, 0).size(), 9u);
  EXPECT_EQ(hat_basis(2, 1).size(), 6u);
  for (const Exp3& e : hat_basis(2, 1)) EXPECT_EQ(degree(e), 2);
}

TEST(GaussLegendre, ExactOnUnitInterval) {
  for (int n : {1, 2, 5, 9}) {
    const auto [x, w] = gauss_legendre01(n);
    for (int p = 0; p < 2 * n; ++p) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += w[i] * std::pow(x[i], p);
      EXPECT_NEAR(s, 1.0 / (p + 1), 1e-14) << "n " << n << " p " << p;
    }
  }
}

TEST(Quadrature, UnitCubeAndFace) {
  const PolyMesh& cube = vemmhd::testing::unit_cube();
  const QuadratureRule r = quad_cell(cube.cell_geom(0), 4);
  double x2 = 0.0;
  for (std::size_t q = 0; q < r.size(); ++q) x2 += r.weights[q] * r.points[q][0] * r.points[q][0];
  EXPECT_NEAR(x2, 1.0 / 3.0, 1e-14);
  EXPECT_NEAR(r.total_weight(), 1.0, 1e-14);
  for (int f = 0; f < cube.num_faces(); ++f) {
    const FaceGeom& fg = cube.face_geom(f);
    if (std::abs(fg.centroid[2]) > 1e-14) continue;
    const QuadratureRule rf = quad_face(fg, 4);
    double s = 0.0;
    for (std::size_t q = 0; q < rf.size(); ++q) {
      const Vec3& p = rf.points[q];
      s += rf.weights[q] * p[0] * p[0] * p[1] * p[1];
    }
    EXPECT_NEAR(s, 1.0 / 9.0, 1e-14);
    EXPECT_NEAR(rf.total_weight(), 1.0, 1e-14);
  }
}

TEST(Quadrature, TotalWeightIsVolumeOnPolyhedra) {
  const CellGeom& g = voronoi_geom();
  EXPECT_NEAR(quad_cell(g, 6).total_weight(), g.volume, 1e-14);
}

TEST(Quadrature, TetrahedronMomentsAreExact) {
  const std::array<Vec3, 4> tet = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  for (int p : {1, 3, 6, 8}) {
    QuadratureRule r;
    append_tet_rule(tet, p, r);
    for (int i = 0; i < dim_cell(p); ++i) {
      const Exp3& e = cell_exponents()[i];
      double s = 0.0;
      for (std::size_t q = 0; q < r.size(); ++q)
        s += r.weights[q] * std::pow(r.points[q][0], e[0]) * std::pow(r.points[q][1], e[1]) *
             std::pow(r.points[q][2], e[2]);
      const double exact = factorial(e[0]) * factorial(e[1]) * factorial(e[2]) / factorial(degree(e) + 3);
      EXPECT_NEAR(s, exact, 1e-15) << "p " << p << " monomial " << i;
    }
  }
}

TEST(Quadrature, TriangleMomentsAreExact) {
  const std::array<Vec3, 3> tri = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  for (int p : {2, 5, 8}) {
    QuadratureRule r;
    append_triangle_rule(tri, p, r);
    for (int i = 0; i < dim_face(p); ++i) {
      const Exp2& e = face_exponents()[i];
      double s = 0.0;
      for (std::size_t q = 0; q < r.size(); ++q)
        s += r.weights[q] * std::pow(r.points[q][0], e[0]) * std::pow(r.points[q][1], e[1]);
      EXPECT_NEAR(s, factorial(e[0]) * factorial(e[1]) / factorial(e[0] + e[1] + 2), 1e-15);
    }
  }
}

TEST(MomentMass, MatchesQuadrature) {
  const CellGeom& g = voronoi_geom();
  const CellBasis b = CellBasis::of(g, 2);
  const QuadratureRule r = quad_cell(g, 4);
  Mat M = Mat::Zero(b.size(), b.size());
  for (std::size_t q = 0; q < r.size(); ++q) {
    const Vec v = b.values(r.points[q]);
    M += r.weights[q] * v * v.transpose();
  }
  EXPECT_LT(max_abs(M - moment_mass(cell_moments(b, r, 4), 2, 2)), 1e-15);
}

class Complement : public ::testing::TestWithParam<int> {};

TEST_P(Complement, OrthonormalAndOrthogonalToGradients) {
  const int k = GetParam();
  const CellGeom& g = voronoi_geom();
  const CellBasis b = CellBasis::of(g, k);
  const Vec mom = cell_moments(b, quad_cell(g, 2 * k), 2 * k);
  const Mat P = gperp_basis(b, mom, k);
  const int m = dim_cell(k);
  ASSERT_EQ(P.rows(), 3 * m);
  ASSERT_EQ(P.cols(), 3 * m - (dim_cell(k + 1) - 1));
  const Mat G = vector_mass(mom, k);
  EXPECT_LT(max_abs(P.transpose() * G * P - Mat::Identity(P.cols(), P.cols())), 1e-12);
  const CellBasis up(b.center, b.h, k + 1);
  Mat grads(3 * m, dim_cell(k + 1) - 1);
  for (int a = 1; a < dim_cell(k + 1); ++a)
    for (int c = 0; c < 3; ++c) grads.block(c * m, a - 1, m, 1) = up.derivative(c).col(a);
  EXPECT_LT(max_abs(P.transpose() * G * grads), 1e-12);
  Mat all(3 * m, 3 * m);
  all << grads, P;
  EXPECT_EQ(Eigen::FullPivLU<Mat>(all).rank(), 3 * m);
}

INSTANTIATE_TEST_SUITE_P(Degrees, Complement, ::testing::Values(0, 1, 2));

TEST(Complement, DegreeZeroIsEmptyAndDegreeOneHasThree) {
  const CellGeom& g = vemmhd::testing::unit_cube().cell_geom(0);
  const CellBasis b = CellBasis::of(g, 1);
  const Vec mom = cell_moments(b, quad_cell(g, 2), 2);
  EXPECT_EQ(gperp_basis(b, mom, 0).cols(), 0);
  EXPECT_EQ(gperp_basis(b, mom, 1).cols(), 3);
}

TEST(Complement, DegenerateMomentsAreReported) {
  const CellBasis b(Vec3::Zero(), 1.0, 1);
  EXPECT_THROW(gperp_basis(b, Vec::Zero(dim_cell(2)), 1), NumericalRankError);
}
