#include "test_util.hpp"
#include "vemmhd/harness.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace vemmhd;

namespace {

const AppliedField kB = [](const Vec3& x) { return Vec3(1.0 + x[1], 0.5, -x[0]); };

const PolyMesh& cube2() {
  static const PolyMesh mesh = build_cube_mesh(2);
  return mesh;
}

SystemState zero_state(const DofLayout& L, double t) {
  SystemState st;
  st.u = Vec::Zero(L.num_u());
  st.J = Vec::Zero(L.num_j());
  st.p = Vec::Zero(L.num_p());
  st.phi = Vec::Zero(L.num_phi());
  st.t = t;
  return st;
}

constexpr double kEps = 1e-4;

Vec3 fd_time(const SpaceTimeField& f, const Vec3& x, double t) {
  return (f(x, t + kEps) - f(x, t - kEps)) / (2 * kEps);
}

Mat3 fd_grad(const SpaceTimeField& f, const Vec3& x, double t) {
  Mat3 g;
  for (int d = 0; d < 3; ++d) g.col(d) = (f(x + kEps * Vec3::Unit(d), t) - f(x - kEps * Vec3::Unit(d), t)) / (2 * kEps);
  return g;
}

Vec3 fd_grad(const SpaceTimeScalar& f, const Vec3& x, double t) {
  Vec3 g;
  for (int d = 0; d < 3; ++d) g[d] = (f(x + kEps * Vec3::Unit(d), t) - f(x - kEps * Vec3::Unit(d), t)) / (2 * kEps);
  return g;
}

Vec3 fd_laplacian(const SpaceTimeField& f, const Vec3& x, double t) {
  Vec3 l = Vec3::Zero();
  for (int d = 0; d < 3; ++d)
    l += (f(x + kEps * Vec3::Unit(d), t) - 2 * f(x, t) + f(x - kEps * Vec3::Unit(d), t)) / (kEps * kEps);
  return l;
}

RunConfig small_temporal_plan() {
  RunConfig cfg;
  cfg.mesh = parse_mesh_spec("cube:1");
  cfg.case_name = "ms1";
  cfg.plan_mode = "temporal";
  cfg.plan_dt = {0.5, 0.25, 0.125};
  return cfg;
}

}  // namespace

TEST(Errors, PotentialNormOfZeroState) {
  const auto L = build_layout(cube2(), Degrees{2, 1});
  const Forms forms(L, FormParams{1.0, 1.0, kB});
  const ManufacturedCase mc = make_ms2(1.0, 1.0, kB);
  const ErrorReport e = compute_errors(forms, zero_state(*L, 1.0), mc, 1.0);
  // e^{-1} sqrt(4/15), the exact L2 norm of the potential at t = 1.
  EXPECT_NEAR(e.e_phi, 0.18997212654254497, 1e-13);
  EXPECT_NEAR(e.e_s, 1.0 - std::exp(-1.0), 1e-15);
  EXPECT_EQ(e.t, 1.0);
  EXPECT_NEAR(e.h, 0.5, 1e-15);
}

TEST(Errors, ExactInterpolantOfTemporalCase) {
  const auto L = build_layout(cube2(), Degrees{2, 1});
  const Forms forms(L, FormParams{1.0, 1.0, kB});
  const ManufacturedCase mc = make_ms1(1.0, 1.0, kB);
  SystemState st = zero_state(*L, 0.0);
  st.u = interpolate_velocity(*L, [&](const Vec3& x) { return mc.u(x, 0.0); });
  st.J = interpolate_current(*L, [&](const Vec3& x) { return mc.J(x, 0.0); });
  const ErrorReport e = compute_errors(forms, st, mc, 1.0);
  EXPECT_LE(e.e_u, 1e-11);
  EXPECT_LE(e.e_J, 1e-11);
  EXPECT_EQ(e.e_p, 0.0);
  EXPECT_EQ(e.e_phi, 0.0);
  EXPECT_EQ(e.e_s, 0.0);
  EXPECT_LE(e.div_u, 1e-13);
  EXPECT_LE(e.div_J, 1e-13);
}

class Loads : public ::testing::TestWithParam<const char*> {};

TEST_P(Loads, MatchFiniteDifferenceResiduals) {
  const double Re = 3.0, kappa = 2.0;
  const ManufacturedCase mc = make_case(GetParam(), Re, kappa, kB);
  for (const Vec3& x : {Vec3(0.2, 0.7, 0.4), Vec3(0.9, 0.1, 0.55)})
    for (double t : {0.0, 0.6}) {
      const Mat3 gu = fd_grad(mc.u, x, t);
      EXPECT_LT((gu - mc.grad_u(x, t)).norm(), 1e-7);
      EXPECT_NEAR(gu.trace(), 0.0, 1e-7);
      EXPECT_NEAR(fd_grad(mc.J, x, t).trace(), 0.0, 1e-7);
      const Vec3 fu = fd_time(mc.u, x, t) - fd_laplacian(mc.u, x, t) / Re + gu * mc.u(x, t) + fd_grad(mc.p, x, t) -
                      kappa * mc.J(x, t).cross(kB(x));
      EXPECT_LT((fu - mc.f_u(x, t)).norm(), 1e-5) << GetParam();
      const Vec3 fJ = kappa * (mc.J(x, t) + fd_grad(mc.phi, x, t) - mc.u(x, t).cross(kB(x)));
      EXPECT_LT((fJ - mc.f_J(x, t)).norm(), 1e-7) << GetParam();
    }
}

INSTANTIATE_TEST_SUITE_P(Cases, Loads, ::testing::Values("ms1", "ms2"));

TEST(Cases, SpatialCaseBoundaryTracesAndZeroMeans) {
  const ManufacturedCase mc = make_ms2(1.0, 1.0, kB);
  const std::pair<Vec3, int> points[] = {{Vec3(0.0, 0.3, 0.8), 0}, {Vec3(0.4, 1.0, 0.2), 1}, {Vec3(0.6, 0.5, 0.0), 2}};
  for (const auto& [x, d] : points) {
    EXPECT_LT(std::abs(mc.u(x, 0.3)[d]), 1e-15);
    Vec3 tangential = mc.J(x, 0.3);
    tangential[d] = 0.0;
    EXPECT_LT(tangential.norm(), 1e-15);
  }
  const QuadratureRule r = quad_cell(vemmhd::testing::unit_cube().cell_geom(0), 10);
  double p = 0.0, phi = 0.0;
  for (std::size_t q = 0; q < r.size(); ++q) {
    p += r.weights[q] * mc.p(r.points[q], 0.0);
    phi += r.weights[q] * mc.phi(r.points[q], 0.0);
  }
  EXPECT_NEAR(p, 0.0, 1e-12);
  EXPECT_NEAR(phi, 0.0, 1e-14);
}

TEST(Cases, DecayHasNoLoadAndHomogeneousStart) {
  const ManufacturedCase mc = make_case("decay", 1.0, 1.0, kB);
  EXPECT_FALSE(mc.has_solution);
  EXPECT_FALSE(static_cast<bool>(mc.forcing().f_u));
  const DofLayout L(cube2(), Degrees{2, 1});
  const Vec u0 = initial_velocity(mc, L);
  for (int i = 0; i < L.num_u(); ++i)
    if (L.u_fixed(i)) EXPECT_EQ(u0[i], 0.0);
  EXPECT_GT(u0.norm(), 0.1);
  EXPECT_THROW(make_case("ms3", 1.0, 1.0, kB), ConfigError);
}

TEST(Expression, EvaluatesArithmetic) {
  const Vec3 x(0.5, 2.0, -1.0);
  EXPECT_NEAR(Expression("sin(pi*x) + y^2 - 3*z")(x), 1.0 + 4.0 + 3.0, 1e-15);
  EXPECT_NEAR(Expression("2^3^2")(x), 512.0, 1e-12);
  EXPECT_NEAR(Expression("-(x + y) * exp(0) / 2")(x), -1.25, 1e-15);
  EXPECT_NEAR(Expression("sqrt(abs(z)) + log(exp(y))")(x), 3.0, 1e-15);
  for (const char* bad : {"1 +", "foo(x)", "(x", "x y", "", "w"}) EXPECT_THROW(Expression{bad}, ParseError) << bad;
}

TEST(Expression, AppliedFieldParsing) {
  const Vec3 x(0.1, 0.2, 0.3);
  EXPECT_EQ(parse_field("1, -2, 0.5")(x), Vec3(1.0, -2.0, 0.5));
  EXPECT_LT((parse_field("expr: x*y, cos(0), z")(x) - Vec3(0.02, 1.0, 0.3)).norm(), 1e-15);
  EXPECT_THROW(parse_field("1, 2"), ParseError);
  EXPECT_THROW(parse_field("1, a, 2"), ParseError);
}

TEST(Config, ParsesKeysAndComments) {
  std::istringstream in(
      "# temporal plan\nRe = 10\nkappa=2 # inline\nscheme = 2\nmesh.type = dtp\nmesh.n = 3\nmesh.jitter = 0.15\n"
      "mesh.seed = 9\ncase = ms2\nB = expr: 1, x, 0\nplan.dt = 0.1, 0.05, 0.025\nworkers = 2\n");
  const RunConfig cfg = parse_config(in);
  EXPECT_EQ(cfg.Re, 10.0);
  EXPECT_EQ(cfg.kappa, 2.0);
  EXPECT_EQ(cfg.scheme, 2);
  EXPECT_EQ(cfg.mesh.type, "dtp");
  EXPECT_EQ(cfg.mesh.n, 3);
  EXPECT_EQ(cfg.mesh.jitter, 0.15);
  EXPECT_EQ(cfg.mesh.seed, 9u);
  EXPECT_EQ(cfg.case_name, "ms2");
  EXPECT_EQ(cfg.plan_dt, (std::vector<double>{0.1, 0.05, 0.025}));
  EXPECT_EQ(cfg.workers, 2u);
  EXPECT_EQ(cfg.B()(Vec3(0.3, 0, 0)), Vec3(1.0, 0.3, 0.0));
  EXPECT_NE(metadata(cfg).find("B=expr: 1, x, 0"), std::string::npos);
}

TEST(Config, ErrorsNameTheKey) {
  auto message_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_config(in);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(message_of("kapa = 1").rfind("kapa", 0), 0u);
  EXPECT_EQ(message_of("dt = fast").rfind("dt", 0), 0u);
  EXPECT_EQ(message_of("dt = -1").rfind("dt", 0), 0u);
  EXPECT_EQ(message_of("scheme = 3").rfind("scheme", 0), 0u);
  EXPECT_EQ(message_of("k_J = 2").rfind("k_J", 0), 0u);
  EXPECT_EQ(message_of("B = 1, 2").rfind("B", 0), 0u);
  EXPECT_EQ(message_of("case = vortex").rfind("case", 0), 0u);
  EXPECT_EQ(message_of("plan.dt = 0.1, x").rfind("plan.dt", 0), 0u);
  EXPECT_EQ(message_of("Re").rfind("Re", 0), 0u);
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(MeshSpec, Parsing) {
  const MeshSpec c = parse_mesh_spec("cube:4");
  EXPECT_EQ(c.type, "cube");
  EXPECT_EQ(c.n, 4);
  const MeshSpec d = parse_mesh_spec("dtp:5:0.2:7");
  EXPECT_EQ(d.type, "dtp");
  EXPECT_EQ(d.n, 5);
  EXPECT_EQ(d.jitter, 0.2);
  EXPECT_EQ(d.seed, 7u);
  EXPECT_EQ(parse_mesh_spec("dtp:3").jitter, 0.1);
  EXPECT_EQ(parse_mesh_spec("file:/tmp/a.mesh").path, "/tmp/a.mesh");
  for (const char* bad : {"cube", "cube:x", "cube:2:0.1", "tet:2", "cube:0", "file:", "dtp:2:a"})
    EXPECT_THROW(parse_mesh_spec(bad), ConfigError) << bad;
  EXPECT_EQ(build_mesh(parse_mesh_spec("dtp:2:0.0:0")).num_cells(), 16);
}

TEST(Slopes, FitsPowerLaws) {
  EXPECT_NEAR(fit_slope({0.1, 0.05, 0.025}, {3e-2, 7.5e-3, 1.875e-3}), 2.0, 1e-12);
  EXPECT_NEAR(fit_slope({1, 2, 4, 8}, {5, 5, 5, 5}), 0.0, 1e-12);
  EXPECT_THROW(fit_slope({0.1, 0.05}, {1.0, 0.5}), ConfigError);
  EXPECT_THROW(fit_slope({0.1, 0.05, 0.02}, {1.0, 0.5}), ConfigError);
}

TEST(Driver, SingleCellRunIsDivergenceFree) {
  RunConfig cfg;
  cfg.mesh = parse_mesh_spec("cube:1");
  cfg.dt = 0.25;
  const SimulationResult r = simulate(cfg);
  EXPECT_LE(r.errors.div_u, 1e-13);
  EXPECT_LE(r.errors.div_J, 1e-13);
  EXPECT_EQ(r.run.trace.size(), 5u);
  EXPECT_NEAR(r.errors.t, 1.0, 1e-14);
  EXPECT_EQ(r.errors.dt, 0.25);
}

TEST(Driver, StudyKeepsPlanOrderAndIsDeterministic) {
  RunConfig cfg = small_temporal_plan();
  const StudyResult serial = convergence_study(cfg);
  cfg.workers = 3;
  const StudyResult parallel = convergence_study(cfg);
  ASSERT_EQ(serial.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(serial.rows[i].errors.dt, cfg.plan_dt[i]);
    EXPECT_EQ(serial.rows[i].errors.e_J, parallel.rows[i].errors.e_J);
    EXPECT_EQ(serial.rows[i].errors.e_u, parallel.rows[i].errors.e_u);
  }
  EXPECT_EQ(serial.slope_J, parallel.slope_J);
  EXPECT_EQ(serial.mode, "temporal");
  cfg.plan_dt = {0.5, 0.25};
  EXPECT_THROW(convergence_study(cfg), ConfigError);
}

TEST(Driver, SpatialStudySnapsTimeStep) {
  RunConfig cfg;
  cfg.plan_mode = "spatial";
  cfg.plan_n = {1, 2, 3};
  cfg.case_name = "ms2";
  cfg.T = 0.5;
  const StudyResult s = convergence_study(cfg);
  ASSERT_EQ(s.rows.size(), 3u);
  for (const auto& r : s.rows) {
    const double steps = cfg.T / r.errors.dt;
    EXPECT_NEAR(steps, std::round(steps), 1e-12);
    EXPECT_NEAR(r.errors.t, cfg.T, 1e-12);
  }
  EXPECT_EQ(s.rows[2].n, 3);
  EXPECT_GT(s.rows[0].errors.h, s.rows[2].errors.h);
}

TEST(Output, CsvHeaders) {
  const StudyResult s = convergence_study(small_temporal_plan());
  auto header = [](const std::string& text) {
    std::istringstream in(text);
    std::string meta, head;
    std::getline(in, meta);
    std::getline(in, head);
    EXPECT_EQ(meta.rfind("# Re=", 0), 0u) << meta;
    return head;
  };
  const std::string meta = metadata(small_temporal_plan());
  std::ostringstream errors, slopes, div, dat;
  std::vector<ErrorReport> rows;
  for (const auto& r : s.rows) rows.push_back(r.errors);
  write_errors_csv(errors, rows, meta);
  write_slopes_csv(slopes, s, meta);
  DivergenceRow d;
  d.mesh = "cube:1";
  d.offending_cells = {3, 5};
  write_divergence_csv(div, {d}, meta);
  write_gnuplot_data(dat, s, meta);
  EXPECT_EQ(header(errors.str()), "h,dt,t,e_u,e_J,e_p,e_phi,e_s,div_u,div_J");
  EXPECT_EQ(header(slopes.str()), "quantity,slope");
  EXPECT_EQ(header(div.str()), "mesh,h,dt,div_u,div_J,offending_cells");
  EXPECT_EQ(header(dat.str()), "# dt e_u e_J e_p e_phi e_s");
  EXPECT_NE(div.str().find(",3 5\n"), std::string::npos);
  const std::string text = errors.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}
