#pragma once

#include "vemmhd/core.hpp"
#include "vemmhd/expr.hpp"
#include "vemmhd/forms.hpp"
#include "vemmhd/mesh.hpp"
#include "vemmhd/sav_stepper.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace vemmhd {

using Mat3 = Eigen::Matrix3d;
using SpaceTimeScalar = std::function<double(const Vec3&, double)>;
using SpaceTimeGradient = std::function<Mat3(const Vec3&, double)>;

/// Analytic solution with the loads that make it exact. grad_u(x, t)(c, j) is d u_c / d x_j.
struct ManufacturedCase {
  std::string name;
  bool has_solution = true;
  SpaceTimeField u, J;
  SpaceTimeGradient grad_u;
  SpaceTimeScalar p, phi;
  SpaceTimeField f_u, f_J;

  Forcing forcing() const {
    if (!has_solution) return {};
    return Forcing{f_u, f_J, u, J};
  }
};

namespace detail {

/// f_u = u_t - Re^{-1} lap u + (grad u) u + grad p - kappa J x B.
inline SpaceTimeField momentum_load(SpaceTimeField u_t, SpaceTimeField lap_u, SpaceTimeField u,
                                    SpaceTimeGradient grad_u, SpaceTimeField grad_p, SpaceTimeField J, double Re,
                                    double kappa, AppliedField B) {
  return [=](const Vec3& x, double t) {
    return Vec3(u_t(x, t) - lap_u(x, t) / Re + grad_u(x, t) * u(x, t) + grad_p(x, t) - kappa * J(x, t).cross(B(x)));
  };
}

/// f_J = kappa (J + grad phi - u x B).
inline SpaceTimeField ohm_load(SpaceTimeField J, SpaceTimeField grad_phi, SpaceTimeField u, double kappa,
                               AppliedField B) {
  return [=](const Vec3& x, double t) { return Vec3(kappa * (J(x, t) + grad_phi(x, t) - u(x, t).cross(B(x)))); };
}

}  // namespace detail

/// Temporal case: u = (z sin t, z, 0), J = (cos t, t^2, 0), p = phi = 0.
inline ManufacturedCase make_ms1(double Re, double kappa, const AppliedField& B) {
  ManufacturedCase c;
  c.name = "ms1";
  c.u = [](const Vec3& x, double t) { return Vec3(x[2] * std::sin(t), x[2], 0.0); };
  c.J = [](const Vec3&, double t) { return Vec3(std::cos(t), t * t, 0.0); };
  c.grad_u = [](const Vec3&, double t) {
    Mat3 g = Mat3::Zero();
    g(0, 2) = std::sin(t);
    g(1, 2) = 1.0;
    return g;
  };
  c.p = [](const Vec3&, double) { return 0.0; };
  c.phi = [](const Vec3&, double) { return 0.0; };
  const SpaceTimeField zero = [](const Vec3&, double) { return Vec3::Zero().eval(); };
  const SpaceTimeField u_t = [](const Vec3& x, double t) { return Vec3(x[2] * std::cos(t), 0.0, 0.0); };
  c.f_u = detail::momentum_load(u_t, zero, c.u, c.grad_u, zero, c.J, Re, kappa, B);
  c.f_J = detail::ohm_load(c.J, zero, c.u, kappa, B);
  return c;
}

/// Spatial case with trigonometric velocity and pressure, polynomial current and potential.
inline ManufacturedCase make_ms2(double Re, double kappa, const AppliedField& B) {
  ManufacturedCase c;
  c.name = "ms2";
  const double pi = M_PI;
  c.u = [pi](const Vec3& x, double t) {
    const double sx = std::sin(pi * x[0]), sy = std::sin(pi * x[1]), sz = std::sin(pi * x[2]);
    const double cx = std::cos(pi * x[0]), cy = std::cos(pi * x[1]), cz = std::cos(pi * x[2]);
    return Vec3(Vec3(sx * cy * cz, cx * sy * cz, -2.0 * cx * cy * sz) * std::exp(-t));
  };
  c.grad_u = [pi](const Vec3& x, double t) {
    const double sx = std::sin(pi * x[0]), sy = std::sin(pi * x[1]), sz = std::sin(pi * x[2]);
    const double cx = std::cos(pi * x[0]), cy = std::cos(pi * x[1]), cz = std::cos(pi * x[2]);
    Mat3 g;
    g << cx * cy * cz, -sx * sy * cz, -sx * cy * sz,
        -sx * sy * cz, cx * cy * cz, -cx * sy * sz,
        2.0 * sx * cy * sz, 2.0 * cx * sy * sz, -2.0 * cx * cy * cz;
    return Mat3(pi * std::exp(-t) * g);
  };
  c.J = [](const Vec3& x, double t) {
    const double ax = x[0] * (1.0 - x[0]), ay = x[1] * (1.0 - x[1]), az = x[2] * (1.0 - x[2]);
    return Vec3(Vec3(ay * az, ax * az, ax * ay) * std::exp(-t));
  };
  c.p = [pi](const Vec3& x, double t) {
    return -pi * std::cos(pi * x[0]) * std::cos(pi * x[1]) * std::sin(pi * x[2]) * std::exp(-t);
  };
  c.phi = [](const Vec3& x, double t) { return (x.squaredNorm() - 1.0) * std::exp(-t); };
  const SpaceTimeField u = c.u;
  const SpaceTimeField u_t = [u](const Vec3& x, double t) { return Vec3(-u(x, t)); };
  const SpaceTimeField lap_u = [u, pi](const Vec3& x, double t) { return Vec3(-3.0 * pi * pi * u(x, t)); };
  const SpaceTimeField grad_p = [pi](const Vec3& x, double t) {
    const double sx = std::sin(pi * x[0]), sy = std::sin(pi * x[1]), sz = std::sin(pi * x[2]);
    const double cx = std::cos(pi * x[0]), cy = std::cos(pi * x[1]), cz = std::cos(pi * x[2]);
    return Vec3(Vec3(sx * cy * sz, cx * sy * sz, -cx * cy * cz) * (pi * pi * std::exp(-t)));
  };
  const SpaceTimeField grad_phi = [](const Vec3& x, double t) { return Vec3(2.0 * x * std::exp(-t)); };
  c.f_u = detail::momentum_load(u_t, lap_u, c.u, c.grad_u, grad_p, c.J, Re, kappa, B);
  c.f_J = detail::ohm_load(c.J, grad_phi, c.u, kappa, B);
  return c;
}

/// Zero-load decay from the spatial case's initial velocity (no exact solution).
inline ManufacturedCase make_decay() {
  ManufacturedCase c = make_ms2(1.0, 1.0, [](const Vec3&) { return Vec3(1.0, 1.0, 1.0); });
  c.name = "decay";
  c.has_solution = false;
  c.f_u = nullptr;
  c.f_J = nullptr;
  return c;
}

inline ManufacturedCase make_case(const std::string& name, double Re, double kappa, const AppliedField& B) {
  if (name == "ms1") return make_ms1(Re, kappa, B);
  if (name == "ms2") return make_ms2(Re, kappa, B);
  if (name == "decay") return make_decay();
  throw ConfigError("case: unknown case '" + name + "'");
}

/// Initial velocity DOFs: the interpolant of u(., 0); for the decay case the
/// boundary DOFs are set to zero so that the run is homogeneous.
inline Vec initial_velocity(const ManufacturedCase& c, const DofLayout& layout) {
  Vec u0 = interpolate_velocity(layout, [&](const Vec3& x) { return c.u(x, 0.0); });
  if (!c.has_solution)
    for (int i = 0; i < layout.num_u(); ++i)
      if (layout.u_fixed(i)) u0[i] = 0.0;
  return u0;
}

// ---------------------------------------------------------------------------
// Errors

struct ErrorReport {
  double e_u = 0.0, e_J = 0.0, e_p = 0.0, e_phi = 0.0, e_s = 0.0;
  double div_u = 0.0, div_J = 0.0;
  double h = 0.0, dt = 0.0, t = 0.0;
};

/// Errors of a state against the case at time state.t. R(t) = exp(-t / T).
inline ErrorReport compute_errors(const Forms& forms, const SystemState& st, const ManufacturedCase& c, double T,
                                  int exactness = 8) {
  const DofLayout& L = forms.layout();
  const PolyMesh& mesh = L.mesh();
  const int kJ = L.degrees().k_J;
  const int mJ = dim_cell(kJ);
  const double t = st.t;
  std::vector<std::array<double, 4>> local(L.num_cells());
  parallel_for(local.size(), forms.workers(), [&](std::size_t ci) {
    const int cell = static_cast<int>(ci);
    const CellContext& ctx = L.context(cell);
    const ElementOps& e = forms.element(cell);
    const Vec grad = e.vp.grad * L.gather_u(st.u, cell);
    const Vec pj = e.jp.l2 * L.gather_j(st.J, cell);
    const Vec pp = L.gather_p(st.p, cell);
    const Vec pphi = L.gather_phi(st.phi, cell);
    const CellBasis b2(ctx.basis.center, ctx.h(), 2);
    std::array<Mat, 3> D;
    for (int d = 0; d < 3; ++d) D[d] = b2.derivative(d);
    const QuadratureRule rule = quad_cell(ctx.geom(), exactness);
    std::array<double, 4> acc{0.0, 0.0, 0.0, 0.0};
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Vec3& x = rule.points[q];
      const Vec m = ctx.basis.values_upto(x, 2);
      Mat3 gh;
      for (int comp = 0; comp < 3; ++comp)
        for (int d = 0; d < 3; ++d) gh(comp, d) = (D[d] * grad.segment(10 * comp, 10)).dot(m.head(4));
      const Vec3 Jh = eval_vector_poly(pj, m, kJ);
      const double w = rule.weights[q];
      acc[0] += w * (c.grad_u(x, t) - gh).squaredNorm();
      acc[1] += w * (c.J(x, t) - Jh).squaredNorm();
      acc[2] += w * std::pow(c.p(x, t) - pp.dot(m.head(4)), 2);
      acc[3] += w * std::pow(c.phi(x, t) - pphi.dot(m.head(mJ)), 2);
    }
    local[ci] = acc;
  });
  std::array<double, 4> sum{0.0, 0.0, 0.0, 0.0};
  for (const auto& a : local)
    for (int k = 0; k < 4; ++k) sum[k] += a[k];
  ErrorReport r;
  r.e_u = std::sqrt(sum[0]);
  r.e_J = std::sqrt(sum[1]);
  r.e_p = std::sqrt(sum[2]);
  r.e_phi = std::sqrt(sum[3]);
  r.e_s = std::abs(std::exp(-t / T) - st.s);
  r.div_u = forms.div_u_norm(st.u);
  r.div_J = forms.div_J_norm(st.J);
  r.h = mesh_size(mesh);
  r.t = t;
  return r;
}

/// Least-squares slope of log(y) against log(x). At least three points are required.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ConfigError("slope fit: mismatched data");
  if (x.size() < 3) throw ConfigError("slope fit: at least three points are required");
  const int n = static_cast<int>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// Configuration

struct MeshSpec {
  std::string type = "cube";  ///< cube | dtp | file
  int n = 2;
  double jitter = 0.1;  ///< dtp only, as a fraction of 1/n
  unsigned seed = 0;
  std::string path;
};

/// Parses "cube:N", "dtp:N[:jitter[:seed]]" or "file:PATH".
inline MeshSpec parse_mesh_spec(const std::string& text) {
  MeshSpec spec;
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("mesh: expected type:args, got '" + text + "'");
  spec.type = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  if (spec.type == "file") {
    spec.path = rest;
    if (rest.empty()) throw ConfigError("mesh: file needs a path");
    return spec;
  }
  if (spec.type != "cube" && spec.type != "dtp") throw ConfigError("mesh: unknown mesh type '" + spec.type + "'");
  std::vector<std::string> parts;
  std::stringstream in(rest);
  for (std::string part; std::getline(in, part, ':');) parts.push_back(part);
  if (parts.empty() || parts.size() > (spec.type == "dtp" ? 3u : 1u))
    throw ConfigError("mesh: bad arguments in '" + text + "'");
  try {
    std::size_t used = 0;
    spec.n = std::stoi(parts[0], &used);
    if (used != parts[0].size()) throw std::invalid_argument(parts[0]);
    if (parts.size() > 1) spec.jitter = std::stod(parts[1], &used);
    if (parts.size() > 2) spec.seed = static_cast<unsigned>(std::stoul(parts[2], &used));
  } catch (const std::logic_error&) {
    throw ConfigError("mesh: bad arguments in '" + text + "'");
  }
  if (spec.n < 1) throw ConfigError("mesh: n must be at least 1");
  return spec;
}

inline PolyMesh build_mesh(const MeshSpec& spec) {
  if (spec.type == "cube") return build_cube_mesh(spec.n);
  if (spec.type == "dtp") return build_dtp_mesh(spec.n, spec.jitter, spec.seed);
  if (spec.type == "file") return import_mesh(spec.path);
  throw ConfigError("mesh.type: unknown mesh type '" + spec.type + "'");
}

/// Parses "a, b, c" or "expr: ex, ey, ez" into an applied field.
inline AppliedField parse_field(const std::string& text) {
  std::string body = text;
  const bool is_expr = body.rfind("expr:", 0) == 0;
  if (is_expr) body = body.substr(5);
  const auto parts = split_top_level(body);
  if (parts.size() != 3) throw ParseError("B needs three components");
  if (is_expr) {
    auto ex = std::make_shared<std::array<Expression, 3>>(
        std::array<Expression, 3>{Expression(parts[0]), Expression(parts[1]), Expression(parts[2])});
    return [ex](const Vec3& x) { return Vec3((*ex)[0](x), (*ex)[1](x), (*ex)[2](x)); };
  }
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    std::size_t used = 0;
    try {
      v[k] = std::stod(parts[k], &used);
    } catch (const std::exception&) {
      throw ParseError("B component '" + parts[k] + "' is not a number");
    }
    if (parts[k].find_first_not_of(" \t", used) != std::string::npos)
      throw ParseError("B component '" + parts[k] + "' is not a number");
  }
  return [v](const Vec3&) { return v; };
}

/// Everything needed for one simulation, plus the optional study plan.
struct RunConfig {
  double Re = 1.0, kappa = 1.0, T = 1.0, dt = 0.1;
  int scheme = 1;
  int k_u = 2, k_J = 1;
  MeshSpec mesh;
  std::string case_name = "ms1";
  std::string B_text = "1, 1, 1";
  std::string out_dir = ".";
  unsigned workers = 1;
  // Study plan.
  std::string plan_mode = "temporal";  ///< temporal | spatial
  std::vector<double> plan_dt;         ///< temporal: time steps
  std::vector<int> plan_n;             ///< spatial: mesh subdivisions
  std::string plan_dt_rule = "h";      ///< spatial: h | h2

  AppliedField B() const { return parse_field(B_text); }
  SchemeConfig scheme_config() const {
    SchemeConfig s;
    s.Re = Re;
    s.kappa = kappa;
    s.T = T;
    s.dt = dt;
    s.order = scheme;
    s.workers = workers;
    return s;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError(key + ": invalid value '" + value + "'");
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  for (const auto& part : split_top_level(value)) out.push_back(parse_value<T>(key, trim(part)));
  return out;
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys and bad values raise ConfigError naming the key.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_value;
  if (key == "Re") cfg.Re = parse_value<double>(key, value);
  else if (key == "kappa") cfg.kappa = parse_value<double>(key, value);
  else if (key == "T") cfg.T = parse_value<double>(key, value);
  else if (key == "dt") cfg.dt = parse_value<double>(key, value);
  else if (key == "scheme") cfg.scheme = parse_value<int>(key, value);
  else if (key == "k_u") cfg.k_u = parse_value<int>(key, value);
  else if (key == "k_J") cfg.k_J = parse_value<int>(key, value);
  else if (key == "mesh.type") cfg.mesh.type = value;
  else if (key == "mesh.n") cfg.mesh.n = parse_value<int>(key, value);
  else if (key == "mesh.jitter") cfg.mesh.jitter = parse_value<double>(key, value);
  else if (key == "mesh.seed") cfg.mesh.seed = parse_value<unsigned>(key, value);
  else if (key == "mesh.path") cfg.mesh.path = value;
  else if (key == "case") cfg.case_name = value;
  else if (key == "B") {
    try {
      parse_field(value);
    } catch (const ParseError& e) {
      throw ConfigError(std::string("B: ") + e.what());
    }
    cfg.B_text = value;
  } else if (key == "out.dir") cfg.out_dir = value;
  else if (key == "workers") cfg.workers = parse_value<unsigned>(key, value);
  else if (key == "plan.mode") cfg.plan_mode = value;
  else if (key == "plan.dt") cfg.plan_dt = detail::parse_list<double>(key, value);
  else if (key == "plan.n") cfg.plan_n = detail::parse_list<int>(key, value);
  else if (key == "plan.dt_rule") cfg.plan_dt_rule = value;
  else throw ConfigError(key + ": unknown key");
}

/// Checks value ranges; raises ConfigError naming the offending key.
inline void validate(const RunConfig& cfg) {
  if (!(cfg.Re > 0.0)) throw ConfigError("Re: must be positive");
  if (!(cfg.kappa > 0.0)) throw ConfigError("kappa: must be positive");
  if (!(cfg.T > 0.0)) throw ConfigError("T: must be positive");
  if (!(cfg.dt > 0.0)) throw ConfigError("dt: must be positive");
  if (cfg.scheme != 1 && cfg.scheme != 2) throw ConfigError("scheme: must be 1 or 2");
  if (cfg.k_u != 2) throw ConfigError("k_u: only 2 is supported");
  if (cfg.k_J != 0 && cfg.k_J != 1) throw ConfigError("k_J: must be 0 or 1");
  if (cfg.mesh.type != "cube" && cfg.mesh.type != "dtp" && cfg.mesh.type != "file")
    throw ConfigError("mesh.type: must be cube, dtp or file");
  if (cfg.mesh.type != "file" && cfg.mesh.n < 1) throw ConfigError("mesh.n: must be at least 1");
  if (cfg.mesh.type == "file" && cfg.mesh.path.empty()) throw ConfigError("mesh.path: required for mesh.type = file");
  if (cfg.case_name != "ms1" && cfg.case_name != "ms2" && cfg.case_name != "decay")
    throw ConfigError("case: must be ms1, ms2 or decay");
  if (cfg.workers < 1) throw ConfigError("workers: must be at least 1");
  if (cfg.plan_mode != "temporal" && cfg.plan_mode != "spatial")
    throw ConfigError("plan.mode: must be temporal or spatial");
  if (cfg.plan_dt_rule != "h" && cfg.plan_dt_rule != "h2") throw ConfigError("plan.dt_rule: must be h or h2");
}

/// Reads a flat `key = value` file; '#' starts a comment.
inline RunConfig parse_config(std::istream& in, RunConfig cfg = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(detail::trim(line) + ": expected 'key = value' on line " + std::to_string(lineno));
    apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

inline RunConfig load_config(const std::string& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in, cfg);
}

// ---------------------------------------------------------------------------
// Drivers

struct SimulationResult {
  ErrorReport errors;
  RunResult run;
};

/// One run to T. `workers` overrides the configuration's worker count.
inline SimulationResult simulate(const RunConfig& cfg, const PolyMesh& mesh, unsigned workers) {
  validate(cfg);
  const AppliedField B = cfg.B();
  const ManufacturedCase mc = make_case(cfg.case_name, cfg.Re, cfg.kappa, B);
  const auto layout = build_layout(mesh, Degrees{cfg.k_u, cfg.k_J}, workers);
  const Forms forms(layout, FormParams{cfg.Re, cfg.kappa, B}, workers);
  SchemeConfig sc = cfg.scheme_config();
  sc.workers = workers;
  const SavStepper stepper(forms, sc, mc.forcing());
  SimulationResult out;
  out.run = run(stepper, initial_velocity(mc, *layout));
  if (mc.has_solution) {
    out.errors = compute_errors(forms, out.run.final_state, mc, cfg.T);
  } else {
    out.errors.div_u = forms.div_u_norm(out.run.final_state.u);
    out.errors.div_J = forms.div_J_norm(out.run.final_state.J);
    out.errors.h = mesh_size(mesh);
    out.errors.t = out.run.final_state.t;
  }
  out.errors.dt = cfg.dt;
  return out;
}

inline SimulationResult simulate(const RunConfig& cfg) { return simulate(cfg, build_mesh(cfg.mesh), cfg.workers); }

struct StudyRow {
  int n = 0;
  ErrorReport errors;
};

struct StudyResult {
  std::string mode;
  std::vector<StudyRow> rows;
  double slope_u = 0.0, slope_J = 0.0, slope_p = 0.0, slope_phi = 0.0, slope_s = 0.0;
};

/// Runs the plan's (h, dt) pairs concurrently (cfg.workers at a time) and fits slopes
/// against dt (temporal mode) or h (spatial mode). Rows keep plan order.
inline StudyResult convergence_study(const RunConfig& cfg) {
  validate(cfg);
  std::vector<RunConfig> runs;
  if (cfg.plan_mode == "temporal") {
    for (double dt : cfg.plan_dt) {
      RunConfig r = cfg;
      r.dt = dt;
      runs.push_back(r);
    }
  } else {
    for (int n : cfg.plan_n) {
      RunConfig r = cfg;
      r.mesh.n = n;
      const double h = mesh_size(build_mesh(r.mesh));
      r.dt = cfg.plan_dt_rule == "h2" ? h * h : h;
      // Snap to an integer number of steps over [0, T].
      r.dt = r.T / std::max(1L, std::lround(r.T / r.dt));
      runs.push_back(r);
    }
  }
  if (runs.size() < 3) throw ConfigError("plan: at least three runs are needed to fit a slope");
  StudyResult out;
  out.mode = cfg.plan_mode;
  out.rows.resize(runs.size());
  parallel_for(runs.size(), cfg.workers, [&](std::size_t i) {
    out.rows[i].n = runs[i].mesh.n;
    out.rows[i].errors = simulate(runs[i], build_mesh(runs[i].mesh), 1).errors;
  });
  std::vector<double> x, eu, eJ, ep, ephi, es;
  for (const auto& r : out.rows) {
    x.push_back(cfg.plan_mode == "temporal" ? r.errors.dt : r.errors.h);
    eu.push_back(r.errors.e_u);
    eJ.push_back(r.errors.e_J);
    ep.push_back(r.errors.e_p);
    ephi.push_back(r.errors.e_phi);
    es.push_back(r.errors.e_s);
  }
  auto safe = [&](const std::vector<double>& y) {
    for (double v : y)
      if (!(v > 0.0)) return std::nan("");
    return fit_slope(x, y);
  };
  out.slope_u = safe(eu);
  out.slope_J = safe(eJ);
  out.slope_p = safe(ep);
  out.slope_phi = safe(ephi);
  out.slope_s = safe(es);
  return out;
}

struct DivergenceRow {
  std::string mesh;
  double h = 0.0, dt = 0.0, div_u = 0.0, div_J = 0.0;
  std::vector<int> offending_cells;  ///< cells whose local divergence norm exceeds the tolerance
};

/// Per-cell divergence norms above `tol` (velocity or current).
inline std::vector<int> offending_cells(const Forms& forms, const SystemState& st, double tol) {
  const DofLayout& L = forms.layout();
  const int kJ = L.degrees().k_J;
  std::vector<int> out;
  for (int c = 0; c < L.num_cells(); ++c) {
    const Vec du = forms.element(c).vp.div * L.gather_u(st.u, c);
    const Vec dJ = forms.element(c).jp.div * L.gather_j(st.J, c);
    const double nu = std::sqrt(std::max(0.0, du.dot(moment_mass(L.context(c).moments, 1, 1) * du)));
    const double nJ = std::sqrt(std::max(0.0, dJ.dot(moment_mass(L.context(c).moments, kJ, kJ) * dJ)));
    if (nu > tol || nJ > tol) out.push_back(c);
  }
  return out;
}

/// Final divergence norms for each (mesh, dt) of the plan. Meshes come from
/// `meshes` (label, spec); time steps from cfg.plan_dt.
inline std::vector<DivergenceRow> divergence_table(const RunConfig& cfg,
                                                   const std::vector<std::pair<std::string, MeshSpec>>& meshes,
                                                   double tol = 1e-11) {
  validate(cfg);
  std::vector<std::pair<std::string, RunConfig>> runs;
  for (const auto& [label, spec] : meshes)
    for (double dt : cfg.plan_dt) {
      RunConfig r = cfg;
      r.mesh = spec;
      r.dt = dt;
      runs.emplace_back(label, r);
    }
  std::vector<DivergenceRow> rows(runs.size());
  parallel_for(runs.size(), cfg.workers, [&](std::size_t i) {
    const RunConfig& r = runs[i].second;
    const PolyMesh mesh = build_mesh(r.mesh);
    const AppliedField B = r.B();
    const ManufacturedCase mc = make_case(r.case_name, r.Re, r.kappa, B);
    const auto layout = build_layout(mesh, Degrees{r.k_u, r.k_J});
    const Forms forms(layout, FormParams{r.Re, r.kappa, B});
    SchemeConfig sc = r.scheme_config();
    sc.workers = 1;
    const SavStepper stepper(forms, sc, mc.forcing());
    const RunResult res = run(stepper, initial_velocity(mc, *layout));
    DivergenceRow& row = rows[i];
    row.mesh = runs[i].first;
    row.h = mesh_size(mesh);
    row.dt = r.dt;
    row.div_u = forms.div_u_norm(res.final_state.u);
    row.div_J = forms.div_J_norm(res.final_state.J);
    row.offending_cells = offending_cells(forms, res.final_state, tol);
  });
  return rows;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_errors_csv(std::ostream& out, const std::vector<ErrorReport>& rows, const std::string& metadata) {
  out << "# " << metadata << "\n";
  out << "h,dt,t,e_u,e_J,e_p,e_phi,e_s,div_u,div_J\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.h << ',' << r.dt << ',' << r.t << ',' << r.e_u << ',' << r.e_J << ',' << r.e_p << ',' << r.e_phi << ','
        << r.e_s << ',' << r.div_u << ',' << r.div_J << '\n';
}

inline void write_slopes_csv(std::ostream& out, const StudyResult& s, const std::string& metadata) {
  out << "# " << metadata << "\n";
  out << "quantity,slope\n";
  out.precision(17);
  out << "e_u," << s.slope_u << "\ne_J," << s.slope_J << "\ne_p," << s.slope_p << "\ne_phi," << s.slope_phi
      << "\ne_s," << s.slope_s << '\n';
}

inline void write_divergence_csv(std::ostream& out, const std::vector<DivergenceRow>& rows, const std::string& metadata) {
  out << "# " << metadata << "\n";
  out << "mesh,h,dt,div_u,div_J,offending_cells\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.mesh << ',' << r.h << ',' << r.dt << ',' << r.div_u << ',' << r.div_J << ',';
    for (std::size_t i = 0; i < r.offending_cells.size(); ++i) out << (i ? " " : "") << r.offending_cells[i];
    out << '\n';
  }
}

/// Whitespace-separated columns for plotting: x e_u e_J e_p e_phi e_s, x = dt or h.
inline void write_gnuplot_data(std::ostream& out, const StudyResult& s, const std::string& metadata) {
  out << "# " << metadata << "\n";
  out << "# " << (s.mode == "temporal" ? "dt" : "h") << " e_u e_J e_p e_phi e_s\n";
  out.precision(17);
  for (const auto& r : s.rows)
    out << (s.mode == "temporal" ? r.errors.dt : r.errors.h) << ' ' << r.errors.e_u << ' ' << r.errors.e_J << ' '
        << r.errors.e_p << ' ' << r.errors.e_phi << ' ' << r.errors.e_s << '\n';
}

inline std::string metadata(const RunConfig& cfg) {
  std::ostringstream m;
  m << "Re=" << cfg.Re << " kappa=" << cfg.kappa << " T=" << cfg.T << " scheme=" << cfg.scheme << " k_J=" << cfg.k_J
    << " case=" << cfg.case_name << " B=" << cfg.B_text << " mesh=" << cfg.mesh.type;
  return m.str();
}

}  // namespace vemmhd
