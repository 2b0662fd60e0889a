#pragma once

#include "vemmhd/core.hpp"
#include "vemmhd/forms.hpp"
#include "vemmhd/spaces.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <vector>

namespace vemmhd {

/// Time-stepping parameters.
struct SchemeConfig {
  double Re = 1.0;
  double kappa = 1.0;
  double T = 1.0;
  double dt = 0.1;
  int order = 1;
  unsigned workers = 1;

  double Q() const { return 1.0 / T; }
  double R(double t) const { return std::exp(-t / T); }
  int num_steps() const { return static_cast<int>(std::lround(T / dt)); }

  void validate() const {
    if (!(Re > 0.0)) throw ConfigError("Re must be positive");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (!(T > 0.0)) throw ConfigError("T must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (order != 1 && order != 2) throw ConfigError("scheme must be 1 or 2");
  }
};

using SpaceTimeField = std::function<Vec3(const Vec3&, double)>;

/// Right-hand sides and Dirichlet data. Empty members mean zero.
struct Forcing {
  SpaceTimeField f_u;         ///< momentum load
  SpaceTimeField f_J;         ///< Ohm load
  SpaceTimeField u_boundary;  ///< velocity on the boundary
  SpaceTimeField J_boundary;  ///< current density on the boundary (normal part is used)

  bool zero_load() const { return !f_u && !f_J && !u_boundary && !J_boundary; }
};

/// Discrete unknowns at one time level plus the history needed by BDF2.
struct SystemState {
  Vec u, p, J, phi;
  double s = 1.0;
  double t = 0.0;
  int n = 0;
  Vec u_prev, J_prev;  ///< level n-1 (equal to level n at n = 0)
  double s_prev = 1.0;
  double S = 1.0;  ///< s / R at this level
};

// ---------------------------------------------------------------------------
// Saddle-point solver

/// Factorized [K_ff, -C_f^T, 0; -C_f, 0, m; 0, m^T, 0] with Dirichlet
/// elimination of the fixed primal unknowns; m is the zero-mean row of the
/// multiplier space (omitted when augment is false).
class SaddleSystem {
public:
  struct Solution {
    Vec x;  ///< primal, full length (fixed entries equal the boundary data)
    Vec y;  ///< multiplier field (pressure or potential)
    double lambda = 0.0;
  };

  SaddleSystem(SpMat K, SpMat C, const std::vector<bool>& fixed, const Vec& mean, bool augment = true)
      : K_(std::move(K)), C_(std::move(C)), augment_(augment) {
    const int n = static_cast<int>(K_.rows());
    if (static_cast<int>(fixed.size()) != n || C_.cols() != n || (augment && mean.size() != C_.rows()))
      throw IndexError("saddle system blocks have inconsistent sizes");
    pos_.assign(n, -1);
    for (int i = 0; i < n; ++i)
      if (!fixed[i]) {
        pos_[i] = static_cast<int>(free_.size());
        free_.push_back(i);
      }
    nf_ = static_cast<int>(free_.size());
    m_ = static_cast<int>(C_.rows());
    const int size = nf_ + m_ + (augment ? 1 : 0);
    std::vector<Eigen::Triplet<double>> t;
    for (int j = 0; j < K_.outerSize(); ++j)
      for (SpMat::InnerIterator it(K_, j); it; ++it)
        if (pos_[it.row()] >= 0 && pos_[it.col()] >= 0) t.emplace_back(pos_[it.row()], pos_[it.col()], it.value());
    for (int j = 0; j < C_.outerSize(); ++j)
      for (SpMat::InnerIterator it(C_, j); it; ++it)
        if (pos_[it.col()] >= 0) {
          t.emplace_back(nf_ + it.row(), pos_[it.col()], -it.value());
          t.emplace_back(pos_[it.col()], nf_ + it.row(), -it.value());
        }
    if (augment)
      for (int r = 0; r < m_; ++r) {
        t.emplace_back(nf_ + r, nf_ + m_, mean[r]);
        t.emplace_back(nf_ + m_, nf_ + r, mean[r]);
      }
    A_.resize(size, size);
    A_.setFromTriplets(t.begin(), t.end());
    A_.makeCompressed();
    lu_.analyzePattern(A_);
    lu_.factorize(A_);
    if (lu_.info() != Eigen::Success) throw SolveError("saddle system factorization failed: " + lu_.lastErrorMessage());
    probe_rank();
  }

  int size() const { return static_cast<int>(A_.rows()); }
  const SpMat& matrix() const { return A_; }

  /// Solves K x - C^T y = f, C x = 0 with x = g on fixed entries.
  Solution solve(const Vec& f, const Vec& g) const {
    if (f.size() != K_.rows() || g.size() != K_.rows()) throw IndexError("saddle rhs has the wrong length");
    Vec gb = Vec::Zero(g.size());
    for (std::size_t i = 0; i < pos_.size(); ++i)
      if (pos_[i] < 0) gb[i] = g[i];
    const Vec Kg = K_ * gb;
    const Vec Cg = C_ * gb;
    Vec b = Vec::Zero(size());
    for (int k = 0; k < nf_; ++k) b[k] = f[free_[k]] - Kg[free_[k]];
    b.segment(nf_, m_) = Cg;
    const Vec z = checked_solve(b);
    Solution out;
    out.x = gb;
    for (int k = 0; k < nf_; ++k) out.x[free_[k]] = z[k];
    out.y = z.segment(nf_, m_);
    if (augment_) out.lambda = z[nf_ + m_];
    return out;
  }

private:
  Vec checked_solve(const Vec& b) const {
    const double bn = b.norm();
    if (bn == 0.0) return Vec::Zero(b.size());
    Vec z = lu_.solve(b);
    for (int it = 0; it < 2; ++it) z += lu_.solve(Vec(b - A_ * z));
    const double res = (A_ * z - b).norm() / bn;
    if (!z.allFinite() || !(res <= 1e-10)) {
      std::ostringstream msg;
      msg << "saddle solve residual " << res << " exceeds 1e-10";
      throw SolveError(msg.str());
    }
    return z;
  }

  /// A solve with a random right-hand side bounds the condition number from
  /// below; a numerically singular operator gives a huge solution.
  void probe_rank() const {
    std::mt19937 rng(12345);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    Vec b(size());
    for (auto& v : b) v = U(rng);
    const Vec z = lu_.solve(b);
    double anorm = 0.0;
    for (int j = 0; j < A_.outerSize(); ++j)
      for (SpMat::InnerIterator it(A_, j); it; ++it) anorm = std::max(anorm, std::abs(it.value()));
    const double estimate = z.norm() * anorm / b.norm();
    if (!z.allFinite() || estimate > 1e14) {
      std::ostringstream msg;
      msg << "saddle system is numerically singular (condition estimate " << estimate << ")";
      throw SolveError(msg.str());
    }
  }

  SpMat K_, C_;
  bool augment_;
  std::vector<int> pos_, free_;
  int nf_ = 0, m_ = 0;
  SpMat A_;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
};

// ---------------------------------------------------------------------------
// SAV stepper

/// First- and second-order decoupled SAV schemes on fixed forms.
class SavStepper {
public:
  SavStepper(const Forms& forms, SchemeConfig cfg, Forcing forcing = {})
      : forms_(&forms), cfg_(cfg), forcing_(std::move(forcing)) {
    cfg_.validate();
    const DofLayout& L = forms.layout();
    const GlobalForms& g = forms.global();
    stokes1_.emplace(SpMat(g.A1 / cfg_.dt + g.B), g.C1, L.u_fixed_mask(), L.pressure_mean_row());
    if (cfg_.order == 2) stokes2_.emplace(SpMat(1.5 * g.A1 / cfg_.dt + g.B), g.C1, L.u_fixed_mask(), L.pressure_mean_row());
    poisson_.emplace(g.A2, g.C2, L.j_fixed_mask(), L.potential_mean_row());
  }

  const SchemeConfig& config() const { return cfg_; }
  const Forms& forms() const { return *forms_; }
  const Forcing& forcing() const { return forcing_; }

  /// u^0 interpolates u0; (J^0, phi^0) solve the Ohm system with s^0 = R^0 = 1.
  SystemState init_state_from_field(const VectorField& u0) const { return init_state(interpolate_velocity(forms_->layout(), u0)); }

  SystemState init_state(const Vec& u0) const {
    const DofLayout& L = forms_->layout();
    if (u0.size() != L.num_u()) throw IndexError("initial velocity has the wrong length");
    SystemState st;
    st.u = u0;
    st.p = Vec::Zero(L.num_p());
    st.s = 1.0;
    st.S = st.s / cfg_.R(0.0);
    const Vec rhs = current_load_at(0.0) - st.S * (forms_->global().D * st.u);
    const auto sol = poisson_->solve(rhs, current_boundary_at(0.0));
    st.J = sol.x;
    st.phi = sol.y;
    st.u_prev = st.u;
    st.J_prev = st.J;
    st.s_prev = st.s;
    return st;
  }

  SystemState step(const SystemState& st) const {
    return cfg_.order == 2 && st.n >= 1 ? step_second_order(st) : step_first_order(st);
  }

  SystemState step_first_order(const SystemState& st) const { return decoupled_step(st, false); }

  SystemState step_second_order(const SystemState& st) const {
    if (st.n < 1) throw ConfigError("the second-order scheme needs one previous level");
    if (!stokes2_) throw ConfigError("stepper was not configured for the second-order scheme");
    return decoupled_step(st, true);
  }

  /// Fully coupled solve of one step in all unknowns (u, p, J, phi, S).
  SystemState monolithic_step(const SystemState& st, int order) const;

  /// Discrete energy of a level: order 1 uses 1/2|u|^2 + 1/2 s^2, order 2 the
  /// BDF2 G-norm pairing with the previous level.
  double energy(const SystemState& st) const {
    const Forms& F = *forms_;
    if (cfg_.order == 1) return 0.5 * std::pow(F.norm_A1(st.u), 2) + 0.5 * st.s * st.s;
    const Vec w = 2.0 * st.u - st.u_prev;
    const double sw = 2.0 * st.s - st.s_prev;
    return 0.25 * std::pow(F.norm_A1(st.u), 2) + 0.25 * std::pow(F.norm_A1(w), 2) + 0.25 * st.s * st.s +
           0.25 * sw * sw;
  }

  /// |u|_B^2 + |J|_A2^2 + Q s^2: the dissipation bounding -(E^{n+1} - E^n)/dt without load.
  double dissipation(const SystemState& st) const {
    const Forms& F = *forms_;
    return std::pow(F.norm_B(st.u), 2) + std::pow(F.norm_A2(st.J), 2) + cfg_.Q() * st.s * st.s;
  }

  Vec velocity_load_at(double t) const {
    if (!forcing_.f_u) return Vec::Zero(forms_->layout().num_u());
    return forms_->velocity_load([&](const Vec3& x) { return forcing_.f_u(x, t); });
  }
  Vec current_load_at(double t) const {
    if (!forcing_.f_J) return Vec::Zero(forms_->layout().num_j());
    return forms_->current_load([&](const Vec3& x) { return forcing_.f_J(x, t); });
  }
  Vec velocity_boundary_at(double t) const {
    Vec g = Vec::Zero(forms_->layout().num_u());
    if (!forcing_.u_boundary) return g;
    g = boundary_velocity_values(forms_->layout(), [&](const Vec3& x) { return forcing_.u_boundary(x, t); });
    balance_velocity_flux(forms_->layout(), g);
    return g;
  }
  Vec current_boundary_at(double t) const {
    Vec g = Vec::Zero(forms_->layout().num_j());
    if (!forcing_.J_boundary) return g;
    g = boundary_current_values(forms_->layout(), [&](const Vec3& x) { return forcing_.J_boundary(x, t); });
    balance_current_flux(forms_->layout(), g);
    return g;
  }

private:
  SystemState decoupled_step(const SystemState& st, bool bdf2) const {
    const Forms& F = *forms_;
    const GlobalForms& g = F.global();
    const double dt = cfg_.dt;
    const double t1 = (st.n + 1) * dt;
    const double R = cfg_.R(t1);
    const Vec ue = bdf2 ? Vec(2.0 * st.u - st.u_prev) : st.u;
    const Vec Je = bdf2 ? Vec(2.0 * st.J - st.J_prev) : st.J;
    const Vec hist_u = bdf2 ? Vec((4.0 * st.u - st.u_prev) / (2.0 * dt)) : Vec(st.u / dt);
    const double hist_s = bdf2 ? (4.0 * st.s - st.s_prev) / (2.0 * dt) : st.s / dt;
    const double lead = bdf2 ? 1.5 : 1.0;
    const SaddleSystem& stokes = bdf2 ? *stokes2_ : *stokes1_;

    const Vec e = F.trilinear_vector(ue);
    const Vec dJ = g.D.transpose() * Je;
    const Vec du = g.D * ue;
    const Vec zero_u = Vec::Zero(ue.size()), zero_J = Vec::Zero(Je.size());

    const auto s1 = stokes.solve(g.A1 * hist_u + velocity_load_at(t1), velocity_boundary_at(t1));
    const auto s2 = stokes.solve(dJ - e, zero_u);
    const auto m1 = poisson_->solve(current_load_at(t1), current_boundary_at(t1));
    const auto m2 = poisson_->solve(-du, zero_J);

    const double a1 = e.dot(s1.x) + du.dot(m1.x) - dJ.dot(s1.x);
    const double a2 = e.dot(s2.x) + du.dot(m2.x) - dJ.dot(s2.x);
    const double den = lead * R / dt + R * cfg_.Q() - a2 / R;
    if (std::abs(den) < 1e-14 * R / dt) throw DegenerateScalarError("scalar auxiliary equation is degenerate");
    const double S = (a1 / R + hist_s) / den;

    SystemState out;
    out.n = st.n + 1;
    out.t = t1;
    out.u = s1.x + S * s2.x;
    out.p = s1.y + S * s2.y;
    out.J = m1.x + S * m2.x;
    out.phi = m1.y + S * m2.y;
    out.S = S;
    out.s = S * R;
    out.u_prev = st.u;
    out.J_prev = st.J;
    out.s_prev = st.s;
    return out;
  }

  const Forms* forms_;
  SchemeConfig cfg_;
  Forcing forcing_;
  std::optional<SaddleSystem> stokes1_, stokes2_, poisson_;
};

inline SystemState SavStepper::monolithic_step(const SystemState& st, int order) const {
  if (order != 1 && order != 2) throw ConfigError("order must be 1 or 2");
  if (order == 2 && st.n < 1) throw ConfigError("the second-order scheme needs one previous level");
  const Forms& F = *forms_;
  const DofLayout& L = F.layout();
  const GlobalForms& g = F.global();
  const bool bdf2 = order == 2;
  const double dt = cfg_.dt;
  const double t1 = (st.n + 1) * dt;
  const double R = cfg_.R(t1);
  const double lead = bdf2 ? 1.5 : 1.0;
  const Vec ue = bdf2 ? Vec(2.0 * st.u - st.u_prev) : st.u;
  const Vec Je = bdf2 ? Vec(2.0 * st.J - st.J_prev) : st.J;
  const Vec hist_u = bdf2 ? Vec((4.0 * st.u - st.u_prev) / (2.0 * dt)) : Vec(st.u / dt);
  const double hist_s = bdf2 ? (4.0 * st.s - st.s_prev) / (2.0 * dt) : st.s / dt;
  // Explicit fields contributing through the coupling and convection.
  const Vec conv = F.trilinear_vector(ue) - Vec(g.D.transpose() * Je);  // momentum column of S
  const Vec ohm = g.D * ue;                                              // Ohm column of S
  const Vec gu = velocity_boundary_at(t1), gJ = current_boundary_at(t1);

  // Unknown ordering: u free | p | lambda_p | J free | phi | lambda_phi | S.
  std::vector<int> upos(L.num_u(), -1), jpos(L.num_j(), -1);
  int nu = 0, nj = 0;
  for (int i = 0; i < L.num_u(); ++i)
    if (!L.u_fixed(i)) upos[i] = nu++;
  for (int i = 0; i < L.num_j(); ++i)
    if (!L.j_fixed(i)) jpos[i] = nj++;
  const int np = L.num_p(), nphi = L.num_phi();
  const int op = nu, olp = op + np, oj = olp + 1, ophi = oj + nj, olphi = ophi + nphi, oS = olphi + 1;
  const int size = oS + 1;

  std::vector<Eigen::Triplet<double>> t;
  Vec b = Vec::Zero(size);
  const SpMat Ku = lead * g.A1 / dt + g.B;
  const Vec fu = g.A1 * hist_u + velocity_load_at(t1);
  const Vec fJ = current_load_at(t1);
  for (int i = 0; i < L.num_u(); ++i)
    if (upos[i] >= 0) b[upos[i]] = fu[i];
  for (int i = 0; i < L.num_j(); ++i)
    if (jpos[i] >= 0) b[oj + jpos[i]] = fJ[i];

  for (int j = 0; j < Ku.outerSize(); ++j)
    for (SpMat::InnerIterator it(Ku, j); it; ++it) {
      if (upos[it.row()] < 0) continue;
      if (upos[it.col()] >= 0) t.emplace_back(upos[it.row()], upos[it.col()], it.value());
      else b[upos[it.row()]] -= it.value() * gu[it.col()];
    }
  for (int j = 0; j < g.C1.outerSize(); ++j)
    for (SpMat::InnerIterator it(g.C1, j); it; ++it) {
      const int r = op + static_cast<int>(it.row());
      if (upos[it.col()] >= 0) {
        t.emplace_back(upos[it.col()], r, -it.value());
        t.emplace_back(r, upos[it.col()], -it.value());
      } else {
        b[r] += it.value() * gu[it.col()];
      }
    }
  const Vec pmean = L.pressure_mean_row();
  for (int r = 0; r < np; ++r) {
    t.emplace_back(op + r, olp, pmean[r]);
    t.emplace_back(olp, op + r, pmean[r]);
  }
  for (int j = 0; j < g.A2.outerSize(); ++j)
    for (SpMat::InnerIterator it(g.A2, j); it; ++it) {
      if (jpos[it.row()] < 0) continue;
      if (jpos[it.col()] >= 0) t.emplace_back(oj + jpos[it.row()], oj + jpos[it.col()], it.value());
      else b[oj + jpos[it.row()]] -= it.value() * gJ[it.col()];
    }
  for (int j = 0; j < g.C2.outerSize(); ++j)
    for (SpMat::InnerIterator it(g.C2, j); it; ++it) {
      const int r = ophi + static_cast<int>(it.row());
      if (jpos[it.col()] >= 0) {
        t.emplace_back(oj + jpos[it.col()], r, -it.value());
        t.emplace_back(r, oj + jpos[it.col()], -it.value());
      } else {
        b[r] += it.value() * gJ[it.col()];
      }
    }
  const Vec phimean = L.potential_mean_row();
  for (int r = 0; r < nphi; ++r) {
    t.emplace_back(ophi + r, olphi, phimean[r]);
    t.emplace_back(olphi, ophi + r, phimean[r]);
  }
  // S column in the momentum and Ohm rows; S row from the auxiliary equation:
  // (lead R/dt + R Q) S - (1/R)(conv . u + ohm . J) = hist_s.
  for (int i = 0; i < L.num_u(); ++i)
    if (upos[i] >= 0) {
      if (conv[i] != 0.0) t.emplace_back(upos[i], oS, conv[i]);
      if (conv[i] != 0.0) t.emplace_back(oS, upos[i], -conv[i] / R);
    }
  for (int i = 0; i < L.num_j(); ++i)
    if (jpos[i] >= 0) {
      if (ohm[i] != 0.0) t.emplace_back(oj + jpos[i], oS, ohm[i]);
      if (ohm[i] != 0.0) t.emplace_back(oS, oj + jpos[i], -ohm[i] / R);
    }
  t.emplace_back(oS, oS, lead * R / dt + R * cfg_.Q());
  double known = 0.0;
  for (int i = 0; i < L.num_u(); ++i)
    if (upos[i] < 0) known += conv[i] * gu[i];
  for (int i = 0; i < L.num_j(); ++i)
    if (jpos[i] < 0) known += ohm[i] * gJ[i];
  b[oS] = hist_s + known / R;

  SpMat A(size, size);
  A.setFromTriplets(t.begin(), t.end());
  A.makeCompressed();
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw SolveError("monolithic factorization failed: " + lu.lastErrorMessage());
  Vec z = lu.solve(b);
  for (int it = 0; it < 2; ++it) z += lu.solve(Vec(b - A * z));
  if (!z.allFinite() || (A * z - b).norm() > 1e-10 * b.norm()) throw SolveError("monolithic solve residual too large");

  SystemState out;
  out.n = st.n + 1;
  out.t = t1;
  out.u = gu;
  for (int i = 0; i < L.num_u(); ++i)
    if (upos[i] >= 0) out.u[i] = z[upos[i]];
  out.p = z.segment(op, np);
  out.J = gJ;
  for (int i = 0; i < L.num_j(); ++i)
    if (jpos[i] >= 0) out.J[i] = z[oj + jpos[i]];
  out.phi = z.segment(ophi, nphi);
  out.S = z[oS];
  out.s = out.S * R;
  out.u_prev = st.u;
  out.J_prev = st.J;
  out.s_prev = st.s;
  return out;
}

// ---------------------------------------------------------------------------
// Time loop

struct EnergyRecord {
  int n = 0;
  double t = 0.0, E = 0.0, dE = 0.0, norm_u_A1 = 0.0, norm_J_A2 = 0.0, s = 0.0, S = 0.0, div_u = 0.0, div_J = 0.0;
};

struct RunResult {
  SystemState final_state;
  std::vector<EnergyRecord> trace;
};

inline EnergyRecord energy_record(const SavStepper& stepper, const SystemState& st, double previous_energy) {
  const Forms& F = stepper.forms();
  EnergyRecord r;
  r.n = st.n;
  r.t = st.t;
  r.E = stepper.energy(st);
  r.dE = st.n == 0 ? 0.0 : r.E - previous_energy;
  r.norm_u_A1 = F.norm_A1(st.u);
  r.norm_J_A2 = F.norm_A2(st.J);
  r.s = st.s;
  r.S = st.S;
  r.div_u = F.div_u_norm(st.u);
  r.div_J = F.div_J_norm(st.J);
  return r;
}

/// Advances from u0 to T, recording the energy after every step. In zero-load
/// mode a step that increases the energy by more than 1e-12 E^0 raises
/// NonmonotoneEnergyError. `observer` sees every level, including the initial one.
inline RunResult run(const SavStepper& stepper, const Vec& u0,
                     const std::function<void(const SystemState&)>& observer = {}) {
  RunResult out;
  SystemState st = stepper.init_state(u0);
  if (observer) observer(st);
  out.trace.push_back(energy_record(stepper, st, 0.0));
  const double E0 = out.trace.front().E;
  const bool check = stepper.forcing().zero_load();
  for (int k = 0; k < stepper.config().num_steps(); ++k) {
    st = stepper.step(st);
    if (observer) observer(st);
    out.trace.push_back(energy_record(stepper, st, out.trace.back().E));
    if (check && out.trace.back().dE > 1e-12 * E0) {
      std::ostringstream msg;
      msg << "energy increased at step " << st.n << " by " << out.trace.back().dE;
      throw NonmonotoneEnergyError(msg.str());
    }
  }
  out.final_state = std::move(st);
  return out;
}

inline void write_energy_csv(std::ostream& out, const std::vector<EnergyRecord>& trace) {
  out << "n,t,E,dE,norm_u_A1,norm_J_A2,s,S,div_u,div_J\n";
  out.precision(17);
  for (const auto& r : trace)
    out << r.n << ',' << r.t << ',' << r.E << ',' << r.dE << ',' << r.norm_u_A1 << ',' << r.norm_J_A2 << ',' << r.s
        << ',' << r.S << ',' << r.div_u << ',' << r.div_J << '\n';
}

}  // namespace vemmhd
