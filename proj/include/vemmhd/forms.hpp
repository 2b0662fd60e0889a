#pragma once

#include "vemmhd/core.hpp"
#include "vemmhd/projectors.hpp"
#include "vemmhd/spaces.hpp"

#include <Eigen/Sparse>

#include <memory>
#include <vector>

namespace vemmhd {

using SpMat = Eigen::SparseMatrix<double>;

/// Applied magnetic field B(x).
using AppliedField = VectorField;

/// Physical coefficients of the discrete forms.
struct FormParams {
  double Re = 1.0;
  double kappa = 1.0;
  AppliedField B = [](const Vec3&) { return Vec3(1.0, 1.0, 1.0); };
};

/// Per-cell projectors and local matrices.
struct ElementOps {
  VelocityProjectors vp;
  CurrentProjectors jp;
  Mat Dp;   ///< velocity DOFs of the [P2]^3 basis (N x 30)
  Mat DpJ;  ///< current DOFs of the [P_kJ]^3 basis (NJ x 3 dim P_kJ)
  Mat S1, S2, S3;
  Mat A1, A2, B;
  Mat C1;  ///< pressure x velocity
  Mat C2;  ///< potential x current
  Mat D;   ///< current x velocity: K^T D v = kappa int (Pi0 K x B) . Pi0 v
};

namespace detail {

/// Block-diagonal copy of a scalar polynomial matrix for three components.
inline Mat blockdiag3(const Mat& m) {
  Mat out = Mat::Zero(3 * m.rows(), 3 * m.cols());
  for (int c = 0; c < 3; ++c) out.block(c * m.rows(), c * m.cols(), m.rows(), m.cols()) = m;
  return out;
}

/// dofi-dofi stabilization scale * (I - Dp P)^T (I - Dp P).
inline Mat dofi_dofi(const Mat& Dp, const Mat& P, double scale) {
  const Mat K = Mat::Identity(P.cols(), P.cols()) - Dp * P;
  return scale * K.transpose() * K;
}

}  // namespace detail

inline Mat local_A1(const CellContext& ctx, const ElementOps& ops) {
  const Mat M2 = detail::blockdiag3(moment_mass(ctx.moments, 2, 2));
  return ops.vp.l2.transpose() * M2 * ops.vp.l2 + ops.S1;
}

inline Mat local_A2(const CellContext& ctx, const ElementOps& ops, double kappa) {
  const int kJ = ctx.deg.k_J;
  const Mat Mk = detail::blockdiag3(moment_mass(ctx.moments, kJ, kJ));
  return kappa * (ops.jp.l2.transpose() * Mk * ops.jp.l2 + ops.S2);
}

inline Mat local_B(const CellContext& ctx, const ElementOps& ops, double Re) {
  const CellBasis b2(ctx.basis.center, ctx.h(), 2);
  const Mat M1 = moment_mass(ctx.moments, 1, 1);
  Mat stiff = Mat::Zero(10, 10);
  for (int d = 0; d < 3; ++d) {
    const Mat Dd = b2.derivative(d);
    stiff += Dd.transpose() * M1 * Dd;
  }
  const Mat K = detail::blockdiag3(stiff);
  return (ops.vp.grad.transpose() * K * ops.vp.grad + ops.S3) / Re;
}

inline Mat local_C1(const CellContext& ctx, const ElementOps& ops) {
  return moment_mass(ctx.moments, 1, 1) * ops.vp.div;
}

inline Mat local_C2(const CellContext& ctx, const ElementOps& ops, double kappa) {
  const int kJ = ctx.deg.k_J;
  return kappa * moment_mass(ctx.moments, kJ, kJ) * ops.jp.div;
}

inline Mat local_D(const CellContext& ctx, const ElementOps& ops, double kappa, const AppliedField& B) {
  const int mJ = dim_cell(ctx.deg.k_J);
  Mat Dpoly = Mat::Zero(3 * mJ, 30);
  for (std::size_t q = 0; q < ctx.quad.size(); ++q) {
    const Vec m = ctx.quad_values.col(q);
    const Vec3 b = B(ctx.quad.points[q]);
    const double w = kappa * ctx.quad.weights[q];
    // (K x B) . v = sum eps_{jck} K_c B_k v_j
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < 3; ++j) {
        if (c == j) continue;
        const int k = 3 - c - j;
        const double eps = ((c + 1) % 3 == k) ? 1.0 : -1.0;
        const double coeff = w * eps * b[k];
        Dpoly.block(c * mJ, 10 * j, mJ, 10) += coeff * m.head(mJ) * m.head(10).transpose();
      }
  }
  return ops.jp.l2.transpose() * Dpoly * ops.vp.l2;
}

inline ElementOps build_element_ops(const CellContext& ctx, const FormParams& params) {
  ElementOps ops;
  ops.vp = build_velocity_projectors(ctx);
  ops.jp = build_current_projectors(ctx);
  ops.Dp = velocity_dofs_of_polynomials(ctx);
  ops.DpJ = current_dofs_of_polynomials(ctx);
  ops.S1 = detail::dofi_dofi(ops.Dp, ops.vp.l2, ctx.volume());
  ops.S2 = detail::dofi_dofi(ops.DpJ, ops.jp.l2, ctx.volume());
  ops.S3 = detail::dofi_dofi(ops.Dp, ops.vp.grad, ctx.h());
  ops.A1 = local_A1(ctx, ops);
  ops.A2 = local_A2(ctx, ops, params.kappa);
  ops.B = local_B(ctx, ops, params.Re);
  ops.C1 = local_C1(ctx, ops);
  ops.C2 = local_C2(ctx, ops, params.kappa);
  ops.D = local_D(ctx, ops, params.kappa, params.B);
  return ops;
}

/// Globally assembled (unreduced) form matrices; boundary elimination and the
/// zero-mean constraints are applied by the saddle-point solver.
struct GlobalForms {
  SpMat A1, B, A2, C1, C2, D;
};

/// Discrete forms on a mesh: element operators plus global assembly.
class Forms {
public:
  Forms(std::shared_ptr<const DofLayout> layout, FormParams params, unsigned workers = 1)
      : layout_(std::move(layout)), params_(std::move(params)), workers_(workers) {
    elements_.resize(layout_->num_cells());
    parallel_for(elements_.size(), workers_, [&](std::size_t c) {
      elements_[c] = build_element_ops(layout_->context(static_cast<int>(c)), params_);
    });
    global_ = assemble_global(*layout_, elements_);
  }

  const DofLayout& layout() const { return *layout_; }
  std::shared_ptr<const DofLayout> layout_ptr() const { return layout_; }
  const FormParams& params() const { return params_; }
  const ElementOps& element(int c) const { return elements_[c]; }
  const GlobalForms& global() const { return global_; }
  unsigned workers() const { return workers_; }

  /// Scatter-add of the local matrices in fixed cell order.
  static GlobalForms assemble_global(const DofLayout& layout, const std::vector<ElementOps>& elements) {
    if (static_cast<int>(elements.size()) != layout.num_cells())
      throw IndexError("element operator count does not match the layout");
    using Trip = Eigen::Triplet<double>;
    std::vector<Trip> a1, b, a2, c1, c2, d;
    auto scatter = [](std::vector<Trip>& out, const Mat& local, const std::vector<int>& rows,
                      const std::vector<int>& cols) {
      if (local.rows() != static_cast<Index>(rows.size()) || local.cols() != static_cast<Index>(cols.size()))
        throw IndexError("local matrix shape does not match the layout maps");
      for (Index j = 0; j < local.cols(); ++j)
        for (Index i = 0; i < local.rows(); ++i)
          if (local(i, j) != 0.0) out.emplace_back(rows[i], cols[j], local(i, j));
    };
    for (int c = 0; c < layout.num_cells(); ++c) {
      const ElementOps& e = elements[c];
      const auto& um = layout.u_map(c);
      const auto& jm = layout.j_map(c);
      std::vector<int> pm(layout.p_per_cell()), phim(layout.phi_per_cell());
      for (int a = 0; a < layout.p_per_cell(); ++a) pm[a] = layout.p_index(c, a);
      for (int a = 0; a < layout.phi_per_cell(); ++a) phim[a] = layout.phi_index(c, a);
      scatter(a1, e.A1, um, um);
      scatter(b, e.B, um, um);
      scatter(a2, e.A2, jm, jm);
      scatter(c1, e.C1, pm, um);
      scatter(c2, e.C2, phim, jm);
      scatter(d, e.D, jm, um);
    }
    auto build = [](int rows, int cols, const std::vector<Trip>& t) {
      SpMat m(rows, cols);
      m.setFromTriplets(t.begin(), t.end());
      return m;
    };
    GlobalForms g;
    g.A1 = build(layout.num_u(), layout.num_u(), a1);
    g.B = build(layout.num_u(), layout.num_u(), b);
    g.A2 = build(layout.num_j(), layout.num_j(), a2);
    g.C1 = build(layout.num_p(), layout.num_u(), c1);
    g.C2 = build(layout.num_phi(), layout.num_j(), c2);
    g.D = build(layout.num_j(), layout.num_u(), d);
    return g;
  }

  /// Vector r with r . w = E_{s,h}(a; a, w) for every velocity DOF vector w.
  Vec trilinear_vector(const Vec& a) const {
    const DofLayout& L = *layout_;
    std::vector<Vec> local(L.num_cells());
    parallel_for(local.size(), workers_, [&](std::size_t c) {
      const int ci = static_cast<int>(c);
      local[c] = trilinear_local(L.context(ci), elements_[c], L.gather_u(a, ci));
    });
    Vec out = Vec::Zero(L.num_u());
    for (int c = 0; c < L.num_cells(); ++c) {
      const auto& map = L.u_map(c);
      for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += local[c][i];
    }
    return out;
  }

  /// E_{s,h}(a; v, w) = (E_h(a; v, w) - E_h(a; w, v)) / 2.
  double trilinear(const Vec& a, const Vec& v, const Vec& w) const {
    const DofLayout& L = *layout_;
    double sum = 0.0;
    for (int c = 0; c < L.num_cells(); ++c) {
      const CellContext& ctx = L.context(c);
      const ElementOps& e = elements_[c];
      const Vec al = L.gather_u(a, c), vl = L.gather_u(v, c), wl = L.gather_u(w, c);
      sum += 0.5 * (convective_local(ctx, e, al, vl, wl) - convective_local(ctx, e, al, wl, vl));
    }
    return sum;
  }

  /// Momentum load: entries int_K f . Pi0 v_i.
  Vec velocity_load(const VectorField& f) const {
    const DofLayout& L = *layout_;
    std::vector<Vec> local(L.num_cells());
    parallel_for(local.size(), workers_, [&](std::size_t c) {
      const CellContext& ctx = L.context(static_cast<int>(c));
      Vec moments = Vec::Zero(30);
      for (std::size_t q = 0; q < ctx.quad.size(); ++q) {
        const Vec3 fv = ctx.quad.weights[q] * f(ctx.quad.points[q]);
        for (int k = 0; k < 3; ++k) moments.segment(10 * k, 10) += fv[k] * ctx.quad_values.col(q).head(10);
      }
      local[c] = elements_[c].vp.l2.transpose() * moments;
    });
    Vec out = Vec::Zero(L.num_u());
    for (int c = 0; c < L.num_cells(); ++c) {
      const auto& map = L.u_map(c);
      for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += local[c][i];
    }
    return out;
  }

  /// Ohm load: entries int_K f . Pi0 K_i.
  Vec current_load(const VectorField& f) const {
    const DofLayout& L = *layout_;
    const int m = dim_cell(L.degrees().k_J);
    std::vector<Vec> local(L.num_cells());
    parallel_for(local.size(), workers_, [&](std::size_t c) {
      const CellContext& ctx = L.context(static_cast<int>(c));
      Vec moments = Vec::Zero(3 * m);
      for (std::size_t q = 0; q < ctx.quad.size(); ++q) {
        const Vec3 fv = ctx.quad.weights[q] * f(ctx.quad.points[q]);
        for (int k = 0; k < 3; ++k) moments.segment(m * k, m) += fv[k] * ctx.quad_values.col(q).head(m);
      }
      local[c] = elements_[c].jp.l2.transpose() * moments;
    });
    Vec out = Vec::Zero(L.num_j());
    for (int c = 0; c < L.num_cells(); ++c) {
      const auto& map = L.j_map(c);
      for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += local[c][i];
    }
    return out;
  }

  /// Broken L2 norm of the (exactly computed) velocity divergence.
  double div_u_norm(const Vec& u) const {
    double sum = 0.0;
    for (int c = 0; c < layout_->num_cells(); ++c) {
      const Vec d = elements_[c].vp.div * layout_->gather_u(u, c);
      sum += d.dot(moment_mass(layout_->context(c).moments, 1, 1) * d);
    }
    return std::sqrt(std::max(sum, 0.0));
  }

  /// Broken L2 norm of the (exactly computed) current divergence.
  double div_J_norm(const Vec& J) const {
    const int kJ = layout_->degrees().k_J;
    double sum = 0.0;
    for (int c = 0; c < layout_->num_cells(); ++c) {
      const Vec d = elements_[c].jp.div * layout_->gather_j(J, c);
      sum += d.dot(moment_mass(layout_->context(c).moments, kJ, kJ) * d);
    }
    return std::sqrt(std::max(sum, 0.0));
  }

  double norm_A1(const Vec& u) const { return std::sqrt(std::max(u.dot(global_.A1 * u), 0.0)); }
  double norm_A2(const Vec& J) const { return std::sqrt(std::max(J.dot(global_.A2 * J), 0.0)); }
  double norm_B(const Vec& u) const { return std::sqrt(std::max(u.dot(global_.B * u), 0.0)); }

  /// Local version of trilinear_vector.
  static Vec trilinear_local(const CellContext& ctx, const ElementOps& e, const Vec& a) {
    const Vec A = e.vp.l2 * a;
    const Vec G = e.vp.gradient * a;
    Vec r1 = Vec::Zero(30), r2 = Vec::Zero(36);
    for (std::size_t q = 0; q < ctx.quad.size(); ++q) {
      const auto m = ctx.quad_values.col(q);
      const double w = 0.5 * ctx.quad.weights[q];
      Vec3 av, conv = Vec3::Zero();
      for (int c = 0; c < 3; ++c) av[c] = A.segment(10 * c, 10).dot(m.head(10));
      for (int c = 0; c < 3; ++c)
        for (int j = 0; j < 3; ++j) conv[c] += G.segment((c * 3 + j) * 4, 4).dot(m.head(4)) * av[j];
      for (int c = 0; c < 3; ++c) {
        r1.segment(10 * c, 10) += w * conv[c] * m.head(10);
        for (int j = 0; j < 3; ++j) r2.segment((c * 3 + j) * 4, 4) -= w * av[c] * av[j] * m.head(4);
      }
    }
    return e.vp.l2.transpose() * r1 + e.vp.gradient.transpose() * r2;
  }

  /// E_h(a; v, w) = int_K ((Pi0_1 grad v) Pi0 a) . Pi0 w on one cell.
  static double convective_local(const CellContext& ctx, const ElementOps& e, const Vec& a, const Vec& v,
                                 const Vec& w) {
    const Vec A = e.vp.l2 * a, W = e.vp.l2 * w, G = e.vp.gradient * v;
    double sum = 0.0;
    for (std::size_t q = 0; q < ctx.quad.size(); ++q) {
      const auto m = ctx.quad_values.col(q);
      Vec3 av, wv;
      for (int c = 0; c < 3; ++c) {
        av[c] = A.segment(10 * c, 10).dot(m.head(10));
        wv[c] = W.segment(10 * c, 10).dot(m.head(10));
      }
      double val = 0.0;
      for (int c = 0; c < 3; ++c)
        for (int j = 0; j < 3; ++j) val += G.segment((c * 3 + j) * 4, 4).dot(m.head(4)) * av[j] * wv[c];
      sum += ctx.quad.weights[q] * val;
    }
    return sum;
  }

private:
  std::shared_ptr<const DofLayout> layout_;
  FormParams params_;
  unsigned workers_;
  std::vector<ElementOps> elements_;
  GlobalForms global_;
};

}  // namespace vemmhd
