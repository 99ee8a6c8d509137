#include "ptmm/cm_steps.hpp"

#include <cmath>
#include <string>

namespace ptmm {

namespace {

// X A⁻¹ for symmetric positive definite A.
Matrix right_solve_spd(const Matrix& x, const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw DegeneracyError(std::string(what) + ": q×q system is not positive definite");
  }
  return llt.solve(x.transpose()).transpose();
}

// tr(XᵀY) without forming the product.
double inner(const Matrix& x, const Matrix& y) { return x.cwiseProduct(y).sum(); }

struct ComponentTerms {
  Matrix sg;     // S_i Γ_i
  Matrix a;      // Ω_i + Γ_iᵀ S_i Γ_i
  Vector diag;   // diag(S_i)
  double trace;  // tr(S_i)
};

std::vector<ComponentTerms> component_terms(const EStepState& state) {
  std::vector<ComponentTerms> out;
  out.reserve(state.scatter.size());
  for (std::size_t i = 0; i < state.scatter.size(); ++i) {
    ComponentTerms t;
    t.sg = state.scatter[i].product(state.gamma[i]);
    t.a = state.omega[i] + state.gamma[i].transpose() * t.sg;
    t.a = (t.a + t.a.transpose()) / 2.0;
    t.diag = state.scatter[i].diagonal();
    t.trace = state.scatter[i].trace();
    out.push_back(std::move(t));
  }
  return out;
}

// diag{S_i − 2BΓ_iᵀS_i + B A_i Bᵀ}
Vector residual_diag(const ComponentTerms& t, const Matrix& b) {
  return t.diag - 2.0 * b.cwiseProduct(t.sg).rowwise().sum() +
         (b * t.a).cwiseProduct(b).rowwise().sum();
}

Matrix floored(Matrix m) { return m.cwiseMax(kPsiFloor); }

}  // namespace

Vector update_weights(const EStepState& state) {
  Vector w = state.resp.colwise().sum().transpose() / static_cast<double>(state.resp.rows());
  return w / w.sum();
}

Matrix update_means(const Matrix& data, const EStepState& state) {
  const Index g = state.resp.cols();
  Matrix means(g, data.cols());
  for (Index i = 0; i < g; ++i) {
    const Vector w = state.resp.col(i).cwiseProduct(state.tau.col(i));
    const double denom = w.sum();
    if (!(denom > 0.0)) {
      throw DegeneracyError("update_means: component " + std::to_string(i) +
                            " has zero total weight");
    }
    means.row(i) = (w.transpose() * data) / denom;
  }
  return means;
}

double df_equation(double nu, double c) {
  return std::log(nu / 2.0) - digamma(nu / 2.0) + 1.0 + c;
}

double solve_df(const DfRootProblem& problem) {
  if (!std::isfinite(problem.c)) throw NumericError("solve_df: non-finite constant");
  if (!(problem.lower > 0.0 && problem.lower < problem.upper)) {
    throw UsageError("solve_df: invalid bounds");
  }
  double lo = problem.lower;
  double hi = problem.upper;
  if (df_equation(hi, problem.c) >= 0.0) return hi;
  if (df_equation(lo, problem.c) <= 0.0) return lo;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double f = df_equation(mid, problem.c);
    if (f == 0.0) return mid;
    if (f > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::abs(df_equation(lo, problem.c)) <= std::abs(df_equation(hi, problem.c)) ? lo : hi;
}

Vector update_dfs(const EStepState& state, const ModelSpec& spec) {
  if (spec.family != Family::StudentT) throw UsageError("update_dfs: Gaussian family has no df");
  const Index g = state.resp.cols();
  const Matrix contrib = state.resp.cwiseProduct(state.kappa - state.tau);
  if (spec.df_mode == DfMode::Common) {
    const double c = contrib.sum() / static_cast<double>(state.resp.rows());
    return Vector::Constant(1, solve_df({c}));
  }
  Vector dfs(g);
  for (Index i = 0; i < g; ++i) {
    const double c = contrib.col(i).sum() / state.resp.col(i).sum();
    dfs(i) = solve_df({c});
  }
  return dfs;
}

CovarianceUpdate update_covariance(const EStepState& state, const MixtureModel& model) {
  const ModelSpec& spec = model.spec;
  const Index g = spec.g;
  const Index p = spec.p;
  const Index q = spec.q;
  const auto terms = component_terms(state);
  const double n = static_cast<double>(state.resp.rows());
  const Vector share = state.n_hat / n;

  CovarianceUpdate out;
  const CovStructure s = spec.structure;

  if (s == CovStructure::CCC || s == CovStructure::CCU) {
    // Shared B and Ψ: all Γ_i coincide, so everything reduces to S̃.
    Matrix sg = Matrix::Zero(p, q);
    Vector diag = Vector::Zero(p);
    double trace = 0.0;
    for (Index i = 0; i < g; ++i) {
      sg += share(i) * terms[i].sg;
      diag += share(i) * terms[i].diag;
      trace += share(i) * terms[i].trace;
    }
    const Matrix& gamma = state.gamma.front();
    Matrix a = state.omega.front() + gamma.transpose() * sg;
    a = (a + a.transpose()) / 2.0;
    Matrix b = right_solve_spd(sg, a, to_string(s).data());
    if (s == CovStructure::CCC) {
      out.error_diag = Matrix::Constant(1, 1, (trace - inner(b, sg)) / static_cast<double>(p));
    } else {
      out.error_diag = (diag - b.cwiseProduct(sg).rowwise().sum()).transpose();
    }
    out.loadings.push_back(std::move(b));
  } else if (s == CovStructure::CUC) {
    Matrix lhs = Matrix::Zero(p, q);
    Matrix rhs = Matrix::Zero(q, q);
    for (Index i = 0; i < g; ++i) {
      const double scale = state.n_hat(i) / model.error_diag(i, 0);
      lhs += scale * terms[i].sg;
      rhs += scale * terms[i].a;
    }
    Matrix b = right_solve_spd(lhs, (rhs + rhs.transpose()) / 2.0, "CUC");
    out.error_diag.resize(g, 1);
    for (Index i = 0; i < g; ++i) {
      out.error_diag(i, 0) = residual_diag(terms[i], b).sum() / static_cast<double>(p);
    }
    out.loadings.push_back(std::move(b));
  } else if (s == CovStructure::CUU) {
    // No closed form for B jointly; each row solves its own q×q system.
    Matrix r = Matrix::Zero(p, q);
    for (Index i = 0; i < g; ++i) {
      const Vector psi = model.error_diag.row(i).transpose();
      r += state.n_hat(i) * (psi.cwiseInverse().asDiagonal() * terms[i].sg);
    }
    Matrix b(p, q);
    for (Index h = 0; h < p; ++h) {
      Matrix system = Matrix::Zero(q, q);
      for (Index i = 0; i < g; ++i) {
        system += (state.n_hat(i) / model.error_diag(i, h)) * terms[i].a;
      }
      b.row(h) = right_solve_spd(r.row(h), (system + system.transpose()) / 2.0, "CUU row");
    }
    out.error_diag.resize(g, p);
    for (Index i = 0; i < g; ++i) out.error_diag.row(i) = residual_diag(terms[i], b).transpose();
    out.loadings.push_back(std::move(b));
  } else {
    // Unconstrained loadings: per-component closed form.
    out.loadings.reserve(static_cast<std::size_t>(g));
    std::vector<Vector> residual(static_cast<std::size_t>(g));
    for (Index i = 0; i < g; ++i) {
      Matrix b = right_solve_spd(terms[i].sg, terms[i].a, to_string(s).data());
      residual[i] = terms[i].diag - b.cwiseProduct(terms[i].sg).rowwise().sum();
      out.loadings.push_back(std::move(b));
    }
    switch (s) {
      case CovStructure::UCC: {
        double psi = 0.0;
        for (Index i = 0; i < g; ++i) psi += share(i) * residual[i].sum();
        out.error_diag = Matrix::Constant(1, 1, psi / static_cast<double>(p));
        break;
      }
      case CovStructure::UCU: {
        Vector psi = Vector::Zero(p);
        for (Index i = 0; i < g; ++i) psi += share(i) * residual[i];
        out.error_diag = psi.transpose();
        break;
      }
      case CovStructure::UUC:
        out.error_diag.resize(g, 1);
        for (Index i = 0; i < g; ++i) {
          out.error_diag(i, 0) = residual[i].sum() / static_cast<double>(p);
        }
        break;
      default:
        out.error_diag.resize(g, p);
        for (Index i = 0; i < g; ++i) out.error_diag.row(i) = residual[i].transpose();
        break;
    }
  }
  out.error_diag = floored(std::move(out.error_diag));
  return out;
}

}  // namespace ptmm
