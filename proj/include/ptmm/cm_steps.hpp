#pragma once

#include <vector>

#include "ptmm/inference.hpp"

namespace ptmm {

/// ŵ_i = n̂_i / n from the responsibilities.
Vector update_weights(const EStepState& state);

/// μ̂_i = Σ_j ẑτ̂ y_j / Σ_j ẑτ̂. Throws DegeneracyError on a zero denominator.
Matrix update_means(const Matrix& data, const EStepState& state);

/// Root problem log(ν/2) − ψ(ν/2) + 1 + c = 0 on [lower, upper].
struct DfRootProblem {
  double c = 0.0;
  double lower = kNuMin;
  double upper = kNuMax;
};

/// Left-hand side of the df equation; strictly decreasing in ν.
double df_equation(double nu, double c);

/// Bisection root in [lower, upper]; the nearer bound when no root exists.
double solve_df(const DfRootProblem& problem);

/// One ν per component (free) or a single pooled ν (common).
Vector update_dfs(const EStepState& state, const ModelSpec& spec);

struct CovarianceUpdate {
  std::vector<Matrix> loadings;
  Matrix error_diag;
};

/// Closed-form third-cycle updates of the loadings and error variances for
/// the model's structure. Uses the Γ_i, Ω_i and S_i cached in `state`; the
/// current error variances enter the shared-loading solves (CUC, CUU).
/// Error variances are floored at kPsiFloor.
CovarianceUpdate update_covariance(const EStepState& state, const MixtureModel& model);

}  // namespace ptmm
