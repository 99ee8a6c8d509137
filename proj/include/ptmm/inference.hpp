#pragma once

#include <optional>
#include <vector>

#include "ptmm/model.hpp"
#include "ptmm/scatter.hpp"

namespace ptmm {

/// Posterior summaries of the latent allocations, gamma scales and factors.
/// Matrices are n×g; per-component caches are indexed by component.
struct EStepState {
  Matrix resp;         // ẑ_ij
  Matrix tau;          // τ̂_ij
  Matrix kappa;        // κ̂_ij
  Matrix delta;        // δ̂_ij
  Matrix log_density;  // ln f_i(y_j), without the weight
  double loglik = 0.0;

  Vector n_hat;                                // Σ_j ẑ_ij
  std::vector<ScatterMatrix<double>> scatter;  // S_i
  std::vector<Matrix> gamma;                   // Γ_i = Σ_i⁻¹B_i
  std::vector<Matrix> omega;                   // Ω_i = I − Γ_iᵀB_i

  Index n() const { return resp.rows(); }
  Index g() const { return resp.cols(); }

  /// S̃ = Σ_i (n̂_i / n) S_i.
  ScatterMatrix<double> pooled_scatter() const;
};

/// Log-density of the p-variate t (nu set) or Gaussian (nu empty) with scale
/// matrix BBᵀ + Ψ.
double mvt_logdensity(const Vector& y, const Vector& mu, const FactorCovariance<double>& cov,
                      std::optional<double> nu);

/// Row-wise version over `data` (n×p). Fills `delta` with the Mahalanobis
/// distances when given.
Vector mvt_logdensity_rows(const Matrix& data, const Vector& mu,
                           const LowRankSolver<double>& solver, std::optional<double> nu,
                           Vector* delta = nullptr);

/// Fills resp, delta, log_density and loglik (observed-data log-likelihood).
EStepState responsibilities(const Matrix& data, const MixtureModel& model);

/// Recomputes resp and loglik from the cached log-densities for new weights.
void reweight(EStepState& state, const Vector& weights);

/// Fills tau and kappa from delta. Gaussian family: τ = 1, κ = 0.
void precision_weights(EStepState& state, const MixtureModel& model);

/// Posterior mean of the factors, Γ_iᵀ(y − μ_i).
Vector factor_scores(const Vector& y, const MixtureModel& model, int component);

/// Fills n_hat, scatter, gamma and omega using the model's current means and
/// covariances. Throws DegeneracyError when some n̂_i < min_component_mass.
void scatter_matrices(const Matrix& data, EStepState& state, const MixtureModel& model,
                      double min_component_mass);

/// Maximum-posterior component per row; ties go to the lowest index.
std::vector<int> classify(const EStepState& state);

}  // namespace ptmm
