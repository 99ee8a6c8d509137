#pragma once

// Special functions and the low-rank-plus-diagonal identities used for every
// factor-analytic covariance Σ = BBᵀ + Ψ in the library.

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "ptmm/errors.hpp"

namespace ptmm {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Lower bound applied to every error variance the library produces.
inline constexpr double kPsiFloor = 1e-8;

/// ln Γ(x) for x > 0.
template <typename T>
T log_gamma(T x) {
  if (!(x > T(0)) || !std::isfinite(x)) {
    throw DomainError("log_gamma: argument must be positive and finite, got " + std::to_string(x));
  }
  return std::lgamma(x);
}

/// ψ(x) = Γ'(x)/Γ(x) for x > 0. Upward recurrence to x ≥ 10, then the
/// asymptotic expansion through the x⁻¹⁰ term.
template <typename T>
T digamma(T x) {
  if (!(x > T(0)) || !std::isfinite(x)) {
    throw DomainError("digamma: argument must be positive and finite, got " + std::to_string(x));
  }
  T shift = 0;
  while (x < T(10)) {
    shift -= T(1) / x;
    x += T(1);
  }
  const T f = T(1) / (x * x);
  const T tail =
      f * (T(1) / 12 -
           f * (T(1) / 120 - f * (T(1) / 252 - f * (T(1) / 240 - f * (T(1) / 132)))));
  return shift + std::log(x) - T(0.5) / x - tail;
}

/// Σ = BBᵀ + Ψ with B p×q and Ψ diagonal.
template <typename Scalar>
struct FactorCovariance {
  MatrixX<Scalar> loadings;    // B, p×q
  VectorX<Scalar> error_diag;  // diag(Ψ), length p

  Index dim() const { return error_diag.size(); }
  Index factors() const { return loadings.cols(); }

  /// Throws DomainError when the invariants do not hold.
  void check() const {
    if (loadings.rows() != error_diag.size()) {
      throw UsageError("FactorCovariance: loadings have " + std::to_string(loadings.rows()) +
                       " rows but error_diag has length " + std::to_string(error_diag.size()));
    }
    if (loadings.cols() > loadings.rows()) {
      throw UsageError("FactorCovariance: q exceeds p");
    }
    if (!loadings.allFinite()) throw DomainError("FactorCovariance: non-finite loading");
    for (Index k = 0; k < error_diag.size(); ++k) {
      if (!std::isfinite(error_diag(k)) || error_diag(k) < Scalar(kPsiFloor)) {
        throw DomainError("FactorCovariance: error_diag[" + std::to_string(k) +
                          "] below floor or non-finite");
      }
    }
  }

  MatrixX<Scalar> dense() const {
    MatrixX<Scalar> sigma = loadings * loadings.transpose();
    sigma.diagonal() += error_diag;
    return sigma;
  }
};

/// Factorization of BBᵀ + Ψ through the q×q capacitance matrix
/// M = I + BᵀΨ⁻¹B. Nothing p×p is formed unless inverse() is asked for.
///
///   (BBᵀ+Ψ)⁻¹ = Ψ⁻¹ − Ψ⁻¹B M⁻¹ BᵀΨ⁻¹
///   ln|BBᵀ+Ψ| = ln|M| + Σ ln ψ_k
template <typename Scalar>
class LowRankSolver {
 public:
  explicit LowRankSolver(const FactorCovariance<Scalar>& cov) {
    cov.check();
    psi_inv_ = cov.error_diag.cwiseInverse();
    psi_inv_loadings_ = psi_inv_.asDiagonal() * cov.loadings;
    const Index q = cov.factors();
    MatrixX<Scalar> capacitance = MatrixX<Scalar>::Identity(q, q);
    capacitance.noalias() += cov.loadings.transpose() * psi_inv_loadings_;
    llt_.compute(capacitance);
    if (llt_.info() != Eigen::Success) {
      throw NumericError("LowRankSolver: capacitance matrix I + BᵀΨ⁻¹B is not positive definite");
    }
    const auto& l = llt_.matrixL();
    Scalar logdet_cap = 0;
    for (Index r = 0; r < q; ++r) logdet_cap += std::log(l(r, r));
    logdet_ = Scalar(2) * logdet_cap + cov.error_diag.array().log().sum();
    if (!std::isfinite(logdet_)) throw NumericError("LowRankSolver: non-finite log-determinant");
  }

  Index dim() const { return psi_inv_.size(); }
  Index factors() const { return psi_inv_loadings_.cols(); }

  Scalar log_determinant() const { return logdet_; }

  /// Σ⁻¹ X for a p×k right-hand side.
  template <typename Derived>
  MatrixX<Scalar> solve(const Eigen::MatrixBase<Derived>& rhs) const {
    MatrixX<Scalar> scaled = psi_inv_.asDiagonal() * rhs;
    MatrixX<Scalar> inner = psi_inv_loadings_.transpose() * rhs;
    llt_.solveInPlace(inner);
    scaled.noalias() -= psi_inv_loadings_ * inner;
    return scaled;
  }

  /// δ for each row r of `residuals` (n×p): rᵀΣ⁻¹r.
  template <typename Derived>
  VectorX<Scalar> mahalanobis_rows(const Eigen::MatrixBase<Derived>& residuals) const {
    VectorX<Scalar> diag_part =
        (residuals.array().square().rowwise() * psi_inv_.transpose().array()).rowwise().sum();
    MatrixX<Scalar> projected = (residuals * psi_inv_loadings_).transpose();  // q×n
    llt_.matrixL().solveInPlace(projected);
    VectorX<Scalar> delta = diag_part - projected.colwise().squaredNorm().transpose();
    return delta.cwiseMax(Scalar(0));
  }

  /// Γ = Σ⁻¹B = Ψ⁻¹B M⁻¹ (p×q).
  MatrixX<Scalar> gamma() const {
    MatrixX<Scalar> t = psi_inv_loadings_.transpose();
    llt_.solveInPlace(t);
    return t.transpose();
  }

  /// Ω = I − ΓᵀB = M⁻¹ (q×q).
  MatrixX<Scalar> omega() const {
    const Index q = factors();
    return llt_.solve(MatrixX<Scalar>::Identity(q, q));
  }

  /// Dense (BBᵀ+Ψ)⁻¹, symmetrized.
  MatrixX<Scalar> inverse() const {
    MatrixX<Scalar> correction = psi_inv_loadings_.transpose();
    llt_.matrixL().solveInPlace(correction);  // L⁻¹BᵀΨ⁻¹
    MatrixX<Scalar> inv = -(correction.transpose() * correction);
    inv.diagonal() += psi_inv_;
    return (inv + inv.transpose()) / Scalar(2);
  }

 private:
  VectorX<Scalar> psi_inv_;
  MatrixX<Scalar> psi_inv_loadings_;
  Eigen::LLT<MatrixX<Scalar>> llt_;
  Scalar logdet_ = 0;
};

template <typename Scalar>
MatrixX<Scalar> woodbury_inverse(const FactorCovariance<Scalar>& cov) {
  return LowRankSolver<Scalar>(cov).inverse();
}

template <typename Scalar>
Scalar lowrank_logdet(const FactorCovariance<Scalar>& cov) {
  return LowRankSolver<Scalar>(cov).log_determinant();
}

template <typename Scalar, typename DerivedY, typename DerivedMu>
Scalar mahalanobis_sq(const Eigen::MatrixBase<DerivedY>& y, const Eigen::MatrixBase<DerivedMu>& mu,
                      const FactorCovariance<Scalar>& cov) {
  if (y.size() != mu.size() || y.size() != cov.dim()) {
    throw UsageError("mahalanobis_sq: dimension mismatch");
  }
  const LowRankSolver<Scalar> solver(cov);
  MatrixX<Scalar> residual = (y - mu).transpose();
  return solver.mahalanobis_rows(residual)(0);
}

}  // namespace ptmm
