#pragma once

// Symmetric positive semidefinite p×p scatter matrices that may be too large
// to store densely (p ≫ n, e.g. vectorized face images). A scatter matrix is
// held either as the dense matrix or as a factor F with S = FᵀF; every
// consumer only needs S·M, diag(S), tr(S) and leading eigenpairs.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ptmm/numeric.hpp"

namespace ptmm {

template <typename Scalar>
class ScatterMatrix {
 public:
  ScatterMatrix() = default;

  static ScatterMatrix from_dense(MatrixX<Scalar> s) {
    ScatterMatrix out;
    out.factored_ = false;
    out.data_ = std::move(s);
    return out;
  }

  /// S = FᵀF for an m×p factor F.
  static ScatterMatrix from_factor(MatrixX<Scalar> f) {
    ScatterMatrix out;
    out.factored_ = true;
    out.data_ = std::move(f);
    return out;
  }

  /// Weighted scatter Σ_j w_j r_j r_jᵀ of the rows of `residuals` (n×p).
  /// Stored densely when n ≥ p, factored otherwise.
  template <typename Derived>
  static ScatterMatrix from_rows(const Eigen::MatrixBase<Derived>& residuals,
                                 const VectorX<Scalar>& row_weights) {
    if (residuals.rows() >= residuals.cols()) {
      MatrixX<Scalar> s = residuals.transpose() * (row_weights.asDiagonal() * residuals);
      return from_dense((s + s.transpose()) / Scalar(2));
    }
    return from_factor(row_weights.cwiseMax(Scalar(0)).cwiseSqrt().asDiagonal() * residuals);
  }

  bool is_factored() const { return factored_; }
  Index dim() const { return data_.cols(); }

  /// S·M.
  template <typename Derived>
  MatrixX<Scalar> product(const Eigen::MatrixBase<Derived>& m) const {
    if (factored_) return data_.transpose() * (data_ * m);
    return data_ * m;
  }

  VectorX<Scalar> diagonal() const {
    if (factored_) return data_.colwise().squaredNorm().transpose();
    return data_.diagonal();
  }

  Scalar trace() const { return factored_ ? data_.squaredNorm() : data_.trace(); }

  MatrixX<Scalar> dense() const {
    if (factored_) return data_.transpose() * data_;
    return data_;
  }

  /// The stored matrix: S itself, or the factor F.
  const MatrixX<Scalar>& storage() const { return data_; }

  /// Σ_i weights_i S_i. All inputs must share one representation.
  static ScatterMatrix weighted_sum(std::span<const ScatterMatrix> parts,
                                    const VectorX<Scalar>& weights) {
    if (parts.empty() || static_cast<Index>(parts.size()) != weights.size()) {
      throw UsageError("ScatterMatrix::weighted_sum: size mismatch");
    }
    const bool factored = parts.front().factored_;
    const Index p = parts.front().dim();
    if (!factored) {
      MatrixX<Scalar> sum = MatrixX<Scalar>::Zero(p, p);
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].factored_) throw UsageError("ScatterMatrix::weighted_sum: mixed storage");
        sum += weights(static_cast<Index>(i)) * parts[i].data_;
      }
      return from_dense(std::move(sum));
    }
    Index rows = 0;
    for (const auto& part : parts) {
      if (!part.factored_) throw UsageError("ScatterMatrix::weighted_sum: mixed storage");
      rows += part.data_.rows();
    }
    MatrixX<Scalar> stacked(rows, p);
    Index offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto& f = parts[i].data_;
      stacked.middleRows(offset, f.rows()) =
          std::sqrt(std::max(Scalar(0), weights(static_cast<Index>(i)))) * f;
      offset += f.rows();
    }
    return from_factor(std::move(stacked));
  }

 private:
  bool factored_ = false;
  MatrixX<Scalar> data_;
};

template <typename Scalar>
struct EigenPairs {
  VectorX<Scalar> values;   // descending
  MatrixX<Scalar> vectors;  // p×k, orthonormal columns
};

namespace detail {

// Fills columns [from, k) of `vectors` with unit vectors orthogonal to all
// earlier columns (Gram–Schmidt on the standard basis).
template <typename Scalar>
void complete_orthonormal(MatrixX<Scalar>& vectors, Index from) {
  const Index p = vectors.rows();
  Index candidate = 0;
  for (Index c = from; c < vectors.cols(); ++c) {
    for (; candidate < p; ++candidate) {
      VectorX<Scalar> v = VectorX<Scalar>::Unit(p, candidate);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index prev = 0; prev < c; ++prev) {
          v -= vectors.col(prev).dot(v) * vectors.col(prev);
        }
      }
      const Scalar norm = v.norm();
      if (norm > Scalar(1e-6)) {
        vectors.col(c) = v / norm;
        ++candidate;
        break;
      }
    }
  }
}

}  // namespace detail

/// Top-k eigenpairs of a scatter matrix. Factored scatters use the m×m Gram
/// matrix FFᵀ, so the cost is independent of p beyond the final mapping.
template <typename Scalar>
EigenPairs<Scalar> leading_eigenpairs(const ScatterMatrix<Scalar>& s, Index k) {
  const Index p = s.dim();
  if (k < 0 || k > p) throw UsageError("leading_eigenpairs: k out of range");
  EigenPairs<Scalar> out;
  out.values = VectorX<Scalar>::Zero(k);
  out.vectors = MatrixX<Scalar>::Zero(p, k);
  if (k == 0) return out;

  if (!s.is_factored()) {
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(s.storage());
    if (solver.info() != Eigen::Success) throw NumericError("leading_eigenpairs: eigensolver failed");
    for (Index r = 0; r < k; ++r) {
      out.values(r) = std::max(Scalar(0), solver.eigenvalues()(p - 1 - r));
      out.vectors.col(r) = solver.eigenvectors().col(p - 1 - r);
    }
    return out;
  }

  const MatrixX<Scalar>& f = s.storage();
  const Index m = f.rows();
  MatrixX<Scalar> gram = f * f.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(gram);
  if (solver.info() != Eigen::Success) throw NumericError("leading_eigenpairs: eigensolver failed");
  const Scalar top = m > 0 ? std::max(Scalar(0), solver.eigenvalues()(m - 1)) : Scalar(0);
  Index filled = 0;
  for (Index r = 0; r < std::min(k, m); ++r) {
    const Scalar lambda = solver.eigenvalues()(m - 1 - r);
    if (!(lambda > top * Scalar(1e-12)) || lambda <= Scalar(0)) break;
    out.values(r) = lambda;
    out.vectors.col(r) = f.transpose() * solver.eigenvectors().col(m - 1 - r) / std::sqrt(lambda);
    filled = r + 1;
  }
  detail::complete_orthonormal(out.vectors, filled);
  return out;
}

}  // namespace ptmm
