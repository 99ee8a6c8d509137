#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ptmm/numeric.hpp"

namespace ptmm {

/// Three-letter covariance structure code. Letters, in order: loadings
/// shared across components (B_i = B), error matrices shared (Ψ_i = Ψ),
/// isotropic errors (Ψ_i = ψ_i I). C = constrained, U = unconstrained.
enum class CovStructure { CCC, CCU, CUC, CUU, UCC, UCU, UUC, UUU };

inline constexpr std::array<CovStructure, 8> kAllStructures = {
    CovStructure::CCC, CovStructure::CCU, CovStructure::CUC, CovStructure::CUU,
    CovStructure::UCC, CovStructure::UCU, CovStructure::UUC, CovStructure::UUU};

enum class DfMode { Common, Free };
enum class Family { StudentT, Gaussian };

/// Storage layout of the error variances, fixed by the structure.
enum class ErrorShape { Scalar, Vector, PerComponentScalar, PerComponentVector };

inline constexpr double kNuMin = 2.0;
inline constexpr double kNuMax = 200.0;

constexpr bool shares_loadings(CovStructure s) {
  return s == CovStructure::CCC || s == CovStructure::CCU || s == CovStructure::CUC ||
         s == CovStructure::CUU;
}
constexpr bool shares_errors(CovStructure s) {
  return s == CovStructure::CCC || s == CovStructure::CCU || s == CovStructure::UCC ||
         s == CovStructure::UCU;
}
constexpr bool is_isotropic(CovStructure s) {
  return s == CovStructure::CCC || s == CovStructure::CUC || s == CovStructure::UCC ||
         s == CovStructure::UUC;
}
constexpr ErrorShape error_shape(CovStructure s) {
  if (shares_errors(s)) return is_isotropic(s) ? ErrorShape::Scalar : ErrorShape::Vector;
  return is_isotropic(s) ? ErrorShape::PerComponentScalar : ErrorShape::PerComponentVector;
}

std::string_view to_string(CovStructure s);
std::string_view to_string(DfMode m);
std::string_view to_string(Family f);
std::string_view to_string(ErrorShape s);
/// Case-insensitive; throws UsageError on unknown names.
CovStructure parse_structure(std::string_view name);
DfMode parse_df_mode(std::string_view name);
Family parse_family(std::string_view name);
ErrorShape parse_error_shape(std::string_view name);

struct ModelSpec {
  CovStructure structure = CovStructure::CUU;
  DfMode df_mode = DfMode::Common;
  Family family = Family::StudentT;
  int g = 1;
  int q = 1;
  int p = 2;

  /// Throws UsageError naming the violated constraint.
  void check() const;
  /// "CUU/t-common/g=4/q=4" style label.
  std::string label() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Fitted parameters. Storage follows the structure exactly:
///  - loadings: one p×q matrix when shared, g of them otherwise
///  - error_diag: 1×1 (ψ), 1×p (Ψ), g×1 (ψ_i) or g×p (Ψ_i)
///  - dfs: empty for the Gaussian family, 1 entry (common) or g (free)
struct MixtureModel {
  ModelSpec spec;
  Vector weights;
  Matrix means;  // g×p
  std::vector<Matrix> loadings;
  Matrix error_diag;
  Vector dfs;

  const Matrix& component_loadings(int i) const;
  Vector component_error_diag(int i) const;
  /// nullopt for the Gaussian family.
  std::optional<double> component_df(int i) const;
  FactorCovariance<double> component_covariance(int i) const;

  bool operator==(const MixtureModel& other) const;
};

struct FitReport {
  std::vector<double> loglik_trace;
  double final_loglik = 0.0;
  long m = 0;
  double bic = 0.0;
  int iterations = 0;
  bool converged = false;
  std::uint64_t seed = 0;

  bool operator==(const FitReport&) const = default;
};

/// Free parameters: (g−1) weights + gp means + the covariance count of the
/// structure (loadings counted as pq − q(q−1)/2 per distinct matrix) + the
/// df term (1 common, g free, 0 Gaussian).
long count_free_parameters(const ModelSpec& spec);

/// Every invariant violation, each prefixed by the offending field path.
/// Empty means the model is valid.
std::vector<std::string> validate(const MixtureModel& model);

/// Model file, format_version 1.
std::string serialize(const MixtureModel& model,
                      const std::optional<FitReport>& report = std::nullopt);

struct ModelDocument {
  MixtureModel model;
  std::optional<FitReport> report;
};

/// Throws ParseError for malformed documents and ValidationError when the
/// parsed model violates its invariants.
ModelDocument deserialize_document(std::string_view text);
MixtureModel deserialize(std::string_view text);

std::string report_to_json(const FitReport& report);

}  // namespace ptmm
