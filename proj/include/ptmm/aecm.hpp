#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptmm/cm_steps.hpp"

namespace ptmm {

struct FitOptions {
  int max_iterations = 1000;
  double epsilon = 1e-5;
  int n_starts = 5;
  std::uint64_t seed = 0;
  int kmeans_max_iter = 100;
  /// Smallest admissible n̂_i; non-positive means q + 1.
  double min_component_mass = 0.0;

  void check() const;
  double component_mass(const ModelSpec& spec) const {
    return min_component_mass > 0.0 ? min_component_mass : spec.q + 1.0;
  }
};

struct KMeansResult {
  std::vector<int> labels;
  Matrix centers;  // g×p
  int iterations = 0;
};

/// Lloyd's algorithm. Initial centers are the g distinct rows with the
/// smallest seeded content hash, so the result does not depend on row order.
KMeansResult kmeans(const Matrix& data, int g, std::uint64_t seed, int max_iter);

/// Starting values: k-means memberships, a single-component Gaussian factor
/// fit on the cluster-centred data for the constrained parameters, per-group
/// eigen-decompositions for the unconstrained ones, ν = 50.
MixtureModel initialize(const Matrix& data, const ModelSpec& spec, std::uint64_t seed,
                        const FitOptions& options = {});

struct FitResult {
  MixtureModel model;
  FitReport report;
};

/// Runs the three-cycle AECM from `start` until the Aitken criterion holds or
/// max_iterations is reached. Throws DegeneracyError/NumericError on collapse.
FitResult run_aecm(const Matrix& data, MixtureModel start, const FitOptions& options);

/// Best of options.n_starts seeded runs by final log-likelihood. Throws
/// FitFailure when every start fails.
FitResult aecm_fit(const Matrix& data, const ModelSpec& spec, const FitOptions& options);

/// Seed used by start number `start` of a multi-start fit; start 0 uses the
/// run seed itself.
std::uint64_t start_seed(std::uint64_t seed, int start);

bool aitken_converged(double l_prev, double l_curr, double l_next, double epsilon);

/// 2ℓ − m ln n; larger is better.
double bic(double loglik, long m, long n);

struct SearchGrid {
  std::vector<int> g_values;
  std::vector<int> q_values;
  std::vector<CovStructure> structures;
  std::vector<DfMode> df_modes{DfMode::Common};
  std::vector<Family> families{Family::StudentT};

  /// Throws UsageError for empty lists or q ≥ p.
  void check(int p) const;
  std::vector<ModelSpec> cells(int p) const;
};

struct SearchEntry {
  ModelSpec spec;
  FitReport report;
};

struct SearchFailure {
  ModelSpec spec;
  std::string reason;
};

struct SearchResult {
  std::vector<SearchEntry> ranked;  // BIC descending
  std::vector<SearchFailure> failures;
};

SearchResult model_search(const Matrix& data, const SearchGrid& grid, const FitOptions& options);

}  // namespace ptmm
