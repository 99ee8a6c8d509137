#include "ptmm/aecm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

namespace ptmm {

namespace {

constexpr double kInitialDf = 50.0;
constexpr int kInitReseeds = 10;
constexpr int kSingleFactorMaxIter = 200;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t row_hash(const Matrix& data, Index row, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed);
  for (Index c = 0; c < data.cols(); ++c) {
    double v = data(row, c);
    if (v == 0.0) v = 0.0;  // -0 and +0 hash alike
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

bool row_less(const Matrix& data, Index a, Index b) {
  for (Index c = 0; c < data.cols(); ++c) {
    if (data(a, c) < data(b, c)) return true;
    if (data(b, c) < data(a, c)) return false;
  }
  return false;
}

bool rows_equal(const Matrix& data, Index a, Index b) { return data.row(a) == data.row(b); }

// Nearest center per row; ties go to the lowest center index.
std::vector<int> assign(const Matrix& data, const Matrix& centers, Vector* distance = nullptr) {
  const Index n = data.rows();
  std::vector<int> labels(static_cast<std::size_t>(n));
  if (distance) distance->resize(n);
  for (Index j = 0; j < n; ++j) {
    Index best = 0;
    const double d = (centers.rowwise() - data.row(j)).rowwise().squaredNorm().minCoeff(&best);
    labels[static_cast<std::size_t>(j)] = static_cast<int>(best);
    if (distance) (*distance)(j) = d;
  }
  return labels;
}

// Covariance-style scatter (divisor max(n−1, 1)) of the centred rows.
ScatterMatrix<double> sample_covariance(const Matrix& centred) {
  const double denom = std::max<double>(static_cast<double>(centred.rows()) - 1.0, 1.0);
  return ScatterMatrix<double>::from_rows(centred, Vector::Constant(centred.rows(), 1.0 / denom));
}

// B = [√λ_1 e_1 ⋯ √λ_q e_q] from the leading eigenpairs.
Matrix eigen_loadings(const ScatterMatrix<double>& v, int q) {
  const EigenPairs<double> eig = leading_eigenpairs(v, q);
  return eig.vectors * eig.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// diag{V − BBᵀ}
Vector residual_variance(const ScatterMatrix<double>& v, const Matrix& b) {
  return v.diagonal() - b.rowwise().squaredNorm();
}

struct SharedStart {
  Matrix loadings;
  Vector error_diag;
};

// Single-component Gaussian factor-analytic fit to the pooled cluster-centred
// sample. Falls back to its own eigen start if the fit fails.
SharedStart fit_single_component(const Matrix& centred, const ModelSpec& spec,
                                 const FitOptions& options) {
  ModelSpec single = spec;
  single.structure = CovStructure::UUU;
  single.df_mode = DfMode::Common;
  single.g = 1;
  single.family = Family::Gaussian;

  const Vector mean = centred.colwise().mean().transpose();
  const ScatterMatrix<double> v = sample_covariance(centred.rowwise() - mean.transpose());
  MixtureModel start;
  start.spec = single;
  start.weights = Vector::Ones(1);
  start.means = mean.transpose();
  start.loadings = {eigen_loadings(v, spec.q)};
  start.error_diag = residual_variance(v, start.loadings.front()).cwiseMax(kPsiFloor).transpose();

  FitOptions inner = options;
  inner.max_iterations = std::min(options.max_iterations, kSingleFactorMaxIter);
  inner.min_component_mass = std::min(options.component_mass(spec),
                                      static_cast<double>(centred.rows()));
  try {
    FitResult fit = run_aecm(centred, start, inner);
    return {fit.model.loadings.front(), fit.model.error_diag.row(0).transpose()};
  } catch (const NumericError&) {
    return {start.loadings.front(), start.error_diag.row(0).transpose()};
  }
}

MixtureModel build_start(const Matrix& data, const ModelSpec& spec, const std::vector<int>& labels,
                         const FitOptions& options) {
  const Index n = data.rows();
  const Index p = spec.p;
  const int g = spec.g;

  std::vector<std::vector<Index>> members(static_cast<std::size_t>(g));
  for (Index j = 0; j < n; ++j) members[static_cast<std::size_t>(labels[j])].push_back(j);

  MixtureModel model;
  model.spec = spec;
  model.weights.resize(g);
  model.means.resize(g, p);
  Matrix centred(n, p);
  std::vector<ScatterMatrix<double>> group_cov;
  for (int i = 0; i < g; ++i) {
    const auto& rows = members[static_cast<std::size_t>(i)];
    Matrix group(static_cast<Index>(rows.size()), p);
    for (std::size_t k = 0; k < rows.size(); ++k) group.row(static_cast<Index>(k)) = data.row(rows[k]);
    const Eigen::RowVectorXd mean = group.colwise().mean();
    model.weights(i) = static_cast<double>(rows.size()) / static_cast<double>(n);
    model.means.row(i) = mean;
    group.rowwise() -= mean;
    for (std::size_t k = 0; k < rows.size(); ++k) centred.row(rows[k]) = group.row(static_cast<Index>(k));
    group_cov.push_back(sample_covariance(group));
  }
  model.weights /= model.weights.sum();

  const CovStructure s = spec.structure;
  // With one component every constraint is vacuous; use the shared start so
  // that structures differing only in constraints start identically.
  const bool single = g == 1;
  SharedStart shared;
  if (single || shares_loadings(s) || shares_errors(s)) {
    shared = fit_single_component(centred, spec, options);
  }

  if (single || shares_loadings(s)) {
    model.loadings = {shared.loadings};
  } else {
    for (int i = 0; i < g; ++i) model.loadings.push_back(eigen_loadings(group_cov[i], spec.q));
  }

  switch (error_shape(s)) {
    case ErrorShape::Scalar:
      model.error_diag = Matrix::Constant(1, 1, shared.error_diag.mean());
      break;
    case ErrorShape::Vector:
      model.error_diag = shared.error_diag.transpose();
      break;
    case ErrorShape::PerComponentScalar:
      model.error_diag.resize(g, 1);
      for (int i = 0; i < g; ++i) {
        const double psi =
            single ? shared.error_diag.mean()
                   : residual_variance(group_cov[i], model.component_loadings(i)).mean();
        model.error_diag(i, 0) = psi > kPsiFloor || single ? psi : shared.error_diag.mean();
      }
      break;
    case ErrorShape::PerComponentVector:
      model.error_diag.resize(g, p);
      for (int i = 0; i < g; ++i) {
        if (single) {
          model.error_diag.row(i) = shared.error_diag.transpose();
          continue;
        }
        const Vector psi = residual_variance(group_cov[i], model.component_loadings(i));
        for (Index h = 0; h < p; ++h) {
          model.error_diag(i, h) = psi(h) > kPsiFloor || !shares_loadings(s) ? psi(h) : shared.error_diag(h);
        }
      }
      break;
  }
  model.error_diag = model.error_diag.cwiseMax(kPsiFloor);

  if (spec.family == Family::StudentT) {
    model.dfs = Vector::Constant(spec.df_mode == DfMode::Common ? 1 : g, kInitialDf);
  }
  return model;
}

}  // namespace

void FitOptions::check() const {
  if (max_iterations < 1) throw UsageError("max_iterations must be >= 1");
  if (!(epsilon > 0.0)) throw UsageError("epsilon must be > 0");
  if (n_starts < 1) throw UsageError("n_starts must be >= 1");
  if (kmeans_max_iter < 1) throw UsageError("kmeans_max_iter must be >= 1");
}

KMeansResult kmeans(const Matrix& data, int g, std::uint64_t seed, int max_iter) {
  const Index n = data.rows();
  if (g < 1) throw UsageError("kmeans: g must be >= 1");
  if (n < g) {
    throw UsageError("kmeans: " + std::to_string(n) + " rows for " + std::to_string(g) +
                     " clusters");
  }

  std::vector<std::pair<std::uint64_t, Index>> keyed(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) keyed[static_cast<std::size_t>(j)] = {row_hash(data, j, seed), j};
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return row_less(data, a.second, b.second);
  });

  KMeansResult out;
  out.centers.resize(g, data.cols());
  std::vector<Index> chosen;
  for (const auto& [key, row] : keyed) {
    const bool duplicate = std::any_of(chosen.begin(), chosen.end(),
                                       [&](Index c) { return rows_equal(data, c, row); });
    if (duplicate) continue;
    out.centers.row(static_cast<Index>(chosen.size())) = data.row(row);
    chosen.push_back(row);
    if (static_cast<int>(chosen.size()) == g) break;
  }
  if (static_cast<int>(chosen.size()) < g) {
    throw UsageError("kmeans: fewer than " + std::to_string(g) + " distinct rows");
  }

  std::vector<int> labels;
  bool settled = false;
  for (int iter = 0; iter < max_iter; ++iter) {
    Vector distance;
    std::vector<int> next = assign(data, out.centers, &distance);
    out.iterations = iter + 1;
    if (next == labels) {
      settled = true;
      break;
    }
    labels = std::move(next);

    Matrix sums = Matrix::Zero(g, data.cols());
    Vector counts = Vector::Zero(g);
    for (Index j = 0; j < n; ++j) {
      sums.row(labels[j]) += data.row(j);
      counts(labels[j]) += 1.0;
    }
    for (int i = 0; i < g; ++i) {
      if (counts(i) > 0.0) {
        out.centers.row(i) = sums.row(i) / counts(i);
        continue;
      }
      // Empty cluster: move it to the point farthest from its own center.
      Index far = 0;
      distance.maxCoeff(&far);
      out.centers.row(i) = data.row(far);
      distance(far) = 0.0;
    }
  }
  out.labels = settled ? std::move(labels) : assign(data, out.centers);
  return out;
}

MixtureModel initialize(const Matrix& data, const ModelSpec& spec, std::uint64_t seed,
                        const FitOptions& options) {
  spec.check();
  if (data.cols() != spec.p) {
    throw UsageError("initialize: data has " + std::to_string(data.cols()) +
                     " columns, spec expects p=" + std::to_string(spec.p));
  }
  const double mass = options.component_mass(spec);
  if (static_cast<double>(data.rows()) < spec.g * mass) {
    throw DegeneracyError("initialize: n=" + std::to_string(data.rows()) + " is too small for g=" +
                          std::to_string(spec.g) + " components of mass " + std::to_string(mass));
  }
  std::string last;
  for (int attempt = 0; attempt < kInitReseeds; ++attempt) {
    KMeansResult km;
    try {
      km = kmeans(data, spec.g, attempt == 0 ? seed : splitmix64(seed + attempt),
                  options.kmeans_max_iter);
    } catch (const UsageError& e) {
      throw DegeneracyError(std::string("initialize: ") + e.what());
    }
    std::vector<double> counts(static_cast<std::size_t>(spec.g), 0.0);
    for (int label : km.labels) counts[static_cast<std::size_t>(label)] += 1.0;
    const double smallest = *std::min_element(counts.begin(), counts.end());
    if (smallest < mass) {
      last = "k-means group of size " + std::to_string(static_cast<int>(smallest));
      continue;
    }
    return build_start(data, spec, km.labels, options);
  }
  throw DegeneracyError("initialize: degenerate groups after " + std::to_string(kInitReseeds) +
                        " k-means reseeds (" + last + ")");
}

FitResult run_aecm(const Matrix& data, MixtureModel model, const FitOptions& options) {
  options.check();
  const ModelSpec spec = model.spec;
  const double mass = options.component_mass(spec);
  const bool student = spec.family == Family::StudentT;

  FitResult out;
  FitReport& report = out.report;
  EStepState state = responsibilities(data, model);
  report.loglik_trace.push_back(state.loglik);

  while (report.iterations < options.max_iterations) {
    // Cycle 1: allocations missing; update the weights.
    model.weights = update_weights(state);

    // Cycle 2: allocations and gamma scales missing; update means and dfs.
    reweight(state, model.weights);
    precision_weights(state, model);
    model.means = update_means(data, state);
    if (student) model.dfs = update_dfs(state, spec);

    // Cycle 3: allocations, scales and factors missing; update B and Ψ.
    state = responsibilities(data, model);
    precision_weights(state, model);
    scatter_matrices(data, state, model, mass);
    CovarianceUpdate cov = update_covariance(state, model);
    model.loadings = std::move(cov.loadings);
    model.error_diag = std::move(cov.error_diag);
    ++report.iterations;

    state = responsibilities(data, model);
    if (!std::isfinite(state.loglik)) throw NumericError("run_aecm: non-finite log-likelihood");
    report.loglik_trace.push_back(state.loglik);
    const std::size_t k = report.loglik_trace.size();
    if (k >= 3 && aitken_converged(report.loglik_trace[k - 3], report.loglik_trace[k - 2],
                                   report.loglik_trace[k - 1], options.epsilon)) {
      report.converged = true;
      break;
    }
  }

  report.final_loglik = report.loglik_trace.back();
  report.m = count_free_parameters(spec);
  report.bic = bic(report.final_loglik, report.m, static_cast<long>(data.rows()));
  out.model = std::move(model);
  return out;
}

std::uint64_t start_seed(std::uint64_t seed, int start) {
  return start == 0 ? seed : splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(start)));
}

FitResult aecm_fit(const Matrix& data, const ModelSpec& spec, const FitOptions& options) {
  options.check();
  spec.check();
  if (data.cols() != spec.p) {
    throw UsageError("aecm_fit: data has " + std::to_string(data.cols()) +
                     " columns, spec expects p=" + std::to_string(spec.p));
  }
  std::optional<FitResult> best;
  std::string causes;
  for (int s = 0; s < options.n_starts; ++s) {
    const std::uint64_t seed = start_seed(options.seed, s);
    try {
      FitResult fit = run_aecm(data, initialize(data, spec, seed, options), options);
      fit.report.seed = seed;
      if (!best || fit.report.final_loglik > best->report.final_loglik) best = std::move(fit);
    } catch (const NumericError& e) {
      causes += "\n  start " + std::to_string(s) + " (seed " + std::to_string(seed) + "): " + e.what();
    } catch (const DomainError& e) {
      causes += "\n  start " + std::to_string(s) + " (seed " + std::to_string(seed) + "): " + e.what();
    }
  }
  if (!best) throw FitFailure("aecm_fit: every start failed for " + spec.label() + ":" + causes);
  return std::move(*best);
}

bool aitken_converged(double l_prev, double l_curr, double l_next, double epsilon) {
  const double step = l_curr - l_prev;
  if (std::abs(step) < 1e-14) return (l_next - l_curr) < epsilon;
  const double a = (l_next - l_curr) / step;
  if (a >= 1.0) return (l_next - l_curr) < epsilon;
  const double limit = l_curr + (l_next - l_curr) / (1.0 - a);
  return std::abs(limit - l_curr) < epsilon;
}

double bic(double loglik, long m, long n) {
  if (n < 1) throw UsageError("bic: n must be >= 1");
  return 2.0 * loglik - static_cast<double>(m) * std::log(static_cast<double>(n));
}

void SearchGrid::check(int p) const {
  if (g_values.empty() || q_values.empty() || structures.empty() || df_modes.empty() ||
      families.empty()) {
    throw UsageError("search grid: every axis needs at least one value");
  }
  for (int g : g_values) {
    if (g < 1) throw UsageError("search grid: g values must be >= 1");
  }
  for (int q : q_values) {
    if (q < 1 || q >= p) {
      throw UsageError("search grid: q=" + std::to_string(q) + " violates 1 <= q < p=" +
                       std::to_string(p));
    }
  }
}

std::vector<ModelSpec> SearchGrid::cells(int p) const {
  check(p);
  std::vector<ModelSpec> out;
  for (int g : g_values) {
    for (int q : q_values) {
      for (CovStructure s : structures) {
        for (Family f : families) {
          std::set<DfMode> seen;
          for (DfMode m : df_modes) {
            const DfMode mode = f == Family::Gaussian ? DfMode::Common : m;
            if (!seen.insert(mode).second) continue;
            out.push_back({s, mode, f, g, q, p});
          }
        }
      }
    }
  }
  return out;
}

SearchResult model_search(const Matrix& data, const SearchGrid& grid, const FitOptions& options) {
  const int p = static_cast<int>(data.cols());
  SearchResult out;
  for (const ModelSpec& spec : grid.cells(p)) {
    try {
      FitResult fit = aecm_fit(data, spec, options);
      out.ranked.push_back({spec, std::move(fit.report)});
    } catch (const NumericError& e) {
      out.failures.push_back({spec, e.what()});
    }
  }
  if (out.ranked.empty()) {
    std::string msg = "model_search: every grid cell failed";
    for (const auto& f : out.failures) msg += "\n  " + f.spec.label() + ": " + f.reason;
    throw FitFailure(msg);
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const SearchEntry& a, const SearchEntry& b) { return a.report.bic > b.report.bic; });
  return out;
}

}  // namespace ptmm
