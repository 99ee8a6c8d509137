#include "ptmm/inference.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ptmm {

namespace {

LowRankSolver<double> component_solver(const MixtureModel& model, int i) {
  try {
    return LowRankSolver<double>(model.component_covariance(i));
  } catch (const NumericError& e) {
    throw DegeneracyError("component " + std::to_string(i) + ": " + e.what());
  } catch (const DomainError& e) {
    throw DegeneracyError("component " + std::to_string(i) + ": " + e.what());
  }
}

}  // namespace

ScatterMatrix<double> EStepState::pooled_scatter() const {
  const double n = static_cast<double>(resp.rows());
  return ScatterMatrix<double>::weighted_sum(scatter, n_hat / n);
}

Vector mvt_logdensity_rows(const Matrix& data, const Vector& mu,
                           const LowRankSolver<double>& solver, std::optional<double> nu,
                           Vector* delta) {
  if (data.cols() != mu.size() || mu.size() != solver.dim()) {
    throw UsageError("mvt_logdensity: dimension mismatch");
  }
  const double p = static_cast<double>(mu.size());
  const Matrix residuals = data.rowwise() - mu.transpose();
  Vector d = solver.mahalanobis_rows(residuals);
  const double half_logdet = 0.5 * solver.log_determinant();
  Vector out(d.size());
  if (!nu) {
    const double c = -0.5 * p * std::log(2.0 * std::numbers::pi) - half_logdet;
    out = (c - 0.5 * d.array()).matrix();
  } else {
    const double v = *nu;
    if (!(v > 0.0)) throw DomainError("mvt_logdensity: degrees of freedom must be positive");
    const double c = log_gamma(0.5 * (v + p)) - log_gamma(0.5 * v) -
                     0.5 * p * std::log(v * std::numbers::pi) - half_logdet;
    out = (c - 0.5 * (v + p) * (d.array() / v).log1p()).matrix();
  }
  if (delta) *delta = std::move(d);
  return out;
}

double mvt_logdensity(const Vector& y, const Vector& mu, const FactorCovariance<double>& cov,
                      std::optional<double> nu) {
  if (y.size() != mu.size()) throw UsageError("mvt_logdensity: dimension mismatch");
  const LowRankSolver<double> solver(cov);
  return mvt_logdensity_rows(y.transpose(), mu, solver, nu)(0);
}

EStepState responsibilities(const Matrix& data, const MixtureModel& model) {
  const int g = model.spec.g;
  if (data.cols() != model.spec.p) {
    throw UsageError("responsibilities: data has " + std::to_string(data.cols()) +
                     " columns, model expects p=" + std::to_string(model.spec.p));
  }
  const Index n = data.rows();
  EStepState state;
  state.log_density.resize(n, g);
  state.delta.resize(n, g);
  for (int i = 0; i < g; ++i) {
    const LowRankSolver<double> solver = component_solver(model, i);
    Vector delta;
    state.log_density.col(i) =
        mvt_logdensity_rows(data, model.means.row(i).transpose(), solver, model.component_df(i),
                            &delta);
    state.delta.col(i) = delta;
  }
  reweight(state, model.weights);
  return state;
}

void reweight(EStepState& state, const Vector& weights) {
  const Index n = state.log_density.rows();
  const Index g = state.log_density.cols();
  const Vector log_w = weights.array().log().matrix();
  state.resp.resize(n, g);
  double total = 0.0;
  for (Index j = 0; j < n; ++j) {
    Eigen::RowVectorXd joint = state.log_density.row(j) + log_w.transpose();
    const double top = joint.maxCoeff();
    if (!std::isfinite(top)) {
      throw NumericError("responsibilities: every component density underflows at row " +
                         std::to_string(j));
    }
    // Terms below the normal range are dropped: subnormal responsibilities
    // add nothing and make later arithmetic very slow.
    Eigen::RowVectorXd e =
        (joint.array() - top).unaryExpr([](double x) { return x < -700.0 ? 0.0 : std::exp(x); }).matrix();
    const double s = e.sum();
    state.resp.row(j) = e / s;
    total += top + std::log(s);
  }
  state.loglik = total;
}

void precision_weights(EStepState& state, const MixtureModel& model) {
  const Index n = state.delta.rows();
  const int g = model.spec.g;
  const double p = static_cast<double>(model.spec.p);
  state.tau.resize(n, g);
  state.kappa.resize(n, g);
  if (model.spec.family == Family::Gaussian) {
    state.tau.setOnes();
    state.kappa.setZero();
    return;
  }
  for (int i = 0; i < g; ++i) {
    const double nu = *model.component_df(i);
    const double dg = digamma(0.5 * (nu + p));
    for (Index j = 0; j < n; ++j) {
      const double d = state.delta(j, i);
      state.tau(j, i) = (nu + p) / (nu + d);
      state.kappa(j, i) = dg - std::log(0.5 * (nu + d));
    }
  }
}

Vector factor_scores(const Vector& y, const MixtureModel& model, int component) {
  if (y.size() != model.spec.p) throw UsageError("factor_scores: dimension mismatch");
  const LowRankSolver<double> solver = component_solver(model, component);
  return solver.gamma().transpose() * (y - model.means.row(component).transpose());
}

void scatter_matrices(const Matrix& data, EStepState& state, const MixtureModel& model,
                      double min_component_mass) {
  const int g = model.spec.g;
  state.n_hat = state.resp.colwise().sum().transpose();
  state.scatter.assign(static_cast<std::size_t>(g), {});
  state.gamma.assign(static_cast<std::size_t>(g), {});
  state.omega.assign(static_cast<std::size_t>(g), {});
  for (int i = 0; i < g; ++i) {
    const double n_i = state.n_hat(i);
    if (!(n_i >= min_component_mass)) {
      throw DegeneracyError("component " + std::to_string(i) + " has effective size " +
                            std::to_string(n_i) + " < " + std::to_string(min_component_mass));
    }
    const Vector w = (state.resp.col(i).array() * state.tau.col(i).array()).matrix() / n_i;
    const Matrix residuals = data.rowwise() - model.means.row(i);
    state.scatter[i] = ScatterMatrix<double>::from_rows(residuals, w);
    const LowRankSolver<double> solver = component_solver(model, i);
    state.gamma[i] = solver.gamma();
    state.omega[i] = solver.omega();
  }
}

std::vector<int> classify(const EStepState& state) {
  std::vector<int> labels(static_cast<std::size_t>(state.resp.rows()));
  for (Index j = 0; j < state.resp.rows(); ++j) {
    Index best = 0;
    state.resp.row(j).maxCoeff(&best);
    labels[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace ptmm
