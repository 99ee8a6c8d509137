#include <doctest.h>

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>

#include "ptmm/aecm.hpp"
#include "ptmm/cm_steps.hpp"
#include "support/testing.hpp"

using namespace ptmm;
using namespace ptmm::testing;

namespace {

ModelSpec spec_of(CovStructure s, Family f, DfMode d, int g, int q, int p) {
  ModelSpec spec;
  spec.structure = s;
  spec.family = f;
  spec.df_mode = d;
  spec.g = g;
  spec.q = q;
  spec.p = p;
  return spec;
}

EStepState full_state(const Matrix& data, const MixtureModel& m) {
  EStepState s = responsibilities(data, m);
  precision_weights(s, m);
  scatter_matrices(data, s, m, 0.0);
  return s;
}

// Third-cycle objective with Γ_i, Ω_i, S_i held at their E-step values.
double q3(const EStepState& s, const std::vector<Matrix>& loadings, const Matrix& error_diag, int g, int p) {
  double total = 0.0;
  for (int i = 0; i < g; ++i) {
    const Matrix& b = loadings[loadings.size() == 1 ? 0 : i];
    const Matrix sd = s.scatter[i].dense();
    const Matrix& gamma = s.gamma[i];
    const Matrix a = s.omega[i] + gamma.transpose() * sd * gamma;
    const Matrix r = sd - 2.0 * b * gamma.transpose() * sd + b * a * b.transpose();
    double term = 0.0;
    for (int h = 0; h < p; ++h) {
      const Index row = error_diag.rows() == 1 ? 0 : i;
      const Index col = error_diag.cols() == 1 ? 0 : h;
      const double psi = error_diag(row, col);
      term += -std::log(psi) - r(h, h) / psi;
    }
    total += 0.5 * s.n_hat(i) * term;
  }
  return total;
}

}  // namespace

TEST_CASE("update_weights") {
  EStepState s;
  s.resp = Matrix::Zero(100, 2);
  s.resp.col(0).head(30).setOnes();
  s.resp.col(1).tail(70).setOnes();
  const Vector w = update_weights(s);
  CHECK(w(0) == doctest::Approx(0.3));
  CHECK(w(1) == doctest::Approx(0.7));

  s.resp = Matrix::Ones(5, 1);
  CHECK(update_weights(s)(0) == 1.0);

  Rng rng(31);
  s.resp = normal_matrix(rng, 20, 3).cwiseAbs();
  for (Index j = 0; j < 20; ++j) s.resp.row(j) /= s.resp.row(j).sum();
  const Vector got = update_weights(s);
  for (int i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (Index j = 0; j < 20; ++j) sum += s.resp(j, i);
    CHECK(got(i) == doctest::Approx(sum / 20.0).epsilon(1e-15));
  }
  CHECK(got.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("update_means") {
  EStepState s;
  Matrix data(2, 1);
  data << 0.0, 2.0;
  s.resp = Matrix::Ones(2, 1);
  s.tau.resize(2, 1);
  s.tau << 1.0, 3.0;
  CHECK(update_means(data, s)(0, 0) == doctest::Approx(1.5));

  Rng rng(32);
  const Matrix x = normal_matrix(rng, 20, 4);
  s.resp = Matrix::Ones(20, 1);
  s.tau = Matrix::Ones(20, 1);
  CHECK((update_means(x, s) - x.colwise().mean()).cwiseAbs().maxCoeff() <= 1e-14);

  s.resp = normal_matrix(rng, 20, 2).cwiseAbs();
  s.tau = uniform_vector(rng, 40, 0.2, 3.0).reshaped(20, 2);
  const Matrix mu = update_means(x, s);
  for (int i = 0; i < 2; ++i) {
    for (int h = 0; h < 4; ++h) {
      double num = 0.0;
      double den = 0.0;
      for (Index j = 0; j < 20; ++j) {
        num += s.resp(j, i) * s.tau(j, i) * x(j, h);
        den += s.resp(j, i) * s.tau(j, i);
      }
      CHECK(std::abs(mu(i, h) - num / den) <= 1e-12);
    }
  }

  s.resp.col(1).setZero();
  CHECK_THROWS_AS(update_means(x, s), DegeneracyError);
}

TEST_CASE("solve_df examples and clamping") {
  const double nu = solve_df({-1.1});
  CHECK(std::abs(nu - 10.34) <= 0.05);
  CHECK(std::abs(df_equation(nu, -1.1)) <= 1e-10);
  CHECK(solve_df({-0.5}) == kNuMax);
  CHECK(df_equation(kNuMin, -5.0) < 0.0);
  CHECK(solve_df({-5.0}) == kNuMin);
  CHECK_THROWS_AS(solve_df({NAN}), NumericError);

  for (double c = -1.9; c < -1.0; c += 0.05) {
    auto lhs = [c](double v) { return std::log(v / 2.0) - boost::math::digamma(v / 2.0) + 1.0 + c; };
    double lo = kNuMin;
    double hi = kNuMax;
    if (lhs(lo) <= 0.0 || lhs(hi) >= 0.0) continue;
    for (int k = 0; k < 200; ++k) (lhs(0.5 * (lo + hi)) > 0.0 ? lo : hi) = 0.5 * (lo + hi);
    CHECK(solve_df({c}) == doctest::Approx(lo).epsilon(1e-8));
  }

  for (double nu_a = 2.0; nu_a < 200.0; nu_a *= 1.3) {
    CHECK(df_equation(nu_a, -1.0) > df_equation(nu_a * 1.3, -1.0));
  }
}

TEST_CASE("update_dfs residuals and mode agreement") {
  Rng rng(33);
  const ModelSpec spec = spec_of(CovStructure::UUU, Family::StudentT, DfMode::Free, 2, 1, 3);
  const MixtureModel m = random_model(spec, rng, 2.0, 4.0);
  const Sample sample = sample_mixture(m, 200, rng);
  EStepState s = responsibilities(sample.data, m);
  precision_weights(s, m);
  const Vector dfs = update_dfs(s, spec);
  for (int i = 0; i < 2; ++i) {
    double num = 0.0;
    double den = 0.0;
    for (Index j = 0; j < s.n(); ++j) {
      num += s.resp(j, i) * (s.kappa(j, i) - s.tau(j, i));
      den += s.resp(j, i);
    }
    const double c = num / den;
    if (dfs(i) > kNuMin && dfs(i) < kNuMax) CHECK(std::abs(df_equation(dfs(i), c)) <= 1e-10);
  }

  EStepState flat;
  flat.resp = Matrix::Ones(10, 1);
  flat.tau = Matrix::Constant(10, 1, 1.2);
  flat.kappa = Matrix::Constant(10, 1, 0.05);
  ModelSpec one = spec_of(CovStructure::CCC, Family::StudentT, DfMode::Free, 1, 1, 3);
  const double free_nu = update_dfs(flat, one)(0);
  one.df_mode = DfMode::Common;
  CHECK(update_dfs(flat, one)(0) == free_nu);

  flat.resp = Matrix::Constant(10, 2, 0.5);
  flat.tau = Matrix::Constant(10, 2, 1.2);
  flat.kappa = Matrix::Constant(10, 2, 0.05);
  ModelSpec two = spec_of(CovStructure::CCC, Family::StudentT, DfMode::Free, 2, 1, 3);
  const Vector per = update_dfs(flat, two);
  two.df_mode = DfMode::Common;
  CHECK(per(0) == doctest::Approx(update_dfs(flat, two)(0)).epsilon(1e-12));
  CHECK(per(1) == doctest::Approx(per(0)).epsilon(1e-12));
}

TEST_CASE("CCC update with zero loadings") {
  Rng rng(34);
  ModelSpec spec = spec_of(CovStructure::CCC, Family::Gaussian, DfMode::Common, 1, 1, 3);
  MixtureModel m = random_model(spec, rng);
  m.loadings[0].setZero();
  const Matrix data = normal_matrix(rng, 40, 3, 2.0);
  const EStepState s = full_state(data, m);
  CHECK(s.gamma[0].cwiseAbs().maxCoeff() == 0.0);
  const CovarianceUpdate u = update_covariance(s, m);
  CHECK(u.loadings[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(u.error_diag(0, 0) == doctest::Approx(s.scatter[0].trace() / 3.0).epsilon(1e-14));
}

TEST_CASE("CCC scalar fixed point") {
  MixtureModel m;
  m.spec = spec_of(CovStructure::CCC, Family::Gaussian, DfMode::Common, 1, 1, 1);
  m.weights = Vector::Ones(1);
  m.means = Matrix::Zero(1, 1);
  m.loadings = {Matrix::Ones(1, 1)};
  m.error_diag = Matrix::Ones(1, 1);
  EStepState s;
  s.resp = Matrix::Ones(4, 1);
  s.n_hat = Vector::Constant(1, 4.0);
  s.scatter = {ScatterMatrix<double>::from_dense(Matrix::Constant(1, 1, 2.0))};
  s.gamma = {Matrix::Constant(1, 1, 0.5)};
  s.omega = {Matrix::Constant(1, 1, 0.5)};
  const CovarianceUpdate u = update_covariance(s, m);
  CHECK(u.loadings[0](0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(u.error_diag(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("covariance updates do not decrease the third-cycle objective") {
  Rng rng(35);
  for (CovStructure st : kAllStructures) {
    for (int rep = 0; rep < 5; ++rep) {
      const ModelSpec spec = spec_of(st, Family::StudentT, DfMode::Free, 2, rep % 2 + 1, 4);
      const MixtureModel truth = random_model(spec, rng, 3.0, 6.0);
      const Sample sample = sample_mixture(truth, 120, rng);
      const MixtureModel start = random_model(spec, rng, 3.0, 6.0);
      const EStepState s = full_state(sample.data, start);
      const CovarianceUpdate u = update_covariance(s, start);
      CAPTURE(to_string(st));
      const double before = q3(s, start.loadings, start.error_diag, 2, 4);
      const double after = q3(s, u.loadings, u.error_diag, 2, 4);
      CHECK(after >= before - 1e-9 * std::abs(before));
      CHECK(u.error_diag.minCoeff() >= kPsiFloor);
      MixtureModel next = start;
      next.loadings = u.loadings;
      next.error_diag = u.error_diag;
      CHECK(validate(next).empty());
    }
  }
}

TEST_CASE("one CM sequence does not decrease the observed log-likelihood") {
  Rng rng(36);
  for (CovStructure st : kAllStructures) {
    for (Family f : {Family::StudentT, Family::Gaussian}) {
      for (DfMode d : {DfMode::Common, DfMode::Free}) {
        const ModelSpec spec = spec_of(st, f, d, 2, 1, 4);
        const Sample sample = sample_mixture(random_model(spec, rng, 3.0, 5.0), 150, rng);
        MixtureModel m = random_model(spec, rng, 3.0, 20.0);
        CAPTURE(spec.label());
        EStepState s = responsibilities(sample.data, m);
        double prev = s.loglik;
        for (int iter = 0; iter < 3; ++iter) {
          m.weights = update_weights(s);
          s = responsibilities(sample.data, m);
          CHECK(s.loglik >= prev - 1e-7);
          prev = s.loglik;
          precision_weights(s, m);
          m.means = update_means(sample.data, s);
          if (f == Family::StudentT) m.dfs = update_dfs(s, spec);
          s = responsibilities(sample.data, m);
          CHECK(s.loglik >= prev - 1e-7);
          prev = s.loglik;
          precision_weights(s, m);
          scatter_matrices(sample.data, s, m, 0.0);
          const CovarianceUpdate u = update_covariance(s, m);
          m.loadings = u.loadings;
          m.error_diag = u.error_diag;
          s = responsibilities(sample.data, m);
          CHECK(s.loglik >= prev - 1e-7);
          prev = s.loglik;
        }
      }
    }
  }
}

TEST_CASE("CUU row solve reduces to CUC with equal isotropic errors") {
  Rng rng(37);
  for (int rep = 0; rep < 5; ++rep) {
    ModelSpec cuu = spec_of(CovStructure::CUU, Family::StudentT, DfMode::Free, 3, 2, 6);
    MixtureModel a = random_model(cuu, rng, 3.0, 6.0);
    const double psi = rng.uniform(0.2, 1.0);
    a.error_diag = Matrix::Constant(3, 6, psi);
    MixtureModel b = a;
    b.spec.structure = CovStructure::CUC;
    b.error_diag = Matrix::Constant(3, 1, psi);
    const Sample sample = sample_mixture(a, 150, rng);
    const EStepState sa = full_state(sample.data, a);
    const EStepState sb = full_state(sample.data, b);
    const Matrix ba = update_covariance(sa, a).loadings[0];
    const Matrix bb = update_covariance(sb, b).loadings[0];
    CHECK((ba - bb).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("structures coincide when g = 1") {
  Rng rng(38);
  ModelSpec spec = spec_of(CovStructure::UUU, Family::StudentT, DfMode::Common, 1, 2, 5);
  const MixtureModel base = random_model(spec, rng);
  const Sample sample = sample_mixture(base, 100, rng);
  for (auto [x, y] : {std::pair{CovStructure::CUU, CovStructure::UUU}, std::pair{CovStructure::CCU, CovStructure::UUU},
                      std::pair{CovStructure::CCU, CovStructure::UCU}, std::pair{CovStructure::CCC, CovStructure::UCC},
                      std::pair{CovStructure::CUC, CovStructure::UUC}, std::pair{CovStructure::CCC, CovStructure::UUC}}) {
    auto with = [&](CovStructure st, bool isotropic) {
      MixtureModel m = base;
      m.spec.structure = st;
      if (isotropic) m.error_diag = Matrix::Constant(1, 1, base.error_diag.mean());
      return m;
    };
    const MixtureModel mx = with(x, is_isotropic(x));
    const MixtureModel my = with(y, is_isotropic(y));
    const CovarianceUpdate ux = update_covariance(full_state(sample.data, mx), mx);
    const CovarianceUpdate uy = update_covariance(full_state(sample.data, my), my);
    CAPTURE(to_string(x));
    CAPTURE(to_string(y));
    const Matrix sx = ux.loadings[0] * ux.loadings[0].transpose();
    const Matrix sy = uy.loadings[0] * uy.loadings[0].transpose();
    CHECK((sx - sy).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((ux.error_diag.reshaped() - uy.error_diag.reshaped()).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("error variances are floored") {
  Rng rng(39);
  for (CovStructure st : kAllStructures) {
    const ModelSpec spec = spec_of(st, Family::Gaussian, DfMode::Common, 1, 1, 3);
    MixtureModel m = random_model(spec, rng);
    Matrix data = normal_matrix(rng, 30, 1) * Matrix::Ones(1, 3);
    data.col(2) += 1e-12 * normal_matrix(rng, 30, 1);
    m.means = data.colwise().mean();
    m.loadings[0] = Matrix::Ones(3, 1);
    const CovarianceUpdate u = update_covariance(full_state(data, m), m);
    CAPTURE(to_string(st));
    CHECK(u.error_diag.minCoeff() >= kPsiFloor);
  }
}

TEST_CASE("Gaussian UUU with q = p - 1 reproduces the sample covariance") {
  Rng rng(40);
  const int p = 4;
  const ModelSpec spec = spec_of(CovStructure::UUU, Family::Gaussian, DfMode::Common, 1, p - 1, p);
  const MixtureModel truth = random_model(spec, rng);
  const Sample sample = sample_mixture(truth, 2000, rng);
  FitOptions options;
  options.n_starts = 1;
  options.max_iterations = 20000;
  options.epsilon = 1e-10;
  const FitResult fit = aecm_fit(sample.data, spec, options);
  const Matrix centered = sample.data.rowwise() - sample.data.colwise().mean();
  const Matrix s = centered.transpose() * centered / static_cast<double>(sample.data.rows());
  const Matrix sigma = fit.model.component_covariance(0).dense();
  CHECK((sigma - s).norm() <= 5e-2);
}
