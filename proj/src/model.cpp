#include "ptmm/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace ptmm {

using json = nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace

std::string_view to_string(CovStructure s) {
  switch (s) {
    case CovStructure::CCC: return "CCC";
    case CovStructure::CCU: return "CCU";
    case CovStructure::CUC: return "CUC";
    case CovStructure::CUU: return "CUU";
    case CovStructure::UCC: return "UCC";
    case CovStructure::UCU: return "UCU";
    case CovStructure::UUC: return "UUC";
    case CovStructure::UUU: return "UUU";
  }
  return "?";
}

std::string_view to_string(DfMode m) { return m == DfMode::Common ? "common" : "free"; }
std::string_view to_string(Family f) { return f == Family::StudentT ? "t" : "gaussian"; }

std::string_view to_string(ErrorShape s) {
  switch (s) {
    case ErrorShape::Scalar: return "scalar";
    case ErrorShape::Vector: return "vector";
    case ErrorShape::PerComponentScalar: return "per_component_scalar";
    case ErrorShape::PerComponentVector: return "per_component_vector";
  }
  return "?";
}

CovStructure parse_structure(std::string_view name) {
  const std::string key = lower(name);
  for (CovStructure s : kAllStructures) {
    if (lower(to_string(s)) == key) return s;
  }
  throw UsageError("unknown covariance structure '" + std::string(name) + "'");
}

DfMode parse_df_mode(std::string_view name) {
  const std::string key = lower(name);
  if (key == "common") return DfMode::Common;
  if (key == "free") return DfMode::Free;
  throw UsageError("unknown df mode '" + std::string(name) + "' (expected common|free)");
}

Family parse_family(std::string_view name) {
  const std::string key = lower(name);
  if (key == "t" || key == "student_t") return Family::StudentT;
  if (key == "gaussian") return Family::Gaussian;
  throw UsageError("unknown family '" + std::string(name) + "' (expected t|gaussian)");
}

ErrorShape parse_error_shape(std::string_view name) {
  for (ErrorShape s : {ErrorShape::Scalar, ErrorShape::Vector, ErrorShape::PerComponentScalar,
                       ErrorShape::PerComponentVector}) {
    if (to_string(s) == name) return s;
  }
  throw UsageError("unknown error_diag shape '" + std::string(name) + "'");
}

void ModelSpec::check() const {
  if (g < 1) throw UsageError("spec: g must be >= 1 (got " + std::to_string(g) + ")");
  if (q < 1) throw UsageError("spec: q must be >= 1 (got " + std::to_string(q) + ")");
  if (p < 1) throw UsageError("spec: p must be >= 1 (got " + std::to_string(p) + ")");
  if (q >= p) {
    throw UsageError("spec: q must be < p (got q=" + std::to_string(q) +
                     ", p=" + std::to_string(p) + ")");
  }
}

std::string ModelSpec::label() const {
  std::string fam;
  if (family == Family::Gaussian) {
    fam = "gaussian";
  } else {
    fam = "t-" + std::string(to_string(df_mode));
  }
  return std::string(to_string(structure)) + "/" + fam + "/g=" + std::to_string(g) +
         "/q=" + std::to_string(q);
}

// ---------------------------------------------------------------------------

const Matrix& MixtureModel::component_loadings(int i) const {
  return loadings.size() == 1 ? loadings.front() : loadings.at(static_cast<std::size_t>(i));
}

Vector MixtureModel::component_error_diag(int i) const {
  const Index p = spec.p;
  const Index row = error_diag.rows() == 1 ? 0 : i;
  if (error_diag.cols() == 1) return Vector::Constant(p, error_diag(row, 0));
  return error_diag.row(row).transpose();
}

std::optional<double> MixtureModel::component_df(int i) const {
  if (spec.family == Family::Gaussian) return std::nullopt;
  return dfs.size() == 1 ? dfs(0) : dfs(i);
}

FactorCovariance<double> MixtureModel::component_covariance(int i) const {
  return {component_loadings(i), component_error_diag(i)};
}

namespace {

template <typename A, typename B>
bool same(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

}  // namespace

bool MixtureModel::operator==(const MixtureModel& other) const {
  if (!(spec == other.spec) || loadings.size() != other.loadings.size()) return false;
  for (std::size_t i = 0; i < loadings.size(); ++i) {
    if (!same(loadings[i], other.loadings[i])) return false;
  }
  return same(weights, other.weights) && same(means, other.means) &&
         same(error_diag, other.error_diag) && same(dfs, other.dfs);
}

// ---------------------------------------------------------------------------

long count_free_parameters(const ModelSpec& spec) {
  spec.check();
  const long g = spec.g;
  const long p = spec.p;
  const long q = spec.q;
  const long per_loading = p * q - q * (q - 1) / 2;
  long cov = shares_loadings(spec.structure) ? per_loading : g * per_loading;
  switch (error_shape(spec.structure)) {
    case ErrorShape::Scalar: cov += 1; break;
    case ErrorShape::Vector: cov += p; break;
    case ErrorShape::PerComponentScalar: cov += g; break;
    case ErrorShape::PerComponentVector: cov += g * p; break;
  }
  long df = 0;
  if (spec.family == Family::StudentT) df = spec.df_mode == DfMode::Common ? 1 : g;
  return (g - 1) + g * p + cov + df;
}

std::vector<std::string> validate(const MixtureModel& model) {
  std::vector<std::string> out;
  const ModelSpec& spec = model.spec;
  try {
    spec.check();
  } catch (const UsageError& e) {
    out.emplace_back(e.what());
    return out;
  }
  const Index g = spec.g;
  const Index p = spec.p;
  const Index q = spec.q;

  if (model.weights.size() != g) {
    out.push_back("weights: length " + std::to_string(model.weights.size()) + " != g=" +
                  std::to_string(g));
  } else {
    for (Index i = 0; i < g; ++i) {
      if (!(model.weights(i) > 0.0) || !std::isfinite(model.weights(i))) {
        out.push_back("weights[" + std::to_string(i) + "]: not strictly positive");
      }
    }
    const double sum = model.weights.sum();
    if (std::abs(sum - 1.0) > 1e-12) {
      std::ostringstream msg;
      msg << "weights: sum " << sum << " != 1";
      out.push_back(msg.str());
    }
  }

  if (model.means.rows() != g || model.means.cols() != p) {
    out.push_back("means: shape " + shape_str(model.means.rows(), model.means.cols()) +
                  " != " + shape_str(g, p));
  } else if (!model.means.allFinite()) {
    out.emplace_back("means: non-finite entry");
  }

  const std::size_t expected_loadings = shares_loadings(spec.structure) ? 1 : std::size_t(g);
  if (model.loadings.size() != expected_loadings) {
    out.push_back("loadings: storage shape mismatch (" + std::string(to_string(spec.structure)) +
                  " stores " + std::to_string(expected_loadings) + " matrices, got " +
                  std::to_string(model.loadings.size()) + ")");
  }
  for (std::size_t i = 0; i < model.loadings.size(); ++i) {
    const Matrix& b = model.loadings[i];
    if (b.rows() != p || b.cols() != q) {
      out.push_back("loadings[" + std::to_string(i) + "]: shape " + shape_str(b.rows(), b.cols()) +
                    " != " + shape_str(p, q));
    } else if (!b.allFinite()) {
      out.push_back("loadings[" + std::to_string(i) + "]: non-finite entry");
    }
  }

  Index rows = 1;
  Index cols = 1;
  switch (error_shape(spec.structure)) {
    case ErrorShape::Scalar: break;
    case ErrorShape::Vector: cols = p; break;
    case ErrorShape::PerComponentScalar: rows = g; break;
    case ErrorShape::PerComponentVector: rows = g; cols = p; break;
  }
  if (model.error_diag.rows() != rows || model.error_diag.cols() != cols) {
    out.push_back("error_diag: storage shape mismatch (expected " + shape_str(rows, cols) + " for " +
                  std::string(to_string(error_shape(spec.structure))) + ", got " +
                  shape_str(model.error_diag.rows(), model.error_diag.cols()) + ")");
  } else {
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) {
        const double v = model.error_diag(r, c);
        if (!std::isfinite(v) || v < kPsiFloor) {
          out.push_back("error_diag[" + std::to_string(r) + "][" + std::to_string(c) +
                        "]: below floor or non-finite");
        }
      }
    }
  }

  Index expected_dfs = 0;
  if (spec.family == Family::StudentT) expected_dfs = spec.df_mode == DfMode::Common ? 1 : g;
  if (model.dfs.size() != expected_dfs) {
    out.push_back("dfs: storage shape mismatch (expected " + std::to_string(expected_dfs) +
                  " entries, got " + std::to_string(model.dfs.size()) + ")");
  } else {
    for (Index i = 0; i < expected_dfs; ++i) {
      const double nu = model.dfs(i);
      if (!(nu >= kNuMin && nu <= kNuMax)) {
        out.push_back("dfs[" + std::to_string(i) + "]: " + std::to_string(nu) +
                      " outside [2, 200]");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON model file

namespace {

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json report_json(const FitReport& r) {
  return {{"loglik_trace", r.loglik_trace}, {"final_loglik", r.final_loglik},
          {"m", r.m},                       {"bic", r.bic},
          {"iterations", r.iterations},     {"converged", r.converged},
          {"seed", r.seed}};
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError("missing field \"" + key + "\"" + (path.empty() ? "" : " in " + path));
  }
  return *it;
}

double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError(path + ": expected a number");
  return j.get<double>();
}

Vector parse_vector(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError(path + ": expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    v(static_cast<Index>(k)) = number_at(j[k], path + "[" + std::to_string(k) + "]");
  }
  return v;
}

Matrix parse_matrix(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError(path + ": expected an array of rows");
  const Index rows = static_cast<Index>(j.size());
  Index cols = 0;
  if (rows > 0) {
    if (!j[0].is_array()) throw ParseError(path + "[0]: expected an array");
    cols = static_cast<Index>(j[0].size());
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const std::string row_path = path + "[" + std::to_string(r) + "]";
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw ParseError(row_path + ": ragged row");
    }
    for (Index c = 0; c < cols; ++c) {
      m(r, c) = number_at(row[static_cast<std::size_t>(c)], row_path + "[" + std::to_string(c) + "]");
    }
  }
  return m;
}

int int_at(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ParseError(path + ": expected an integer");
  return j.get<int>();
}

std::string string_at(const json& j, const std::string& path) {
  if (!j.is_string()) throw ParseError(path + ": expected a string");
  return j.get<std::string>();
}

template <typename Fn>
auto parse_enum(const json& j, const std::string& path, Fn fn) {
  const std::string s = string_at(j, path);
  try {
    return fn(s);
  } catch (const UsageError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

FitReport parse_report(const json& j) {
  const std::string base = "fit_report";
  FitReport r;
  const json& trace = require(j, "loglik_trace", base);
  const Vector t = parse_vector(trace, base + ".loglik_trace");
  r.loglik_trace.assign(t.data(), t.data() + t.size());
  r.final_loglik = number_at(require(j, "final_loglik", base), base + ".final_loglik");
  const json& m = require(j, "m", base);
  if (!m.is_number_integer()) throw ParseError(base + ".m: expected an integer");
  r.m = m.get<long>();
  r.bic = number_at(require(j, "bic", base), base + ".bic");
  r.iterations = int_at(require(j, "iterations", base), base + ".iterations");
  const json& conv = require(j, "converged", base);
  if (!conv.is_boolean()) throw ParseError(base + ".converged: expected a boolean");
  r.converged = conv.get<bool>();
  const json& seed = require(j, "seed", base);
  if (!seed.is_number_integer()) throw ParseError(base + ".seed: expected an integer");
  r.seed = seed.get<std::uint64_t>();
  return r;
}

}  // namespace

std::string report_to_json(const FitReport& report) { return report_json(report).dump(2) + "\n"; }

std::string serialize(const MixtureModel& model, const std::optional<FitReport>& report) {
  json doc;
  doc["format_version"] = 1;
  const ModelSpec& s = model.spec;
  doc["spec"] = {{"structure", std::string(to_string(s.structure))},
                 {"df_mode", std::string(to_string(s.df_mode))},
                 {"family", std::string(to_string(s.family))},
                 {"g", s.g},
                 {"q", s.q},
                 {"p", s.p}};
  doc["weights"] = vector_json(model.weights);
  doc["means"] = matrix_json(model.means);
  json loadings = json::array();
  for (const Matrix& b : model.loadings) loadings.push_back(matrix_json(b));
  doc["loadings"] = std::move(loadings);

  const ErrorShape shape = error_shape(s.structure);
  json data;
  switch (shape) {
    case ErrorShape::Scalar: data = model.error_diag(0, 0); break;
    case ErrorShape::Vector: data = vector_json(model.error_diag.row(0).transpose()); break;
    case ErrorShape::PerComponentScalar: data = vector_json(model.error_diag.col(0)); break;
    case ErrorShape::PerComponentVector: data = matrix_json(model.error_diag); break;
  }
  doc["error_diag"] = {{"shape", std::string(to_string(shape))}, {"data", std::move(data)}};

  if (s.family == Family::Gaussian) {
    doc["dfs"] = nullptr;
  } else if (s.df_mode == DfMode::Common) {
    doc["dfs"] = model.dfs(0);
  } else {
    doc["dfs"] = vector_json(model.dfs);
  }
  if (report) doc["fit_report"] = report_json(*report);
  return doc.dump(2) + "\n";
}

ModelDocument deserialize_document(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("model file: top level must be an object");
  const int version = int_at(require(doc, "format_version", ""), "format_version");
  if (version != 1) {
    throw ParseError("format_version: unsupported version " + std::to_string(version));
  }

  ModelDocument out;
  MixtureModel& m = out.model;
  const json& spec = require(doc, "spec", "");
  m.spec.structure = parse_enum(require(spec, "structure", "spec"), "spec.structure",
                                [](const std::string& v) { return parse_structure(v); });
  m.spec.df_mode = parse_enum(require(spec, "df_mode", "spec"), "spec.df_mode",
                              [](const std::string& v) { return parse_df_mode(v); });
  m.spec.family = parse_enum(require(spec, "family", "spec"), "spec.family",
                             [](const std::string& v) { return parse_family(v); });
  m.spec.g = int_at(require(spec, "g", "spec"), "spec.g");
  m.spec.q = int_at(require(spec, "q", "spec"), "spec.q");
  m.spec.p = int_at(require(spec, "p", "spec"), "spec.p");

  m.weights = parse_vector(require(doc, "weights", ""), "weights");
  m.means = parse_matrix(require(doc, "means", ""), "means");

  const json& loadings = require(doc, "loadings", "");
  if (!loadings.is_array()) throw ParseError("loadings: expected an array of matrices");
  for (std::size_t i = 0; i < loadings.size(); ++i) {
    m.loadings.push_back(parse_matrix(loadings[i], "loadings[" + std::to_string(i) + "]"));
  }

  const json& err = require(doc, "error_diag", "");
  const ErrorShape shape =
      parse_enum(require(err, "shape", "error_diag"), "error_diag.shape",
                 [](const std::string& v) { return parse_error_shape(v); });
  const json& data = require(err, "data", "error_diag");
  switch (shape) {
    case ErrorShape::Scalar:
      m.error_diag = Matrix::Constant(1, 1, number_at(data, "error_diag.data"));
      break;
    case ErrorShape::Vector:
      m.error_diag = parse_vector(data, "error_diag.data").transpose();
      break;
    case ErrorShape::PerComponentScalar:
      m.error_diag = parse_vector(data, "error_diag.data");
      break;
    case ErrorShape::PerComponentVector:
      m.error_diag = parse_matrix(data, "error_diag.data");
      break;
  }
  if (shape != error_shape(m.spec.structure)) {
    throw ValidationError("error_diag: storage shape mismatch (" + std::string(to_string(shape)) +
                          " declared, structure " + std::string(to_string(m.spec.structure)) +
                          " requires " + std::string(to_string(error_shape(m.spec.structure))) +
                          ")");
  }

  const json& dfs = require(doc, "dfs", "");
  if (dfs.is_null()) {
    m.dfs.resize(0);
  } else if (dfs.is_number()) {
    m.dfs = Vector::Constant(1, dfs.get<double>());
  } else {
    m.dfs = parse_vector(dfs, "dfs");
  }

  if (auto it = doc.find("fit_report"); it != doc.end() && !it->is_null()) {
    out.report = parse_report(*it);
  }

  const auto violations = validate(m);
  if (!violations.empty()) {
    std::string msg = "model file failed validation:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }
  return out;
}

MixtureModel deserialize(std::string_view text) { return deserialize_document(text).model; }

}  // namespace ptmm
