#include "ptmm/imaging.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ptmm/inference.hpp"
#include "ptmm/scatter.hpp"

namespace ptmm {

BlockDataset extract_blocks(const Image& image, int block_w, int block_h, double channel_max) {
  if (block_w <= 0 || block_h <= 0) throw UsageError("extract_blocks: block size must be positive");
  if (image.width <= 0 || image.height <= 0 || image.channels <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw UsageError("extract_blocks: invalid image geometry");
  }
  BlockDataset out;
  out.image_width = image.width;
  out.image_height = image.height;
  out.block_w = block_w;
  out.block_h = block_h;
  out.channels = image.channels;
  out.channel_max = channel_max;
  const int bx = out.blocks_x();
  const int by = out.blocks_y();
  out.vectors.resize(static_cast<Index>(bx) * by, static_cast<Index>(block_w) * block_h * image.channels);
  for (int j = 0; j < by; ++j) {
    for (int i = 0; i < bx; ++i) {
      const Index row = static_cast<Index>(j) * bx + i;
      Index col = 0;
      for (int dy = 0; dy < block_h; ++dy) {
        const int y = std::min(j * block_h + dy, image.height - 1);
        for (int dx = 0; dx < block_w; ++dx) {
          const int x = std::min(i * block_w + dx, image.width - 1);
          for (int c = 0; c < image.channels; ++c) out.vectors(row, col++) = image.at(x, y, c);
        }
      }
    }
  }
  return out;
}

Image assemble_blocks(const BlockDataset& d) {
  if (d.block_w <= 0 || d.block_h <= 0 || d.channels <= 0 || d.image_width <= 0 ||
      d.image_height <= 0 || !(d.channel_max > 0.0) ||
      d.vectors.rows() != static_cast<Index>(d.blocks_x()) * d.blocks_y() ||
      d.vectors.cols() != static_cast<Index>(d.block_w) * d.block_h * d.channels) {
    throw UsageError("assemble_blocks: inconsistent geometry");
  }
  const bool eight_bit = d.channel_max == 255.0;
  Image out(d.image_width, d.image_height, d.channels);
  const int bx = d.blocks_x();
  for (Index row = 0; row < d.vectors.rows(); ++row) {
    const int i = static_cast<int>(row % bx);
    const int j = static_cast<int>(row / bx);
    Index col = 0;
    for (int dy = 0; dy < d.block_h; ++dy) {
      for (int dx = 0; dx < d.block_w; ++dx) {
        const int x = i * d.block_w + dx;
        const int y = j * d.block_h + dy;
        for (int c = 0; c < d.channels; ++c, ++col) {
          if (x >= d.image_width || y >= d.image_height) continue;
          double v = std::clamp(d.vectors(row, col), 0.0, d.channel_max);
          if (eight_bit) v = std::round(v);
          out.at(x, y, c) = v;
        }
      }
    }
  }
  return out;
}

QualityReport rmse_color(const Image& original, const Image& reconstructed) {
  if (original.width != reconstructed.width || original.height != reconstructed.height ||
      original.channels != reconstructed.channels ||
      original.pixels.size() != reconstructed.pixels.size() || original.pixels.empty()) {
    throw UsageError("rmse_color: images differ in size or channel count");
  }
  QualityReport out;
  out.per_channel_mse.assign(static_cast<std::size_t>(original.channels), 0.0);
  const std::size_t pixels = static_cast<std::size_t>(original.width) * original.height;
  for (std::size_t k = 0; k < original.pixels.size(); ++k) {
    const double d = original.pixels[k] - reconstructed.pixels[k];
    out.per_channel_mse[k % original.channels] += d * d;
  }
  double total = 0.0;
  for (double& m : out.per_channel_mse) {
    m /= static_cast<double>(pixels);
    total += m;
  }
  out.rmse = std::sqrt(total / original.channels);
  out.psnr = psnr(out.rmse);
  return out;
}

double psnr(double rmse, double peak) {
  if (!(rmse >= 0.0)) throw UsageError("psnr: rmse must be non-negative");
  if (rmse == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / rmse);
}

Matrix reconstruct_rows(const Matrix& data, const MixtureModel& model, std::vector<int>* labels) {
  if (data.cols() != model.spec.p) throw UsageError("reconstruct_rows: dimension mismatch");
  const EStepState state = responsibilities(data, model);
  const std::vector<int> cls = classify(state);
  std::vector<Matrix> projector;
  for (int i = 0; i < model.spec.g; ++i) {
    const LowRankSolver<double> solver(model.component_covariance(i));
    projector.push_back(solver.gamma() * model.component_loadings(i).transpose());
  }
  Matrix out(data.rows(), data.cols());
  for (Index j = 0; j < data.rows(); ++j) {
    const int i = cls[static_cast<std::size_t>(j)];
    const Vector centered = (data.row(j) - model.means.row(i)).transpose();
    out.row(j) = model.means.row(i) + (centered.transpose() * projector[i]);
  }
  if (labels) *labels = cls;
  return out;
}

CompressionResult compress_image(const Image& image, const ModelSpec& spec,
                                 const FitOptions& options, int block_w, int block_h) {
  BlockDataset blocks = extract_blocks(image, block_w, block_h);
  ModelSpec s = spec;
  s.p = static_cast<int>(blocks.vectors.cols());
  s.check();
  FitResult fit = aecm_fit(blocks.vectors, s, options);

  CompressionResult out;
  blocks.vectors = reconstruct_rows(blocks.vectors, fit.model, &out.labels);
  out.reconstructed = assemble_blocks(blocks);
  out.quality = rmse_color(image, out.reconstructed);
  out.model = std::move(fit.model);
  out.report = std::move(fit.report);
  return out;
}

PcaModel pca_fit(const Matrix& data, int k) {
  const Index n = data.rows();
  const Index p = data.cols();
  if (n < 2 || k < 1 || k > std::min(n - 1, p)) {
    throw UsageError("pca_fit: K must lie in [1, min(n-1, p)], got " + std::to_string(k));
  }
  PcaModel out;
  out.mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - out.mean.transpose();
  const auto scatter = ScatterMatrix<double>::from_rows(centered, Vector::Ones(n));
  auto pairs = leading_eigenpairs(scatter, k);
  out.eigenvalues = pairs.values.cwiseMax(0.0);
  out.eigenvectors = std::move(pairs.vectors);
  return out;
}

Vector pca_reconstruct(const Vector& y, const PcaModel& pca, int k) {
  if (y.size() != pca.mean.size()) throw UsageError("pca_reconstruct: length mismatch");
  if (k < 0 || k > pca.eigenvectors.cols()) throw UsageError("pca_reconstruct: K out of range");
  const auto basis = pca.eigenvectors.leftCols(k);
  return pca.mean + basis * (basis.transpose() * (y - pca.mean));
}

Vector normalize_unit(const Vector& v) {
  if (v.size() == 0) return v;
  const double lo = v.minCoeff();
  const double hi = v.maxCoeff();
  if (!(hi > lo)) return Vector::Zero(v.size());
  return (v.array() - lo) / (hi - lo);
}

double image_rmse_vector(const Vector& y, const Vector& y_hat) {
  if (y.size() != y_hat.size()) throw UsageError("image_rmse_vector: length mismatch");
  return (y - y_hat).norm();
}

namespace {

std::string column_name(Family family, DfMode mode, int g) {
  std::string prefix = "PGMM";
  if (family == Family::StudentT) prefix = mode == DfMode::Common ? "PTMM1" : "PTMM2";
  return prefix + "(g=" + std::to_string(g) + ")";
}

void score_column(FaceColumn& col, const Matrix& data) {
  col.rmse.resize(static_cast<std::size_t>(data.rows()));
  for (Index j = 0; j < data.rows(); ++j) {
    Vector y_hat = col.reconstructions.row(j).transpose();
    if (y_hat.minCoeff() < 0.0 || y_hat.maxCoeff() > 1.0) {
      y_hat = normalize_unit(y_hat);
      col.reconstructions.row(j) = y_hat.transpose();
    }
    col.rmse[static_cast<std::size_t>(j)] = image_rmse_vector(data.row(j).transpose(), y_hat);
  }
}

}  // namespace

FaceStudy face_study(const std::vector<Image>& images, const FaceStudyConfig& config) {
  if (images.size() < 2) throw UsageError("face_study: need at least two images");
  FaceStudy out;
  out.width = images.front().width;
  out.height = images.front().height;
  out.channels = images.front().channels;
  const Index n = static_cast<Index>(images.size());
  const Index p = static_cast<Index>(images.front().pixels.size());
  Matrix data(n, p);
  for (Index j = 0; j < n; ++j) {
    const Image& im = images[static_cast<std::size_t>(j)];
    if (im.width != out.width || im.height != out.height || im.channels != out.channels) {
      throw UsageError("face_study: image " + std::to_string(j) + " differs in size");
    }
    data.row(j) = Eigen::Map<const Vector>(im.pixels.data(), p).transpose() / 255.0;
  }

  FaceColumn pca_col;
  pca_col.name = "PCA(K=" + std::to_string(config.pca_k) + ")";
  const PcaModel pca = pca_fit(data, config.pca_k);
  pca_col.reconstructions.resize(n, p);
  for (Index j = 0; j < n; ++j) {
    pca_col.reconstructions.row(j) = pca_reconstruct(data.row(j).transpose(), pca, config.pca_k).transpose();
  }
  score_column(pca_col, data);
  out.columns.push_back(std::move(pca_col));

  FitOptions options = config.options;
  if (options.min_component_mass <= 0.0) options.min_component_mass = 1.0;
  for (const auto& [family, mode] : config.families) {
    for (int g : config.g_values) {
      FaceColumn col;
      col.name = column_name(family, mode, g);
      ModelSpec spec;
      spec.structure = config.structure;
      spec.family = family;
      spec.df_mode = mode;
      spec.g = g;
      spec.q = config.q;
      spec.p = static_cast<int>(p);
      try {
        spec.check();
        FitResult fit = aecm_fit(data, spec, options);
        col.reconstructions = reconstruct_rows(data, fit.model);
        col.report = std::move(fit.report);
        score_column(col, data);
      } catch (const NumericError& e) {
        col.ok = false;
        col.error = e.what();
      } catch (const DomainError& e) {
        col.ok = false;
        col.error = e.what();
      }
      out.columns.push_back(std::move(col));
    }
  }
  return out;
}

}  // namespace ptmm
