#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ptmm/aecm.hpp"

namespace ptmm {

/// Row-major, channel-interleaved image with real-valued samples.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// PNG (8-bit gray/RGB, alpha dropped) or binary PGM (P5) / PPM (P6),
/// detected from the file signature. Samples are in [0, 255].
Image read_image(const std::filesystem::path& path);

/// Format from the extension (.png, .pgm, .ppm). Samples are clamped to
/// [0, 255] and rounded.
void write_image(const std::filesystem::path& path, const Image& image);

/// Vectorized non-overlapping blocks. Each vector lists the block's pixels in
/// row-major order with channels interleaved; blocks are scanned row-major.
struct BlockDataset {
  Matrix vectors;  // n×p, p = block_w·block_h·channels
  int image_width = 0;
  int image_height = 0;
  int block_w = 4;
  int block_h = 4;
  int channels = 3;
  double channel_max = 255.0;  // channel range is [0, channel_max]

  int blocks_x() const { return (image_width + block_w - 1) / block_w; }
  int blocks_y() const { return (image_height + block_h - 1) / block_h; }
};

/// Images whose size is not a multiple of the block are replicate-padded on
/// the right and bottom.
BlockDataset extract_blocks(const Image& image, int block_w, int block_h,
                            double channel_max = 255.0);

/// Inverse of extract_blocks: padding is cropped, values clamped to the
/// channel range, and rounded when the range is [0, 255].
Image assemble_blocks(const BlockDataset& dataset);

struct QualityReport {
  double rmse = 0.0;
  double psnr = 0.0;  // +infinity when rmse == 0
  std::vector<double> per_channel_mse;
};

/// RMSE = √(mean of the per-channel MSEs); PSNR from it.
QualityReport rmse_color(const Image& original, const Image& reconstructed);

/// 20·log10(peak / rmse); +infinity for rmse == 0.
double psnr(double rmse, double peak = 255.0);

/// Mean-plus-loadings reconstruction ŷ = μ_i + B_iΓ_iᵀ(y − μ_i), where i is
/// the maximum-posterior component of each row.
Matrix reconstruct_rows(const Matrix& data, const MixtureModel& model,
                        std::vector<int>* labels = nullptr);

struct CompressionResult {
  Image reconstructed;
  MixtureModel model;
  FitReport report;
  QualityReport quality;
  std::vector<int> labels;
};

CompressionResult compress_image(const Image& image, const ModelSpec& spec,
                                 const FitOptions& options, int block_w = 4, int block_h = 4);

struct PcaModel {
  Vector mean;          // ȳ
  Matrix eigenvectors;  // p×K, orthonormal
  Vector eigenvalues;   // descending
};

/// Leading K eigenpairs of the total scatter Σ_j (y_j − ȳ)(y_j − ȳ)ᵀ.
/// Uses the n×n Gram matrix when p > n.
PcaModel pca_fit(const Matrix& data, int k);

/// ȳ + Σ_{k<K} e_kᵀ(y − ȳ) e_k.
Vector pca_reconstruct(const Vector& y, const PcaModel& pca, int k);

/// Min–max rescale to [0, 1]; a constant vector maps to zeros.
Vector normalize_unit(const Vector& v);

/// Unaveraged Euclidean norm ‖y − ŷ‖.
double image_rmse_vector(const Vector& y, const Vector& y_hat);

// ---------------------------------------------------------------------------
// Face reconstruction study: PCA plus CUU mixtures on vectorized images.

struct FaceStudyConfig {
  int pca_k = 5;
  int q = 5;
  std::vector<int> g_values{1, 2, 3};
  /// Each entry is a family plus df mode; Gaussian ignores the mode.
  std::vector<std::pair<Family, DfMode>> families{{Family::Gaussian, DfMode::Common},
                                                  {Family::StudentT, DfMode::Common}};
  CovStructure structure = CovStructure::CUU;
  FitOptions options;
};

struct FaceColumn {
  std::string name;
  bool ok = true;
  std::string error;
  Matrix reconstructions;     // n×p, after normalization, on [0, 1]
  std::vector<double> rmse;   // per image
  std::optional<FitReport> report;
};

struct FaceStudy {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<FaceColumn> columns;
};

/// Images are scaled to [0, 1]. Each model's reconstructions are min–max
/// normalized when they leave [0, 1], then scored with image_rmse_vector.
FaceStudy face_study(const std::vector<Image>& images, const FaceStudyConfig& config);

}  // namespace ptmm
