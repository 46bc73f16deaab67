#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "fkb/forest.hpp"

namespace fkb {

inline constexpr Eigen::Index kMaxKernelRows = 20000;

enum class KernelKind { Forest, Gaussian, Polynomial, Custom };

/// Dense symmetric n x n similarity matrix.
struct KernelMatrix {
  Eigen::MatrixXd K;
  KernelKind kind = KernelKind::Custom;

  Eigen::Index size() const { return K.rows(); }
};

/// K(i, j) = fraction of the ensemble's trees in which rows i and j share a leaf.
KernelMatrix forest_kernel(const EnsembleModel& model, const Eigen::MatrixXd& X);

/// exp(-||x_i - x_j||^2 / bandwidth) on standardized covariates.
KernelMatrix gaussian_kernel(const Eigen::MatrixXd& X, double bandwidth);

/// (x_i' Sigma x_j + c)^degree.
KernelMatrix polynomial_kernel(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Sigma, double c, int degree);

/// Columns centered to mean 0 and scaled to unit (population) variance.
/// Throws on a zero-variance column.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& X);

/// Bandwidth maximizing the variance of the off-diagonal Gaussian kernel
/// entries over a log-spaced grid of `grid_size` points in [lo, hi].
double max_variance_bandwidth(const Eigen::MatrixXd& X_std, double lo = 0.1, double hi = 1000.0,
                              int grid_size = 41);

/// Full eigendecomposition, eigenvalues sorted descending.
struct SpectralDecomposition {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;  // column k pairs with eigenvalues[k]
};

SpectralDecomposition decompose(const KernelMatrix& kernel);

/// Top-r principal components scaled by their singular values.
struct SpectralFeatures {
  Eigen::MatrixXd Phi;     // n x r, column k = sigma_k * U_k
  Eigen::VectorXd sigmas;  // descending
  Eigen::Index r = 0;
};

/// r is capped at the number of eigenvalues above 1e-10 * (largest eigenvalue).
SpectralFeatures truncate(const SpectralDecomposition& decomposition, Eigen::Index r);
SpectralFeatures spectral_features(const KernelMatrix& kernel, Eigen::Index r);

enum class FeatureMode { RawOnly, KernelOnly, KernelPlusRaw };

struct BlockSpan {
  Eigen::Index offset = 0;
  Eigen::Index count = 0;
};

/// Balancing features with each block's column variances summing to one.
struct FeatureMatrix {
  Eigen::MatrixXd Phi;
  BlockSpan raw;
  BlockSpan kernel;
  FeatureMode mode = FeatureMode::RawOnly;
};

/// Raw block: standardized to mean 0, variance 1/p per column. Kernel block:
/// centered principal components divided by the square root of their total
/// variance, so ratios between components are preserved.
FeatureMatrix assemble_features(const Eigen::MatrixXd& X_raw, const std::optional<SpectralFeatures>& spectral,
                                FeatureMode mode);

/// Squared RKHS distance between the weighted control mean embedding and the
/// treated mean embedding: (a0 - a1)' K (a0 - a1), a0 = (1 - Z) w, a1 = Z / n1.
double kernel_imbalance(const KernelMatrix& kernel, const Eigen::VectorXd& w, const Eigen::VectorXi& Z);

/// Population variance of each column.
Eigen::VectorXd column_variances(const Eigen::MatrixXd& M);

std::string to_string(FeatureMode mode);

}  // namespace fkb
