#include <cmath>

#include "fkb/error.hpp"
#include "fkb/kernel.hpp"

namespace fkb {

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::RawOnly: return "raw";
    case FeatureMode::KernelOnly: return "only";
    case FeatureMode::KernelPlusRaw: return "plus";
  }
  return "?";
}

namespace {

Eigen::MatrixXd raw_block(const Eigen::MatrixXd& X) {
  if (X.cols() < 1) throw InvalidArgument("raw feature block needs at least one covariate");
  Eigen::MatrixXd S = standardize_columns(X);  // throws naming the zero-variance column
  S /= std::sqrt(static_cast<double>(X.cols()));
  return S;
}

Eigen::MatrixXd kernel_block(const SpectralFeatures& spectral) {
  if (spectral.r < 1 || spectral.Phi.cols() < 1) throw InvalidArgument("kernel feature block has r = 0");
  Eigen::MatrixXd P = spectral.Phi.rowwise() - spectral.Phi.colwise().mean();
  const double total = P.colwise().squaredNorm().sum() / static_cast<double>(P.rows());
  if (!(total > 0.0)) throw InvalidArgument("kernel feature block has zero total variance");
  P /= std::sqrt(total);
  return P;
}

}  // namespace

FeatureMatrix assemble_features(const Eigen::MatrixXd& X_raw, const std::optional<SpectralFeatures>& spectral,
                                FeatureMode mode) {
  FeatureMatrix out;
  out.mode = mode;
  if (mode == FeatureMode::RawOnly) {
    if (spectral) throw InvalidArgument("assemble_features: RawOnly mode takes no kernel features");
    out.Phi = raw_block(X_raw);
    out.raw = {0, out.Phi.cols()};
    return out;
  }
  if (!spectral) throw InvalidArgument("assemble_features: kernel mode requires spectral features");
  if (spectral->Phi.rows() != X_raw.rows() && mode == FeatureMode::KernelPlusRaw)
    throw DimensionMismatch("assemble_features: raw and kernel blocks disagree on n");
  const Eigen::MatrixXd kb = kernel_block(*spectral);
  if (mode == FeatureMode::KernelOnly) {
    out.Phi = kb;
    out.kernel = {0, kb.cols()};
    return out;
  }
  const Eigen::MatrixXd rb = raw_block(X_raw);
  out.Phi.resize(rb.rows(), rb.cols() + kb.cols());
  out.Phi << rb, kb;
  out.raw = {0, rb.cols()};
  out.kernel = {rb.cols(), kb.cols()};
  return out;
}

}  // namespace fkb
