#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "fkb/error.hpp"
#include "fkb/kernel.hpp"

namespace fkb {

SpectralDecomposition decompose(const KernelMatrix& kernel) {
  const Eigen::Index n = kernel.size();
  if (kernel.K.cols() != n) throw DimensionMismatch("decompose: kernel matrix is not square");
  if (n == 0) throw InvalidArgument("decompose: empty kernel matrix");
  if (!kernel.K.allFinite()) throw InvalidArgument("decompose: kernel matrix has non-finite entries");
  const double asym = (kernel.K - kernel.K.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) throw InvalidArgument("decompose: kernel matrix is not symmetric (max |K - K'| = " +
                                          std::to_string(asym) + ")");

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(kernel.K);
  if (solver.info() != Eigen::Success) throw SolverError("symmetric eigendecomposition did not converge");

  SpectralDecomposition out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

SpectralFeatures truncate(const SpectralDecomposition& decomposition, Eigen::Index r) {
  if (r < 1) throw InvalidArgument("spectral truncation needs r >= 1");
  const auto& ev = decomposition.eigenvalues;
  const double top = ev.size() > 0 ? ev[0] : 0.0;
  Eigen::Index usable = 0;
  if (top > 0.0)
    while (usable < ev.size() && ev[usable] > 1e-10 * top) ++usable;
  if (usable == 0) throw InvalidArgument("spectral truncation: kernel matrix has no positive eigenvalues");

  SpectralFeatures out;
  out.r = std::min(r, usable);
  out.sigmas = ev.head(out.r).cwiseMax(0.0).cwiseSqrt();
  out.Phi = decomposition.eigenvectors.leftCols(out.r) * out.sigmas.asDiagonal();
  return out;
}

SpectralFeatures spectral_features(const KernelMatrix& kernel, Eigen::Index r) {
  return truncate(decompose(kernel), r);
}

}  // namespace fkb
