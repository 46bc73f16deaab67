#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fkb/rng.hpp"

namespace fkb::testing {

inline Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

// Uniform point on the simplex: normalized exponential spacings.
inline Eigen::VectorXd simplex_point(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = -std::log1p(-rng.uniform());
  return v / v.sum();
}

// Treatment vector with at least one unit in each arm.
inline Eigen::VectorXi random_assignment(Rng& rng, Eigen::Index n, double p_treated = 0.4) {
  Eigen::VectorXi z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.uniform() < p_treated ? 1 : 0;
  z[0] = 1;
  z[n - 1] = 0;
  return z;
}

inline Eigen::MatrixXd random_psd(Rng& rng, Eigen::Index n, Eigen::Index rank) {
  const Eigen::MatrixXd B = normal_matrix(rng, n, rank);
  return B * B.transpose();
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("fkb_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fkb::testing
