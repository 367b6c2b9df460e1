#pragma once

#include "tiltkit/density.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace tiltkit {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Weighted point set; rows of `points` are the points.
class SampleCloud {
 public:
  SampleCloud() = default;
  SampleCloud(RowMat points, Vec weights);
  static SampleCloud equal_weights(RowMat points);

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const RowMat& points() const { return points_; }
  const Vec& weights() const { return weights_; }
  const double* point(std::size_t i) const { return points_.data() + i * points_.cols(); }

  Vec mean() const;

  void write_csv(const std::string& path) const;
  static SampleCloud read_csv(const std::string& path);

 private:
  RowMat points_;
  Vec weights_;
};

SampleCloud sample(const Density& d, std::size_t n, std::uint64_t seed, bool parallel = true);

using ScalarFn = std::function<double(const double*)>;

SampleCloud reweight(const SampleCloud& cloud, const ScalarFn& ratio, bool parallel = true);

}  // namespace tiltkit
