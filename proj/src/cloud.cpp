#include "tiltkit/cloud.hpp"

#include "tiltkit/error.hpp"
#include "tiltkit/kernels.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tiltkit {

SampleCloud::SampleCloud(RowMat points, Vec weights) : points_(std::move(points)), weights_(std::move(weights)) {
  require(points_.rows() == weights_.size(), "SampleCloud: points/weights length mismatch");
  require(points_.rows() >= 1 && points_.cols() >= 1, "SampleCloud: empty");
  require(points_.allFinite(), "SampleCloud: non-finite point");
  // Kahan: a naive sum of n equal weights drifts by ~n*eps
  double s = 0, comp = 0;
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    require(std::isfinite(weights_[i]) && weights_[i] >= 0, "SampleCloud: negative weight");
    const double y = weights_[i] - comp;
    const double t = s + y;
    comp = (t - s) - y;
    s = t;
  }
  require(std::abs(s - 1) <= 1e-12, "SampleCloud: weights must sum to 1");
}

SampleCloud SampleCloud::equal_weights(RowMat points) {
  const auto n = points.rows();
  require(n >= 1, "SampleCloud: empty");
  return SampleCloud(std::move(points), Vec::Constant(n, 1.0 / static_cast<double>(n)));
}

Vec SampleCloud::mean() const { return points_.transpose() * weights_; }

void SampleCloud::write_csv(const std::string& path) const {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot open " + path);
  for (int j = 0; j < dim(); ++j) os << "x" << (j + 1) << ",";
  os << "weight\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < size(); ++i) {
    for (int j = 0; j < dim(); ++j) os << points_(i, j) << ",";
    os << weights_[i] << "\n";
  }
}

SampleCloud SampleCloud::read_csv(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open " + path);
  std::string line;
  std::getline(is, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    require(row.size() >= 2, "cloud csv: need at least one coordinate and a weight");
    if (!rows.empty()) require(row.size() == rows.front().size(), "cloud csv: ragged rows");
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "cloud csv: no rows");
  const int d = static_cast<int>(rows.front().size()) - 1;
  RowMat pts(rows.size(), d);
  Vec w(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < d; ++j) pts(i, j) = rows[i][j];
    w[i] = rows[i][d];
  }
  return SampleCloud(std::move(pts), std::move(w));
}

SampleCloud sample(const Density& d, std::size_t n, std::uint64_t seed, bool parallel) {
  require(n >= 1, "sample: n must be >= 1");
  require(d.can_sample(), "sample: unsupported kind " + std::string(to_string(d.kind())));
  RowMat pts(n, d.dim());
  kernels::draw_points(d, n, seed, pts.data(), parallel);
  return SampleCloud::equal_weights(std::move(pts));
}

SampleCloud reweight(const SampleCloud& cloud, const ScalarFn& ratio, bool parallel) {
  const std::size_t n = cloud.size();
  Vec r(n);
  kernels::eval_points(cloud.points().data(), cloud.dim(), n,
                       [&](const double* x, double* out) { out[0] = ratio(x); }, 1, r.data(), parallel);
  for (std::size_t i = 0; i < n; ++i) require(std::isfinite(r[i]) && r[i] >= 0, "reweight: ratio must be >= 0");
  // fixed-order sum, same grouping as the kernels
  double s = 0;
  for (std::size_t c = 0; c * kernels::kChunk < n; ++c) {
    double part = 0;
    for (std::size_t i = c * kernels::kChunk; i < std::min(n, (c + 1) * kernels::kChunk); ++i)
      part += cloud.weights()[i] * r[i];
    s += part;
  }
  if (!(s > 0)) fail(ErrorCode::DegenerateWeights, "reweight: sum of w*ratio is zero");
  Vec w = cloud.weights().cwiseProduct(r) / s;
  return SampleCloud(cloud.points(), std::move(w));
}

}  // namespace tiltkit
