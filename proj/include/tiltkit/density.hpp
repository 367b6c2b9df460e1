#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace tiltkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Interval {
  double lo = -kInf;
  double hi = kInf;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

enum class DensityKind {
  Exponential,
  Pareto,
  Lognormal,
  Gamma,
  StudentT,
  Uniform,
  GaussianND,
  LognormalND,
  Custom,
};

const char* to_string(DensityKind k);

using PdfFn = std::function<double(const double*)>;

// Where to put initial quadrature breakpoints along one coordinate,
// possibly conditional on the preceding coordinates.
struct LineHint {
  Interval range;
  std::vector<double> mesh;
};

class Density {
 public:
  static Density exponential(double rate);
  static Density pareto(double alpha);  // (a-1)/(1+x)^a on [0, inf)
  static Density lognormal(double mu, double sigma2);
  static Density gamma(double shape, double rate);
  static Density student_t(double dof, double loc = 0.0, double scale = 1.0);
  static Density uniform(double a, double b);
  static Density gaussian(double mean, double var);
  static Density gaussian_nd(const Vec& mean, const Mat& cov);
  static Density lognormal_nd(const Vec& mu, const Mat& cov);
  // mesh_hint: optional breakpoints per coordinate, used only to seed quadrature
  static Density custom(PdfFn pdf, std::vector<Interval> support,
                        std::vector<std::vector<double>> mesh_hint = {});

  DensityKind kind() const;
  int dim() const;
  const std::vector<Interval>& support() const;

  double pdf(const double* x) const;
  double pdf(double x) const { return pdf(&x); }
  double log_pdf(const double* x) const;  // no underflow for the gaussian kinds

  // 1-D analytic kinds only
  bool has_quantile() const;
  double cdf(double x) const;
  double quantile(double p) const;
  std::optional<double> analytic_mean() const;
  double analytic_variance() const;

  // parameters of gaussian_nd / lognormal_nd (the underlying normal)
  const Vec& mean_vector() const;
  const Mat& cov_matrix() const;
  bool degenerate() const;  // singular covariance: no pdf
  double param(int i) const;

  LineHint line(int coord, const double* prefix) const;

  bool can_sample() const;
  void draw(std::mt19937_64& rng, double* out) const;

  std::string describe() const;

  struct Impl;

 private:
  explicit Density(std::shared_ptr<const Impl> p) : p_(std::move(p)) {}
  std::shared_ptr<const Impl> p_;
};

}  // namespace tiltkit
