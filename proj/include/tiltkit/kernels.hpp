#pragma once

// Data-parallel kernels. Each has an OpenMP path and a serial reference;
// both reduce in the same fixed order so results are bit-identical.

#include "tiltkit/density.hpp"

#include <cstdint>
#include <functional>

namespace tiltkit::kernels {

using PointFn = std::function<void(const double* x, double* out)>;

constexpr std::size_t kChunk = 1024;
constexpr std::size_t kSampleChunk = 4096;

// out[i*m .. i*m+m) = f(xs + i*d)
void eval_points(const double* xs, int d, std::size_t n, const PointFn& f, int m, double* out, bool parallel);

// out[0..m) = sum_i w[i] * f(xs + i*d), chunked fixed-order reduction
void weighted_sum(const double* xs, int d, const double* w, std::size_t n, const PointFn& f, int m,
                  double* out, bool parallel);

// n draws into out (row-major n x d); chunk c uses its own generator seeded by (seed, c)
void draw_points(const Density& dens, std::size_t n, std::uint64_t seed, double* out, bool parallel);

}  // namespace tiltkit::kernels
