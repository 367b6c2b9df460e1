#include "tiltkit/kernels.hpp"

#include <exception>
#include <random>
#include <vector>

namespace tiltkit::kernels {

namespace {

// runs body(c) for c in [0, nchunks); first failing chunk (by index) is rethrown
template <class Body>
void for_chunks(std::size_t nchunks, bool parallel, Body&& body) {
  std::vector<std::exception_ptr> errs(nchunks);
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(nchunks); ++c) {
      try {
        body(static_cast<std::size_t>(c));
      } catch (...) {
        errs[c] = std::current_exception();
      }
    }
  } else {
    for (std::size_t c = 0; c < nchunks; ++c) {
      try {
        body(c);
      } catch (...) {
        errs[c] = std::current_exception();
      }
    }
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void eval_points(const double* xs, int d, std::size_t n, const PointFn& f, int m, double* out, bool parallel) {
  const std::size_t nchunks = (n + kChunk - 1) / kChunk;
  for_chunks(nchunks, parallel, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(n, lo + kChunk);
    for (std::size_t i = lo; i < hi; ++i) f(xs + i * d, out + i * m);
  });
}

void weighted_sum(const double* xs, int d, const double* w, std::size_t n, const PointFn& f, int m,
                  double* out, bool parallel) {
  const std::size_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(nchunks * m, 0.0);
  for_chunks(nchunks, parallel, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(n, lo + kChunk);
    std::vector<double> buf(m);
    double* acc = partial.data() + c * m;
    for (std::size_t i = lo; i < hi; ++i) {
      if (w[i] == 0) continue;
      f(xs + i * d, buf.data());
      for (int j = 0; j < m; ++j) acc[j] += w[i] * buf[j];
    }
  });
  for (int j = 0; j < m; ++j) out[j] = 0;
  for (std::size_t c = 0; c < nchunks; ++c)
    for (int j = 0; j < m; ++j) out[j] += partial[c * m + j];
}

void draw_points(const Density& dens, std::size_t n, std::uint64_t seed, double* out, bool parallel) {
  const int d = dens.dim();
  const std::size_t nchunks = (n + kSampleChunk - 1) / kSampleChunk;
  for_chunks(nchunks, parallel, [&](std::size_t c) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
    std::mt19937_64 rng(seq);
    const std::size_t lo = c * kSampleChunk, hi = std::min(n, lo + kSampleChunk);
    for (std::size_t i = lo; i < hi; ++i) dens.draw(rng, out + i * d);
  });
}

}  // namespace tiltkit::kernels
