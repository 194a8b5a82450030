#pragma once

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include "xmrc/core.hpp"

namespace xmrc {

namespace detail {

/// FFTW planning is not thread-safe; execution on fresh arrays is. Plans are
/// created once per (ny, nx, direction) with FFTW_ESTIMATE | FFTW_UNALIGNED
/// so that results do not depend on timing or buffer alignment.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans plans;
    return plans;
  }

  fftw_plan get(Shape s, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(s.ny, s.nx, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<cplx> scratch(s.size());
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan p = fftw_plan_dft_2d(static_cast<int>(s.ny), static_cast<int>(s.nx), buf, buf, sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, p);
    return p;
  }

  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;

 private:
  FftPlans() = default;
  ~FftPlans() {
    for (auto& [key, p] : plans_) fftw_destroy_plan(p);
  }

  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

/// Centered unitary DFT: out = shift(FFT(unshift(in))) / sqrt(N), where
/// shift moves index 0 to floor(n/2). `in` and `out` may not alias.
inline void centered_dft(Shape s, std::span<const cplx> in, std::span<cplx> out, int sign) {
  const std::size_t hy = s.ny / 2;
  const std::size_t hx = s.nx / 2;
  for (std::size_t r = 0; r < s.ny; ++r) {
    const std::size_t src_r = (r + hy) % s.ny;
    for (std::size_t c = 0; c < s.nx; ++c) {
      out[r * s.nx + c] = in[src_r * s.nx + (c + hx) % s.nx];
    }
  }
  auto* buf = reinterpret_cast<fftw_complex*>(out.data());
  fftw_execute_dft(FftPlans::instance().get(s, sign), buf, buf);

  // undo the shift: result[(i + h) % n] = fft[i]; done via a scratch row swap
  std::vector<cplx> tmp(out.begin(), out.end());
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.size()));
  for (std::size_t r = 0; r < s.ny; ++r) {
    const std::size_t dst_r = (r + hy) % s.ny;
    for (std::size_t c = 0; c < s.nx; ++c) {
      out[dst_r * s.nx + (c + hx) % s.nx] = tmp[r * s.nx + c] * scale;
    }
  }
}

inline void dft2(Shape s, std::span<const cplx> in, std::span<cplx> out) {
  centered_dft(s, in, out, FFTW_FORWARD);
}

inline void idft2(Shape s, std::span<const cplx> in, std::span<cplx> out) {
  centered_dft(s, in, out, FFTW_BACKWARD);
}

}  // namespace detail

/// Unitary, centered 2D DFT (DC at (ny/2, nx/2)).
inline KSpaceGrid dft2_centered(const ComplexImage& img) {
  std::vector<cplx> out(img.size());
  detail::dft2(img.shape(), img.data(), out);
  return KSpaceGrid(img.shape(), std::move(out));
}

/// Inverse and adjoint of dft2_centered.
inline ComplexImage idft2_centered(const KSpaceGrid& ksp) {
  std::vector<cplx> out(ksp.size());
  detail::idft2(ksp.shape(), ksp.data(), out);
  return ComplexImage(ksp.shape(), std::move(out));
}

}  // namespace xmrc
