#pragma once

#include <bit>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "xmrc/core.hpp"

namespace xmrc {

enum class FrameKind { Identity, UndecimatedHaar };

struct FrameSpec {
  FrameKind kind = FrameKind::UndecimatedHaar;
  int levels = 3;

  std::size_t subband_count() const {
    return kind == FrameKind::Identity ? 1 : static_cast<std::size_t>(3 * levels + 1);
  }

  friend bool operator==(const FrameSpec&, const FrameSpec&) = default;
};

/// Deepest undecimated Haar decomposition a grid supports: floor(log2(min(ny, nx))).
inline int max_frame_levels(Shape s) {
  const std::size_t m = std::min(s.ny, s.nx);
  return m == 0 ? 0 : static_cast<int>(std::bit_width(m)) - 1;
}

inline void check_frame(const FrameSpec& frame, Shape s) {
  if (frame.kind == FrameKind::Identity) return;
  if (frame.levels < 1 || frame.levels > max_frame_levels(s)) {
    raise(Errc::LevelsTooDeep, "haar levels " + std::to_string(frame.levels) + " not in [1, " +
                                   std::to_string(max_frame_levels(s)) + "] for " + to_string(s));
  }
}

/// Coefficients of a frame analysis: one (ny, nx) complex array per subband.
/// For undecimated Haar the order is [HL, LH, HH] per level, finest first,
/// followed by the final approximation band.
struct FrameCoefficients {
  FrameSpec frame;
  Shape shape;
  std::vector<std::vector<cplx>> bands;

  std::size_t nb() const noexcept { return bands.size(); }
};

namespace detail {

// One-dimensional two-tap filters at stride `step`, periodic. Along rows
// (axis 0) or columns (axis 1). Low-pass (1/2, 1/2), high-pass (1/2, -1/2);
// the transposed versions look backwards.
enum class Tap { Low, High };

inline void filter_axis(Shape s, std::span<const cplx> in, std::span<cplx> out, int axis,
                        std::size_t step, Tap tap, bool transpose) {
  const double sign = tap == Tap::Low ? 0.5 : -0.5;
  if (axis == 0) {
    const std::size_t shift = (transpose ? s.ny - step % s.ny : step) % s.ny;
    for (std::size_t r = 0; r < s.ny; ++r) {
      const cplx* a = &in[r * s.nx];
      const cplx* b = &in[((r + shift) % s.ny) * s.nx];
      cplx* o = &out[r * s.nx];
      for (std::size_t c = 0; c < s.nx; ++c) o[c] = 0.5 * a[c] + sign * b[c];
    }
  } else {
    const std::size_t shift = (transpose ? s.nx - step % s.nx : step) % s.nx;
    for (std::size_t r = 0; r < s.ny; ++r) {
      const cplx* a = &in[r * s.nx];
      cplx* o = &out[r * s.nx];
      for (std::size_t c = 0; c < s.nx; ++c) {
        std::size_t cc = c + shift;
        if (cc >= s.nx) cc -= s.nx;
        o[c] = 0.5 * a[c] + sign * a[cc];
      }
    }
  }
}

inline void haar_analysis(Shape s, int levels, std::span<const cplx> img,
                          std::vector<std::vector<cplx>>& bands) {
  const std::size_t n = s.size();
  bands.resize(3 * static_cast<std::size_t>(levels) + 1);
  for (auto& b : bands) b.resize(n);
  std::vector<cplx> approx(img.begin(), img.end());
  std::vector<cplx> ly(n), hy(n);
  for (int l = 0; l < levels; ++l) {
    const std::size_t step = std::size_t{1} << l;
    filter_axis(s, approx, ly, 0, step, Tap::Low, false);
    filter_axis(s, approx, hy, 0, step, Tap::High, false);
    auto& hl = bands[3 * l];
    auto& lh = bands[3 * l + 1];
    auto& hh = bands[3 * l + 2];
    filter_axis(s, hy, hl, 1, step, Tap::Low, false);
    filter_axis(s, ly, lh, 1, step, Tap::High, false);
    filter_axis(s, hy, hh, 1, step, Tap::High, false);
    filter_axis(s, ly, approx, 1, step, Tap::Low, false);
  }
  bands.back() = std::move(approx);
}

inline void haar_synthesis(Shape s, int levels, const std::vector<std::vector<cplx>>& bands,
                           std::span<cplx> img) {
  const std::size_t n = s.size();
  std::vector<cplx> approx = bands.back();
  std::vector<cplx> ly(n), hy(n), t(n);
  for (int l = levels - 1; l >= 0; --l) {
    const std::size_t step = std::size_t{1} << l;
    const auto& hl = bands[3 * l];
    const auto& lh = bands[3 * l + 1];
    const auto& hh = bands[3 * l + 2];
    filter_axis(s, approx, ly, 1, step, Tap::Low, true);
    filter_axis(s, lh, t, 1, step, Tap::High, true);
    for (std::size_t p = 0; p < n; ++p) ly[p] += t[p];
    filter_axis(s, hl, hy, 1, step, Tap::Low, true);
    filter_axis(s, hh, t, 1, step, Tap::High, true);
    for (std::size_t p = 0; p < n; ++p) hy[p] += t[p];
    filter_axis(s, ly, approx, 0, step, Tap::Low, true);
    filter_axis(s, hy, t, 0, step, Tap::High, true);
    for (std::size_t p = 0; p < n; ++p) approx[p] += t[p];
  }
  std::copy(approx.begin(), approx.end(), img.begin());
}

inline void analysis(const FrameSpec& frame, Shape s, std::span<const cplx> img,
                     std::vector<std::vector<cplx>>& bands) {
  if (frame.kind == FrameKind::Identity) {
    bands.resize(1);
    bands[0].assign(img.begin(), img.end());
  } else {
    haar_analysis(s, frame.levels, img, bands);
  }
}

inline void synthesis(const FrameSpec& frame, Shape s, const std::vector<std::vector<cplx>>& bands,
                      std::span<cplx> img) {
  if (frame.kind == FrameKind::Identity) {
    std::copy(bands[0].begin(), bands[0].end(), img.begin());
  } else {
    haar_synthesis(s, frame.levels, bands, img);
  }
}

inline void shrink(std::vector<cplx>& band, double tau) {
  for (auto& z : band) {
    const double m = std::abs(z);
    z = m > tau ? z * ((m - tau) / m) : cplx{};
  }
}

inline double l1_norm(const std::vector<std::vector<cplx>>& bands) {
  double s = 0.0;
  for (const auto& b : bands)
    for (const auto& z : b) s += std::abs(z);
  return s;
}

inline double max_abs(const std::vector<std::vector<cplx>>& bands) {
  double m = 0.0;
  for (const auto& b : bands)
    for (const auto& z : b) m = std::max(m, std::abs(z));
  return m;
}

}  // namespace detail

/// Tight-frame analysis Psi x. Undecimated Haar is an a-trous filter bank with
/// periodic boundaries; its filters are upsampled by 2^(level-1).
inline FrameCoefficients frame_analysis(const ComplexImage& img, const FrameSpec& frame) {
  check_frame(frame, img.shape());
  FrameCoefficients out{frame, img.shape(), {}};
  detail::analysis(frame, img.shape(), img.data(), out.bands);
  return out;
}

/// Adjoint of frame_analysis; also its left inverse (Psi^H Psi = I).
inline ComplexImage frame_synthesis(const FrameCoefficients& coeffs) {
  check_frame(coeffs.frame, coeffs.shape);
  if (coeffs.nb() != coeffs.frame.subband_count()) {
    raise(Errc::SubbandCountMismatch, "expected " + std::to_string(coeffs.frame.subband_count()) +
                                          " subbands, got " + std::to_string(coeffs.nb()));
  }
  for (const auto& b : coeffs.bands) {
    if (b.size() != coeffs.shape.size()) raise(Errc::ShapeMismatch, "subband size mismatch");
  }
  std::vector<cplx> out(coeffs.shape.size());
  detail::synthesis(coeffs.frame, coeffs.shape, coeffs.bands, out);
  return ComplexImage(coeffs.shape, std::move(out));
}

/// Complex soft-thresholding z -> z * max(|z| - tau, 0) / |z|.
inline FrameCoefficients soft_threshold(FrameCoefficients coeffs, double tau) {
  if (!(tau >= 0.0)) raise(Errc::NegativeThreshold, "threshold must be >= 0");
  if (tau == 0.0) return coeffs;
  for (auto& b : coeffs.bands) detail::shrink(b, tau);
  return coeffs;
}

}  // namespace xmrc
