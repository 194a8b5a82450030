#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "xmrc/core.hpp"

namespace xmrc {

enum class MaskKind { PseudoRadial, CartesianLines, Full };

struct MaskParams {
  MaskKind kind = MaskKind::PseudoRadial;
  double target_rate = 0.30;
  double center_fraction = 0.0;  // cartesian only
  std::uint64_t seed = 0;
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits of a std::mt19937_64 draw.
/// The engine's output sequence is fixed by the standard; std distributions
/// are not, so they are avoided.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline void check_rate(double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    raise(Errc::InvalidParams, "target rate must lie in (0, 1], got " + std::to_string(rate));
  }
}

// Digitized line through (cy, cx) at angle theta (measured from +x, y up).
// Near-horizontal lines take one pixel per column, near-vertical one per row;
// offsets are rounded half away from zero so the line is point-symmetric.
inline void draw_center_line(Shape s, double theta, std::vector<std::uint8_t>& cells) {
  const auto cy = static_cast<long>(s.ny / 2);
  const auto cx = static_cast<long>(s.nx / 2);
  const auto ny = static_cast<long>(s.ny);
  const auto nx = static_cast<long>(s.nx);
  const double c = std::cos(theta);
  const double sn = std::sin(theta);
  if (std::abs(c) >= std::abs(sn)) {
    const double slope = sn / c;
    for (long col = 0; col < nx; ++col) {
      const long dx = col - cx;
      const long dy = std::lround(static_cast<double>(dx) * slope);
      const long row = cy - dy;
      if (row >= 0 && row < ny) cells[row * nx + col] = 1;
    }
  } else {
    const double slope = c / sn;
    for (long row = 0; row < ny; ++row) {
      const long dy = cy - row;
      const long dx = std::lround(static_cast<double>(dy) * slope);
      const long col = cx + dx;
      if (col >= 0 && col < nx) cells[row * nx + col] = 1;
    }
  }
}

}  // namespace detail

/// Union of R digitized lines through the center at angles i*pi/R, with R the
/// smallest count whose union reaches the target rate.
inline SamplingMask pseudo_radial_mask(Shape s, const MaskParams& params) {
  detail::check_grid_shape(s);
  detail::check_rate(params.target_rate);
  if (params.target_rate >= 1.0) return SamplingMask::full(s);

  const std::size_t max_lines = 8 * std::max(s.ny, s.nx);
  const auto needed = static_cast<std::size_t>(std::ceil(params.target_rate * static_cast<double>(s.size()) - 1e-9));
  std::vector<std::uint8_t> cells(s.size());
  for (std::size_t lines = 1; lines <= max_lines; ++lines) {
    std::fill(cells.begin(), cells.end(), 0);
    cells[(s.ny / 2) * s.nx + s.nx / 2] = 1;
    for (std::size_t i = 0; i < lines; ++i) {
      const double theta = static_cast<double>(i) * std::numbers::pi / static_cast<double>(lines);
      detail::draw_center_line(s, theta, cells);
    }
    const auto count = static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1));
    if (count >= needed) return SamplingMask(s, std::move(cells));
  }
  raise(Errc::UnreachableRate, "no line count up to " + std::to_string(max_lines) + " reaches rate " +
                                   std::to_string(params.target_rate));
}

/// Whole phase-encode rows: a guaranteed central block plus rows drawn
/// without replacement with probability proportional to (1 - |d|/(ny/2))^4.
inline SamplingMask cartesian_mask(Shape s, const MaskParams& params) {
  detail::check_grid_shape(s);
  detail::check_rate(params.target_rate);
  if (!(params.center_fraction >= 0.0 && params.center_fraction < 1.0)) {
    raise(Errc::InvalidParams, "center fraction must lie in [0, 1)");
  }
  if (params.target_rate < params.center_fraction) {
    raise(Errc::RateBelowCenterBlock, "target rate " + std::to_string(params.target_rate) +
                                          " is below the center fraction " +
                                          std::to_string(params.center_fraction));
  }
  const std::size_t ny = s.ny;
  const std::size_t center = ny / 2;
  const auto n_center = std::min(ny, static_cast<std::size_t>(std::ceil(params.center_fraction * static_cast<double>(ny) - 1e-9)));
  const auto target_rows = std::max<std::size_t>(
      {static_cast<std::size_t>(std::llround(params.target_rate * static_cast<double>(ny))), n_center, 1});

  std::vector<std::uint8_t> rows(ny, 0);
  const std::size_t start = center - n_center / 2;
  for (std::size_t r = start; r < start + n_center; ++r) rows[r] = 1;

  std::vector<double> weight(ny, 0.0);
  const double half = static_cast<double>(ny) / 2.0;
  for (std::size_t r = 0; r < ny; ++r) {
    if (rows[r]) continue;
    const double d = std::abs(static_cast<double>(r) - static_cast<double>(center));
    weight[r] = std::pow(std::max(0.0, 1.0 - d / half), 4);
  }

  std::mt19937_64 rng(params.seed);
  std::size_t taken = n_center;
  while (taken < target_rows) {
    double total = 0.0;
    for (double w : weight) total += w;
    if (total <= 0.0) {
      // Only zero-weight rows remain (the outermost edge); take them in order.
      for (std::size_t r = 0; r < ny && taken < target_rows; ++r) {
        if (!rows[r]) {
          rows[r] = 1;
          ++taken;
        }
      }
      break;
    }
    const double u = detail::uniform01(rng) * total;
    double acc = 0.0;
    std::size_t pick = ny;
    for (std::size_t r = 0; r < ny; ++r) {
      if (weight[r] <= 0.0) continue;
      acc += weight[r];
      pick = r;
      if (u < acc) break;
    }
    rows[pick] = 1;
    weight[pick] = 0.0;
    ++taken;
  }

  std::vector<std::uint8_t> cells(s.size(), 0);
  for (std::size_t r = 0; r < ny; ++r) {
    if (rows[r]) std::fill_n(cells.begin() + static_cast<std::ptrdiff_t>(r * s.nx), s.nx, 1);
  }
  return SamplingMask(s, std::move(cells));
}

inline SamplingMask make_mask(Shape s, const MaskParams& params) {
  switch (params.kind) {
    case MaskKind::PseudoRadial: return pseudo_radial_mask(s, params);
    case MaskKind::CartesianLines: return cartesian_mask(s, params);
    case MaskKind::Full: detail::check_grid_shape(s); return SamplingMask::full(s);
  }
  raise(Errc::InvalidParams, "unknown mask kind");
}

inline KSpaceGrid apply_mask(const KSpaceGrid& ksp, const SamplingMask& mask) {
  require_same_shape(mask.shape(), ksp.shape());
  std::vector<cplx> out(ksp.data().begin(), ksp.data().end());
  const auto cells = mask.cells();
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (!cells[p]) out[p] = cplx{};
  }
  return KSpaceGrid(ksp.shape(), std::move(out));
}

inline MultiCoilKSpace apply_mask(const MultiCoilKSpace& ksp, const SamplingMask& mask) {
  std::vector<KSpaceGrid> coils;
  coils.reserve(ksp.nc());
  for (const auto& c : ksp.coils()) coils.push_back(apply_mask(c, mask));
  return MultiCoilKSpace(std::move(coils));
}

/// Largest n such that rows [ny/2 - n/2, ny/2 - n/2 + n) are all fully
/// sampled; this is the calibration block estimate_coil_maps reads.
inline std::size_t count_acs_rows(const SamplingMask& mask) {
  const auto full_row = [&](std::size_t r) {
    for (std::size_t c = 0; c < mask.nx(); ++c)
      if (!mask(r, c)) return false;
    return true;
  };
  const std::size_t center = mask.ny() / 2;
  if (!full_row(center)) return 0;
  std::size_t lo = center;
  std::size_t hi = center;
  while (lo > 0 && full_row(lo - 1)) --lo;
  while (hi + 1 < mask.ny() && full_row(hi + 1)) ++hi;
  std::size_t n = hi - lo + 1;
  while (n > 0 && (center - n / 2 < lo || center - n / 2 + n - 1 > hi)) --n;
  return n;
}

}  // namespace xmrc
