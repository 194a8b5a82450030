#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "xmrc/core.hpp"
#include "xmrc/fft.hpp"
#include "xmrc/sampling.hpp"

namespace xmrc {

/// One Shepp-Logan ellipse: intensity, semi-axes, center, rotation (degrees).
struct Ellipse {
  double intensity;
  double a;
  double b;
  double x0;
  double y0;
  double phi_deg;
};

/// The modified (high-contrast) ten-ellipse table; intensities sum to [0, 1].
inline constexpr std::array<Ellipse, 10> kSheppLogan{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},
    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},
    {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},
    {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},
    {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
}};

namespace detail {

// Normalized coordinates: the DC pixel (ny/2, nx/2) is the origin, +y is up,
// and the grid spans roughly [-1, 1) on each axis.
inline double grid_x(std::size_t col, std::size_t nx) {
  return (static_cast<double>(col) - static_cast<double>(nx / 2)) / (static_cast<double>(nx) / 2.0);
}
inline double grid_y(std::size_t row, std::size_t ny) {
  return (static_cast<double>(ny / 2) - static_cast<double>(row)) / (static_cast<double>(ny) / 2.0);
}

}  // namespace detail

inline ComplexImage shepp_logan(Shape s) {
  if (s.ny < 16 || s.nx < 16) raise(Errc::TooSmall, "phantom needs at least 16x16, got " + to_string(s));
  std::vector<double> values(s.size(), 0.0);
  for (const auto& e : kSheppLogan) {
    const double phi = e.phi_deg * std::numbers::pi / 180.0;
    const double cp = std::cos(phi);
    const double sp = std::sin(phi);
    for (std::size_t r = 0; r < s.ny; ++r) {
      const double y = detail::grid_y(r, s.ny) - e.y0;
      for (std::size_t c = 0; c < s.nx; ++c) {
        const double x = detail::grid_x(c, s.nx) - e.x0;
        const double u = (x * cp + y * sp) / e.a;
        const double v = (-x * sp + y * cp) / e.b;
        if (u * u + v * v <= 1.0) values[r * s.nx + c] += e.intensity;
      }
    }
  }
  double peak = 0.0;
  for (double& v : values) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  std::vector<cplx> data(s.size());
  for (std::size_t p = 0; p < s.size(); ++p) data[p] = cplx{values[p] / peak, 0.0};
  return ComplexImage(s, std::move(data));
}

/// Smooth synthetic receive profiles: Gaussian lobes centered on the unit
/// circle (the image border) at angles 2 pi j / nc, each with a seeded
/// constant-plus-linear phase, normalized so sum_j |C_j|^2 = 1 everywhere.
inline CoilSensitivities simulate_coil_maps(Shape s, std::size_t nc, std::uint64_t seed) {
  detail::check_grid_shape(s);
  if (nc < 1) raise(Errc::InvalidParams, "coil count must be >= 1");
  constexpr double sigma = 0.6;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<cplx>> raw(nc, std::vector<cplx>(s.size()));
  for (std::size_t j = 0; j < nc; ++j) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(nc);
    const double cx = std::cos(angle);
    const double cy = std::sin(angle);
    const double phase0 = (2.0 * detail::uniform01(rng) - 1.0) * std::numbers::pi;
    const double gx = 2.0 * detail::uniform01(rng) - 1.0;
    const double gy = 2.0 * detail::uniform01(rng) - 1.0;
    for (std::size_t r = 0; r < s.ny; ++r) {
      const double y = detail::grid_y(r, s.ny);
      for (std::size_t c = 0; c < s.nx; ++c) {
        const double x = detail::grid_x(c, s.nx);
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double mag = std::exp(-d2 / (2.0 * sigma * sigma));
        const double phase = phase0 + 0.5 * std::numbers::pi * (gx * x + gy * y);
        raw[j][r * s.nx + c] = std::polar(mag, phase);
      }
    }
  }
  std::vector<ComplexImage> maps;
  std::vector<double> rss(s.size(), 0.0);
  for (const auto& m : raw)
    for (std::size_t p = 0; p < s.size(); ++p) rss[p] += std::norm(m[p]);
  for (double& v : rss) v = std::sqrt(v);
  for (auto& m : raw) {
    for (std::size_t p = 0; p < s.size(); ++p) m[p] /= rss[p];
    maps.emplace_back(s, std::move(m));
  }
  return CoilSensitivities(std::move(maps), std::vector<std::uint8_t>(s.size(), 1));
}

/// RSS calibration: taper the central acs_rows x full-width k-space block with
/// a raised cosine, inverse-transform each coil to a low-resolution image L_j,
/// then C_j = L_j / RSS on the support RSS >= 0.05 max RSS, 0 elsewhere.
inline CoilSensitivities estimate_coil_maps(const MultiCoilKSpace& y, std::size_t acs_rows) {
  const Shape s = y.shape();
  if (acs_rows == 0 || acs_rows > s.ny) {
    raise(Errc::InsufficientACS, "need between 1 and " + std::to_string(s.ny) + " calibration rows, got " +
                                     std::to_string(acs_rows));
  }
  const std::size_t start = s.ny / 2 - acs_rows / 2;
  for (const auto& coil : y.coils()) {
    for (std::size_t r = start; r < start + acs_rows; ++r) {
      bool any = false;
      for (std::size_t c = 0; c < s.nx; ++c) any = any || coil(r, c) != cplx{};
      if (!any) raise(Errc::InsufficientACS, "calibration row " + std::to_string(r) + " is not sampled");
    }
  }

  const auto hann = [](std::size_t i, std::size_t n) {
    return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  };
  std::vector<double> wx(s.nx);
  for (std::size_t c = 0; c < s.nx; ++c) wx[c] = hann(c, s.nx);

  std::vector<std::vector<cplx>> low(y.nc(), std::vector<cplx>(s.size()));
  std::vector<cplx> block(s.size());
  for (std::size_t j = 0; j < y.nc(); ++j) {
    std::fill(block.begin(), block.end(), cplx{});
    const auto& coil = y.coil(j);
    for (std::size_t i = 0; i < acs_rows; ++i) {
      const std::size_t r = start + i;
      const double wy = hann(i, acs_rows);
      for (std::size_t c = 0; c < s.nx; ++c) block[r * s.nx + c] = coil(r, c) * (wy * wx[c]);
    }
    detail::idft2(s, block, low[j]);
  }

  std::vector<double> rss(s.size(), 0.0);
  for (const auto& l : low)
    for (std::size_t p = 0; p < s.size(); ++p) rss[p] += std::norm(l[p]);
  double peak = 0.0;
  for (double& v : rss) {
    v = std::sqrt(v);
    peak = std::max(peak, v);
  }
  if (!(peak > 0.0)) raise(Errc::InsufficientACS, "calibration region carries no signal");

  std::vector<std::uint8_t> support(s.size(), 0);
  for (std::size_t p = 0; p < s.size(); ++p) support[p] = rss[p] >= 0.05 * peak ? 1 : 0;
  std::vector<ComplexImage> maps;
  for (auto& l : low) {
    for (std::size_t p = 0; p < s.size(); ++p) l[p] = support[p] ? l[p] / rss[p] : cplx{};
    maps.emplace_back(s, std::move(l));
  }
  return CoilSensitivities(std::move(maps), std::move(support));
}

}  // namespace xmrc
