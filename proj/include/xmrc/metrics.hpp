#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xmrc/core.hpp"

namespace xmrc {

/// Relative l2-norm error ||x - xhat|| / ||x|| over complex values.
inline double rlne(const ComplexImage& truth, const ComplexImage& recon) {
  require_same_shape(truth.shape(), recon.shape());
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    err += std::norm(truth.data()[p] - recon.data()[p]);
    ref += std::norm(truth.data()[p]);
  }
  if (ref == 0.0) raise(Errc::ZeroGroundTruth, "ground truth has zero norm");
  return std::sqrt(err) / std::sqrt(ref);
}

/// Pixelwise ||x(p)| - |xhat(p)||; a display artifact, not a metric.
inline RealImage error_map(const ComplexImage& truth, const ComplexImage& recon) {
  require_same_shape(truth.shape(), recon.shape());
  RealImage out{truth.shape(), std::vector<double>(truth.size())};
  for (std::size_t p = 0; p < truth.size(); ++p) {
    out.data[p] = std::abs(std::abs(truth.data()[p]) - std::abs(recon.data()[p]));
  }
  return out;
}

/// Binary 8-bit portable graymap (P5), linear scale with the maximum at 255.
/// An all-zero map encodes as all-zero pixels.
inline std::vector<std::uint8_t> encode_pgm(const RealImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.shape.nx) + " " + std::to_string(img.shape.ny) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  double peak = 0.0;
  for (double v : img.data) peak = std::max(peak, v);
  out.reserve(out.size() + img.data.size());
  for (double v : img.data) {
    const double scaled = peak > 0.0 ? std::clamp(v, 0.0, peak) / peak * 255.0 : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(scaled)));
  }
  return out;
}

}  // namespace xmrc
