// Synthetic fixture set: Shepp-Logan phantom, the two standard masks, and
// single- and multi-coil acquisitions derived from them.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmrc/container.hpp"
#include "xmrc/phantoms.hpp"
#include "xmrc/sampling.hpp"
#include "xmrc/solver.hpp"

namespace xmrc {

struct DemoFixture {
  std::string name;  // file name, e.g. "kspace_single.xmrc"
  std::vector<std::uint8_t> bytes;
};

inline constexpr std::size_t kDemoCoils = 8;

/// Deterministic in (size, seed). The seed drives the cartesian row draw and
/// the coil phases; the radial mask has no randomness.
inline std::vector<DemoFixture> demo_fixtures(std::size_t size = 256, std::uint64_t seed = 0) {
  const Shape s{size, size};
  const auto phantom = shepp_logan(s);
  const auto radial = pseudo_radial_mask(s, {MaskKind::PseudoRadial, 0.30, 0.0, seed});
  const auto cartesian = cartesian_mask(s, {MaskKind::CartesianLines, 0.25, 0.08, seed});
  const auto maps = simulate_coil_maps(s, kDemoCoils, seed);

  std::vector<DemoFixture> out;
  out.push_back({"phantom.xmrc", write_container(phantom)});
  out.push_back({"mask_radial30.xmrc", write_container(radial)});
  out.push_back({"mask_cartesian25.xmrc", write_container(cartesian)});
  out.push_back({"kspace_single.xmrc", write_container(apply_mask(dft2_centered(phantom), radial))});
  out.push_back({"kspace_multi.xmrc", write_container(sense_forward(phantom, maps, cartesian))});
  out.push_back({"maps.xmrc", write_container(maps)});
  return out;
}

}  // namespace xmrc
