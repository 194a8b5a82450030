#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "xmrc/core.hpp"

namespace xmrc {

// On-disk layout, little-endian:
//   0  magic "XMRC"
//   4  u16 version (1)
//   6  u8  kind
//   7  u8  reserved (0)
//   8  u32 nc, u32 ny, u32 nx
//  20  payload: complex kinds -> nc*ny*nx (f32 re, f32 im), coil-major then
//      row-major; MASK -> ny*nx bytes in {0, 1}
enum class ContainerKind : std::uint8_t {
  Image = 1,
  KSpace = 2,
  MultiCoilKSpace = 3,
  Mask = 4,
  CoilMaps = 5,
};

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kHeaderBytes = 20;
inline constexpr char kMagic[4] = {'X', 'M', 'R', 'C'};

inline std::string_view kind_name(ContainerKind k) {
  switch (k) {
    case ContainerKind::Image: return "IMAGE";
    case ContainerKind::KSpace: return "KSPACE";
    case ContainerKind::MultiCoilKSpace: return "MULTICOIL_KSPACE";
    case ContainerKind::Mask: return "MASK";
    case ContainerKind::CoilMaps: return "COILMAPS";
  }
  return "UNKNOWN";
}

struct ContainerHeader {
  ContainerKind kind;
  std::uint32_t nc;
  std::uint32_t ny;
  std::uint32_t nx;

  std::uint64_t sample_count() const { return std::uint64_t{nc} * ny * nx; }
  std::uint64_t payload_bytes() const {
    return kind == ContainerKind::Mask ? sample_count() : sample_count() * 8;
  }
};

using ContainerPayload = std::variant<ComplexImage, KSpaceGrid, MultiCoilKSpace, SamplingMask, CoilSensitivities>;

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::size_t reserve) { out_.reserve(reserve); }

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void samples(std::span<const cplx> data) {
    for (const auto& z : data) {
      f32(static_cast<float>(z.real()));
      f32(static_cast<float>(z.imag()));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }
  std::uint8_t u8() { return in_[pos_++]; }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

  std::vector<cplx> samples(std::size_t count) {
    std::vector<cplx> out(count);
    for (auto& z : out) {
      const float re = f32();
      const float im = f32();
      if (!std::isfinite(re) || !std::isfinite(im)) raise(Errc::NonFiniteSample, "non-finite sample in payload");
      z = cplx{re, im};
    }
    return out;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline void write_header(ByteWriter& w, ContainerKind kind, std::size_t nc, Shape s) {
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kContainerVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(nc));
  w.u32(static_cast<std::uint32_t>(s.ny));
  w.u32(static_cast<std::uint32_t>(s.nx));
}

inline std::size_t complex_bytes(std::size_t nc, Shape s) { return kHeaderBytes + nc * s.size() * 8; }

}  // namespace detail

inline std::vector<std::uint8_t> write_container(const ComplexImage& img) {
  detail::ByteWriter w(detail::complex_bytes(1, img.shape()));
  detail::write_header(w, ContainerKind::Image, 1, img.shape());
  w.samples(img.data());
  return w.take();
}

inline std::vector<std::uint8_t> write_container(const KSpaceGrid& ksp) {
  detail::ByteWriter w(detail::complex_bytes(1, ksp.shape()));
  detail::write_header(w, ContainerKind::KSpace, 1, ksp.shape());
  w.samples(ksp.data());
  return w.take();
}

inline std::vector<std::uint8_t> write_container(const MultiCoilKSpace& ksp) {
  detail::ByteWriter w(detail::complex_bytes(ksp.nc(), ksp.shape()));
  detail::write_header(w, ContainerKind::MultiCoilKSpace, ksp.nc(), ksp.shape());
  for (const auto& c : ksp.coils()) w.samples(c.data());
  return w.take();
}

inline std::vector<std::uint8_t> write_container(const SamplingMask& mask) {
  detail::ByteWriter w(kHeaderBytes + mask.shape().size());
  detail::write_header(w, ContainerKind::Mask, 1, mask.shape());
  for (auto v : mask.cells()) w.u8(v);
  return w.take();
}

/// Only the maps are stored; support is re-derived as "any coil nonzero".
inline std::vector<std::uint8_t> write_container(const CoilSensitivities& maps) {
  detail::ByteWriter w(detail::complex_bytes(maps.nc(), maps.shape()));
  detail::write_header(w, ContainerKind::CoilMaps, maps.nc(), maps.shape());
  for (const auto& m : maps.maps()) w.samples(m.data());
  return w.take();
}

inline std::vector<std::uint8_t> write_container(const ContainerPayload& payload) {
  return std::visit([](const auto& obj) { return write_container(obj); }, payload);
}

/// Parses and validates the fixed 20-byte header.
inline ContainerHeader read_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) raise(Errc::BadMagic, "bad magic");
    raise(Errc::TruncatedPayload, "header needs 20 bytes, got " + std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) raise(Errc::BadMagic, "bad magic");
  detail::ByteReader r(bytes.subspan(4, kHeaderBytes - 4));
  const std::uint16_t version = r.u16();
  if (version != kContainerVersion) raise(Errc::UnsupportedVersion, "unsupported version " + std::to_string(version));
  const std::uint8_t kind = r.u8();
  if (kind < 1 || kind > 5) raise(Errc::UnsupportedKind, "unknown kind " + std::to_string(kind));
  if (r.u8() != 0) raise(Errc::InvalidHeader, "reserved byte must be 0");
  ContainerHeader h{static_cast<ContainerKind>(kind), r.u32(), r.u32(), r.u32()};
  if (h.nc == 0 || h.ny == 0 || h.nx == 0) raise(Errc::InvalidHeader, "dimensions must be >= 1");
  const bool single = h.kind == ContainerKind::Image || h.kind == ContainerKind::KSpace || h.kind == ContainerKind::Mask;
  if (single && h.nc != 1) raise(Errc::InvalidHeader, "nc must be 1 for kind " + std::string(kind_name(h.kind)));
  // nc*ny*nx can exceed 64 bits; no real input comes near this bound.
  constexpr std::uint64_t kMaxSamples = std::uint64_t{1} << 40;
  if (std::uint64_t{h.ny} * h.nx > kMaxSamples / h.nc) {
    raise(Errc::TruncatedPayload, "declared payload exceeds the input");
  }
  return h;
}

inline ContainerPayload read_container(std::span<const std::uint8_t> bytes) {
  const ContainerHeader h = read_header(bytes);
  const auto body = bytes.subspan(kHeaderBytes);
  if (body.size() < h.payload_bytes()) {
    raise(Errc::TruncatedPayload, "payload needs " + std::to_string(h.payload_bytes()) + " bytes, got " +
                                      std::to_string(body.size()));
  }
  if (body.size() > h.payload_bytes()) {
    raise(Errc::TrailingBytes, std::to_string(body.size() - h.payload_bytes()) + " bytes after payload");
  }
  const Shape s{h.ny, h.nx};
  detail::ByteReader r(body);
  switch (h.kind) {
    case ContainerKind::Image: return ComplexImage(s, r.samples(s.size()));
    case ContainerKind::KSpace: return KSpaceGrid(s, r.samples(s.size()));
    case ContainerKind::MultiCoilKSpace: {
      std::vector<KSpaceGrid> coils;
      for (std::uint32_t j = 0; j < h.nc; ++j) coils.emplace_back(s, r.samples(s.size()));
      return MultiCoilKSpace(std::move(coils));
    }
    case ContainerKind::Mask: {
      std::vector<std::uint8_t> cells(body.begin(), body.end());
      for (auto v : cells) {
        if (v > 1) raise(Errc::InvalidMaskByte, "mask byte " + std::to_string(v) + " not in {0, 1}");
      }
      return SamplingMask(s, std::move(cells));
    }
    case ContainerKind::CoilMaps: {
      std::vector<ComplexImage> maps;
      for (std::uint32_t j = 0; j < h.nc; ++j) maps.emplace_back(s, r.samples(s.size()));
      return CoilSensitivities(std::move(maps));
    }
  }
  raise(Errc::UnsupportedKind, "unknown kind");
}

inline ContainerKind kind_of(const ContainerPayload& payload) {
  return static_cast<ContainerKind>(payload.index() + 1);
}

/// Reads a container of the expected type or raises KindMismatch.
template <class T>
T read_container_as(std::span<const std::uint8_t> bytes) {
  auto payload = read_container(bytes);
  if (auto* v = std::get_if<T>(&payload)) return std::move(*v);
  raise(Errc::KindMismatch, "container holds " + std::string(kind_name(kind_of(payload))));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(Errc::Io, "short write to " + path.string());
}

}  // namespace xmrc
