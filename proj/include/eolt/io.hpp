#pragma once

// Binary tensor files, named-tensor checkpoints, PPM images and the
// synthetic face-like image generator.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "eolt/nn.hpp"
#include "eolt/tensor.hpp"

namespace eolt {

/// Tensor file layout: "EOLT", u8 version (1), u8 dtype (0 = f64, 1 = f32),
/// u8 ndim, ndim little-endian u32 dims, little-endian payload.
void write_tensor(std::ostream& out, const Tensor& t, Precision dtype = Precision::f64);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t, Precision dtype = Precision::f64);
Tensor load_tensor(const std::filesystem::path& path);

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::vector<std::pair<std::string, Tensor>> entries;
};

/// "EOLTCKPT", u8 version, u64 fingerprint, u32 count, then per entry a
/// u32-length-prefixed name followed by a tensor record.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct ImageRecord {
  std::string id;
  Tensor pixels;  // 3xHxW in [0, 1]
  std::string origin;
};

/// Binary P6 with maxval 255.
ImageRecord load_ppm(const std::filesystem::path& path);
void save_ppm(const Tensor& image, const std::filesystem::path& path);
/// Byte value written for a pixel in [0, 1], rounding half away from zero.
std::uint8_t quantize_byte(double v);

/// Face-like composites: smooth background gradient, 2-4 Gaussian blobs and
/// mild texture noise. Deterministic in (n, h, w, seed).
std::vector<ImageRecord> synth_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed);

/// All *.ppm files in a directory, sorted by file name.
std::vector<ImageRecord> load_ppm_dir(const std::filesystem::path& dir);

}  // namespace eolt
