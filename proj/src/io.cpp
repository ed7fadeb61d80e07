#include "eolt/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "eolt/errors.hpp"
#include "eolt/rng.hpp"

namespace eolt {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kMagic[4] = {'E', 'O', 'L', 'T'};
constexpr char kCkptMagic[8] = {'E', 'O', 'L', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(std::string("truncated ") + what);
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t, Precision dtype) {
  if (t.ndim() > 255) throw FormatError("tensor has too many dimensions");
  out.write(kMagic, 4);
  put<std::uint8_t>(out, kVersion);
  put<std::uint8_t>(out, dtype == Precision::f64 ? 0 : 1);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.ndim()));
  for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  if (dtype == Precision::f64) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    for (double v : t.storage()) put<float>(out, static_cast<float>(v));
  }
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic");
  const auto version = get<std::uint8_t>(in, "tensor header");
  if (version != kVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto dtype = get<std::uint8_t>(in, "tensor header");
  if (dtype > 1) throw FormatError("unknown tensor dtype " + std::to_string(dtype));
  const auto ndim = get<std::uint8_t>(in, "tensor header");
  Shape shape;
  for (std::uint8_t i = 0; i < ndim; ++i) shape.push_back(get<std::uint32_t>(in, "tensor dims"));
  Tensor t(shape);
  if (dtype == 0) {
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw FormatError("truncated tensor payload");
    }
  } else {
    for (double& v : t.storage()) v = get<float>(in, "tensor payload");
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, Precision dtype) {
  auto out = open_out(path);
  write_tensor(out, t, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_tensor(in);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto out = open_out(path);
  out.write(kCkptMagic, 8);
  put<std::uint8_t>(out, kVersion);
  put<std::uint64_t>(out, ckpt.fingerprint);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0) throw FormatError("bad checkpoint magic");
  if (get<std::uint8_t>(in, "checkpoint header") != kVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.fingerprint = get<std::uint64_t>(in, "checkpoint header");
  const auto count = get<std::uint32_t>(in, "checkpoint header");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "entry name");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated entry name");
    ckpt.entries.emplace_back(std::move(name), read_tensor(in));
  }
  return ckpt;
}

// ---------------------------------------------------------------- PPM

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw FormatError("malformed PPM header");
  return tok;
}

std::size_t ppm_number(std::istream& in) {
  const std::string tok = ppm_token(in);
  if (!std::all_of(tok.begin(), tok.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) || tok.size() > 9) {
    throw FormatError("malformed PPM header field '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

std::uint8_t quantize_byte(double v) {
  return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 1.0) * 255.0));
}

ImageRecord load_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (ppm_token(in) != "P6") throw FormatError(path.string() + ": not a binary P6 PPM");
  const std::size_t w = ppm_number(in), h = ppm_number(in), maxval = ppm_number(in);
  if (w == 0 || h == 0) throw FormatError(path.string() + ": empty image");
  if (maxval != 255) throw FormatError(path.string() + ": maxval must be 255");
  std::vector<unsigned char> bytes(w * h * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path.string() + ": truncated payload");
  }
  Tensor t({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = bytes[(y * w + x) * 3 + c] / 255.0;
  return {path.stem().string(), std::move(t), path.string()};
}

void save_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw DimensionError("save_ppm: expected 3xHxW, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  auto out = open_out(path);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<unsigned char> bytes(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) bytes[(y * w + x) * 3 + c] = quantize_byte(image.at(c, y, x));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<ImageRecord> load_ppm_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<ImageRecord> out;
  for (const auto& f : files) out.push_back(load_ppm(f));
  if (out.empty()) throw FormatError("no .ppm files in " + dir.string());
  return out;
}

// ---------------------------------------------------------------- synthesis

std::vector<ImageRecord> synth_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synth_images: n must be >= 1");
  const Rng root(seed);
  std::vector<ImageRecord> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Rng rng = root.child("synth-image", k);
    Tensor img({3, h, w});
    const double fh = static_cast<double>(h), fw = static_cast<double>(w);

    // Background: a linear gradient per channel.
    std::array<double, 3> base, gx, gy;
    for (int c = 0; c < 3; ++c) {
      base[c] = rng.uniform(0.2, 0.8);
      gx[c] = rng.uniform(-0.3, 0.3);
      gy[c] = rng.uniform(-0.3, 0.3);
    }
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          img.at(c, y, x) = base[c] + gx[c] * (x / fw - 0.5) + gy[c] * (y / fh - 0.5);

    // Blobs: a face-sized one first, then smaller features.
    const std::size_t blobs = 2 + rng.below(3);
    for (std::size_t b = 0; b < blobs; ++b) {
      const double scale = b == 0 ? rng.uniform(0.25, 0.35) : rng.uniform(0.06, 0.15);
      const double cx = rng.uniform(0.3, 0.7) * fw, cy = rng.uniform(0.3, 0.7) * fh;
      const double sx = scale * fw, sy = scale * fh * rng.uniform(1.0, 1.4);
      std::array<double, 3> amp;
      for (double& a : amp) a = rng.uniform(-0.45, 0.45);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dx = (x - cx) / sx, dy = (y - cy) / sy;
          const double g = std::exp(-0.5 * (dx * dx + dy * dy));
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) += amp[c] * g;
        }
      }
    }

    for (double& v : img.storage()) v = std::clamp(v + 0.005 * rng.normal(), 0.0, 1.0);
    out.push_back({"synth-" + std::to_string(k), std::move(img), "synth:seed=" + std::to_string(seed) + ":" +
                                                                       std::to_string(k)});
  }
  return out;
}

}  // namespace eolt
