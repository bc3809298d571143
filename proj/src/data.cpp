#include "famt/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "famt/errors.hpp"
#include "famt/parallel.hpp"
#include "famt/rng.hpp"

namespace famt {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;
constexpr double kMidGray = 128.0 / 255.0;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("FMTD: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

}  // namespace

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.label);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.num_classes = num_classes;
  out.images.reserve(indices.size());
  for (std::size_t i : indices) {
    LabeledImage img = images.at(i);
    img.sample_id = static_cast<std::uint32_t>(out.images.size());
    out.images.push_back(std::move(img));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10: file length " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kCifarRecord));
  }
  Dataset data;
  data.channels = 3;
  data.height = data.width = kCifarSide;
  data.num_classes = 10;
  const std::size_t count = bytes.size() / kCifarRecord;
  data.images.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10: record " + std::to_string(r) + " has label " +
                        std::to_string(rec[0]));
    }
    LabeledImage img;
    img.sample_id = static_cast<std::uint32_t>(r);
    img.label = rec[0];
    img.pixels = Tensor({3, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < 3 * kCifarSide * kCifarSide; ++i)
      img.pixels[i] = static_cast<double>(rec[1 + i]) / 255.0;
    data.images.push_back(std::move(img));
  }
  return data;
}

Dataset load_cifar10(const std::string& path) {
  const std::string raw = read_file(path);
  return parse_cifar10(
      std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
}

namespace {

bool inside_shape(ShapeKind kind, std::size_t s, std::size_t y, std::size_t x) {
  switch (kind) {
    case ShapeKind::kSquare:
      return true;
    case ShapeKind::kDisk: {
      const double c = static_cast<double>(s) / 2.0;
      const double dy = static_cast<double>(y) + 0.5 - c, dx = static_cast<double>(x) + 0.5 - c;
      return dy * dy + dx * dx <= c * c;
    }
    case ShapeKind::kCross: {
      const std::size_t bar = std::max<std::size_t>(1, s / 4);
      const std::size_t lo = (s - bar) / 2;
      return (y >= lo && y < lo + bar) || (x >= lo && x < lo + bar);
    }
    case ShapeKind::kStripes: {
      const std::size_t band = std::max<std::size_t>(1, s / 6);
      return (y / band) % 2 == 0;
    }
  }
  return false;
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw ParameterError("synthetic: num_classes must be >= 2");
  if (spec.shape_kinds.empty()) throw ParameterError("synthetic: no shape kinds");
  if (spec.image_size < 4 || spec.channels == 0) throw ParameterError("synthetic: image too small");
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0)) throw ParameterError("synthetic: noise must lie in [0,1]");

  Dataset data;
  data.channels = spec.channels;
  data.height = data.width = spec.image_size;
  data.num_classes = spec.num_classes;
  data.images.resize(spec.num_samples);
  const std::size_t S = spec.image_size, C = spec.channels;

  parallel_for(spec.num_samples, [&](std::size_t i) {
    CounterRng rng(seed, 0, i, RngStream::kData);
    LabeledImage& img = data.images[i];
    img.sample_id = static_cast<std::uint32_t>(i);
    img.label = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes));
    img.pixels = Tensor({C, S, S});
    for (double& v : img.pixels.data()) {
      // f32-representable so FMTD dumps round-trip exactly
      v = spec.noise > 0.0 ? static_cast<double>(static_cast<float>(spec.noise * rng.uniform())) : 0.0;
    }
    const auto kinds = spec.shape_kinds.size();
    const ShapeKind kind = spec.shape_kinds[static_cast<std::size_t>(img.label) % kinds];
    // Classes beyond the number of kinds reuse a kind with a different colour.
    const std::size_t variant = static_cast<std::size_t>(img.label) / kinds;
    const std::size_t lo = S / 4, hi = S / 2;
    const std::size_t side = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
    const std::size_t y0 = static_cast<std::size_t>(rng.below(S - side + 1));
    const std::size_t x0 = static_cast<std::size_t>(rng.below(S - side + 1));
    for (std::size_t c = 0; c < C; ++c) {
      const bool lit = variant == 0 || ((variant >> (c % 3)) & 1u) != 0;
      const double value = lit ? 1.0 : 0.0;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          if (inside_shape(kind, side, y, x)) img.pixels[(c * S + y0 + y) * S + x0 + x] = value;
    }
  });
  return data;
}

void save_fmtd(const Dataset& data, const std::string& path) {
  std::string out = "FMTD";
  put_u32(out, static_cast<std::uint32_t>(data.images.size()));
  put_u32(out, static_cast<std::uint32_t>(data.channels));
  put_u32(out, static_cast<std::uint32_t>(data.height));
  put_u32(out, static_cast<std::uint32_t>(data.width));
  const std::size_t px = data.channels * data.height * data.width;
  out.reserve(out.size() + data.images.size() * (1 + 4 * px));
  for (const auto& img : data.images) {
    if (img.label < 0 || img.label > 255) throw FormatError("FMTD: label does not fit a byte");
    out.push_back(static_cast<char>(img.label));
    for (double v : img.pixels.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  write_file(path, out);
}

Dataset load_fmtd(const std::string& path) {
  const std::string in = read_file(path);
  if (in.size() < 4 || in.compare(0, 4, "FMTD") != 0) throw FormatError("FMTD: bad magic in '" + path + "'");
  std::size_t pos = 4;
  const std::uint32_t count = get_u32(in, pos);
  Dataset data;
  data.channels = get_u32(in, pos);
  data.height = get_u32(in, pos);
  data.width = get_u32(in, pos);
  const std::size_t px = data.channels * data.height * data.width;
  if (in.size() != pos + static_cast<std::size_t>(count) * (1 + 4 * px)) {
    throw FormatError("FMTD: payload length does not match header");
  }
  int max_label = 0;
  data.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    LabeledImage img;
    img.sample_id = i;
    img.label = static_cast<unsigned char>(in[pos++]);
    img.pixels = Tensor({data.channels, data.height, data.width});
    for (std::size_t k = 0; k < px; ++k) {
      img.pixels[k] = static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
      if (!(img.pixels[k] >= 0.0 && img.pixels[k] <= 1.0)) {
        throw FormatError("FMTD: pixel outside [0,1] in sample " + std::to_string(i));
      }
    }
    max_label = std::max(max_label, img.label);
    data.images.push_back(std::move(img));
  }
  data.num_classes = std::max(2, max_label + 1);
  return data;
}

Dataset load_dataset(const std::string& source, std::uint64_t seed) {
  if (source.starts_with("synthetic:")) {
    SyntheticSpec spec;
    std::vector<std::size_t> fields;
    std::string_view rest(source);
    rest.remove_prefix(10);
    while (!rest.empty()) {
      const auto colon = rest.find(':');
      const auto tok = rest.substr(0, colon);
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParameterError("bad synthetic source '" + source + "'");
      }
      fields.push_back(v);
      if (colon == std::string_view::npos) break;
      rest.remove_prefix(colon + 1);
    }
    if (fields.empty()) throw ParameterError("bad synthetic source '" + source + "'");
    spec.num_samples = fields[0];
    if (fields.size() > 1) spec.num_classes = static_cast<int>(fields[1]);
    if (fields.size() > 2) spec.image_size = fields[2];
    return gen_synthetic(spec, seed);
  }
  std::ifstream probe(source, std::ios::binary);
  if (!probe) throw IoError("cannot open dataset '" + source + "'");
  char magic[4] = {};
  probe.read(magic, 4);
  if (probe.gcount() == 4 && std::memcmp(magic, "FMTD", 4) == 0) return load_fmtd(source);
  return load_cifar10(source);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double fraction, std::uint64_t seed) {
  CounterRng rng(seed, 0, 0, RngStream::kSplit);
  const std::vector<std::size_t> order = uniform_order(n, rng);
  const auto first = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first));
  std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(first), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

Tensor bilinear_resize(const Tensor& grid, std::size_t height, std::size_t width) {
  if (grid.rank() != 2 || grid.size() == 0) {
    throw ShapeError("bilinear_resize: expected a non-empty grid, got " + dims_to_string(grid.dims()));
  }
  const std::size_t gh = grid.dims()[0], gw = grid.dims()[1];
  auto source = [](std::size_t out, std::size_t in_len, std::size_t out_len, std::size_t& i0,
                   std::size_t& i1, double& frac) {
    double s = (static_cast<double>(out) + 0.5) * static_cast<double>(in_len) /
                   static_cast<double>(out_len) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_len - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in_len - 1);
    frac = s - static_cast<double>(i0);
  };
  Tensor out({height, width});
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, gh, height, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, gw, width, x0, x1, fx);
      const double top = grid.at(y0, x0) * (1.0 - fx) + grid.at(y0, x1) * fx;
      const double bot = grid.at(y1, x0) * (1.0 - fx) + grid.at(y1, x1) * fx;
      out.at(y, x) = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

std::vector<std::uint8_t> normalize_to_bytes(const Tensor& values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.data().begin(), values.data().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = to_byte((values[i] - lo) / (hi - lo));
  return out;
}

std::string encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> gray) {
  if (gray.size() != width * height) throw ShapeError("encode_pgm: pixel count mismatch");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(gray.data()), gray.size());
  return out;
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || (image.dims()[0] != 1 && image.dims()[0] != 3)) {
    throw ShapeError("encode_ppm: expected 1 x H x W or 3 x H x W, got " +
                     dims_to_string(image.dims()));
  }
  const std::size_t C = image.dims()[0], H = image.dims()[1], W = image.dims()[2];
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + 3 * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.push_back(static_cast<char>(to_byte(image[((C == 1 ? 0 : c) * H + y) * W + x])));
  return out;
}

Tensor decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw FormatError("PPM: expected P6 magic");
  const std::string ws = token(), hs = token(), ms = token();
  std::size_t W = 0, H = 0, maxval = 0;
  std::from_chars(ws.data(), ws.data() + ws.size(), W);
  std::from_chars(hs.data(), hs.data() + hs.size(), H);
  std::from_chars(ms.data(), ms.data() + ms.size(), maxval);
  if (W == 0 || H == 0 || maxval != 255) throw FormatError("PPM: unsupported header");
  ++pos;  // single whitespace before the raster
  if (bytes.size() != pos + 3 * W * H) throw FormatError("PPM: raster length mismatch");
  Tensor image({3, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        image[(c * H + y) * W + x] =
            static_cast<double>(static_cast<unsigned char>(bytes[pos + (y * W + x) * 3 + c])) / 255.0;
  return image;
}

std::string encode_pgm_heatmap(const Tensor& grid, std::size_t height, std::size_t width) {
  const Tensor up = bilinear_resize(grid, height, width);
  return encode_pgm(width, height, normalize_to_bytes(up));
}

void write_pgm_heatmap(const Tensor& grid, std::size_t height, std::size_t width,
                       const std::string& path) {
  write_file(path, encode_pgm_heatmap(grid, height, width));
}

Tensor render_plan_overlay(const Tensor& image, const MaskPlan& plan, std::size_t patch_size) {
  if (image.rank() != 3) throw ShapeError("overlay: expected C x H x W image");
  const std::size_t C = image.dims()[0], H = image.dims()[1], W = image.dims()[2];
  const std::size_t P = patch_size;
  if (P == 0 || H % P != 0 || W % P != 0) throw ShapeError("overlay: image not divisible by patch size");
  const std::size_t gw = W / P, n = (H / P) * gw;
  Tensor out = image;
  auto paint = [&](std::span<const std::size_t> idx, double value) {
    for (std::size_t p : idx) {
      if (p >= n) throw ShapeError("overlay: patch index " + std::to_string(p) + " out of range");
      const std::size_t gy = p / gw, gx = p % gw;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < P; ++y)
          for (std::size_t x = 0; x < P; ++x) out[(c * H + gy * P + y) * W + gx * P + x] = value;
    }
  };
  paint(plan.mask_idx, kMidGray);
  paint(plan.throw_idx, 0.0);
  return out;
}

Tensor render_weight_overlay(const Tensor& image, const Tensor& grid) {
  if (image.rank() != 3) throw ShapeError("overlay: expected C x H x W image");
  const std::size_t C = image.dims()[0], H = image.dims()[1], W = image.dims()[2];
  const std::vector<std::uint8_t> level = normalize_to_bytes(bilinear_resize(grid, H, W));
  Tensor out = image;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * W; ++i)
      out[c * H * W + i] *= 0.25 + 0.75 * static_cast<double>(level[i]) / 255.0;
  return out;
}

void write_ppm_overlay(const Tensor& image, const MaskPlan& plan, std::size_t patch_size,
                       const std::string& path) {
  write_file(path, encode_ppm(render_plan_overlay(image, plan, patch_size)));
}

void write_ppm_overlay(const Tensor& image, const Tensor& weight_grid, const std::string& path) {
  write_file(path, encode_ppm(render_weight_overlay(image, weight_grid)));
}

}  // namespace famt
