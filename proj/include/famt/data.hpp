#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "famt/sampler.hpp"
#include "famt/tensor.hpp"

namespace famt {

struct LabeledImage {
  std::uint32_t sample_id = 0;
  Tensor pixels;  // C x H x W, values in [0, 1]
  int label = 0;
};

// sample_id of images[i] is always i.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  int num_classes = 0;
  std::vector<LabeledImage> images;

  std::size_t size() const { return images.size(); }
  std::vector<int> labels() const;
  // Copy of the listed samples, renumbered 0..k-1.
  Dataset subset(std::span<const std::size_t> indices) const;
};

enum class ShapeKind { kSquare, kDisk, kCross, kStripes };

struct SyntheticSpec {
  std::size_t num_samples = 2000;
  int num_classes = 4;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  double noise = 0.5;  // background is uniform in [0, noise]
  std::vector<ShapeKind> shape_kinds{ShapeKind::kSquare, ShapeKind::kDisk, ShapeKind::kCross,
                                     ShapeKind::kStripes};
};

// CIFAR-10 binary: 3073-byte records, one label byte then the R, G and B
// 32x32 planes.
Dataset load_cifar10(const std::string& path);
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);

// Noise background plus one class-determined shape at a random place.
// Labels cycle 0..K-1 so classes stay balanced. Pure in (spec, seed).
Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// "FMTD" dump: magic, u32 count, u32 C, H, W, then per sample a label byte
// and C*H*W little-endian f32 pixels.
void save_fmtd(const Dataset& data, const std::string& path);
Dataset load_fmtd(const std::string& path);

// Dispatches on the source: "synthetic:<count>[:<classes>[:<size>]]", an
// FMTD file (by magic), or CIFAR-10 binary.
Dataset load_dataset(const std::string& source, std::uint64_t seed = 0);

// Deterministic shuffled split; the first part holds round(fraction * n).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double fraction, std::uint64_t seed);

// ---- image emission ----

// Bilinear resize (half-pixel centres, edge clamped) of a gh x gw grid.
Tensor bilinear_resize(const Tensor& grid, std::size_t height, std::size_t width);

// Min-max normalise to 0..255 (constant maps become all zeros).
std::vector<std::uint8_t> normalize_to_bytes(const Tensor& values);

std::string encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> gray);
std::string encode_ppm(const Tensor& image);  // C x H x W, C = 1 or 3
Tensor decode_ppm(const std::string& bytes);

// Heatmap of a gh x gw grid upscaled to height x width, binary PGM.
std::string encode_pgm_heatmap(const Tensor& grid, std::size_t height, std::size_t width);
void write_pgm_heatmap(const Tensor& grid, std::size_t height, std::size_t width,
                       const std::string& path);

// Masked patches mid-gray, thrown patches black, visible untouched.
Tensor render_plan_overlay(const Tensor& image, const MaskPlan& plan, std::size_t patch_size);
// Image brightness scaled by the upscaled, normalised weight grid.
Tensor render_weight_overlay(const Tensor& image, const Tensor& grid);
void write_ppm_overlay(const Tensor& image, const MaskPlan& plan, std::size_t patch_size,
                       const std::string& path);
void write_ppm_overlay(const Tensor& image, const Tensor& weight_grid, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace famt
