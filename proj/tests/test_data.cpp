#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "famt/data.hpp"
#include "famt/errors.hpp"
#include "famt/parallel.hpp"

using namespace famt;

namespace {

std::string fixture(const std::string& name) { return std::string(FAMT_FIXTURE_DIR) + "/" + name; }

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("famt_test_data_" + name)).string();
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

double cifar_value(std::size_t k, std::size_t c, std::size_t y, std::size_t x) {
  const std::size_t r = (7 * y + 3 * x + 11 * k) % 256;
  const std::size_t v = c == 0 ? r : c == 1 ? 255 - r : (x * y) % 256;
  return static_cast<double>(v) / 255.0;
}

MaskPlan overlay_plan() {
  MaskPlan p;
  p.mask_idx = {0, 5, 10};
  p.throw_idx = {3, 15};
  for (std::size_t i = 0; i < 16; ++i)
    if (i != 0 && i != 5 && i != 10 && i != 3 && i != 15) p.visible_idx.push_back(i);
  return p;
}

}  // namespace

TEST_CASE("CIFAR-10 fixture parses to the expected pixels") {
  const Dataset d = load_cifar10(fixture("cifar_two.bin"));
  REQUIRE(d.size() == 2);
  CHECK(d.channels == 3);
  CHECK(d.height == 32);
  CHECK(d.num_classes == 10);
  CHECK(d.labels() == std::vector<int>{3, 9});
  CHECK(d.images[1].sample_id == 1);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y : {0u, 5u, 31u})
        for (std::size_t x : {0u, 17u, 31u})
          CHECK(d.images[k].pixels[(c * 32 + y) * 32 + x] == cifar_value(k, c, y, x));
}

TEST_CASE("CIFAR-10 errors") {
  CHECK(parse_cifar10({}).size() == 0);
  std::string raw = read_file(fixture("cifar_two.bin"));
  CHECK_THROWS_AS(parse_cifar10(as_bytes(raw.substr(0, raw.size() - 1))), FormatError);
  raw[3073] = 10;
  CHECK_THROWS_AS(parse_cifar10(as_bytes(raw)), FormatError);
  CHECK_THROWS_AS(load_cifar10(temp_path("missing.bin")), IoError);
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.num_samples = 40;
  spec.num_classes = 4;
  spec.image_size = 16;
  spec.channels = 3;
  const Dataset a = gen_synthetic(spec, 11);
  const Dataset b = gen_synthetic(spec, 11);
  const Dataset c = gen_synthetic(spec, 12);
  CHECK(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.images[i].pixels == b.images[i].pixels);
    CHECK(a.images[i].label == static_cast<int>(i % 4));
    for (double v : a.images[i].pixels.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
  }
  CHECK(a.images[0].pixels != c.images[0].pixels);
  set_workers(3);
  CHECK(gen_synthetic(spec, 11).images[7].pixels == a.images[7].pixels);
  set_workers(1);

  // Without noise a square class image is a solid block of ones on zeros.
  spec.noise = 0.0;
  spec.num_samples = 4;
  const Dataset clean = gen_synthetic(spec, 3);
  const Tensor& sq = clean.images[0].pixels;
  const double lit = std::accumulate(sq.data().begin(), sq.data().end(), 0.0) / 3.0;
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(lit)));
  CHECK(side * side == static_cast<std::size_t>(lit));
  CHECK(side >= 4);
  CHECK(side <= 8);
  for (double v : sq.data()) CHECK((v == 0.0 || v == 1.0));

  spec.num_classes = 1;
  CHECK_THROWS_AS(gen_synthetic(spec, 1), ParameterError);
}

TEST_CASE("FMTD round trip and dataset dispatch") {
  SyntheticSpec spec;
  spec.num_samples = 6;
  spec.num_classes = 3;
  spec.image_size = 8;
  spec.channels = 2;
  const Dataset a = gen_synthetic(spec, 5);
  const std::string path = temp_path("round.fmtd");
  save_fmtd(a, path);
  const Dataset b = load_fmtd(path);
  CHECK(b.channels == 2);
  CHECK(b.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(b.images[i].pixels == a.images[i].pixels);
    CHECK(b.images[i].label == a.images[i].label);
  }
  CHECK(load_dataset(path).images[5].pixels == a.images[5].pixels);
  CHECK(load_dataset(fixture("cifar_two.bin")).size() == 2);
  const Dataset s = load_dataset("synthetic:10:5:12", 2);
  CHECK(s.size() == 10);
  CHECK(s.num_classes == 5);
  CHECK(s.width == 12);

  std::string raw = read_file(path);
  write_file(path, raw.substr(0, raw.size() - 3));
  CHECK_THROWS_AS(load_fmtd(path), FormatError);
  raw[0] = 'X';
  write_file(path, raw);
  CHECK_THROWS_AS(load_fmtd(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("split and subset") {
  const auto [a, b] = split_indices(10, 0.3, 4);
  CHECK(a.size() == 3);
  CHECK(b.size() == 7);
  std::vector<std::size_t> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK(split_indices(10, 0.3, 4) == split_indices(10, 0.3, 4));

  const Dataset d = load_cifar10(fixture("cifar_two.bin"));
  const std::vector<std::size_t> pick{1};
  const Dataset s = d.subset(pick);
  CHECK(s.images[0].sample_id == 0);
  CHECK(s.images[0].label == 9);
}

TEST_CASE("bilinear resize and byte normalisation") {
  const Tensor g = Tensor::matrix(2, 2, {0, 1, 1, 0});
  const Tensor up = bilinear_resize(g, 4, 4);
  CHECK(up.at(0, 0) == 0.0);
  CHECK(up.at(0, 1) == 0.25);
  CHECK(up.at(0, 2) == 0.75);
  CHECK(up.at(0, 3) == 1.0);
  CHECK(up.at(1, 1) == 0.375);
  CHECK(up.at(3, 0) == 1.0);
  CHECK(bilinear_resize(g, 2, 2) == g);
  const Tensor one = bilinear_resize(Tensor::matrix(1, 1, {3.5}), 3, 5);
  for (double v : one.data()) CHECK(v == 3.5);

  CHECK(normalize_to_bytes(Tensor({2, 3}, 7.0)) == std::vector<std::uint8_t>(6, 0));
  CHECK(normalize_to_bytes(Tensor::matrix(1, 3, {-1, 0, 1})) == std::vector<std::uint8_t>{0, 128, 255});
  CHECK_THROWS_AS(bilinear_resize(Tensor(), 2, 2), ShapeError);
}

TEST_CASE("image emitters match the golden files byte for byte") {
  const Dataset d = load_cifar10(fixture("cifar_two.bin"));
  CHECK(encode_ppm(d.images[0].pixels) == read_file(fixture("cifar_two_0.ppm")));
  CHECK(encode_pgm_heatmap(Tensor::matrix(2, 2, {0, 1, 1, 0}), 4, 4) ==
        read_file(fixture("heat_2x2.pgm")));

  Tensor wide({14, 14});
  for (std::size_t i = 0; i < 14; ++i)
    for (std::size_t j = 0; j < 14; ++j)
      wide.at(i, j) = static_cast<double>((7 * i + 3 * j) % 11) / 10.0;
  CHECK(encode_pgm_heatmap(wide, 56, 56) == read_file(fixture("heat_14x14.pgm")));

  const std::string plan_path = temp_path("plan.ppm");
  write_ppm_overlay(d.images[1].pixels, overlay_plan(), 8, plan_path);
  CHECK(read_file(plan_path) == read_file(fixture("plan_overlay.ppm")));
  std::remove(plan_path.c_str());

  Tensor grid({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) grid.at(i, j) = static_cast<double>((3 * i + 5 * j) % 7) / 6.0;
  const std::string weight_path = temp_path("weight.ppm");
  write_ppm_overlay(d.images[0].pixels, grid, weight_path);
  CHECK(read_file(weight_path) == read_file(fixture("weight_overlay.ppm")));
  std::remove(weight_path.c_str());
}

TEST_CASE("PPM decode round trip and overlay pixels") {
  const Dataset d = load_cifar10(fixture("cifar_two.bin"));
  const std::string bytes = encode_ppm(d.images[0].pixels);
  CHECK(decode_ppm(bytes) == d.images[0].pixels);
  CHECK(encode_ppm(decode_ppm(bytes)) == bytes);
  CHECK_THROWS_AS(decode_ppm("P5\n1 1\n255\n\x01"), FormatError);
  CHECK_THROWS_AS(decode_ppm(bytes.substr(0, bytes.size() - 1)), FormatError);

  MaskPlan empty;
  for (std::size_t i = 0; i < 16; ++i) empty.visible_idx.push_back(i);
  CHECK(encode_ppm(render_plan_overlay(d.images[0].pixels, empty, 8)) == bytes);

  const Tensor over = decode_ppm(read_file(fixture("plan_overlay.ppm")));
  const MaskPlan p = overlay_plan();
  for (std::size_t q = 0; q < 16; ++q) {
    const std::size_t y = (q / 4) * 8 + 3, x = (q % 4) * 8 + 5;
    const double v = over[(0 * 32 + y) * 32 + x];
    if (std::find(p.mask_idx.begin(), p.mask_idx.end(), q) != p.mask_idx.end()) {
      CHECK(v == 128.0 / 255.0);
    } else if (std::find(p.throw_idx.begin(), p.throw_idx.end(), q) != p.throw_idx.end()) {
      CHECK(v == 0.0);
    } else {
      CHECK(v == d.images[1].pixels[(0 * 32 + y) * 32 + x]);
    }
  }

  const Tensor gray = render_plan_overlay(Tensor({1, 8, 8}, 0.5), p, 2);
  CHECK(encode_ppm(gray).size() == std::string("P6\n8 8\n255\n").size() + 3 * 64);
  CHECK_THROWS_AS(render_plan_overlay(Tensor({1, 8, 8}), p, 3), ShapeError);
}
