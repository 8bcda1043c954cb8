#include <filesystem>
#include <random>
#include <string>

#include "doctest.h"
#include "preemptkit/dataset.hpp"
#include "preemptkit/fingerprint.hpp"
#include "preemptkit/image_io.hpp"

using namespace pk;

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

struct IdxBytes {
  std::vector<std::uint8_t> images;
  std::vector<std::uint8_t> labels;
};

IdxBytes idx_fixture(std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
  IdxBytes b;
  put_be32(b.images, 0x00000803);
  put_be32(b.images, count);
  put_be32(b.images, rows);
  put_be32(b.images, cols);
  for (std::uint32_t i = 0; i < count * rows * cols; ++i) b.images.push_back(static_cast<std::uint8_t>((i * 37) % 256));
  put_be32(b.labels, 0x00000801);
  put_be32(b.labels, count);
  for (std::uint32_t i = 0; i < count; ++i) b.labels.push_back(static_cast<std::uint8_t>((i * 3) % 10));
  return b;
}

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("IDX parsing") {
  const auto f = idx_fixture(5, 2, 3);
  const Dataset d = parse_idx(f.images, f.labels);
  REQUIRE(d.size() == 5);
  CHECK(d.image_shape() == Shape{1, 2, 3});
  CHECK(d.classes == 10);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(d.ids[i] == i);
    CHECK(d.labels[i] == (i * 3) % 10);
    for (std::size_t p = 0; p < 6; ++p) {
      CHECK(d.images[i][p] == static_cast<float>(((i * 6 + p) * 37) % 256) / 255.0f);
    }
  }
  CHECK(d.images[0][0] == 0.0f);
  CHECK(parse_idx(f.images, f.labels, 10, 2).size() == 2);
}

TEST_CASE("IDX errors") {
  auto f = idx_fixture(4, 2, 2);
  SUBCASE("bad image magic") {
    f.images[3] = 0x01;
    CHECK_THROWS_WITH_AS(parse_idx(f.images, f.labels), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("bad label magic") {
    f.labels[3] = 0x03;
    CHECK_THROWS_AS(parse_idx(f.images, f.labels), FormatError);
  }
  SUBCASE("count mismatch") {
    const auto other = idx_fixture(3, 2, 2);
    CHECK_THROWS_AS(parse_idx(f.images, other.labels), FormatError);
  }
  SUBCASE("truncated pixels") {
    f.images.pop_back();
    CHECK_THROWS_AS(parse_idx(f.images, f.labels), FormatError);
  }
  SUBCASE("truncated header") {
    f.images.resize(10);
    CHECK_THROWS_AS(parse_idx(f.images, f.labels), FormatError);
  }
  SUBCASE("label beyond the class count") {
    CHECK_THROWS(parse_idx(f.images, f.labels, 3));
  }
}

TEST_CASE("IDX files round trip through disk") {
  const auto dir = std::filesystem::temp_directory_path() / "preemptkit_io_test";
  std::filesystem::create_directories(dir);
  const auto f = idx_fixture(3, 4, 4);
  write_file_atomic(dir / "img.idx", f.images);
  write_file_atomic(dir / "lbl.idx", f.labels);
  const Dataset d = load_idx(dir / "img.idx", dir / "lbl.idx");
  CHECK(d.size() == 3);
  CHECK(dataset_fingerprint(d) == dataset_fingerprint(parse_idx(f.images, f.labels)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("netpbm bytes") {
  CHECK(to_byte(0.0f) == 0);
  CHECK(to_byte(1.0f) == 255);
  CHECK(to_byte(-0.5f) == 0);
  CHECK(to_byte(2.0f) == 255);
  CHECK(to_byte(0.5f) == 128);            // 127.5 rounds up
  CHECK(to_byte(1.0f / 255.0f) == 1);

  const Tensor gray({1, 2, 3}, {0.0f, 0.5f, 1.0f, 0.2f, 0.4f, 0.6f});
  auto expected = bytes("P5\n3 2\n255\n");
  for (std::uint8_t v : {0, 128, 255, 51, 102, 153}) expected.push_back(v);
  CHECK(encode_pgm(gray) == expected);

  // Planar tensor, interleaved pixels.
  const Tensor rgb({3, 1, 2}, {1.0f, 0.0f, 0.0f, 1.0f, 0.5f, 0.5f});
  auto rgb_expected = bytes("P6\n2 1\n255\n");
  for (std::uint8_t v : {255, 0, 128, 0, 255, 128}) rgb_expected.push_back(v);
  CHECK(encode_ppm(rgb) == rgb_expected);

  CHECK_THROWS_AS(encode_pgm(rgb), ShapeError);
  CHECK_THROWS_AS(encode_ppm(gray), ShapeError);
}

TEST_CASE("digests") {
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const auto digits = bytes("123456789");
  CHECK(crc32(digits) == 0xCBF43926u);
  CHECK(canonical_json({{"b", 1}, {"a", {2, 3}}}) == R"({"a":[2,3],"b":1})");
  CHECK(json_fingerprint({{"b", 1}, {"a", 2}}) == json_fingerprint({{"a", 2}, {"b", 1}}));
}

TEST_CASE("atomic writes replace the whole file") {
  const auto dir = std::filesystem::temp_directory_path() / "preemptkit_atomic_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "out.txt";
  write_file_atomic(path, std::string_view("first version, longer"));
  write_file_atomic(path, std::string_view("second"));
  CHECK(read_file(path) == bytes("second"));
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++entries;
  CHECK(entries == 1);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(read_file(path));
}

TEST_CASE("synthetic data") {
  SynthSpec spec;
  spec.per_class = 5;
  const Dataset a = synth_dataset(spec, 3);
  const Dataset b = synth_dataset(spec, 3);
  const Dataset c = synth_dataset(spec, 4);
  CHECK(dataset_fingerprint(a) == dataset_fingerprint(b));
  CHECK(dataset_fingerprint(a) != dataset_fingerprint(c));
  CHECK(a.size() == 50);
  CHECK_NOTHROW(a.validate());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.labels[i] == i % 10);
    CHECK(a.ids[i] == i);
  }
  const Dataset sub = a.subset(10, 5);
  CHECK(sub.size() == 5);
  CHECK(sub.ids[0] == 10);
  CHECK(sub.images[0] == a.images[10]);
  CHECK(SynthSpec::from_json(spec.to_json()).to_json() == spec.to_json());
  SynthSpec bad = spec;
  bad.classes = 1;
  CHECK_THROWS_AS(synth_dataset(bad, 1), ConfigError);
}
