#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "preemptkit/tensor.hpp"

namespace pk {

// Labeled images. `ids` are stable per-sample identifiers (the position in the
// source the sample was read from); seeds derived from them survive reordering
// and subsetting.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> ids;
  std::size_t classes = 0;
  nlohmann::json provenance;

  std::size_t size() const { return images.size(); }
  Shape image_shape() const;
  // Throws ShapeError/ConfigError when lengths, labels, or pixels are invalid.
  void validate() const;
  Dataset subset(std::size_t begin, std::size_t count) const;
};

// SHA-256 over shape, pixels (f32 LE), labels and ids.
std::string dataset_fingerprint(const Dataset& data);

// MNIST-style IDX files: images magic 0x00000803 (u8, rank 3), labels magic
// 0x00000801 (u8, rank 1), big-endian headers. Pixels are scaled by 1/255.
// `classes` defaults to 10; labels must be below it.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes = 10, std::size_t limit = 0);
Dataset parse_idx(const std::vector<std::uint8_t>& image_bytes, const std::vector<std::uint8_t>& label_bytes,
                  std::size_t classes = 10, std::size_t limit = 0);

struct SynthSpec {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  Shape image{1, 16, 16};
  // Gaussian bumps per class template and their width in pixels.
  std::size_t blobs_per_class = 3;
  double blob_sigma = 1.6;
  // Peak height of the class-specific bumps above the shared background.
  double contrast = 0.12;
  double background = 0.35;
  // Per-pixel i.i.d. Gaussian noise and per-sample brightness jitter.
  double noise = 0.08;
  double jitter = 0.05;
  // Seed for the class templates; the sample seed is the synth_dataset argument.
  std::uint64_t layout_seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

// Class-conditional Gaussian-blob images; samples are interleaved by class
// (label = index mod K) and fully determined by (spec, seed).
Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

}  // namespace pk
