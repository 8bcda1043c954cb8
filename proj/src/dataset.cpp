#include "preemptkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "preemptkit/fingerprint.hpp"
#include "preemptkit/random.hpp"

namespace pk {

Shape Dataset::image_shape() const { return images.empty() ? Shape{} : images.front().shape(); }

void Dataset::validate() const {
  if (images.size() != labels.size() || images.size() != ids.size()) {
    throw ShapeError("dataset: images, labels and ids differ in length");
  }
  if (classes < 2) throw ConfigError("dataset: need at least 2 classes");
  const Shape shape = image_shape();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape) throw ShapeError("dataset: image " + std::to_string(i) + " has a different shape");
    if (labels[i] >= classes) throw ConfigError("dataset: label out of range at " + std::to_string(i));
    for (float v : images[i].data()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("dataset: pixel outside [0,1] in image " + std::to_string(i));
    }
  }
}

Dataset Dataset::subset(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw ConfigError("dataset: subset out of range");
  Dataset out;
  out.classes = classes;
  out.provenance = provenance;
  out.images.assign(images.begin() + static_cast<std::ptrdiff_t>(begin),
                    images.begin() + static_cast<std::ptrdiff_t>(begin + count));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  out.ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

std::string dataset_fingerprint(const Dataset& data) {
  std::vector<std::uint8_t> bytes;
  auto put64 = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  };
  const Shape s = data.image_shape();
  put64(data.size());
  put64(s.channels);
  put64(s.height);
  put64(s.width);
  put64(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (float v : data.images[i].data()) {
      std::uint32_t u;
      std::memcpy(&u, &v, sizeof u);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
    }
    put64(data.labels[i]);
    put64(data.ids[i]);
  }
  return sha256_hex(bytes);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
         (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

}  // namespace

Dataset parse_idx(const std::vector<std::uint8_t>& image_bytes, const std::vector<std::uint8_t>& label_bytes,
                  std::size_t classes, std::size_t limit) {
  if (image_bytes.size() < 16) throw FormatError("IDX images: truncated header");
  if (label_bytes.size() < 8) throw FormatError("IDX labels: truncated header");
  if (be32(image_bytes, 0) != 0x00000803) throw FormatError("IDX images: bad magic (expected 0x00000803)");
  if (be32(label_bytes, 0) != 0x00000801) throw FormatError("IDX labels: bad magic (expected 0x00000801)");
  const std::size_t count = be32(image_bytes, 4);
  const std::size_t rows = be32(image_bytes, 8);
  const std::size_t cols = be32(image_bytes, 12);
  const std::size_t label_count = be32(label_bytes, 4);
  if (count != label_count) {
    throw FormatError("IDX: " + std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
  }
  if (rows == 0 || cols == 0) throw FormatError("IDX images: zero-sized images");
  if (image_bytes.size() < 16 + count * rows * cols) throw FormatError("IDX images: truncated pixel data");
  if (label_bytes.size() < 8 + count) throw FormatError("IDX labels: truncated label data");

  const std::size_t take = limit == 0 ? count : std::min(limit, count);
  Dataset out;
  out.classes = classes;
  out.images.reserve(take);
  const std::size_t plane = rows * cols;
  for (std::size_t i = 0; i < take; ++i) {
    std::vector<float> pixels(plane);
    for (std::size_t p = 0; p < plane; ++p) pixels[p] = static_cast<float>(image_bytes[16 + i * plane + p]) / 255.0f;
    out.images.emplace_back(Shape{1, rows, cols}, std::move(pixels));
    out.labels.push_back(label_bytes[8 + i]);
    out.ids.push_back(i);
  }
  out.validate();
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes, std::size_t limit) {
  Dataset out = parse_idx(read_file(images_path), read_file(labels_path), classes, limit);
  out.provenance = {{"kind", "idx"}, {"images", images_path.string()}, {"labels", labels_path.string()}, {"limit", limit}};
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic blobs

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (per_class == 0) throw ConfigError("synth: per_class must be positive");
  if (image.size() == 0) throw ConfigError("synth: empty image shape");
  if (blobs_per_class == 0) throw ConfigError("synth: blobs_per_class must be positive");
  if (!(blob_sigma > 0.0)) throw ConfigError("synth: blob_sigma must be positive");
  if (noise < 0.0 || jitter < 0.0) throw ConfigError("synth: noise and jitter must be non-negative");
}

nlohmann::json SynthSpec::to_json() const {
  return {{"classes", classes},
          {"per_class", per_class},
          {"image", {image.channels, image.height, image.width}},
          {"blobs_per_class", blobs_per_class},
          {"blob_sigma", blob_sigma},
          {"contrast", contrast},
          {"background", background},
          {"noise", noise},
          {"jitter", jitter},
          {"layout_seed", layout_seed}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.classes = j.value("classes", s.classes);
  s.per_class = j.value("per_class", s.per_class);
  if (j.contains("image")) {
    const auto& im = j.at("image");
    s.image = {im.at(0).get<std::size_t>(), im.at(1).get<std::size_t>(), im.at(2).get<std::size_t>()};
  }
  s.blobs_per_class = j.value("blobs_per_class", s.blobs_per_class);
  s.blob_sigma = j.value("blob_sigma", s.blob_sigma);
  s.contrast = j.value("contrast", s.contrast);
  s.background = j.value("background", s.background);
  s.noise = j.value("noise", s.noise);
  s.jitter = j.value("jitter", s.jitter);
  s.layout_seed = j.value("layout_seed", s.layout_seed);
  s.validate();
  return s;
}

Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Shape shape = spec.image;

  // Class templates: background plus Gaussian bumps at class-specific centres
  // in a class-specific channel mix.
  Rng layout(spec.layout_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Tensor> templates;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    Tensor t(shape, static_cast<float>(spec.background));
    for (std::size_t b = 0; b < spec.blobs_per_class; ++b) {
      const double cy = 1.5 + unit(layout) * (static_cast<double>(shape.height) - 3.0);
      const double cx = 1.5 + unit(layout) * (static_cast<double>(shape.width) - 3.0);
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const double gain = shape.channels == 1 ? 1.0 : 0.5 + unit(layout);
        for (std::size_t h = 0; h < shape.height; ++h) {
          for (std::size_t w = 0; w < shape.width; ++w) {
            const double dy = static_cast<double>(h) - cy;
            const double dx = static_cast<double>(w) - cx;
            const double bump = std::exp(-(dy * dy + dx * dx) / (2.0 * spec.blob_sigma * spec.blob_sigma));
            t.at(c, h, w) += static_cast<float>(spec.contrast * gain * bump);
          }
        }
      }
    }
    templates.push_back(std::move(t));
  }

  Rng rng(seed);
  std::normal_distribution<double> pixel_noise(0.0, spec.noise > 0.0 ? spec.noise : 1.0);
  std::normal_distribution<double> brightness(0.0, spec.jitter > 0.0 ? spec.jitter : 1.0);
  Dataset out;
  out.classes = spec.classes;
  const std::size_t total = spec.classes * spec.per_class;
  out.images.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t k = i % spec.classes;
    Tensor img = templates[k];
    const double shift = spec.jitter > 0.0 ? brightness(rng) : 0.0;
    for (std::size_t p = 0; p < img.size(); ++p) {
      const double noise = spec.noise > 0.0 ? pixel_noise(rng) : 0.0;
      img[p] = static_cast<float>(std::clamp(static_cast<double>(img[p]) + shift + noise, 0.0, 1.0));
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(k);
    out.ids.push_back(i);
  }
  out.provenance = {{"kind", "synthetic"}, {"seed", seed}, {"spec", spec.to_json()}};
  return out;
}

}  // namespace pk
