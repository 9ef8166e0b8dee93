#include "wavediff/dataset.hpp"

#include <cmath>
#include <stdexcept>

#include "wavediff/pnm.hpp"

namespace wavediff {

namespace {

void paint_blob(NDTensor& img, int64_t c, double cy, double cx, double sigma, double bg,
                double peak) {
  const int64_t H = img.dim(1), W = img.dim(2);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const double v = bg + (peak - bg) * std::exp(-d2 / (2.0 * sigma * sigma));
      img[(c * H + y) * W + x] = v;
    }
  }
}

NDTensor two_mode_image(int res, int channels, int mode, RngStream* jitter) {
  NDTensor img({channels, res, res});
  const double bg = -0.85, peak = 0.9;
  const double sigma = res / 6.0;
  double cy = mode == 0 ? res / 4.0 : 3.0 * res / 4.0;
  double cx = cy;
  double amp = 1.0;
  if (jitter) {
    cy += 2.0 * jitter->uniform() - 1.0;
    cx += 2.0 * jitter->uniform() - 1.0;
    amp = 0.9 + 0.1 * jitter->uniform();
  }
  for (int64_t c = 0; c < channels; ++c) {
    paint_blob(img, c, cy, cx, sigma, bg, bg + (peak - bg) * amp);
  }
  if (jitter) {
    for (int64_t i = 0; i < img.size(); ++i) {
      img[i] = std::clamp(img[i] + 0.01 * jitter->normal(), -1.0, 1.0);
    }
  }
  return img;
}

NDTensor shapes_image(int res, int channels, RngStream& rng) {
  NDTensor img = NDTensor::full({channels, res, res}, -0.9);
  const bool circle = rng.uniform() < 0.5;
  const double size = res / 6.0 + rng.uniform() * res / 6.0;
  const double cy = size + rng.uniform() * (res - 2.0 * size);
  const double cx = size + rng.uniform() * (res - 2.0 * size);
  const double value = 0.3 + 0.6 * rng.uniform();
  for (int64_t c = 0; c < channels; ++c) {
    const double tint = value * (1.0 - 0.15 * static_cast<double>(c));
    for (int64_t y = 0; y < res; ++y) {
      for (int64_t x = 0; x < res; ++x) {
        bool inside = circle
                          ? ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= size * size)
                          : (std::fabs(y - cy) <= size && std::fabs(x - cx) <= size);
        if (inside) img[(c * res + y) * res + x] = tint;
      }
    }
  }
  return img;
}

NDTensor checkerboard_image(int res, int channels, RngStream& rng) {
  const int cells[3] = {2, 4, 8};
  const int cell = cells[rng.uniform_index(3)];
  const int phase = static_cast<int>(rng.uniform_index(2));
  const double lo = -0.8 + 0.2 * rng.uniform();
  const double hi = 0.6 + 0.3 * rng.uniform();
  NDTensor img({channels, res, res});
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t y = 0; y < res; ++y)
      for (int64_t x = 0; x < res; ++x) {
        const bool odd = ((y / cell + x / cell + phase) % 2) == 1;
        img[(c * res + y) * res + x] = odd ? hi : lo;
      }
  return img;
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.count < 1 || spec.resolution < 4) {
    throw std::invalid_argument("dataset: count and resolution must be positive");
  }
  if (spec.channels != 1 && spec.channels != 3) {
    throw std::invalid_argument("dataset: channels must be 1 or 3");
  }
  Dataset data;
  data.kind = spec.kind;
  data.images = NDTensor({spec.count, spec.channels, spec.resolution, spec.resolution});
  const int64_t plane = data.images.size() / spec.count;

  for (int i = 0; i < spec.count; ++i) {
    RngStream rng(spec.seed, "sample." + std::to_string(i));
    NDTensor img;
    if (spec.kind == "two-mode-gaussian-images") {
      const int mode = static_cast<int>(rng.uniform_index(2));
      img = two_mode_image(spec.resolution, spec.channels, mode, &rng);
    } else if (spec.kind == "shapes") {
      img = shapes_image(spec.resolution, spec.channels, rng);
    } else if (spec.kind == "checkerboard") {
      img = checkerboard_image(spec.resolution, spec.channels, rng);
    } else {
      throw std::invalid_argument("dataset: unknown kind '" + spec.kind + "'");
    }
    for (int64_t j = 0; j < plane; ++j) data.images[i * plane + j] = img[j];
  }

  if (spec.kind == "two-mode-gaussian-images") {
    data.mode_templates.push_back(two_mode_image(spec.resolution, spec.channels, 0, nullptr));
    data.mode_templates.push_back(two_mode_image(spec.resolution, spec.channels, 1, nullptr));
  }
  return data;
}

Dataset load_dataset(const std::string& source, int resolution, int channels, int count,
                     uint64_t seed) {
  if (source == "two-mode-gaussian-images" || source == "shapes" || source == "checkerboard") {
    return make_synthetic({source, resolution, channels, count, seed});
  }
  Dataset data;
  data.kind = "directory";
  data.images = load_image_dir(source);
  if (data.images.dim(1) != channels || data.images.dim(2) != resolution) {
    throw std::runtime_error("dataset: images in " + source + " are " +
                             shape_str(data.images.shape()) + ", config expects " +
                             std::to_string(channels) + "x" + std::to_string(resolution) + "x" +
                             std::to_string(resolution));
  }
  return data;
}

}  // namespace wavediff
