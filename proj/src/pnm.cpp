#include "wavediff/pnm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace wavediff {

namespace {

struct PnmReader {
  std::string buf;
  size_t pos = 0;
  std::string path;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("pnm: " + what + " in " + path + " at offset " +
                             std::to_string(pos));
  }

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      const char c = buf[pos];
      if (c == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int64_t read_int() {
    skip_space_and_comments();
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      fail("expected integer");
    }
    int64_t v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos] - '0');
      ++pos;
    }
    return v;
  }
};

}  // namespace

uint8_t quantize_unit(double v) {
  v = std::clamp(v, -1.0, 1.0);
  const double q = std::floor(127.5 * (v + 1.0) + 0.5);
  return static_cast<uint8_t>(std::min(q, 255.0));
}

NDTensor load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pnm: cannot open " + path);
  PnmReader r;
  r.path = path;
  r.buf.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (r.buf.size() < 2 || r.buf[0] != 'P' || (r.buf[1] != '5' && r.buf[1] != '6')) {
    r.fail("bad magic (want binary P5 or P6)");
  }
  const int channels = r.buf[1] == '5' ? 1 : 3;
  r.pos = 2;
  const int64_t width = r.read_int();
  const int64_t height = r.read_int();
  const int64_t maxval = r.read_int();
  if (width <= 0 || height <= 0) r.fail("nonpositive dimensions");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (want 255)");
  // exactly one whitespace byte separates the header from the payload
  if (r.pos >= r.buf.size() || !std::isspace(static_cast<unsigned char>(r.buf[r.pos]))) {
    r.fail("missing header terminator");
  }
  ++r.pos;
  const size_t need = static_cast<size_t>(width * height * channels);
  if (r.buf.size() - r.pos < need) r.fail("payload shorter than header promises");

  NDTensor img({channels, height, width});
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      for (int64_t c = 0; c < channels; ++c) {
        const auto byte = static_cast<unsigned char>(r.buf[r.pos++]);
        img[(c * height + y) * width + x] = byte / 127.5 - 1.0;
      }
    }
  }
  return img;
}

void save_pnm(const std::string& path, const NDTensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw std::invalid_argument("pnm: image must be [C,H,W] with 1 or 3 channels, got " +
                                shape_str(image.shape()));
  }
  const int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("pnm: cannot open " + path + " for writing");
  out << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  std::string payload;
  payload.reserve(static_cast<size_t>(C * H * W));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < C; ++c)
        payload.push_back(static_cast<char>(quantize_unit(image[(c * H + y) * W + x])));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("pnm: short write to " + path);
}

NDTensor load_image_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(entry.path().string());
  }
  if (files.empty()) throw std::runtime_error("pnm: no .pgm/.ppm files in " + dir);
  std::sort(files.begin(), files.end());

  NDTensor first = load_pnm(files[0]);
  Shape batch_shape = {static_cast<int64_t>(files.size()), first.dim(0), first.dim(1),
                       first.dim(2)};
  NDTensor batch(batch_shape);
  const int64_t plane = first.size();
  for (size_t i = 0; i < files.size(); ++i) {
    NDTensor img = i == 0 ? std::move(first) : load_pnm(files[i]);
    if (img.shape() != Shape{batch_shape[1], batch_shape[2], batch_shape[3]}) {
      throw std::runtime_error("pnm: mixed image sizes, " + files[i] + " is " +
                               shape_str(img.shape()) + " but " + files[0] + " is " +
                               shape_str({batch_shape[1], batch_shape[2], batch_shape[3]}));
    }
    for (int64_t j = 0; j < plane; ++j) batch[static_cast<int64_t>(i) * plane + j] = img[j];
  }
  return batch;
}

std::vector<std::string> save_image_batch(const std::string& dir, const NDTensor& batch) {
  if (batch.ndim() != 4) throw std::invalid_argument("save_image_batch: expected [N,C,H,W]");
  std::filesystem::create_directories(dir);
  const int64_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  const char* ext = C == 1 ? ".pgm" : ".ppm";
  std::vector<std::string> files;
  for (int64_t i = 0; i < N; ++i) {
    NDTensor img({C, H, W});
    for (int64_t j = 0; j < img.size(); ++j) img[j] = batch[i * img.size() + j];
    std::string name = "sample_" + std::to_string(i) + ext;
    save_pnm(dir + "/" + name, img);
    files.push_back(name);
  }
  return files;
}

}  // namespace wavediff
