#include "wavediff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wavediff {

namespace {

constexpr char kMagic[4] = {'W', 'D', 'I', 'F'};
constexpr uint32_t kVersion = 1;

uint32_t crc32_bytes(const char* data, size_t n) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) {
    crc = table[(crc ^ static_cast<unsigned char>(data[i])) & 0xFF] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& b, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}
void put_f32(std::string& b, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size()) {
      throw std::runtime_error("checkpoint: truncated file " + path + " at offset " +
                               std::to_string(pos));
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

double u64_as_f64(uint64_t v) {
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}
uint64_t f64_as_u64(double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  return v;
}

NDTensor rng_tensor(const RngStream& s) {
  NDTensor t({2});
  t[0] = u64_as_f64(s.seed());
  t[1] = u64_as_f64(s.counter());
  return t;
}

// Structural encoding of the generator spec, so checkpoints reconstruct their
// model even when the config echo is not a parseable config file.
NDTensor encode_gspec(const GeneratorSpec& s) {
  std::vector<double> v = {
      static_cast<double>(s.levels),
      static_cast<double>(s.base_channels),
      static_cast<double>(s.resblocks_per_scale),
      static_cast<double>(s.latent_dim),
      static_cast<double>(s.latent_mapping_layers),
      static_cast<double>(s.latent_embed_dim),
      static_cast<double>(s.image_channels),
      static_cast<double>(s.image_resolution),
      static_cast<double>(s.channel_mult.size()),
  };
  for (int m : s.channel_mult) v.push_back(m);
  v.push_back(static_cast<double>(s.attention_resolutions.size()));
  for (int a : s.attention_resolutions) v.push_back(a);
  const auto n = static_cast<int64_t>(v.size());
  return NDTensor({n}, std::move(v));
}

GeneratorSpec decode_gspec(const NDTensor& t) {
  GeneratorSpec s;
  size_t i = 0;
  auto next = [&]() { return static_cast<int>(t[static_cast<int64_t>(i++)]); };
  s.levels = next();
  s.base_channels = next();
  s.resblocks_per_scale = next();
  s.latent_dim = next();
  s.latent_mapping_layers = next();
  s.latent_embed_dim = next();
  s.image_channels = next();
  s.image_resolution = next();
  s.channel_mult.resize(next());
  for (int& m : s.channel_mult) m = next();
  s.attention_resolutions.resize(next());
  for (int& a : s.attention_resolutions) a = next();
  return s;
}

}  // namespace

void write_tensor_file(const std::string& path, const std::string& config_blob,
                       const std::vector<NamedTensor>& tensors) {
  std::string b;
  b.append(kMagic, 4);
  put_u32(b, kVersion);
  put_u64(b, config_blob.size());
  b.append(config_blob);
  put_u32(b, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    put_u32(b, static_cast<uint32_t>(nt.name.size()));
    b.append(nt.name);
    b.push_back(nt.f32 ? 0 : 1);
    put_u32(b, static_cast<uint32_t>(nt.tensor.ndim()));
    for (int64_t d = 0; d < nt.tensor.ndim(); ++d) {
      put_u64(b, static_cast<uint64_t>(nt.tensor.dim(d)));
    }
    if (nt.f32) {
      for (int64_t i = 0; i < nt.tensor.size(); ++i) put_f32(b, static_cast<float>(nt.tensor[i]));
    } else {
      for (int64_t i = 0; i < nt.tensor.size(); ++i) put_f64(b, nt.tensor[i]);
    }
  }
  put_u32(b, crc32_bytes(b.data(), b.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

std::pair<std::string, std::vector<NamedTensor>> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a WDIF file");
  }
  const uint32_t stored_crc = crc32_bytes(buf.data(), buf.size() - 4);
  Reader tail{buf, buf.size() - 4, path};
  if (tail.u32() != stored_crc) {
    throw std::runtime_error("checkpoint: CRC mismatch in " + path);
  }

  Reader r{buf, 4, path};
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const uint64_t cfg_len = r.u64();
  std::string config = r.bytes(cfg_len);
  const uint32_t count = r.u32();
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.bytes(r.u32());
    r.need(1);
    const char dtype = r.buf[r.pos++];
    if (dtype != 0 && dtype != 1) {
      throw std::runtime_error("checkpoint: bad dtype tag in " + path);
    }
    nt.f32 = dtype == 0;
    const uint32_t rank = r.u32();
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(r.u64());
    NDTensor t(shape);
    if (nt.f32) {
      for (int64_t j = 0; j < t.size(); ++j) t[j] = static_cast<double>(r.f32());
    } else {
      for (int64_t j = 0; j < t.size(); ++j) t[j] = r.f64();
    }
    nt.tensor = std::move(t);
    tensors.push_back(std::move(nt));
  }
  return {config, tensors};
}

void save_checkpoint(const std::string& path, const TrainState& st,
                     const std::string& config_text) {
  std::vector<NamedTensor> tensors;
  const ParamStore& g = st.generator->params();
  const ParamStore& d = st.discriminator->params();
  for (const auto& name : g.names()) tensors.push_back({"g/" + name, g.at(name)});
  for (const auto& name : d.names()) tensors.push_back({"d/" + name, d.at(name)});
  for (const auto& name : g.names()) tensors.push_back({"ema/" + name, st.ema.at(name)});
  for (const auto& name : g.names()) {
    auto it = st.adam_g.m.find(name);
    if (it == st.adam_g.m.end()) continue;
    tensors.push_back({"opt_g/m/" + name, it->second});
    tensors.push_back({"opt_g/v/" + name, st.adam_g.v.at(name)});
  }
  for (const auto& name : d.names()) {
    auto it = st.adam_d.m.find(name);
    if (it == st.adam_d.m.end()) continue;
    tensors.push_back({"opt_d/m/" + name, it->second});
    tensors.push_back({"opt_d/v/" + name, st.adam_d.v.at(name)});
  }
  NDTensor meta({3});
  meta[0] = static_cast<double>(st.global_step);
  meta[1] = static_cast<double>(st.adam_g.step);
  meta[2] = static_cast<double>(st.adam_d.step);
  tensors.push_back({"meta/steps", meta});
  tensors.push_back({"meta/gspec", encode_gspec(st.gspec())});
  tensors.push_back({"rng/noise", rng_tensor(st.rng_noise)});
  tensors.push_back({"rng/latent", rng_tensor(st.rng_latent)});
  tensors.push_back({"rng/time", rng_tensor(st.rng_time)});
  write_tensor_file(path, config_text, tensors);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto [config_text, tensors] = read_tensor_file(path);
  LoadedCheckpoint out;
  out.config_text = config_text;

  auto find = [&](const std::string& name) -> const NDTensor& {
    for (const auto& nt : tensors) {
      if (nt.name == name) return nt.tensor;
    }
    throw std::runtime_error("checkpoint: missing tensor " + name + " in " + path);
  };

  GeneratorSpec spec = decode_gspec(find("meta/gspec"));
  try {
    out.config = parse_config_text(config_text);
  } catch (const std::exception&) {
    out.config = RunConfig{};  // echo was not a config file; keep defaults
    out.config.raw_text = config_text;
    out.config.data_channels = spec.image_channels;
    out.config.data_resolution = spec.image_resolution;
  }
  out.config.model = spec;

  const uint64_t seed = f64_as_u64(find("rng/noise")[0]);
  out.state = std::make_unique<TrainState>(out.config.model, seed);
  TrainState& st = *out.state;

  for (const auto& name : st.generator->params().names()) {
    st.generator->params().at(name) = find("g/" + name);
    st.ema.at(name) = find("ema/" + name);
  }
  for (const auto& name : st.discriminator->params().names()) {
    st.discriminator->params().at(name) = find("d/" + name);
  }
  for (const auto& nt : tensors) {
    if (nt.name.rfind("opt_g/m/", 0) == 0) st.adam_g.m[nt.name.substr(8)] = nt.tensor;
    if (nt.name.rfind("opt_g/v/", 0) == 0) st.adam_g.v[nt.name.substr(8)] = nt.tensor;
    if (nt.name.rfind("opt_d/m/", 0) == 0) st.adam_d.m[nt.name.substr(8)] = nt.tensor;
    if (nt.name.rfind("opt_d/v/", 0) == 0) st.adam_d.v[nt.name.substr(8)] = nt.tensor;
  }
  const NDTensor& meta = find("meta/steps");
  st.global_step = static_cast<int64_t>(meta[0]);
  st.adam_g.step = static_cast<int64_t>(meta[1]);
  st.adam_d.step = static_cast<int64_t>(meta[2]);
  st.rng_noise.set_counter(f64_as_u64(find("rng/noise")[1]));
  st.rng_latent.set_counter(f64_as_u64(find("rng/latent")[1]));
  st.rng_time.set_counter(f64_as_u64(find("rng/time")[1]));
  return out;
}

}  // namespace wavediff
