#include "mancount/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace mancount {

namespace {

constexpr char kMagic[4] = {'M', 'A', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ofstream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& path, std::ifstream& in) : path_(path), in_(in) {}

  [[noreturn]] void fail(const std::string& what) {
    throw ParseError(path_ + ": offset " + std::to_string(offset_) + ": " + what);
  }

  bool at_eof() { return in_.peek() == EOF; }

  void read_bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      offset_ += static_cast<std::size_t>(in_.gcount());
      fail(std::string("truncated ") + what);
    }
    offset_ += n;
  }

  std::uint32_t read_u32(const char* what) {
    unsigned char b[4];
    read_bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float read_f32(const char* what) {
    const std::uint32_t bits = read_u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

 private:
  const std::string& path_;
  std::ifstream& in_;
  std::size_t offset_ = 0;
};

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int a = 0; a < t.rank(); ++a) {
    put_u32(out, static_cast<std::uint32_t>(t.extent(a)));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    put_f32(out, static_cast<float>(t[i]));
  }
}

Tensor config_scalar(double v) { return Tensor({1}, {v}); }

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  write_tensor(out, "config/dim", config_scalar(params.config.dim));
  write_tensor(out, "config/layers", config_scalar(params.config.layers));
  write_tensor(out, "config/ffn_hidden", config_scalar(params.config.ffn()));
  write_tensor(out, "config/backbone_c1", config_scalar(params.config.backbone_c1));
  write_tensor(out, "config/backbone_c2", config_scalar(params.config.backbone_c2));
  write_tensor(out, "config/use_lra", config_scalar(params.config.use_lra ? 1 : 0));
  params.for_each([&](const std::string& name, const Tensor& t) {
    write_tensor(out, name, t);
  });
  if (!out) throw IoError("failed writing " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Reader r(path, in);
  char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError(path + ": offset 0: bad magic, expected \"MANT\"");
  }
  const std::uint32_t version = r.read_u32("version");
  if (version != kVersion) {
    r.fail("unsupported format version " + std::to_string(version));
  }
  std::map<std::string, Tensor> entries;
  while (!r.at_eof()) {
    const std::uint32_t name_len = r.read_u32("name length");
    if (name_len == 0 || name_len > 4096) r.fail("implausible name length");
    std::string name(name_len, '\0');
    r.read_bytes(name.data(), name_len, "name");
    const std::uint32_t rank = r.read_u32("rank");
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank));
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::uint32_t e = r.read_u32("extent");
      if (e == 0 || e > (1u << 24)) r.fail("implausible extent");
      shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
      data[i] = static_cast<double>(r.read_f32("payload"));
    }
    entries.emplace(name, Tensor(std::move(shape), std::move(data)));
  }

  auto config_value = [&](const std::string& key) {
    auto it = entries.find(key);
    if (it == entries.end()) {
      throw ParseError(path + ": missing checkpoint entry " + key);
    }
    return it->second.value();
  };
  ModelConfig config;
  config.dim = static_cast<int>(config_value("config/dim"));
  config.layers = static_cast<int>(config_value("config/layers"));
  config.ffn_hidden = static_cast<int>(config_value("config/ffn_hidden"));
  config.backbone_c1 = static_cast<int>(config_value("config/backbone_c1"));
  config.backbone_c2 = static_cast<int>(config_value("config/backbone_c2"));
  config.use_lra = config_value("config/use_lra") != 0.0;
  config.validate();

  ModelParams params = init_params(config, 0);
  params.for_each([&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      throw ParseError(path + ": missing checkpoint entry " + name);
    }
    if (it->second.shape() != t.shape()) {
      throw ParseError(path + ": entry " + name + " has shape " +
                       shape_str(it->second.shape()) + ", expected " +
                       shape_str(t.shape()));
    }
    t = it->second;
  });
  return params;
}

}  // namespace mancount
