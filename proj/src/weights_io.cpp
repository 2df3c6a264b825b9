#include "headlens/model.hpp"

#include <cstring>
#include <fstream>

namespace headlens {

namespace {

constexpr char kMagic[4] = {'H', 'L', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t lo = get_u32(is);
  std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot open for write: " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(file.config.n_layers));
  put_u32(os, static_cast<std::uint32_t>(file.config.n_heads));
  put_u32(os, static_cast<std::uint32_t>(file.config.d_model));
  put_u32(os, static_cast<std::uint32_t>(file.config.d_mlp));
  put_u32(os, static_cast<std::uint32_t>(file.config.vocab_size));
  put_u32(os, static_cast<std::uint32_t>(file.config.max_seq));
  put_u64(os, file.config.seed);
  for (const auto& [name, tensor] : file.tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(tensor->shape.size()));
    for (auto d : tensor->shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (double x : tensor->data) put_f64(os, x);
  }
  if (!os) throw data_error("write failed: " + path.string());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("missing tensor file: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw data_error("bad magic in " + path.string());
  std::uint32_t version = get_u32(is);
  if (version != kVersion) throw data_error("unsupported tensor file version in " + path.string());
  TensorFile file;
  file.config.n_layers = static_cast<int>(get_u32(is));
  file.config.n_heads = static_cast<int>(get_u32(is));
  file.config.d_model = static_cast<int>(get_u32(is));
  file.config.d_mlp = static_cast<int>(get_u32(is));
  file.config.vocab_size = static_cast<int>(get_u32(is));
  file.config.max_seq = static_cast<int>(get_u32(is));
  file.config.seed = get_u64(is);
  while (true) {
    std::uint32_t name_len = get_u32(is);
    if (is.eof() || !is) break;
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(get_u32(is));
      numel *= shape.back();
    }
    DVec data(numel);
    for (auto& x : data) x = get_f64(is);
    if (!is) throw data_error("truncated tensor file: " + path.string());
    file.tensors.emplace_back(std::move(name), tensor_of(std::move(shape), std::move(data)));
  }
  return file;
}

void save_weights(const std::filesystem::path& path, const ModelWeights& w) {
  TensorFile file;
  file.config = w.config;
  file.tensors = w.named_tensors();
  save_tensor_file(path, file);
}

ModelWeights load_weights(const std::filesystem::path& path) {
  TensorFile file = load_tensor_file(path);
  file.config.validate();
  ModelWeights w;
  w.config = file.config;
  w.layers.resize(static_cast<std::size_t>(file.config.n_layers));
  for (auto& [name, tensor] : file.tensors) {
    if (name == "tok_emb") w.tok_emb = tensor;
    else if (name == "pos_emb") w.pos_emb = tensor;
    else if (name == "final_norm") w.final_norm = tensor;
    else if (name == "unembed") w.unembed = tensor;
    else if (name.rfind("layer", 0) == 0) {
      auto dot = name.find('.');
      if (dot == std::string::npos) throw data_error("unknown tensor name: " + name);
      int idx = std::stoi(name.substr(5, dot - 5));
      if (idx < 0 || idx >= file.config.n_layers) throw data_error("layer index out of range: " + name);
      std::string field = name.substr(dot + 1);
      LayerWeights& lw = w.layers[static_cast<std::size_t>(idx)];
      if (field == "att_norm") lw.att_norm = tensor;
      else if (field == "wq") lw.wq = tensor;
      else if (field == "wk") lw.wk = tensor;
      else if (field == "wv") lw.wv = tensor;
      else if (field == "wo") lw.wo = tensor;
      else if (field == "mlp_norm") lw.mlp_norm = tensor;
      else if (field == "w_in") lw.w_in = tensor;
      else if (field == "w_out") lw.w_out = tensor;
      else throw data_error("unknown tensor name: " + name);
    } else {
      throw data_error("unknown tensor name: " + name);
    }
  }
  for (const auto& p : w.parameters())
    if (!p) throw data_error("incomplete weights file: " + path.string());
  return w;
}

}  // namespace headlens
