#include "ion/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace ion::nn {

namespace {

constexpr char kMagic[8] = {'I', 'O', 'N', 'C', 'K', 'P', 'T', '\0'};
enum : std::uint8_t { kParam = 0, kBuffer = 1, kCounter = 2 };

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  template <typename U>
  void pod(U v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed for '" + path.string() + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), n);
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw std::runtime_error("checkpoint '" + path_.string() + "' is truncated");
  }
  template <typename U>
  U pod() {
    U v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

void write_tensor(Writer& w, const std::string& name, std::uint8_t kind, const Tensor<float>& t) {
  w.str(name);
  w.pod(kind);
  w.pod(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.pod(static_cast<std::uint64_t>(d));
  w.bytes(t.ptr(), t.numel() * sizeof(float));
}

nlohmann::json read_header(Reader& r, const std::filesystem::path& path) {
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("'" + path.string() + "' is not an ION checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  return nlohmann::json::parse(r.str());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model<float>& model,
                     const nlohmann::json& meta) {
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.pod(kCheckpointVersion);
  w.str(nlohmann::json{{"model", model.config()}, {"meta", meta}}.dump());
  const auto buffers = model.buffers();
  const auto counters = model.counters();
  w.pod(static_cast<std::uint32_t>(model.parameters().size() + buffers.size() + counters.size()));
  for (const auto& p : model.parameters()) write_tensor(w, p.name, kParam, p.tensor);
  for (const auto& b : buffers) write_tensor(w, b.name, kBuffer, b.tensor);
  for (const auto& [name, value] : counters) {
    w.str(name);
    w.pod(std::uint8_t{kCounter});
    w.pod(std::uint32_t{0});
    w.pod(static_cast<std::uint64_t>(*value));
  }
  w.finish(path);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r, path);
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, Model<float>& model) {
  Reader r(path);
  auto header = read_header(r, path);
  if (header.at("model") != model.config())
    throw std::runtime_error("checkpoint '" + path.string() + "' was written for model " +
                             header.at("model").dump() + ", not " + model.config().dump());

  std::map<std::string, Tensor<float>> tensors;
  for (const auto& p : model.parameters()) tensors[p.name] = p.tensor;
  for (const auto& b : model.buffers()) tensors[b.name] = b.tensor;
  std::map<std::string, std::uint64_t*> counters;
  for (const auto& [name, value] : model.counters()) counters[name] = value;

  const auto count = r.pod<std::uint32_t>();
  if (count != tensors.size() + counters.size())
    throw std::runtime_error("checkpoint holds " + std::to_string(count) + " records, model has " +
                             std::to_string(tensors.size() + counters.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const auto kind = r.pod<std::uint8_t>();
    const auto rank = r.pod<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
    if (kind == kCounter) {
      auto it = counters.find(name);
      if (it == counters.end() || rank != 0)
        throw std::runtime_error("checkpoint counter '" + name + "' does not match the model");
      *it->second = r.pod<std::uint64_t>();
      continue;
    }
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("model has no tensor '" + name + "'");
    if (it->second.shape() != shape)
      throw std::runtime_error("shape mismatch for '" + name + "': checkpoint " + shape_str(shape) +
                               ", model " + shape_str(it->second.shape()));
    r.bytes(it->second.ptr(), it->second.numel() * sizeof(float));
  }
  return header;
}

}  // namespace ion::nn
