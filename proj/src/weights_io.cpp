#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ssmpose/model.hpp"

namespace ssmpose {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'M', 'P', 'W', 'G', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<uint64_t>(v)); }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& in) : in_(in) {}
  void need(size_t n, const char* what) {
    if (pos_ + n > in_.size()) {
      throw FormatError(std::string("weights file truncated while reading ") + what);
    }
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<uint8_t>& in_;
  size_t pos_ = 0;
};

template <typename T>
constexpr uint8_t dtype_code() {
  return sizeof(T) == 4 ? 1 : 2;
}

}  // namespace

template <typename T>
std::vector<uint8_t> encode_archive(uint64_t fingerprint, const std::vector<Parameter<T>>& entries) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.uint<uint32_t>(kWeightsVersion);
  w.uint<uint64_t>(fingerprint);
  w.uint<uint32_t>(static_cast<uint32_t>(entries.size()));
  for (const auto& p : entries) {
    w.uint<uint32_t>(static_cast<uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.uint<uint8_t>(dtype_code<T>());
    w.uint<uint8_t>(static_cast<uint8_t>(p.tensor.rank()));
    for (int64_t e : p.tensor.shape()) w.uint<uint64_t>(static_cast<uint64_t>(e));
    for (T v : p.tensor.data()) {
      if constexpr (sizeof(T) == 4) {
        w.f32(v);
      } else {
        w.f64(v);
      }
    }
  }
  return w.take();
}

Archive decode_archive(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError("not a weights file (bad magic)");
  }
  const uint32_t version = r.uint<uint32_t>("version");
  if (version != kWeightsVersion) {
    throw FormatError("weights format version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kWeightsVersion) + ")");
  }
  Archive archive;
  archive.fingerprint = r.uint<uint64_t>("fingerprint");
  const uint32_t count = r.uint<uint32_t>("entry count");
  for (uint32_t k = 0; k < count; ++k) {
    ArchiveEntry e;
    const uint32_t name_len = r.uint<uint32_t>("name length");
    e.name = r.str(name_len, "name");
    e.dtype = r.uint<uint8_t>("dtype");
    if (e.dtype != 1 && e.dtype != 2) {
      throw FormatError("entry '" + e.name + "' has unknown dtype code " + std::to_string(e.dtype));
    }
    const uint8_t rank = r.uint<uint8_t>("rank");
    int64_t n = 1;
    for (uint8_t i = 0; i < rank; ++i) {
      const uint64_t extent = r.uint<uint64_t>("extent");
      if (extent == 0 || extent > (1ull << 40)) {
        throw FormatError("entry '" + e.name + "' has invalid extent");
      }
      e.shape.push_back(static_cast<int64_t>(extent));
      n *= static_cast<int64_t>(extent);
    }
    r.need(static_cast<size_t>(n) * (e.dtype == 1 ? 4 : 8), "tensor data");
    e.values.resize(static_cast<size_t>(n));
    for (auto& v : e.values) {
      v = e.dtype == 1 ? static_cast<double>(std::bit_cast<float>(r.uint<uint32_t>("data")))
                       : std::bit_cast<double>(r.uint<uint64_t>("data"));
    }
    archive.entries.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last weights entry");
  return archive;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

template <typename T>
void assign_archive(std::vector<Parameter<T>>& params, const Archive& archive,
                    const std::string& what, std::optional<uint64_t> fingerprint) {
  for (size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    const ArchiveEntry* match = nullptr;
    for (const auto& e : archive.entries) {
      if (e.name == p.name) {
        match = &e;
        break;
      }
    }
    if (!match) throw FormatError(what + ": missing entry '" + p.name + "'");
    if (match->shape != p.tensor.shape()) {
      throw FormatError(what + ": entry '" + p.name + "' has shape " + shape_str(match->shape) +
                        ", expected " + shape_str(p.tensor.shape()));
    }
  }
  if (archive.entries.size() != params.size()) {
    for (const auto& e : archive.entries) {
      bool known = false;
      for (const auto& p : params) known = known || p.name == e.name;
      if (!known) throw FormatError(what + ": unexpected entry '" + e.name + "'");
    }
    throw FormatError(what + ": duplicate entries");
  }
  if (fingerprint && archive.fingerprint != *fingerprint) {
    throw FormatError(what + ": architecture fingerprint differs from the model configuration");
  }
  for (auto& p : params) {
    for (const auto& e : archive.entries) {
      if (e.name != p.name) continue;
      auto data = p.tensor.mutable_data();
      for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(e.values[i]);
      break;
    }
  }
}

template <typename T>
void save_weights(const Model<T>& model, const std::string& path) {
  write_file_bytes(path, encode_archive<T>(model.config().fingerprint(), model.parameters()));
}

template <typename T>
void load_weights(Model<T>& model, const std::string& path) {
  const Archive archive = decode_archive(read_file_bytes(path));
  assign_archive<T>(model.parameters(), archive, path, model.config().fingerprint());
}

template std::vector<uint8_t> encode_archive<float>(uint64_t, const std::vector<Parameter<float>>&);
template std::vector<uint8_t> encode_archive<double>(uint64_t, const std::vector<Parameter<double>>&);
template void assign_archive<float>(std::vector<Parameter<float>>&, const Archive&, const std::string&,
                                    std::optional<uint64_t>);
template void assign_archive<double>(std::vector<Parameter<double>>&, const Archive&,
                                     const std::string&, std::optional<uint64_t>);
template void save_weights<float>(const Model<float>&, const std::string&);
template void save_weights<double>(const Model<double>&, const std::string&);
template void load_weights<float>(Model<float>&, const std::string&);
template void load_weights<double>(Model<double>&, const std::string&);

}  // namespace ssmpose
