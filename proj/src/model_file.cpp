#include "ternlm/model_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "ternlm/error.hpp"
#include "ternlm/ternary_format.hpp"

static_assert(std::endian::native == std::endian::little,
              "model file I/O assumes a little-endian host");

namespace ternlm {

const char* to_string(DType d) {
  switch (d) {
    case DType::F32: return "F32";
    case DType::I8: return "I8";
    case DType::TERNARY_PACKED: return "TERNARY_PACKED";
  }
  return "?";
}

namespace {

constexpr char kMagic[4] = {'B', '1', '5', '8'};
// Guards against absurd length prefixes in corrupt files.
constexpr std::uint64_t kMaxNameLen = 1 << 16;
constexpr std::uint64_t kMaxJsonLen = 1 << 24;
constexpr std::uint32_t kMaxDims = 8;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename T>
  void put(T v) {
    bytes(&v, sizeof v);
  }
  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os_) throw Error(Errc::io, "write failed");
    count_ += n;
  }
  std::uint64_t count() const { return count_; }

 private:
  std::ostream& os_;
  std::uint64_t count_ = 0;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  template <typename T>
  T get(const char* what) {
    T v{};
    bytes(&v, sizeof v, what);
    return v;
  }
  void bytes(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw Error(Errc::truncated, std::string("stream ended while reading ") + what);
  }
  std::vector<std::uint8_t> blob(std::uint64_t n, const char* what) {
    // Read in chunks so a corrupt length cannot trigger a huge allocation
    // before truncation is noticed.
    std::vector<std::uint8_t> out;
    constexpr std::uint64_t kChunk = 1 << 20;
    while (out.size() < n) {
      const std::uint64_t take = std::min<std::uint64_t>(kChunk, n - out.size());
      const std::size_t old = out.size();
      out.resize(old + take);
      bytes(out.data() + old, take, what);
    }
    return out;
  }

 private:
  std::istream& is_;
};

std::uint64_t dtype_width(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::I8: return 1;
    case DType::TERNARY_PACKED: return 0;
  }
  throw Error(Errc::validation, "unknown dtype");
}

void check_record(const TensorRecord& rec) {
  if (rec.name.empty()) throw Error(Errc::validation, "tensor with empty name");
  if (rec.dtype == DType::TERNARY_PACKED) {
    if (rec.dims.size() != 2)
      throw Error(Errc::validation, "ternary tensor '" + rec.name + "' must be 2-D");
    if (!rec.scale)
      throw Error(Errc::validation, "ternary tensor '" + rec.name + "' lacks a scale");
  } else if (rec.scale) {
    throw Error(Errc::validation, "tensor '" + rec.name + "' carries a scale but is not ternary");
  }
  if (rec.payload.size() != rec.expected_payload_bytes())
    throw Error(Errc::validation,
                "tensor '" + rec.name + "' payload holds " +
                    std::to_string(rec.payload.size()) + " bytes, expected " +
                    std::to_string(rec.expected_payload_bytes()));
}

}  // namespace

std::uint64_t TensorRecord::expected_payload_bytes() const {
  if (dtype == DType::TERNARY_PACKED) {
    if (dims.size() != 2) return 0;
    return dims[0] * packed_row_bytes(dims[1]);
  }
  std::uint64_t n = dtype_width(dtype);
  for (auto d : dims) n *= d;
  return n;
}

const TensorRecord* ModelFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::uint64_t write_model(const ModelFile& m, std::ostream& sink) {
  std::set<std::string> names;
  for (const auto& t : m.tensors) {
    check_record(t);
    if (!names.insert(t.name).second)
      throw Error(Errc::duplicate_tensor, "duplicate tensor name '" + t.name + "'");
  }
  Writer w(sink);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(ModelFile::kVersion);
  const std::string json = to_json(m.config).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(json.size()));
  w.bytes(json.data(), json.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.tensors.size()));
  for (const auto& t : m.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.put<std::uint64_t>(d);
    if (t.scale) w.put<double>(*t.scale);
    w.put<std::uint64_t>(t.payload.size());
    w.bytes(t.payload.data(), t.payload.size());
  }
  return w.count();
}

ModelFile read_model(std::istream& source) {
  Reader r(source);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error(Errc::bad_magic, "not a model file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != ModelFile::kVersion)
    throw Error(Errc::unsupported_version,
                "unsupported model file version " + std::to_string(version));

  ModelFile m;
  const auto json_len = r.get<std::uint32_t>("config length");
  if (json_len > kMaxJsonLen) throw Error(Errc::validation, "config segment too large");
  std::string json(json_len, '\0');
  r.bytes(json.data(), json_len, "config");
  try {
    m.config = config_from_json(nlohmann::json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::validation, std::string("config is not valid JSON: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    if (name_len == 0 || name_len > kMaxNameLen)
      throw Error(Errc::validation, "bad tensor name length");
    t.name.resize(name_len);
    r.bytes(t.name.data(), name_len, "tensor name");
    const auto dt = r.get<std::uint8_t>("dtype");
    if (dt > static_cast<std::uint8_t>(DType::TERNARY_PACKED))
      throw Error(Errc::validation, "tensor '" + t.name + "' has unknown dtype " +
                                        std::to_string(dt));
    t.dtype = static_cast<DType>(dt);
    const auto ndims = r.get<std::uint32_t>("dimension count");
    if (ndims > kMaxDims) throw Error(Errc::validation, "too many dimensions");
    for (std::uint32_t d = 0; d < ndims; ++d)
      t.dims.push_back(r.get<std::uint64_t>("dimensions"));
    if (t.dtype == DType::TERNARY_PACKED) t.scale = r.get<double>("scale");
    const auto len = r.get<std::uint64_t>("payload length");
    if (len != t.expected_payload_bytes())
      throw Error(Errc::validation, "tensor '" + t.name + "' declares " +
                                        std::to_string(len) + " payload bytes, expected " +
                                        std::to_string(t.expected_payload_bytes()));
    t.payload = r.blob(len, "tensor payload");
    if (!names.insert(t.name).second)
      throw Error(Errc::duplicate_tensor, "duplicate tensor name '" + t.name + "'");
    check_record(t);
    m.tensors.push_back(std::move(t));
  }
  return m;
}

std::uint64_t save_model(const ModelFile& m, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  std::uint64_t n = 0;
  try {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot open " + tmp.string() + " for writing");
    n = write_model(m, os);
    os.close();
    if (!os) throw Error(Errc::io, "failed to flush " + tmp.string());
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
  return n;
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io, "cannot open " + path.string());
  return read_model(is);
}

TensorRecord make_f32_record(std::string name, std::vector<std::uint64_t> dims,
                             const std::vector<double>& values) {
  TensorRecord rec{std::move(name), DType::F32, std::move(dims), std::nullopt, {}};
  if (values.size() * 4 != rec.expected_payload_bytes())
    throw Error(Errc::dimension, "value count does not match dims for '" + rec.name + "'");
  rec.payload.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(rec.payload.data() + 4 * i, &f, 4);
  }
  return rec;
}

std::vector<double> f32_values(const TensorRecord& rec) {
  if (rec.dtype != DType::F32)
    throw Error(Errc::validation, "tensor '" + rec.name + "' is " +
                                      to_string(rec.dtype) + ", expected F32");
  std::vector<double> out(rec.payload.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, rec.payload.data() + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

}  // namespace ternlm
