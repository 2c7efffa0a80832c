#include "contour/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace contour {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'N', 'T', 'R', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <class U>
  void put(U v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  template <class U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > size_ - pos_) throw FormatError("checkpoint truncated");
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint8_t group_code(ad::ParamGroup g) { return static_cast<std::uint8_t>(g); }

ad::ParamGroup group_from_code(std::uint8_t c) {
  if (c > static_cast<std::uint8_t>(ad::ParamGroup::Fixed)) {
    throw FormatError("checkpoint: unknown parameter group code " + std::to_string(c));
  }
  return static_cast<ad::ParamGroup>(c);
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ad::ParameterStore<T>& store,
                     const nlohmann::json& meta) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string m = meta.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.size()));
  w.bytes(m.data(), m.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store) {
    if (p.name.size() > 0xFFFF) throw FormatError("checkpoint: parameter name too long");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.put<std::uint8_t>(sizeof(T) == 4 ? 1 : 2);
    w.put<std::uint8_t>(group_code(p.group));
    w.put<std::uint8_t>(p.trainable ? 1 : 0);
    w.put<std::uint8_t>(0);
    for (auto d : p.value.shape().dims) w.put<std::int64_t>(d);
    w.bytes(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(T));
  }
  w.put<std::uint32_t>(crc32_of(w.buffer().data(), w.buffer().size()));

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointContents read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 16) throw FormatError("checkpoint truncated: " + path.string());
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a checkpoint (bad magic): " + path.string());
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32_of(buf.data(), buf.size() - 4) != stored_crc) {
    throw FormatError("checkpoint CRC mismatch: " + path.string());
  }

  Reader r(buf.data(), buf.size() - 4);
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointContents out;
  const auto mlen = r.get<std::uint32_t>();
  const char* m = r.take(mlen);
  try {
    out.meta = nlohmann::json::parse(m, m + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto nlen = r.get<std::uint16_t>();
    rec.name.assign(r.take(nlen), nlen);
    const auto dtype = r.get<std::uint8_t>();
    rec.group = group_from_code(r.get<std::uint8_t>());
    rec.trainable = (r.get<std::uint8_t>() & 1) != 0;
    r.get<std::uint8_t>();
    for (auto& d : rec.shape.dims) {
      d = r.get<std::int64_t>();
      if (d < 0) throw FormatError("checkpoint: negative dimension in " + rec.name);
    }
    const auto n = static_cast<std::size_t>(rec.shape.size());
    rec.values.resize(n);
    if (dtype == 1) {
      const char* p = r.take(n * 4);
      for (std::size_t j = 0; j < n; ++j) {
        float f;
        std::memcpy(&f, p + 4 * j, 4);
        rec.values[j] = f;
      }
    } else if (dtype == 2) {
      std::memcpy(rec.values.data(), r.take(n * 8), n * 8);
    } else {
      throw FormatError("checkpoint: unknown dtype code " + std::to_string(dtype));
    }
    out.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes before CRC");
  return out;
}

template <class T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, ad::ParameterStore<T>& store) {
  CheckpointContents c = read_checkpoint(path);
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& rec : c.records) by_name[rec.name] = &rec;
  for (auto& p : store) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    const CheckpointRecord& rec = *it->second;
    if (!(rec.shape == p.value.shape())) {
      throw FormatError("checkpoint shape " + rec.shape.str() + " for '" + p.name + "' expected " +
                        p.value.shape().str());
    }
    for (std::size_t j = 0; j < rec.values.size(); ++j) {
      p.value[static_cast<std::int64_t>(j)] = static_cast<T>(rec.values[j]);
    }
  }
  return c.meta;
}

template void save_checkpoint(const std::filesystem::path&, const ad::ParameterStore<float>&,
                              const nlohmann::json&);
template void save_checkpoint(const std::filesystem::path&, const ad::ParameterStore<double>&,
                              const nlohmann::json&);
template nlohmann::json load_checkpoint(const std::filesystem::path&, ad::ParameterStore<float>&);
template nlohmann::json load_checkpoint(const std::filesystem::path&, ad::ParameterStore<double>&);

}  // namespace contour
