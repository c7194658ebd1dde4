#include "teq/archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace teq {

namespace {

constexpr char kMagic[4] = {'T', 'Q', 'A', '1'};

template <class V>
ArrayEntry make_entry(DType dtype, std::span<const V> values, std::vector<std::uint64_t> shape) {
  ArrayEntry e;
  e.dtype = dtype;
  e.shape = shape.empty() ? std::vector<std::uint64_t>{values.size()} : std::move(shape);
  std::uint64_t count = 1;
  for (auto d : e.shape) count *= d;
  if (count != values.size()) throw Error("array shape does not match value count");
  e.bytes.resize(values.size() * sizeof(V));
  if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
  return e;
}

void put_uint(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t uint(int bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += bytes;
    return v;
  }
  std::span<const std::uint8_t> take(std::uint64_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw Error("archive truncated or corrupt");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i64: return 8;
    case DType::u8: return 1;
  }
  throw Error("unknown dtype");
}

template <class V>
std::vector<V> read_as(const ArrayEntry& e) {
  std::vector<V> out(e.bytes.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

}  // namespace

void ArrayArchive::put(const std::string& name, std::span<const float> values,
                       std::vector<std::uint64_t> shape) {
  entries_[name] = make_entry(DType::f32, values, std::move(shape));
}

void ArrayArchive::put(const std::string& name, std::span<const double> values,
                       std::vector<std::uint64_t> shape) {
  entries_[name] = make_entry(DType::f64, values, std::move(shape));
}

void ArrayArchive::put(const std::string& name, std::span<const std::int64_t> values,
                       std::vector<std::uint64_t> shape) {
  entries_[name] = make_entry(DType::i64, values, std::move(shape));
}

void ArrayArchive::put_string(const std::string& name, const std::string& text) {
  std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(text.data()),
                                      text.size());
  entries_[name] = make_entry(DType::u8, bytes, {});
}

void ArrayArchive::put_scalar(const std::string& name, std::int64_t value) {
  put(name, std::span<const std::int64_t>(&value, 1), {});
}

const ArrayEntry& ArrayArchive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("archive has no entry '" + name + "'");
  return it->second;
}

std::vector<float> ArrayArchive::get_f32(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype == DType::f32) return read_as<float>(e);
  if (e.dtype == DType::f64) {
    const auto d = read_as<double>(e);
    return {d.begin(), d.end()};
  }
  throw Error("entry '" + name + "' is not floating point");
}

std::vector<double> ArrayArchive::get_f64(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype == DType::f64) return read_as<double>(e);
  if (e.dtype == DType::f32) {
    const auto f = read_as<float>(e);
    return {f.begin(), f.end()};
  }
  throw Error("entry '" + name + "' is not floating point");
}

std::vector<std::int64_t> ArrayArchive::get_i64(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::i64) throw Error("entry '" + name + "' is not i64");
  return read_as<std::int64_t>(e);
}

std::string ArrayArchive::get_string(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::u8) throw Error("entry '" + name + "' is not text");
  return {e.bytes.begin(), e.bytes.end()};
}

std::int64_t ArrayArchive::get_scalar(const std::string& name) const {
  const auto v = get_i64(name);
  if (v.size() != 1) throw Error("entry '" + name + "' is not a scalar");
  return v.front();
}

std::vector<std::uint8_t> ArrayArchive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_uint(out, entries_.size(), 4);
  for (const auto& [name, e] : entries_) {
    if (name.size() > 0xffff) throw Error("entry name too long");
    put_uint(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    out.push_back(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) put_uint(out, d, 8);
    put_uint(out, e.bytes.size(), 8);
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  const uLong crc = crc32(0L, out.data(), static_cast<uInt>(out.size()));
  put_uint(out, crc, 4);
  return out;
}

ArrayArchive ArrayArchive::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error("not an array archive");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const auto stored_crc = tail.uint(4);
  if (crc32(0L, body.data(), static_cast<uInt>(body.size())) != stored_crc) {
    throw Error("archive checksum mismatch (corrupt file)");
  }
  Reader r(body.subspan(4));
  ArrayArchive a;
  const auto count = r.uint(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.uint(2);
    const auto name_bytes = r.take(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    ArrayEntry e;
    const auto dtype = r.uint(1);
    if (dtype > 3) throw Error("archive has unknown dtype");
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.uint(1);
    std::uint64_t count_elems = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      e.shape.push_back(r.uint(8));
      count_elems *= e.shape.back();
    }
    const auto len = r.uint(8);
    if (len != count_elems * dtype_size(e.dtype)) throw Error("archive entry size mismatch");
    const auto payload = r.take(len);
    e.bytes.assign(payload.begin(), payload.end());
    a.entries_[name] = std::move(e);
  }
  if (!r.done()) throw Error("archive has trailing bytes");
  return a;
}

void ArrayArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ArrayArchive ArrayArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace teq
