#include "dtppo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dtppo/errors.hpp"

namespace dtppo {

namespace {

constexpr char kMagic[8] = {'D', 'T', 'P', 'P', 'O', 'C', 'K', '1'};

class Writer {
 public:
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (buf.size() - pos < n) {
      throw CorruptFileError(pos, "checkpoint truncated: need " + std::to_string(n) +
                                      " bytes at offset " + std::to_string(pos));
    }
  }
  std::size_t pos = 0;

 private:
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& buf;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(ck.config_hash);
  w.u64(static_cast<std::uint64_t>(ck.params.step()));
  w.u32(static_cast<std::uint32_t>(ck.metadata.size()));
  w.bytes(ck.metadata.data(), ck.metadata.size());
  const ad::ParamStore& p = ck.params;
  w.u32(static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    w.u16(static_cast<std::uint16_t>(p.name(i).size()));
    w.bytes(p.name(i).data(), p.name(i).size());
    w.u32(2);
    w.u64(p.value(i).rows());
    w.u64(p.value(i).cols());
    for (const ad::Matrix* m : {&p.value(i), &p.first_moment(i), &p.second_moment(i)}) {
      for (double v : m->values()) w.f64(v);
    }
  }
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw CorruptFileError(0, "not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormatVersionMismatch,
                "checkpoint version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.config_hash = r.u64();
  const auto step = static_cast<std::int64_t>(r.u64());
  ck.metadata = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str(r.u16());
    const std::size_t at = r.pos;
    if (r.u32() != 2) throw CorruptFileError(at, "unsupported parameter rank");
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows != 0 && cols > (bytes.size() / 8) / rows) {
      throw CorruptFileError(at, "parameter '" + name + "' shape exceeds file size");
    }
    r.need(rows * cols * 24);
    ad::Matrix value(rows, cols), m(rows, cols), v(rows, cols);
    for (ad::Matrix* dst : {&value, &m, &v}) {
      for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] = r.f64();
    }
    if (ck.params.contains(name)) throw CorruptFileError(at, "duplicate parameter '" + name + "'");
    ck.params.add(name, std::move(value));
    const std::size_t idx = ck.params.size() - 1;
    ck.params.first_moment(idx) = std::move(m);
    ck.params.second_moment(idx) = std::move(v);
  }
  if (r.pos != bytes.size()) throw CorruptFileError(r.pos, "trailing bytes after checkpoint");
  ck.params.set_step(step);
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dtppo
