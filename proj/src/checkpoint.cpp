#include "rediffuse/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace rediffuse {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

// Explicit little-endian integer/float serialization so checkpoints are
// byte-identical across platforms regardless of host endianness.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& b;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream msg;
    msg << "checkpoint: " << what << " (byte offset " << pos << ")";
    throw std::runtime_error(msg.str());
  }

  void need(size_t n) const {
    if (b.size() - pos < n) fail("truncated file");
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }

  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string str(size_t n) {
    need(n);
    std::string s = b.substr(pos, n);
    pos += n;
    return s;
  }
};

void put_tensor_f32(std::string& out, const Tensor<float>& t) {
  put_u32(out, static_cast<uint32_t>(t.ndim));
  for (int d = 0; d < t.ndim; ++d) put_u32(out, static_cast<uint32_t>(t.dims[d]));
  put_u64(out, t.data.size());
  for (float v : t.data) put_f32(out, v);
}

Tensor<float> read_tensor_f32(Reader& r) {
  const uint32_t nd = r.u32();
  if (nd < 1 || nd > 4) r.fail("tensor rank out of range");
  int dims[4] = {1, 1, 1, 1};
  size_t count = 1;
  for (uint32_t d = 0; d < nd; ++d) {
    dims[d] = static_cast<int>(r.u32());
    if (dims[d] <= 0) r.fail("non-positive tensor dimension");
    count *= static_cast<size_t>(dims[d]);
  }
  const uint64_t stored = r.u64();
  if (stored != count) r.fail("tensor element count disagrees with its shape");
  Tensor<float> t;
  switch (nd) {
    case 1: t.resize({dims[0]}); break;
    case 2: t.resize({dims[0], dims[1]}); break;
    case 3: t.resize({dims[0], dims[1], dims[2]}); break;
    default: t.resize({dims[0], dims[1], dims[2], dims[3]}); break;
  }
  for (size_t i = 0; i < count; ++i) t.data[i] = r.f32();
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& ps, const MetaList& meta,
                     const AdamOptimizer<float>* opt) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);

  std::string header;
  for (const auto& [k, v] : meta) header += k + "=" + v + "\n";
  put_u32(out, static_cast<uint32_t>(header.size()));
  out += header;

  put_u32(out, static_cast<uint32_t>(ps.count()));
  for (int i = 0; i < ps.count(); ++i) {
    put_u32(out, static_cast<uint32_t>(ps.names[i].size()));
    out += ps.names[i];
    put_tensor_f32(out, ps.values[i]);
  }

  const bool with_opt = opt != nullptr && !opt->m.empty();
  out.push_back(with_opt ? 1 : 0);
  if (with_opt) {
    if (static_cast<int>(opt->m.size()) != ps.count())
      throw std::runtime_error("checkpoint: optimizer state does not match the parameter store");
    put_u64(out, static_cast<uint64_t>(opt->steps));
    for (int i = 0; i < ps.count(); ++i) {
      put_u64(out, opt->m[i].data.size());
      for (float v : opt->m[i].data) put_f64(out, v);
      for (float v : opt->v[i].data) put_f64(out, v);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + tmp + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: cannot rename '" + tmp + "' to '" + path + "'");
}

bool load_checkpoint(const std::string& path, ParamStore<float>* ps, MetaList* meta,
                     AdamOptimizer<float>* opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{bytes};

  if (r.str(4) != std::string(kMagic, 4)) {
    r.pos = 0;
    r.fail("bad magic (expected RDCK)");
  }
  const uint32_t version = r.u32();
  if (version != kVersion) r.fail("unsupported format version");

  const uint32_t header_len = r.u32();
  const std::string header = r.str(header_len);
  if (meta) {
    meta->clear();
    std::istringstream hs(header);
    std::string line;
    while (std::getline(hs, line)) {
      const size_t eq = line.find('=');
      if (eq == std::string::npos) r.fail("malformed header line '" + line + "'");
      meta->emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
  }

  ps->names.clear();
  ps->values.clear();
  ps->grads.clear();
  const uint32_t ntensors = r.u32();
  std::set<std::string> seen;
  for (uint32_t i = 0; i < ntensors; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    if (!seen.insert(name).second) r.fail("duplicate tensor name '" + name + "'");
    Tensor<float> t = read_tensor_f32(r);
    ps->add(name, std::move(t));
  }

  r.need(1);
  const bool with_opt = bytes[r.pos] != 0;
  ++r.pos;
  if (!with_opt || opt == nullptr) return with_opt && opt != nullptr;

  opt->steps = static_cast<int64_t>(r.u64());
  opt->m.assign(ntensors, {});
  opt->v.assign(ntensors, {});
  for (uint32_t i = 0; i < ntensors; ++i) {
    const uint64_t n = r.u64();
    if (n != ps->values[i].data.size()) r.fail("optimizer state size mismatch");
    opt->m[i] = zeros_like(ps->values[i]);
    opt->v[i] = zeros_like(ps->values[i]);
    for (uint64_t j = 0; j < n; ++j) opt->m[i].data[j] = static_cast<float>(r.f64());
    for (uint64_t j = 0; j < n; ++j) opt->v[i].data[j] = static_cast<float>(r.f64());
  }
  return true;
}

}  // namespace rediffuse
