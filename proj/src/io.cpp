#include "vcnn/io.hpp"

#include <cstdio>
#include <fstream>

namespace vcnn {

namespace {

std::vector<uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("error reading '" + path + "'");
  return bytes;
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size())
    throw ParseError("'" + path + "': truncated header, need 4 bytes at offset " +
                     std::to_string(off) + ", file has " + std::to_string(b.size()));
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

// Little-endian cursor-based reader/writer for the model format.
struct Writer {
  std::vector<uint8_t> bytes;
  void u8(uint8_t v) { bytes.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, size_t n) {
    const uint8_t* q = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), q, q + n);
  }
};

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t off = 0;
  std::string path;

  void need(size_t n, const char* what) const {
    if (off + n > bytes.size())
      throw ParseError("model '" + path + "': truncated " + what + " at offset " +
                       std::to_string(off) + " (need " + std::to_string(n) + " bytes, " +
                       std::to_string(bytes.size() - off) + " left)");
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[off++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(bytes[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  void raw(void* p, size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, bytes.data() + off, n);
    off += n;
  }
};

uint64_t fnv1a(const uint8_t* p, size_t n) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

Activation activation_from_u8(uint8_t v, const std::string& path) {
  switch (v) {
    case 0: return Activation::identity;
    case 1: return Activation::relu;
    case 2: return Activation::sigmoid;
    case 3: return Activation::tanh;
  }
  throw ParseError("model '" + path + "': unknown activation tag " + std::to_string(v));
}

uint8_t activation_to_u8(Activation a) {
  switch (a) {
    case Activation::identity: return 0;
    case Activation::relu: return 1;
    case Activation::sigmoid: return 2;
    case Activation::tanh: return 3;
  }
  return 0;
}

}  // namespace

IdxFile load_idx_file(const std::string& path) {
  const std::vector<uint8_t> bytes = read_all(path);
  IdxFile f;
  f.magic = read_be32(bytes, 0, path);
  if (f.magic != kIdxLabelMagic && f.magic != kIdxImageMagic)
    throw ParseError("idx '" + path + "': bad magic " + std::to_string(f.magic) +
                     " at offset 0 (expected 2049 or 2051)");
  const size_t dims = (f.magic == kIdxLabelMagic) ? 1 : 3;
  uint64_t total = 1;
  for (size_t i = 0; i < dims; ++i) {
    const uint32_t d = read_be32(bytes, 4 + 4 * i, path);
    f.dims.push_back(d);
    total *= d;
    if (total > (1ull << 40))
      throw ParseError("idx '" + path + "': dimension overflow at offset " +
                       std::to_string(4 + 4 * i) + " (product exceeds 2^40)");
  }
  const size_t header = 4 + 4 * dims;
  const uint64_t expected = total;
  const uint64_t actual = bytes.size() - header;
  if (actual != expected)
    throw ParseError("idx '" + path + "': truncated payload at offset " + std::to_string(header) +
                     ": expected " + std::to_string(expected) + " bytes, got " +
                     std::to_string(actual));
  f.payload.assign(bytes.begin() + header, bytes.end());
  return f;
}

void save_idx_file(const std::string& path, const IdxFile& f) {
  Writer w;
  for (int i = 3; i >= 0; --i) w.u8(static_cast<uint8_t>(f.magic >> (8 * i)));
  uint64_t total = 1;
  for (uint32_t d : f.dims) {
    for (int i = 3; i >= 0; --i) w.u8(static_cast<uint8_t>(d >> (8 * i)));
    total *= d;
  }
  if (total != f.payload.size()) throw IoError("idx save: dims do not match payload size");
  w.raw(f.payload.data(), f.payload.size());
  write_file_atomic(path, w.bytes.data(), w.bytes.size());
}

std::vector<int> load_idx_labels(const std::string& path) {
  IdxFile f = load_idx_file(path);
  if (f.magic != kIdxLabelMagic)
    throw ParseError("idx '" + path + "': magic " + std::to_string(f.magic) +
                     " is not a label file (expected 2049) at offset 0");
  std::vector<int> labels(f.payload.begin(), f.payload.end());
  return labels;
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
  IdxFile f;
  f.magic = kIdxLabelMagic;
  f.dims = {static_cast<uint32_t>(labels.size())};
  f.payload.reserve(labels.size());
  for (int l : labels) {
    if (l < 0 || l > 255) throw IoError("idx save: label out of u8 range");
    f.payload.push_back(static_cast<uint8_t>(l));
  }
  save_idx_file(path, f);
}

// ---------------------------------------------------------------------------
// PGM (P5, maxval 255).

namespace {

// Skips whitespace and '#' comments; returns the offset of the next token.
size_t pgm_skip(const std::vector<uint8_t>& b, size_t off) {
  while (off < b.size()) {
    const uint8_t c = b[off];
    if (c == '#') {
      while (off < b.size() && b[off] != '\n') ++off;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++off;
    } else {
      break;
    }
  }
  return off;
}

int pgm_int(const std::vector<uint8_t>& b, size_t& off, const std::string& path,
            const char* what) {
  off = pgm_skip(b, off);
  if (off >= b.size())
    throw ParseError("pgm '" + path + "': missing " + what + " at offset " + std::to_string(off));
  int64_t v = 0;
  size_t start = off;
  while (off < b.size() && b[off] >= '0' && b[off] <= '9') {
    v = v * 10 + (b[off] - '0');
    if (v > (1 << 30))
      throw ParseError("pgm '" + path + "': " + what + " overflow at offset " +
                       std::to_string(start));
    ++off;
  }
  if (off == start)
    throw ParseError("pgm '" + path + "': expected " + what + " at offset " +
                     std::to_string(off));
  return static_cast<int>(v);
}

}  // namespace

PgmImage load_pgm_file(const std::string& path) {
  const std::vector<uint8_t> b = read_all(path);
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5')
    throw ParseError("pgm '" + path + "': bad magic at offset 0 (expected P5)");
  size_t off = 2;
  PgmImage img;
  img.width = pgm_int(b, off, path, "width");
  img.height = pgm_int(b, off, path, "height");
  const int maxval = pgm_int(b, off, path, "maxval");
  if (maxval != 255)
    throw ParseError("pgm '" + path + "': unsupported maxval " + std::to_string(maxval) +
                     " (expected 255)");
  if (img.width < 1 || img.height < 1)
    throw ParseError("pgm '" + path + "': degenerate dimensions " + std::to_string(img.width) +
                     "x" + std::to_string(img.height));
  if (off >= b.size())
    throw ParseError("pgm '" + path + "': missing payload at offset " + std::to_string(off));
  ++off;  // single whitespace after maxval
  const uint64_t expected = static_cast<uint64_t>(img.width) * img.height;
  if (b.size() - off != expected)
    throw ParseError("pgm '" + path + "': truncated payload at offset " + std::to_string(off) +
                     ": expected " + std::to_string(expected) + " bytes, got " +
                     std::to_string(b.size() - off));
  img.pixels.assign(b.begin() + off, b.end());
  return img;
}

void save_pgm_file(const std::string& path, const PgmImage& img) {
  char header[64];
  const int n = std::snprintf(header, sizeof header, "P5\n%d %d\n255\n", img.width, img.height);
  std::vector<uint8_t> bytes(header, header + n);
  bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
  write_file_atomic(path, bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Model format v1.

namespace {
constexpr uint32_t kModelVersion = 1;

uint8_t layer_kind(const LayerSpec& l) {
  if (std::holds_alternative<ConvSpec>(l)) return 0;
  if (std::holds_alternative<PoolSpec>(l)) return 1;
  return 2;
}
}  // namespace

void save_model(const std::string& path, const ModelFile& m) {
  Writer w;
  w.raw("VCNN", 4);
  w.u32(kModelVersion);
  w.u8(m.dtype == Dtype::f32 ? 0 : 1);
  w.u32(static_cast<uint32_t>(m.spec.input.h()));
  w.u32(static_cast<uint32_t>(m.spec.input.w()));
  w.u32(static_cast<uint32_t>(m.spec.input.c()));
  w.u8(m.spec.loss == LossKind::softmax_ce ? 0 : 1);
  w.u64(m.spec.seed);
  w.u32(static_cast<uint32_t>(m.spec.layers.size()));
  for (const LayerSpec& l : m.spec.layers) {
    w.u8(layer_kind(l));
    if (const auto* cs = std::get_if<ConvSpec>(&l)) {
      w.u32(cs->maps);
      w.u32(cs->kh);
      w.u32(cs->kw);
      w.u32(cs->stride);
      w.u8(activation_to_u8(cs->act));
    } else if (const auto* ps = std::get_if<PoolSpec>(&l)) {
      w.u32(ps->ph);
      w.u32(ps->pw);
      w.u32(ps->stride);
      w.u8(ps->mode == PoolMode::max ? 0 : 1);
      w.u8(ps->bias ? 1 : 0);
      w.u8(activation_to_u8(ps->act));
    } else {
      const auto& fs = std::get<FullSpec>(l);
      w.u32(fs.units);
      w.u8(activation_to_u8(fs.act));
    }
  }
  w.u32(static_cast<uint32_t>(m.blobs.size()));
  for (const ParamBlob& b : m.blobs) {
    w.u8(b.dtype == Dtype::f32 ? 0 : 1);
    w.u32(static_cast<uint32_t>(b.dims.size()));
    for (uint32_t d : b.dims) w.u32(d);
    w.u64(b.raw.size());
    w.raw(b.raw.data(), b.raw.size());
  }
  w.u64(fnv1a(w.bytes.data(), w.bytes.size()));
  write_file_atomic(path, w.bytes.data(), w.bytes.size());
}

ModelFile load_model(const std::string& path) {
  const std::vector<uint8_t> bytes = read_all(path);
  Reader r{bytes, 0, path};
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, "VCNN", 4) != 0)
    throw ParseError("model '" + path + "': bad magic at offset 0 (expected VCNN)");
  const uint32_t version = r.u32("version");
  if (version != kModelVersion)
    throw ParseError("model '" + path + "': unsupported version " + std::to_string(version));
  if (bytes.size() < 8) throw ParseError("model '" + path + "': too short for checksum");
  const size_t body = bytes.size() - 8;
  uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= uint64_t(bytes[body + i]) << (8 * i);
  if (fnv1a(bytes.data(), body) != stored)
    throw ParseError("model '" + path + "': checksum mismatch");

  ModelFile m;
  m.dtype = r.u8("dtype") == 0 ? Dtype::f32 : Dtype::f64;
  const int in_h = static_cast<int>(r.u32("input h"));
  const int in_w = static_cast<int>(r.u32("input w"));
  const int in_c = static_cast<int>(r.u32("input c"));
  if (in_h < 1 || in_w < 1 || in_c < 1 || in_h > (1 << 20) || in_w > (1 << 20) ||
      in_c > (1 << 20))
    throw ParseError("model '" + path + "': implausible input shape");
  m.spec.input = Shape::hwcn(in_h, in_w, in_c, 1);
  m.spec.input.ndim = 3;
  m.spec.loss = r.u8("loss") == 0 ? LossKind::softmax_ce : LossKind::mse;
  m.spec.seed = r.u64("seed");
  const uint32_t n_layers = r.u32("layer count");
  if (n_layers > 4096) throw ParseError("model '" + path + "': implausible layer count");
  for (uint32_t i = 0; i < n_layers; ++i) {
    const uint8_t kind = r.u8("layer kind");
    if (kind == 0) {
      ConvSpec cs;
      cs.maps = static_cast<int>(r.u32("conv maps"));
      cs.kh = static_cast<int>(r.u32("conv kh"));
      cs.kw = static_cast<int>(r.u32("conv kw"));
      cs.stride = static_cast<int>(r.u32("conv stride"));
      cs.act = activation_from_u8(r.u8("conv act"), path);
      if (cs.maps < 1 || cs.kh < 1 || cs.kw < 1 || cs.stride < 1)
        throw ParseError("model '" + path + "': invalid conv spec in layer " + std::to_string(i));
      m.spec.layers.emplace_back(cs);
    } else if (kind == 1) {
      PoolSpec ps;
      ps.ph = static_cast<int>(r.u32("pool ph"));
      ps.pw = static_cast<int>(r.u32("pool pw"));
      ps.stride = static_cast<int>(r.u32("pool stride"));
      const uint8_t mode = r.u8("pool mode");
      if (mode > 1) throw ParseError("model '" + path + "': unknown pool mode");
      ps.mode = mode == 0 ? PoolMode::max : PoolMode::avg;
      ps.bias = r.u8("pool bias flag") != 0;
      ps.act = activation_from_u8(r.u8("pool act"), path);
      if (ps.ph < 1 || ps.pw < 1 || ps.stride < 1)
        throw ParseError("model '" + path + "': invalid pool spec in layer " + std::to_string(i));
      m.spec.layers.emplace_back(ps);
    } else if (kind == 2) {
      FullSpec fs;
      fs.units = static_cast<int>(r.u32("full units"));
      fs.act = activation_from_u8(r.u8("full act"), path);
      if (fs.units < 1)
        throw ParseError("model '" + path + "': invalid full spec in layer " + std::to_string(i));
      m.spec.layers.emplace_back(fs);
    } else {
      throw ParseError("model '" + path + "': unknown layer kind " + std::to_string(kind) +
                       " at offset " + std::to_string(r.off - 1));
    }
  }
  const uint32_t n_blobs = r.u32("blob count");
  if (n_blobs > 8192) throw ParseError("model '" + path + "': implausible blob count");
  for (uint32_t i = 0; i < n_blobs; ++i) {
    ParamBlob b;
    b.dtype = r.u8("blob dtype") == 0 ? Dtype::f32 : Dtype::f64;
    const uint32_t ndims = r.u32("blob ndims");
    if (ndims > 4) throw ParseError("model '" + path + "': blob with " + std::to_string(ndims) +
                                    " dims");
    uint64_t numel = 1;
    for (uint32_t k = 0; k < ndims; ++k) {
      b.dims.push_back(r.u32("blob dim"));
      numel *= b.dims.back();
      if (numel > (1ull << 36)) throw ParseError("model '" + path + "': blob dimension overflow");
    }
    const uint64_t nbytes = r.u64("blob size");
    const size_t width = b.dtype == Dtype::f32 ? 4 : 8;
    if (nbytes != numel * width)
      throw ParseError("model '" + path + "': blob byte count " + std::to_string(nbytes) +
                       " does not match dims at offset " + std::to_string(r.off - 8));
    b.raw.resize(nbytes);
    r.raw(b.raw.data(), nbytes, "blob payload");
    m.blobs.push_back(std::move(b));
  }
  if (r.off != body)
    throw ParseError("model '" + path + "': " + std::to_string(body - r.off) +
                     " unexpected trailing bytes at offset " + std::to_string(r.off));
  return m;
}

void write_file_atomic(const std::string& path, const void* data, size_t size) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("error writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
}

}  // namespace vcnn
