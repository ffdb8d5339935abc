#include "hstr/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <fstream>

namespace hstr {

namespace fs = std::filesystem;

void Checkpoint::set_meta(const std::string& key, std::string value) {
  for (auto& [k, v] : meta)
    if (k == key) {
      v = std::move(value);
      return;
    }
  meta.emplace_back(key, std::move(value));
}

bool Checkpoint::has_meta(const std::string& key) const {
  return std::any_of(meta.begin(), meta.end(), [&](const auto& kv) { return kv.first == key; });
}

const std::string& Checkpoint::get_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw CheckpointError("checkpoint has no '" + key + "' entry");
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'S', 'T', 'R', 'N', 'E', 'T', '\0'};

template <typename U>
U byteswap(U v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<U>(bytes);
}

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) return byteswap(v);
  return v;
}

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  template <typename U>
  void put(U v) {
    v = to_little(v);
    os_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put(const std::string& s) {
    put(static_cast<uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put(const std::vector<float>& values) {
    if constexpr (std::endian::native == std::endian::little) {
      os_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    } else {
      for (float f : values) put(std::bit_cast<uint32_t>(f));
    }
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, const fs::path& path) : is_(is), path_(path) {}
  template <typename U>
  U get() {
    U v{};
    read(&v, sizeof v);
    return to_little(v);
  }
  std::string get_string() {
    uint32_t n = get<uint32_t>();
    if (n > (1u << 20)) fail("string length " + std::to_string(n));
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read_floats(std::vector<float>& out) {
    read(out.data(), out.size() * 4);
    if constexpr (std::endian::native == std::endian::big)
      for (float& f : out) f = byteswap(f);
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError(path_.string() + ": corrupt checkpoint (" + what + ")");
  }

 private:
  void read(void* dst, size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is_.gcount()) != n) fail("truncated");
  }
  std::ifstream& is_;
  const fs::path& path_;
};

std::string format_int(int64_t v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

int64_t parse_int(const std::string& s, const std::string& key) {
  int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw CheckpointError("checkpoint entry '" + key + "' is not an integer: " + s);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    Writer w(os);
    os.write(kMagic.data(), kMagic.size());
    w.put(Checkpoint::kVersion);
    w.put(static_cast<uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
      w.put(k);
      w.put(v);
    }
    w.put(static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
      if (static_cast<int64_t>(t.data.size()) != t.shape.numel())
        throw CheckpointError("tensor " + t.name + " payload does not match shape " + t.shape.str());
      w.put(t.name);
      w.put(uint32_t{4});
      for (int64_t d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) w.put(static_cast<uint64_t>(d));
      w.put(t.data);
    }
    os.flush();
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(is, path);
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 8 || magic != kMagic) r.fail("bad magic");
  uint32_t version = r.get<uint32_t>();
  if (version != Checkpoint::kVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  uint32_t meta_count = r.get<uint32_t>();
  for (uint32_t i = 0; i < meta_count; ++i) {
    std::string k = r.get_string();
    std::string v = r.get_string();
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  uint32_t tensor_count = r.get<uint32_t>();
  for (uint32_t i = 0; i < tensor_count; ++i) {
    TensorRecord t;
    t.name = r.get_string();
    uint32_t ndim = r.get<uint32_t>();
    if (ndim != 4) r.fail("tensor " + t.name + " has " + std::to_string(ndim) + " dims");
    uint64_t dims[4];
    for (uint64_t& d : dims) {
      d = r.get<uint64_t>();
      if (d > (1ull << 31)) r.fail("tensor " + t.name + " dimension too large");
    }
    t.shape = {static_cast<int64_t>(dims[0]), static_cast<int64_t>(dims[1]), static_cast<int64_t>(dims[2]),
               static_cast<int64_t>(dims[3])};
    if (t.shape.numel() > (1ll << 31)) r.fail("tensor " + t.name + " too large");
    t.data.resize(static_cast<size_t>(t.shape.numel()));
    r.read_floats(t.data);
    ckpt.tensors.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return ckpt;
}

Checkpoint capture(const ParameterSet& params, const Adam* optimizer) {
  Checkpoint ckpt;
  const auto& items = params.items();
  for (const auto& p : items)
    ckpt.tensors.push_back({p.name, p.value.shape(), std::vector<float>(p.value.data().begin(), p.value.data().end())});
  if (optimizer) {
    ckpt.set_meta("adam.step", format_int(optimizer->step_count()));
    for (size_t i = 0; i < items.size(); ++i) {
      ckpt.tensors.push_back({"adam.m." + items[i].name, items[i].value.shape(), optimizer->first_moment(i)});
      ckpt.tensors.push_back({"adam.v." + items[i].name, items[i].value.shape(), optimizer->second_moment(i)});
    }
  }
  return ckpt;
}

void restore(const Checkpoint& ckpt, ParameterSet& params, Adam* optimizer) {
  auto fetch = [&](const std::string& name, const Shape& shape) -> const TensorRecord& {
    const TensorRecord* t = ckpt.find(name);
    if (!t) throw CheckpointError("checkpoint is missing " + name);
    if (t->shape != shape)
      throw CheckpointError("checkpoint " + name + " has shape " + t->shape.str() + ", model expects " + shape.str());
    return *t;
  };
  // Check all before touching anything.
  for (const auto& p : params.items()) fetch(p.name, p.value.shape());
  for (auto& p : params.items()) {
    const TensorRecord& t = fetch(p.name, p.value.shape());
    std::copy(t.data.begin(), t.data.end(), p.value.data().begin());
  }
  if (!optimizer || !ckpt.has_meta("adam.step")) return;
  auto& items = params.items();
  for (const auto& p : items) {
    fetch("adam.m." + p.name, p.value.shape());
    fetch("adam.v." + p.name, p.value.shape());
  }
  for (size_t i = 0; i < items.size(); ++i) {
    optimizer->first_moment(i) = fetch("adam.m." + items[i].name, items[i].value.shape()).data;
    optimizer->second_moment(i) = fetch("adam.v." + items[i].name, items[i].value.shape()).data;
  }
  optimizer->set_step_count(parse_int(ckpt.get_meta("adam.step"), "adam.step"));
}

}  // namespace hstr
