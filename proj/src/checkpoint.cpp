#include "ecgcmr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "ecgcmr/error.hpp"
#include "ecgcmr/hash.hpp"

namespace ecgcmr {

namespace {

constexpr char kMagic[4] = {'E', 'C', 'K', 'P'};
constexpr std::size_t kDigest = 32;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::size_t NamedArray::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["meta"] = ckpt.meta;
  header["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (a.data.size() != a.numel()) throw FormatError("array " + a.name + " does not match its shape");
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.data.size();
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset * sizeof(float) + kDigest);
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : ckpt.arrays) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(a.data.data());
    out.insert(out.end(), p, p + a.data.size() * sizeof(float));
  }
  const auto digest = sha256(out);
  out.insert(out.end(), digest.begin(), digest.end());
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 + kDigest || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic or truncated)");
  }
  const std::size_t body = bytes.size() - kDigest;
  const auto digest = sha256(std::span<const std::uint8_t>(bytes.data(), body));
  if (std::memcmp(digest.data(), bytes.data() + body, kDigest) != 0) {
    throw FormatError("checkpoint hash mismatch (file truncated or corrupted)");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(bytes, pos);
  if (pos + len > body) throw FormatError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += len;
  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.meta = header.at("meta");
  const std::size_t blob_floats = (body - pos) / sizeof(float);
  if ((body - pos) % sizeof(float) != 0) throw FormatError("checkpoint blob is not float32-aligned");
  for (const auto& e : header.at("arrays")) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<std::vector<std::int64_t>>();
    const auto off = e.at("offset").get<std::size_t>();
    const std::size_t n = a.numel();
    if (off + n > blob_floats) throw FormatError("array " + a.name + " runs past the end of the blob");
    a.data.resize(n);
    std::memcpy(a.data.data(), bytes.data() + pos + off * sizeof(float), n * sizeof(float));
    c.arrays.push_back(std::move(a));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) { atomic_write(path, serialize(ckpt)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string arrays_hash(const Checkpoint& ckpt, const std::string& prefix) {
  Sha256 h;
  for (const auto& a : ckpt.arrays) {
    if (a.name.rfind(prefix, 0) != 0) continue;
    h.update(a.name);
    for (auto d : a.shape) h.update(std::to_string(d) + ",");
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(a.data.data()),
                                           a.data.size() * sizeof(float)));
  }
  return to_hex(h.finish());
}

}  // namespace ecgcmr
