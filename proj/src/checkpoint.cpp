#include "g2pm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "g2pm/error.hpp"

namespace g2pm::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'G', '2', 'P', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError(path, 0, "truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in, std::uint64_t n, const std::string& path) {
  if (n > (1ULL << 32)) throw ParseError(path, 0, "implausible string length in checkpoint");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError(path, 0, "truncated checkpoint");
  return s;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ContractError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string meta = ckpt.meta.dump();
    put<std::uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      put<std::uint64_t>(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    }
    if (!out) throw IoError("write failed for checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const auto p = path.string();
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError(p, 0, "not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, p);
  if (version != kCheckpointVersion) throw ParseError(p, 0, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  try {
    ckpt.meta = nlohmann::json::parse(get_string(in, get<std::uint64_t>(in, p), p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p, 0, std::string("bad checkpoint metadata: ") + e.what());
  }
  const auto count = get<std::uint64_t>(in, p);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = get_string(in, get<std::uint64_t>(in, p), p);
    const auto rank = get<std::uint32_t>(in, p);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, p);
    Tensor t(shape);
    if (t.size() && !in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(Real)))) {
      throw ParseError(p, 0, "truncated tensor '" + name + "'");
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace g2pm::nn
