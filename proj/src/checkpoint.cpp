#include "fracmil/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "fracmil/image_io.hpp"
#include "fracmil/rng.hpp"

namespace fracmil {
namespace {

constexpr char kMagic[8] = {'F', 'R', 'A', 'C', 'M', 'I', 'L', '\0'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void write_blob(const std::filesystem::path& path, const CheckpointBlob& blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.tensors.size()));
  for (const auto& [name, data] : blob.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, data.size());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

CheckpointBlob read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError("not a fracmil checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto n = get<std::uint32_t>(in);
  CheckpointBlob blob;
  for (std::uint32_t t = 0; t < n; ++t) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto count = get<std::uint64_t>(in);
    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint: " + path.string());
    blob.tensors.emplace_back(std::move(name), std::move(data));
  }
  return blob;
}

void append_network(CheckpointBlob& blob, const std::string& prefix, const nn::Network& net) {
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    blob.tensors.emplace_back(prefix + "." + std::to_string(i),
                              std::vector<float>(params[i]->begin(), params[i]->end()));
  }
}

void load_network(const CheckpointBlob& blob, const std::string& prefix, nn::Network& net) {
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = prefix + "." + std::to_string(i);
    bool found = false;
    for (const auto& [n, data] : blob.tensors) {
      if (n != name) continue;
      if (data.size() != params[i]->size()) throw IoError("checkpoint shape mismatch: " + name);
      params[i]->assign(data.begin(), data.end());
      found = true;
      break;
    }
    if (!found) throw IoError("checkpoint missing tensor: " + name);
  }
}

std::string architecture_hash(const std::string& description) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(description)));
  return buf;
}

}  // namespace fracmil
