// Versioned binary checkpoint container: a JSON header for everything small
// (config, vocabulary, RNG state, bookkeeping) followed by named tensors as
// raw little-endian values. Documented in the README for external loaders.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sarc/tensor.hpp"

namespace sarc {

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'R', 'C', 'C', 'K', 'P', '1'};

template <typename T>
struct CheckpointData {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint file: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  nlohmann::json header = ckpt.header;
  header["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  std::string hs = header.dump();
  std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  std::uint64_t count = ckpt.tensors.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, tensor] : ckpt.tensors) {
    std::uint64_t nlen = name.size();
    out.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    std::uint32_t rank = static_cast<std::uint32_t>(tensor.shape().size());
    out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int d : tensor.shape()) {
      std::int32_t dim = d;
      out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(T)));
  }
  if (!out) throw std::runtime_error("short write to checkpoint file: " + path);
}

// Header only (config, bookkeeping, dtype tag) without reading tensors.
inline nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error(path + ": truncated header");
  return nlohmann::json::parse(hs);
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error(path + ": truncated header");
  CheckpointData<T> ckpt;
  ckpt.header = nlohmann::json::parse(hs);
  std::string expect = sizeof(T) == 4 ? "f32" : "f64";
  std::string dtype = ckpt.header.value("dtype", "");
  if (dtype != expect)
    throw std::runtime_error(path + ": checkpoint holds " + dtype + " values, expected " + expect);
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    std::string name(nlen, '\0');
    in.read(name.data(), static_cast<std::streamsize>(nlen));
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!in || rank < 1 || rank > 2)
      throw std::runtime_error(path + ": tensor \"" + name + "\" has unsupported rank");
    Shape shape(rank);
    for (auto& d : shape) {
      std::int32_t dim = 0;
      in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
      d = dim;
    }
    Tensor<T> t(shape);
    in.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!in) throw std::runtime_error(path + ": truncated tensor \"" + name + "\"");
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace sarc
