#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   bytes 0..7    magic "ESPCKPT1"
//   bytes 8..15   u64 header length H
//   next H bytes  UTF-8 JSON header:
//                   {"format": 1,
//                    "tensors": [{"name": str, "shape": [int], "offset": int}, ...],
//                    "meta": {...}}
//   remainder     concatenated f32 arrays; "offset" is the byte offset of each
//                 array from the start of this section.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgespot/tensor.hpp"

namespace edgespot {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::string> order;
  std::map<std::string, StoredTensor> tensors;

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    StoredTensor st{t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
    if (!tensors.contains(name)) order.push_back(name);
    tensors[name] = std::move(st);
  }
  void put(const std::string& name, Shape shape, std::vector<float> values) {
    if (!tensors.contains(name)) order.push_back(name);
    tensors[name] = StoredTensor{std::move(shape), std::move(values)};
  }
};

namespace detail {
constexpr char kCheckpointMagic[8] = {'E', 'S', 'P', 'C', 'K', 'P', 'T', '1'};

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["format"] = 1;
  header["meta"] = ck.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : ck.order) {
    const auto& st = ck.tensors.at(name);
    if (shape_numel(st.shape) != st.values.size()) throw ShapeError("checkpoint tensor " + name + " inconsistent");
    header["tensors"].push_back({{"name", name}, {"shape", st.shape}, {"offset", offset}});
    offset += st.values.size() * 4;
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(detail::kCheckpointMagic, 8);
  detail::put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<unsigned char> buf;
  for (const auto& name : ck.order) {
    const auto& vals = ck.tensors.at(name).values;
    buf.resize(vals.size() * 4);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(vals[i]);
      for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 8) != 0)
    throw DataError(path.string() + ": not a checkpoint file");
  const std::uint64_t hlen = detail::get_u64(bytes.data() + 8);
  if (16 + hlen > bytes.size()) throw DataError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  const std::size_t base = 16 + hlen;
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (base + offset + n * 4 > bytes.size()) throw DataError(path.string() + ": tensor " + name + " truncated");
    std::vector<float> vals(n);
    const unsigned char* p = bytes.data() + base + offset;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | p[i * 4 + b];
      vals[i] = std::bit_cast<float>(bits);
    }
    ck.put(name, shape, std::move(vals));
  }
  return ck;
}

}  // namespace edgespot
