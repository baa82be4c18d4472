// SPDX-License-Identifier: Apache-2.0

#include "mravff/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <unordered_map>

#include "mravff/binary_io.hpp"

namespace mravff::inline MRAVFF_ABI {

namespace bin {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(data.data(), std::streamsize(data.size()));
  if (!out) throw DataError("short write to " + path);
}

}  // namespace bin

std::vector<char> encode_checkpoint(const std::vector<Parameter>& params,
                                    const std::string& config_json) {
  bin::Writer w;
  w.bytes("MRCK");
  w.put<std::uint8_t>(kCheckpointVersion);
  w.put<std::uint32_t>(std::uint32_t(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > 0xffff) throw ConfigError("parameter name too long: " + p.name);
    w.put<std::uint16_t>(std::uint16_t(p.name.size()));
    w.bytes(p.name);
    w.put<std::uint8_t>(std::uint8_t(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.put<std::uint32_t>(std::uint32_t(d));
    for (real v : p.tensor.data()) w.put<float>(float(v));
  }
  w.put<std::uint32_t>(std::uint32_t(config_json.size()));
  w.bytes(config_json);
  return w.buffer();
}

CheckpointContents decode_checkpoint(const std::vector<char>& bytes) {
  bin::Reader r(bytes);
  if (r.bytes(4) != "MRCK") throw FormatError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointContents out;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.bytes(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = shape_numel(t.shape);
    t.values.resize(n);
    for (auto& v : t.values) v = r.get<float>();
    out.tensors.push_back(std::move(t));
  }
  out.config_json = r.bytes(r.get<std::uint32_t>());
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params,
                     const std::string& config_json) {
  bin::write_file(path, encode_checkpoint(params, config_json));
}

CheckpointContents load_checkpoint(const std::string& path) {
  return decode_checkpoint(bin::read_file(path));
}

void restore_parameters(const CheckpointContents& contents, std::vector<Parameter>& params) {
  std::unordered_map<std::string, const StoredTensor*> by_name;
  for (const auto& t : contents.tensors) by_name[t.name] = &t;
  if (by_name.size() != params.size()) {
    throw VersionError("checkpoint holds " + std::to_string(by_name.size()) +
                       " parameters, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw VersionError("checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw VersionError("parameter " + p.name + " has shape " + shape_str(it->second->shape) +
                         " in checkpoint, model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = real(it->second->values[i]);
  }
}

}  // namespace mravff
