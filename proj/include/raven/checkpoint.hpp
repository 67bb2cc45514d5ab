#pragma once

// Parameter persistence. A checkpoint is a plain-text header — magic line,
// optional metadata, one line of (name, dtype, shape, byte offset) per
// tensor — followed by a DATA marker and the raw little-endian values.
// f64 storage round-trips bit-exactly; f32 halves the size at the cost of
// rounding and is opt-in.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "raven/error.hpp"
#include "raven/tensor.hpp"

namespace raven {

inline constexpr const char* kCheckpointMagic = "RAVENCKPT1";

enum class Dtype { f64, f32 };

inline const char* dtype_name(Dtype d) { return d == Dtype::f64 ? "f64" : "f32"; }
inline int64_t dtype_size(Dtype d) { return d == Dtype::f64 ? 8 : 4; }

namespace detail {

// Explicit little-endian encoding keeps the on-disk format host-independent.
inline void put_le64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_le32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint64_t get_le64(const char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}
inline uint32_t get_le32(const char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline std::string shape_field(const Shape& s) {
  if (s.empty()) return "-";
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out;
}

inline Shape parse_shape_field(const std::string& f, size_t at) {
  if (f == "-") return {};
  Shape s;
  std::istringstream is(f);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    require(!tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos,
            ErrorKind::Format,
            "checkpoint: bad shape '" + f + "' at byte " + std::to_string(at));
    s.push_back(std::stoll(tok));
  }
  require(!s.empty(), ErrorKind::Format,
          "checkpoint: bad shape '" + f + "' at byte " + std::to_string(at));
  return s;
}

}  // namespace detail

struct Checkpoint {
  std::map<std::string, Tensor> tensors;       // ordered for stable output
  std::map<std::string, std::string> meta;
};

// Serialize to a byte string (the file body). Deterministic: same inputs,
// same bytes.
inline std::string encode_checkpoint(const Checkpoint& ckpt,
                                     Dtype dtype = Dtype::f64) {
  std::ostringstream header;
  header << kCheckpointMagic << "\n";
  header << "meta " << ckpt.meta.size() << "\n";
  for (const auto& [k, v] : ckpt.meta) {
    require(k.find_first_of(" \n") == std::string::npos, ErrorKind::Contract,
            "checkpoint: meta key contains whitespace: '" + k + "'");
    require(v.find('\n') == std::string::npos, ErrorKind::Contract,
            "checkpoint: meta value contains newline for key '" + k + "'");
    header << k << " " << v << "\n";
  }
  header << "params " << ckpt.tensors.size() << "\n";
  std::string data;
  for (const auto& [name, t] : ckpt.tensors) {
    require(name.find_first_of(" \n") == std::string::npos, ErrorKind::Contract,
            "checkpoint: tensor name contains whitespace: '" + name + "'");
    header << name << " " << dtype_name(dtype) << " "
           << detail::shape_field(t.shape()) << " " << data.size() << "\n";
    for (double v : t.data()) {
      if (dtype == Dtype::f64) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::put_le64(data, bits);
      } else {
        float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_le32(data, bits);
      }
    }
  }
  header << "DATA\n";
  return header.str() + data;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  size_t pos = 0;
  auto next_line = [&](const char* what) {
    size_t nl = bytes.find('\n', pos);
    require(nl != std::string::npos, ErrorKind::Format,
            std::string("checkpoint: missing ") + what + " at byte " +
                std::to_string(pos));
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  auto fields = [](const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
  };

  require(next_line("magic") == kCheckpointMagic, ErrorKind::Format,
          "checkpoint: bad magic at byte 0");
  Checkpoint ckpt;

  size_t line_at = pos;
  auto meta_hdr = fields(next_line("meta count"));
  require(meta_hdr.size() == 2 && meta_hdr[0] == "meta", ErrorKind::Format,
          "checkpoint: expected 'meta <n>' at byte " + std::to_string(line_at));
  size_t n_meta = std::stoull(meta_hdr[1]);
  for (size_t i = 0; i < n_meta; ++i) {
    line_at = pos;
    std::string line = next_line("meta entry");
    size_t sp = line.find(' ');
    require(sp != std::string::npos && sp > 0, ErrorKind::Format,
            "checkpoint: bad meta entry at byte " + std::to_string(line_at));
    ckpt.meta[line.substr(0, sp)] = line.substr(sp + 1);
  }

  line_at = pos;
  auto params_hdr = fields(next_line("params count"));
  require(params_hdr.size() == 2 && params_hdr[0] == "params",
          ErrorKind::Format,
          "checkpoint: expected 'params <n>' at byte " + std::to_string(line_at));
  size_t n_params = std::stoull(params_hdr[1]);

  struct Entry {
    std::string name;
    Dtype dtype;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Entry> entries;
  for (size_t i = 0; i < n_params; ++i) {
    line_at = pos;
    auto f = fields(next_line("param entry"));
    require(f.size() == 4, ErrorKind::Format,
            "checkpoint: bad param entry at byte " + std::to_string(line_at));
    Entry e;
    e.name = f[0];
    if (f[1] == "f64")
      e.dtype = Dtype::f64;
    else if (f[1] == "f32")
      e.dtype = Dtype::f32;
    else
      raise(ErrorKind::Format,
            "checkpoint: unknown dtype '" + f[1] + "' at byte " +
                std::to_string(line_at));
    e.shape = detail::parse_shape_field(f[2], line_at);
    require(f[3].find_first_not_of("0123456789") == std::string::npos,
            ErrorKind::Format,
            "checkpoint: bad offset at byte " + std::to_string(line_at));
    e.offset = std::stoull(f[3]);
    entries.push_back(std::move(e));
  }

  line_at = pos;
  require(next_line("DATA marker") == "DATA", ErrorKind::Format,
          "checkpoint: expected DATA marker at byte " + std::to_string(line_at));
  const char* block = bytes.data() + pos;
  uint64_t block_size = bytes.size() - pos;

  for (const auto& e : entries) {
    int64_t n = shape_numel(e.shape);
    uint64_t need = e.offset + static_cast<uint64_t>(n) * dtype_size(e.dtype);
    require(need <= block_size, ErrorKind::Format,
            "checkpoint: data truncated for '" + e.name + "' at byte " +
                std::to_string(pos + e.offset));
    std::vector<double> vals(n);
    for (int64_t i = 0; i < n; ++i) {
      const char* p = block + e.offset + i * dtype_size(e.dtype);
      if (e.dtype == Dtype::f64) {
        uint64_t bits = detail::get_le64(p);
        std::memcpy(&vals[i], &bits, 8);
      } else {
        uint32_t bits = detail::get_le32(p);
        float f;
        std::memcpy(&f, &bits, 4);
        vals[i] = static_cast<double>(f);
      }
    }
    require(ckpt.tensors.emplace(e.name, Tensor::from_data(e.shape, std::move(vals))).second,
            ErrorKind::Format, "checkpoint: duplicate tensor '" + e.name + "'");
  }
  return ckpt;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::Io, "write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  require(!in.bad(), ErrorKind::Io, "read failed: " + path);
  return ss.str();
}

inline void save_checkpoint(const std::string& path, const ParameterSet& params,
                            std::map<std::string, std::string> meta = {},
                            Dtype dtype = Dtype::f64) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (const auto& [name, t] : params) ckpt.tensors.emplace(name, t);
  write_file(path, encode_checkpoint(ckpt, dtype));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

// Strict restore: the file must contain exactly the parameters in `params`
// with matching shapes. Values are copied in place; requires_grad and any
// optimizer references to the tensors stay valid.
inline void load_into(ParameterSet& params, const Checkpoint& ckpt) {
  require(ckpt.tensors.size() == params.size(), ErrorKind::Contract,
          "checkpoint holds " + std::to_string(ckpt.tensors.size()) +
              " tensors, model has " + std::to_string(params.size()));
  for (auto& [name, t] : params) {
    auto it = ckpt.tensors.find(name);
    require(it != ckpt.tensors.end(), ErrorKind::Contract,
            "checkpoint missing parameter '" + name + "'");
    require(it->second.shape() == t.shape(), ErrorKind::Contract,
            "checkpoint shape " + shape_str(it->second.shape()) +
                " does not match parameter '" + name + "' " +
                shape_str(t.shape()));
    t.mutable_data() = it->second.data();
  }
}

}  // namespace raven
