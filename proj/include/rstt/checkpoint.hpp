#pragma once

#include <cstring>
#include <fstream>

#include "rstt/model.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Checkpoint container: magic "RSTT", u32 LE format version, a u64
// length-prefixed text header listing tensor names/dtypes/shapes/offsets,
// then raw little-endian blobs in header order (32-bit floats; a 64-bit
// dtype exists for verification runs that must round-trip doubles exactly).
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct LoadedCheckpoint {
  std::int64_t iteration = 0;
  std::int64_t opt_step = -1;
  std::vector<NamedParam<S>> tensors;

  Tensor<S>* find(const std::string& name) {
    for (auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
};

namespace detail {

inline std::string shape_token(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

inline Shape parse_shape_token(const std::string& tok) {
  if (tok == "scalar") return {};
  Shape s;
  std::size_t pos = 0;
  while (pos < tok.size()) {
    std::size_t next = tok.find(',', pos);
    if (next == std::string::npos) next = tok.size();
    s.push_back(std::stoll(tok.substr(pos, next - pos)));
    pos = next + 1;
  }
  return s;
}

template <typename T>
void write_raw(std::ostream& os, const T* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const std::vector<NamedParam<S>>& tensors,
                     std::int64_t iteration, std::int64_t opt_step = -1, bool wide = false) {
  const bool f64 = wide && sizeof(S) == 8;
  std::string header = "iteration " + std::to_string(iteration) + "\n";
  if (opt_step >= 0) header += "opt_step " + std::to_string(opt_step) + "\n";
  std::uint64_t offset = 0;
  const std::size_t elem = f64 ? 8 : 4;
  for (const auto& t : tensors) {
    header += "tensor " + t.name + (f64 ? " f64 " : " f32 ") +
              detail::shape_token(t.tensor.shape()) + " " + std::to_string(offset) + "\n";
    offset += static_cast<std::uint64_t>(t.tensor.size()) * elem;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw config_error("cannot write checkpoint '" + path + "'");
  os.write("RSTT", 4);
  const std::uint32_t ver = kCheckpointVersion;
  detail::write_raw(os, &ver, 1);
  const std::uint64_t hlen = header.size();
  detail::write_raw(os, &hlen, 1);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<float> f32buf;
  std::vector<double> f64buf;
  for (const auto& t : tensors) {
    const Index n = t.tensor.size();
    if (f64) {
      f64buf.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) f64buf[static_cast<std::size_t>(i)] = static_cast<double>(t.tensor[i]);
      detail::write_raw(os, f64buf.data(), f64buf.size());
    } else {
      f32buf.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) f32buf[static_cast<std::size_t>(i)] = static_cast<float>(t.tensor[i]);
      detail::write_raw(os, f32buf.data(), f32buf.size());
    }
  }
  if (!os) throw config_error("failed writing checkpoint '" + path + "'");
}

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RSTT", 4) != 0)
    throw config_error("'" + path + "' is not an RSTT checkpoint");
  std::uint32_t ver = 0;
  is.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != kCheckpointVersion)
    throw config_error("unsupported checkpoint version " + std::to_string(ver) + " in '" + path +
                       "'");
  std::uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw config_error("truncated checkpoint header in '" + path + "'");
  const std::streampos blob_start = is.tellg();

  LoadedCheckpoint<S> ck;
  std::istringstream hs(header);
  std::string line;
  struct Entry {
    std::string name, dtype;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "iteration") {
      ls >> ck.iteration;
    } else if (kind == "opt_step") {
      ls >> ck.opt_step;
    } else if (kind == "tensor") {
      Entry e;
      std::string shp;
      ls >> e.name >> e.dtype >> shp >> e.offset;
      if (!ls) throw config_error("malformed checkpoint header line: " + line);
      if (e.dtype != "f32" && e.dtype != "f64")
        throw config_error("unknown tensor dtype '" + e.dtype + "' in checkpoint");
      e.shape = detail::parse_shape_token(shp);
      entries.push_back(std::move(e));
    } else {
      throw config_error("unknown checkpoint header entry '" + kind + "'");
    }
  }
  for (const auto& e : entries) {
    Tensor<S> t(e.shape);
    const Index n = t.size();
    is.seekg(blob_start + static_cast<std::streamoff>(e.offset));
    if (e.dtype == "f32") {
      std::vector<float> buf(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
      for (Index i = 0; i < n; ++i) t[i] = static_cast<S>(buf[static_cast<std::size_t>(i)]);
    } else {
      std::vector<double> buf(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 8));
      for (Index i = 0; i < n; ++i) t[i] = static_cast<S>(buf[static_cast<std::size_t>(i)]);
    }
    if (!is) throw config_error("truncated checkpoint blob for tensor '" + e.name + "'");
    ck.tensors.push_back(NamedParam<S>{e.name, std::move(t)});
  }
  return ck;
}

/// Copies model weights out of a loaded checkpoint; every model parameter
/// must be present with a matching shape.  Entries prefixed "opt." are left
/// for the optimizer to pick up.
template <typename S>
void apply_model_weights(LoadedCheckpoint<S>& ck, std::vector<NamedParam<S>>& params) {
  for (auto& p : params) {
    Tensor<S>* src = ck.find(p.name);
    if (!src) throw config_error("checkpoint is missing parameter '" + p.name + "'");
    check_dims(src->shape() == p.tensor.shape(),
               "checkpoint parameter '" + p.name + "' has shape " + shape_str(src->shape()) +
                   ", model expects " + shape_str(p.tensor.shape()));
    std::copy(src->data(), src->data() + src->size(), p.tensor.data());
  }
}

}  // namespace rstt
