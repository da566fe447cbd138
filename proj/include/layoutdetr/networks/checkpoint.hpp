#pragma once

// Single-file checkpoint archive:
//   "LDETRCKP" | u32 format version | u64 header length | JSON header |
//   float64 blobs in header order.
// The header lists every blob by name and shape; configs and training
// state ride along as JSON.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutdetr/core/errors.hpp"
#include "layoutdetr/networks/models.hpp"
#include "layoutdetr/objectives/weights.hpp"

namespace layoutdetr {

inline constexpr char kCheckpointMagic[8] = {'L', 'D', 'E', 'T', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
};

struct Archive {
  nlohmann::json header = nlohmann::json::object();
  std::vector<Blob> blobs;

  const Blob& blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return b;
    throw IoError("checkpoint: missing blob '" + name + "'");
  }
  bool has_blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return true;
    return false;
  }
};

inline void write_archive(const std::string& path, const Archive& a) {
  nlohmann::json header = a.header;
  header["format_version"] = kCheckpointVersion;
  header["blobs"] = nlohmann::json::array();
  for (const auto& b : a.blobs) header["blobs"].push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& b : a.blobs)
      out.write(reinterpret_cast<const char*>(b.data.data()), std::streamsize(b.data.size() * sizeof(double)));
    if (!out) throw IoError("checkpoint: write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("checkpoint: cannot move into place " + path);
}

inline Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  if (len > (1ull << 31)) throw IoError("checkpoint: corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  Archive a;
  try {
    a.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  for (const auto& jb : a.header.at("blobs")) {
    Blob b{jb.at("name").get<std::string>(), jb.at("rows").get<int>(), jb.at("cols").get<int>(), {}};
    b.data.resize(std::size_t(b.rows) * b.cols);
    in.read(reinterpret_cast<char*>(b.data.data()), std::streamsize(b.data.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated data for " + b.name);
    a.blobs.push_back(std::move(b));
  }
  return a;
}

template <class T>
void append_params(Archive& a, const ad::ParamRegistry<T>& reg, const std::string& group) {
  for (const auto& p : reg.params())
    a.blobs.push_back({group + "/" + p.name, p.tensor.rows(), p.tensor.cols(),
                       std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())});
}

template <class T>
void restore_params(const Archive& a, ad::ParamRegistry<T>& reg, const std::string& group) {
  for (auto& p : reg.params()) {
    const Blob& b = a.blob(group + "/" + p.name);
    if (b.rows != p.tensor.rows() || b.cols != p.tensor.cols())
      throw IoError("checkpoint: shape mismatch for " + p.name);
    T* dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < b.data.size(); ++i) dst[i] = T(b.data[i]);
  }
}

// Archive with all seven networks (embedder dictionaries included: they are
// parameters of G and Dc) and their configs.
template <class T>
Archive model_archive(const nn::LayoutDetrModel<T>& m, const LossWeights& weights) {
  Archive a;
  a.header["network"] = m.network_config();
  a.header["embedder"] = m.embedder_config();
  a.header["loss_weights"] = weights;
  append_params(a, m.gen_params, "gen");
  append_params(a, m.disc_params, "disc");
  return a;
}

template <class T>
std::unique_ptr<nn::LayoutDetrModel<T>> model_from_archive(const Archive& a) {
  const auto nc = a.header.at("network").get<NetworkConfig>();
  const auto ec = a.header.at("embedder").get<EmbedderConfig>();
  auto m = std::make_unique<nn::LayoutDetrModel<T>>(nc, ec, 0);
  restore_params(a, m->gen_params, "gen");
  restore_params(a, m->disc_params, "disc");
  return m;
}

template <class T>
std::unique_ptr<nn::LayoutDetrModel<T>> load_model(const std::string& path) {
  return model_from_archive<T>(read_archive(path));
}

}  // namespace layoutdetr
