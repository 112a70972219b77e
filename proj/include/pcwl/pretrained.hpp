#pragma once

// Flat tensor archive and import of encoder-style backbone weights.
//
// Archive layout (little-endian):
//   "PCWT" u32 version=1 u32 entry_count
//   per entry: u32 name_len, name bytes, u32 dtype (0 = f32), u32 ndim,
//              u64 dims[ndim], row-major f32 payload
//
// Backbone tensors use the common encoder naming:
//   encoder.layer.{l}.attention.self.{query,key,value}.{weight,bias}
//   encoder.layer.{l}.attention.output.dense.{weight,bias}
//   encoder.layer.{l}.attention.output.LayerNorm.{weight,bias}
//   encoder.layer.{l}.intermediate.dense.{weight,bias}
//   encoder.layer.{l}.output.dense.{weight,bias}
//   encoder.layer.{l}.output.LayerNorm.{weight,bias}
// Weights are (out x in); vectors are 1-D. Layers beyond config.layers and any
// other names (embeddings, pooler) are ignored.

#include "pcwl/common.hpp"
#include "pcwl/io.hpp"
#include "pcwl/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pcwl {

inline constexpr char kArchiveMagic[5] = "PCWT";
inline constexpr std::uint32_t kArchiveVersion = 1;

struct ArchiveTensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

using TensorArchive = std::map<std::string, ArchiveTensor>;

inline void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  io::write_atomic(path, [&](std::ostream& out) {
    io::put_magic(out, kArchiveMagic);
    io::put<std::uint32_t>(out, kArchiveVersion);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
    for (const auto& [name, t] : archive) {
      std::uint64_t n = 1;
      for (auto d : t.shape) n *= d;
      if (n != t.data.size()) throw ShapeMismatch(name + ": payload size does not match shape");
      io::put_string(out, name);
      io::put<std::uint32_t>(out, 0);
      io::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) io::put<std::uint64_t>(out, d);
      for (float v : t.data) io::put<float>(out, v);
    }
  });
}

inline TensorArchive read_tensor_archive(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  io::expect_magic(in, kArchiveMagic, path.string());
  const auto version = io::get<std::uint32_t>(in);
  if (version != kArchiveVersion) throw FormatError(path.string() + ": unsupported archive version");
  const auto count = io::get<std::uint32_t>(in);
  TensorArchive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = io::get_string(in, 4096);
    const auto dtype = io::get<std::uint32_t>(in);
    if (dtype != 0) throw FormatError(name + ": unsupported dtype " + std::to_string(dtype));
    const auto ndim = io::get<std::uint32_t>(in);
    if (ndim > 8) throw FormatError(name + ": too many dimensions");
    ArchiveTensor t;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(io::get<std::uint64_t>(in));
      n *= t.shape.back();
    }
    if (n > (1ull << 32)) throw FormatError(name + ": tensor too large");
    t.data.resize(n);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw FormatError(name + ": truncated payload");
    archive.emplace(name, std::move(t));
  }
  return archive;
}

namespace detail {

struct BackboneSlot {
  std::string name;
  Eigen::Index rows;  // 0 for 1-D tensors
  Eigen::Index cols;
};

template <typename S, typename F>
void for_each_backbone_tensor(LayerParams<S>& L, int layer, int d, int ffn, F&& f) {
  const std::string p = "encoder.layer." + std::to_string(layer) + ".";
  f(BackboneSlot{p + "attention.self.query.weight", d, d}, L.wq);
  f(BackboneSlot{p + "attention.self.query.bias", 0, d}, L.bq);
  f(BackboneSlot{p + "attention.self.key.weight", d, d}, L.wk);
  f(BackboneSlot{p + "attention.self.key.bias", 0, d}, L.bk);
  f(BackboneSlot{p + "attention.self.value.weight", d, d}, L.wv);
  f(BackboneSlot{p + "attention.self.value.bias", 0, d}, L.bv);
  f(BackboneSlot{p + "attention.output.dense.weight", d, d}, L.wo);
  f(BackboneSlot{p + "attention.output.dense.bias", 0, d}, L.bo);
  f(BackboneSlot{p + "attention.output.LayerNorm.weight", 0, d}, L.ln1_g);
  f(BackboneSlot{p + "attention.output.LayerNorm.bias", 0, d}, L.ln1_b);
  f(BackboneSlot{p + "intermediate.dense.weight", ffn, d}, L.ff1_w);
  f(BackboneSlot{p + "intermediate.dense.bias", 0, ffn}, L.ff1_b);
  f(BackboneSlot{p + "output.dense.weight", d, ffn}, L.ff2_w);
  f(BackboneSlot{p + "output.dense.bias", 0, d}, L.ff2_b);
  f(BackboneSlot{p + "output.LayerNorm.weight", 0, d}, L.ln2_g);
  f(BackboneSlot{p + "output.LayerNorm.bias", 0, d}, L.ln2_b);
}

}  // namespace detail

// Exports the backbone of `params` under the encoder naming.
inline TensorArchive export_backbone(const ModelParameters<float>& params, const ModelConfig& c) {
  TensorArchive archive;
  auto copy = params;
  for (int l = 0; l < c.layers; ++l) {
    detail::for_each_backbone_tensor(copy.layers[static_cast<std::size_t>(l)], l, c.d_model, c.ffn(),
                                     [&](const detail::BackboneSlot& slot, const Mat<float>& m) {
                                       ArchiveTensor t;
                                       if (slot.rows == 0)
                                         t.shape = {static_cast<std::uint64_t>(slot.cols)};
                                       else
                                         t.shape = {static_cast<std::uint64_t>(slot.rows),
                                                    static_cast<std::uint64_t>(slot.cols)};
                                       t.data.resize(static_cast<std::size_t>(m.size()));
                                       for (Eigen::Index i = 0; i < m.rows(); ++i)
                                         for (Eigen::Index j = 0; j < m.cols(); ++j)
                                           t.data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
                                       archive.emplace(slot.name, std::move(t));
                                     });
  }
  return archive;
}

// Fresh parameters with the first config.layers backbone layers taken from the
// archive. Adapters, bias projectors, encoder and head keep their fresh init.
inline ModelParameters<float> import_pretrained(const std::filesystem::path& weight_file, const ModelConfig& c,
                                                std::uint64_t seed) {
  const TensorArchive archive = read_tensor_archive(weight_file);
  auto params = init_parameters<float>(c, seed);
  std::vector<std::string> missing, mismatched;
  for (int l = 0; l < c.layers; ++l) {
    detail::for_each_backbone_tensor(
        params.layers[static_cast<std::size_t>(l)], l, c.d_model, c.ffn(),
        [&](const detail::BackboneSlot& slot, Mat<float>& m) {
          const auto it = archive.find(slot.name);
          if (it == archive.end()) {
            missing.push_back(slot.name);
            return;
          }
          const auto& shape = it->second.shape;
          const bool ok = slot.rows == 0
                              ? shape.size() == 1 && shape[0] == static_cast<std::uint64_t>(slot.cols)
                              : shape.size() == 2 && shape[0] == static_cast<std::uint64_t>(slot.rows) &&
                                    shape[1] == static_cast<std::uint64_t>(slot.cols);
          if (!ok) {
            mismatched.push_back(slot.name);
            return;
          }
          const Eigen::Index rows = slot.rows == 0 ? 1 : slot.rows;
          m.resize(rows, slot.cols);
          for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < slot.cols; ++j)
              m(i, j) = it->second.data[static_cast<std::size_t>(i * slot.cols + j)];
        });
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& n : v) s += (s.empty() ? "" : ", ") + n;
    return s;
  };
  if (!mismatched.empty()) throw ShapeMismatch("shape mismatch: " + join(mismatched));
  if (!missing.empty()) throw FormatError("missing tensors: " + join(missing));
  return params;
}

}  // namespace pcwl
