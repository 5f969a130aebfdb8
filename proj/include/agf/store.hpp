#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "agf/dictionary.hpp"
#include "agf/groups.hpp"
#include "agf/models.hpp"
#include "agf/nn/adam.hpp"
#include "agf/tensor.hpp"

namespace agf::store {

namespace fs = std::filesystem;

/// Binary tensor container.
///
///   "AGFT" | u32 version | u32 n_entries
///   per entry: u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] | u64 offset | u64 n_bytes
///   payloads at the absolute offsets, little-endian
///
/// Metadata travels as a u8 entry holding UTF-8 JSON.
inline constexpr char kMagic[4] = {'A', 'G', 'F', 'T'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2, u8 = 3 };
std::size_t dtype_size(DType d);

struct Entry {
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;
};

class Container {
 public:
  void put(const std::string& name, const Tensor<float>& t);
  void put(const std::string& name, const Tensor<double>& t);
  void put(const std::string& name, const std::vector<std::int64_t>& v);
  void put_text(const std::string& name, const std::string& text);

  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  const Entry& entry(const std::string& name) const;
  Tensor<float> f32(const std::string& name) const;
  Tensor<double> f64(const std::string& name) const;
  std::vector<std::int64_t> i64(const std::string& name) const;
  std::string text(const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

/// Writes to a sibling temporary file, then renames over `path`.
void write_container(const fs::path& path, const Container& c);
/// Throws FormatError on bad magic, version, truncation or inconsistent headers.
Container read_container(const fs::path& path);

// ---- typed artifacts ----------------------------------------------------

struct TrackFeatures {
  std::string track_id;
  Tensor<float> mel;    // [128, T] dB
  Tensor<float> mfcc;   // [25, T]
  Tensor<float> dmfcc;  // [25, T-1]
};
void write_features(const fs::path& path, const TrackFeatures& f);
TrackFeatures read_features(const fs::path& path);

void write_codebook(const fs::path& path, const dict::Codebook& cb);
dict::Codebook read_codebook(const fs::path& path);

void write_bow(const fs::path& path, const dict::BowTable& table);
dict::BowTable read_bow(const fs::path& path);

void write_agf_model(const fs::path& path, const groups::AgfModel& m);
groups::AgfModel read_agf_model(const fs::path& path);

using Info = std::map<std::string, std::string>;

/// Feature-learning network with its layer specs, parameters, batchnorm
/// buffers and optional optimizer state.
void write_network(const fs::path& path, models::NetworkGraph<float>& net, const nn::Adam<float>* adam = nullptr,
                   const Info& info = {});
struct LoadedNetwork {
  models::NetworkGraph<float> net;
  nn::Adam<float> adam;
  Info info;
};
LoadedNetwork read_network(const fs::path& path);

void write_mlp(const fs::path& path, nn::Sequential<float>& mlp, const nn::Adam<float>* adam = nullptr,
               const Info& info = {});
struct LoadedMlp {
  nn::Sequential<float> mlp;
  nn::Adam<float> adam;
  Info info;
};
LoadedMlp read_mlp(const fs::path& path);

/// FNV-1a over a file's bytes; used for provenance logging.
std::uint64_t file_hash(const fs::path& path);
std::string hex(std::uint64_t v);

}  // namespace agf::store
