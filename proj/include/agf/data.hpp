#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace agf::data {

namespace fs = std::filesystem;

inline constexpr int kMaxGenres = 16;
inline constexpr int kMaxSubgenres = 150;

struct Track {
  std::string track_id;
  fs::path audio_path;  // absolute after load
  std::string artist_id;
  int genre_id = 0;
  std::vector<int> subgenre_ids;  // multiset, file order
  fs::path song_vector_path;      // empty when absent
};

struct Manifest {
  fs::path source;  // the CSV the rows came from
  std::vector<Track> tracks;

  const Track& track(const std::string& id) const;
  std::map<std::string, std::string> track_artist() const;
  std::vector<std::string> artists() const;  // sorted, unique
  /// One past the largest genre id present.
  int genre_count() const;
};

inline constexpr const char* kManifestHeader =
    "track_id,audio_path,artist_id,genre_id,subgenre_ids,song_vector_path";

/// Parses and validates a manifest. Relative paths resolve against the
/// manifest's directory. Errors are FormatError messages carrying the line.
Manifest load_manifest(const fs::path& path);
/// Writes paths relative to the manifest's directory when they live under it.
void write_manifest(const fs::path& path, const Manifest& m);

/// Raw little-endian float32 vector of kSongVectorDim values.
std::vector<float> read_song_vector(const fs::path& path);
void write_song_vector(const fs::path& path, const std::vector<float>& v);

struct SynthOptions {
  int n_genres = 4;
  int artists_per_genre = 8;
  int tracks_per_artist = 5;
  std::uint64_t seed = 1;
  double duration_s = 30.0;
};

/// Writes audio/, songvec/ and manifest.csv under out_dir.
///
/// Each genre owns a pitch band and a rhythmic amplitude pattern; each artist
/// detunes the band, tilts the harmonic spectrum and sets a noise floor.
/// Song vectors are genre means plus artist and track noise. Subgenres are a
/// deterministic function of genre and artist.
Manifest generate_synthetic_dataset(const SynthOptions& options, const fs::path& out_dir);

}  // namespace agf::data
