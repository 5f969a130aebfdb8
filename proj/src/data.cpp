#include "agf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "agf/dictionary.hpp"
#include "agf/dsp.hpp"
#include "agf/error.hpp"
#include "agf/rng.hpp"

namespace agf::data {

const Track& Manifest::track(const std::string& id) const {
  for (const auto& t : tracks)
    if (t.track_id == id) return t;
  throw InvalidInput("unknown track '" + id + "'");
}

std::map<std::string, std::string> Manifest::track_artist() const {
  std::map<std::string, std::string> m;
  for (const auto& t : tracks) m[t.track_id] = t.artist_id;
  return m;
}

std::vector<std::string> Manifest::artists() const {
  std::set<std::string> s;
  for (const auto& t : tracks) s.insert(t.artist_id);
  return {s.begin(), s.end()};
}

int Manifest::genre_count() const {
  int n = 0;
  for (const auto& t : tracks) n = std::max(n, t.genre_id + 1);
  return n;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const std::string& what, const std::string& where) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw FormatError(where + ": " + what + " '" + s + "' is not an integer");
  return v;
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  Manifest m;
  m.source = fs::absolute(path);

  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ":1: empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"track_id", "audio_path", "artist_id", "genre_id", "subgenre_ids"})
    if (!col.count(need)) throw FormatError(path.string() + ":1: missing column '" + need + "'");

  std::set<std::string> seen;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw FormatError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
    Track t;
    t.track_id = cells[col["track_id"]];
    t.artist_id = cells[col["artist_id"]];
    if (t.track_id.empty() || t.artist_id.empty()) throw FormatError(where + ": empty track or artist id");
    if (!seen.insert(t.track_id).second) throw FormatError(where + ": duplicate track_id '" + t.track_id + "'");
    t.genre_id = parse_int(cells[col["genre_id"]], "genre_id", where);
    if (t.genre_id < 0 || t.genre_id >= kMaxGenres)
      throw FormatError(where + ": genre_id " + std::to_string(t.genre_id) + " outside [0, 16)");
    const std::string& subs = cells[col["subgenre_ids"]];
    if (!subs.empty())
      for (const auto& s : split(subs, ';')) {
        const int v = parse_int(s, "subgenre id", where);
        if (v < 0 || v >= kMaxSubgenres)
          throw FormatError(where + ": subgenre id " + std::to_string(v) + " outside [0, 150)");
        t.subgenre_ids.push_back(v);
      }
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    t.audio_path = resolve(cells[col["audio_path"]]);
    if (!fs::exists(t.audio_path)) throw FormatError(where + ": audio file " + t.audio_path.string() + " not found");
    if (col.count("song_vector_path") && !cells[col["song_vector_path"]].empty()) {
      t.song_vector_path = resolve(cells[col["song_vector_path"]]);
      if (!fs::exists(t.song_vector_path))
        throw FormatError(where + ": song vector " + t.song_vector_path.string() + " not found");
    }
    m.tracks.push_back(std::move(t));
  }
  if (m.tracks.empty()) throw FormatError(path.string() + ": manifest has no tracks");
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) {
    if (p.empty()) return std::string();
    const auto r = fs::absolute(p).lexically_relative(base);
    return (r.empty() || *r.begin() == "..") ? p.string() : r.generic_string();
  };
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& t : m.tracks) {
    out << t.track_id << ',' << rel(t.audio_path) << ',' << t.artist_id << ',' << t.genre_id << ',';
    for (std::size_t i = 0; i < t.subgenre_ids.size(); ++i) out << (i ? ";" : "") << t.subgenre_ids[i];
    out << ',' << rel(t.song_vector_path) << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<float> read_song_vector(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open song vector " + path.string());
  std::vector<float> v(dict::kSongVectorDim);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(v.size() * sizeof(float)) || in.peek() != EOF)
    throw FormatError(path.string() + ": song vector must hold exactly 4374 float32 values");
  return v;
}

void write_song_vector(const fs::path& path, const std::vector<float>& v) {
  if (v.size() != dict::kSongVectorDim) throw InvalidInput("song vector must have 4374 values");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

namespace {

struct GenreRecipe {
  double base_hz;    // root of the note pool
  double pulse_hz;   // amplitude pattern rate
  double note_s;     // note length
  int harmonics;
};

struct ArtistStyle {
  double detune;     // multiplicative
  double tilt;       // harmonic amplitude decay exponent
  double noise;      // white noise level
  double vibrato_hz;
};

GenreRecipe genre_recipe(int g, int n_genres) {
  // Roots spread log-uniformly over about five octaves.
  const double span = n_genres > 1 ? static_cast<double>(g) / (n_genres - 1) : 0.0;
  return {110.0 * std::pow(2.0, 5.0 * span), 2.0 + 1.5 * (g % 4), 0.125 * (1 + g % 3), 3 + g % 5};
}

std::vector<float> render_track(const GenreRecipe& gr, const ArtistStyle& st, double duration, Rng& rng) {
  constexpr double sr = dsp::kSampleRate;
  const std::size_t n = static_cast<std::size_t>(duration * sr);
  std::vector<float> out(n);
  static const int kScale[] = {0, 2, 4, 7, 9, 12};
  const std::size_t note_len = static_cast<std::size_t>(gr.note_s * sr);
  double phase = 0.0;
  double f = gr.base_hz * st.detune;
  std::vector<double> weight(static_cast<std::size_t>(gr.harmonics) + 1);
  for (int h = 1; h <= gr.harmonics; ++h) weight[static_cast<std::size_t>(h)] = 1.0 / std::pow(h, st.tilt);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % note_len == 0) f = gr.base_hz * st.detune * std::pow(2.0, kScale[rng.below(6)] / 12.0);
    const double t = static_cast<double>(i) / sr;
    const double inst = f * (1.0 + 0.01 * std::sin(2 * std::numbers::pi * st.vibrato_hz * t));
    phase += 2 * std::numbers::pi * inst / sr;
    double v = 0.0;
    for (int h = 1; h <= gr.harmonics; ++h)
      if (inst * h < 0.45 * sr) v += std::sin(phase * h) * weight[static_cast<std::size_t>(h)];
    const double env = 0.6 + 0.4 * std::sin(2 * std::numbers::pi * gr.pulse_hz * t);
    out[i] = static_cast<float>(0.25 * env * v + st.noise * (2.0 * rng.uniform() - 1.0));
  }
  float peak = 0.0f;
  for (float s : out) peak = std::max(peak, std::abs(s));
  if (peak > 0.95f)
    for (auto& s : out) s *= 0.95f / peak;
  return out;
}

}  // namespace

Manifest generate_synthetic_dataset(const SynthOptions& o, const fs::path& out_dir) {
  if (o.n_genres < 1 || o.n_genres > kMaxGenres || o.artists_per_genre < 1 || o.tracks_per_artist < 1)
    throw InvalidInput("synthetic dataset needs 1..16 genres and >= 1 artist and track");
  if (!(o.duration_s > 0.0)) throw InvalidInput("synthetic track duration must be positive");
  std::error_code ec;
  fs::create_directories(out_dir / "audio", ec);
  fs::create_directories(out_dir / "songvec", ec);
  if (ec || !fs::is_directory(out_dir / "audio")) throw IoError("cannot create dataset under " + out_dir.string());

  Manifest m;
  m.source = fs::absolute(out_dir / "manifest.csv");
  const std::size_t D = dict::kSongVectorDim;
  for (int g = 0; g < o.n_genres; ++g) {
    const GenreRecipe gr = genre_recipe(g, o.n_genres);
    Rng genre_rng(derive_seed(o.seed, "genre" + std::to_string(g)));
    std::vector<float> genre_mean(D);
    for (auto& v : genre_mean) v = static_cast<float>(genre_rng.normal());
    for (int a = 0; a < o.artists_per_genre; ++a) {
      const int artist_index = g * o.artists_per_genre + a;
      char artist_id[32];
      std::snprintf(artist_id, sizeof artist_id, "artist%03d", artist_index);
      Rng artist_rng(derive_seed(o.seed, artist_id));
      const ArtistStyle st{std::pow(2.0, artist_rng.uniform(-1.5, 1.5) / 12.0), artist_rng.uniform(0.5, 2.0),
                           artist_rng.uniform(0.002, 0.04), artist_rng.uniform(3.0, 7.0)};
      std::vector<float> artist_offset(D);
      for (auto& v : artist_offset) v = static_cast<float>(0.5 * artist_rng.normal());
      for (int k = 0; k < o.tracks_per_artist; ++k) {
        char track_id[48];
        std::snprintf(track_id, sizeof track_id, "g%02d_a%03d_t%02d", g, artist_index, k);
        Rng rng(derive_seed(o.seed, track_id));
        Track t;
        t.track_id = track_id;
        t.artist_id = artist_id;
        t.genre_id = g;
        t.subgenre_ids = {g * 9 + a % 4, g * 9 + 4 + (a / 4) % 5};
        if (k % 2 == 1) t.subgenre_ids.push_back(g * 9 + (a + k) % 9);
        t.audio_path = fs::absolute(out_dir / "audio" / (t.track_id + ".wav"));
        t.song_vector_path = fs::absolute(out_dir / "songvec" / (t.track_id + ".f32"));
        dsp::write_wav(t.audio_path, {render_track(gr, st, o.duration_s, rng), dsp::kSampleRate});
        std::vector<float> sv(D);
        for (std::size_t i = 0; i < D; ++i)
          sv[i] = genre_mean[i] + artist_offset[i] + static_cast<float>(0.3 * rng.normal());
        write_song_vector(t.song_vector_path, sv);
        m.tracks.push_back(std::move(t));
      }
    }
  }
  write_manifest(m.source, m);
  return m;
}

}  // namespace agf::data
