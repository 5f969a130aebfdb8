#include "agf/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <future>
#include <json.hpp>
#include <mutex>
#include <set>
#include <sstream>

#include "agf/dictionary.hpp"
#include "agf/error.hpp"
#include "agf/groups.hpp"
#include "agf/store.hpp"

namespace agf::pipeline {

using nlohmann::json;

// ---- config ---------------------------------------------------------------

Config Config::for_profile(const std::string& profile) {
  Config c;
  if (profile == "desk") return c;
  if (profile != "paper") throw ConfigError("unknown profile '" + profile + "' (desk, paper)");
  c.profile = "paper";
  c.k = dict::kPaperCodebookSize;
  c.kmeans_max_samples = dict::kMaxKMeansSamples;
  c.topics = groups::kPaperTopics;
  c.lda_iters = 500;
  c.width = 1.0;
  c.genre_classes = 16;
  c.train = train::TrainConfig{};
  return c;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void Config::set(const std::string& key, const std::string& v) {
  auto sz = [&] { return parse_number<std::size_t>(key, v); };
  auto dbl = [&] { return parse_number<double>(key, v); };
  try {
    if (key == "profile") {
      if (v != "desk" && v != "paper") throw ConfigError("unknown profile '" + v + "' (desk, paper)");
      profile = v;
    } else if (key == "data_dir") data_dir = v;
    else if (key == "manifest") manifest = v;
    else if (key == "cache_dir") cache_dir = v;
    else if (key == "model_dir") model_dir = v;
    else if (key == "results") results = v;
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
    else if (key == "k") k = sz();
    else if (key == "kmeans_max_iter") kmeans_max_iter = sz();
    else if (key == "kmeans_tol") kmeans_tol = dbl();
    else if (key == "kmeans_max_samples") kmeans_max_samples = sz();
    else if (key == "topics") topics = sz();
    else if (key == "alpha") alpha = dbl();
    else if (key == "beta") beta = dbl();
    else if (key == "lda_iters") lda_iters = sz();
    else if (key == "width") width = dbl();
    else if (key == "genre_classes") genre_classes = sz();
    else if (key == "split_ratio") split_ratio = dbl();
    else if (key == "batch_size") train.batch_size = sz();
    else if (key == "lr") train.lr = dbl();
    else if (key == "epochs_stn") train.epochs_stn = sz();
    else if (key == "epochs_mtn") train.epochs_mtn = sz();
    else if (key == "epochs_mlp") train.epochs_mlp = sz();
    else if (key == "schedule") train.schedule = train::task_schedule_from_string(v);
    else if (key == "mtn_epochs_per_task") train.mtn_epochs_per_task = parse_bool(key, v);
    else if (key == "tasks") tasks = models::combo_string(models::parse_tasks(v));
    else if (key == "variant") variant = models::variant_from_string(v);
    else if (key == "jobs") jobs = std::max<std::size_t>(1, sz());
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const InvalidInput& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> Config::items() const {
  return {{"profile", profile},
          {"data_dir", data_dir.string()},
          {"manifest", manifest_path().string()},
          {"cache_dir", cache_path().string()},
          {"model_dir", model_path().string()},
          {"results", results_path().string()},
          {"seed", std::to_string(seed)},
          {"k", std::to_string(k)},
          {"kmeans_max_iter", std::to_string(kmeans_max_iter)},
          {"kmeans_tol", fmt(kmeans_tol)},
          {"kmeans_max_samples", std::to_string(kmeans_max_samples)},
          {"topics", std::to_string(topics)},
          {"alpha", fmt(alpha)},
          {"beta", fmt(beta)},
          {"lda_iters", std::to_string(lda_iters)},
          {"width", fmt(width)},
          {"genre_classes", std::to_string(genre_classes)},
          {"split_ratio", fmt(split_ratio)},
          {"batch_size", std::to_string(train.batch_size)},
          {"lr", fmt(train.lr)},
          {"epochs_stn", std::to_string(train.epochs_stn)},
          {"epochs_mtn", std::to_string(train.epochs_mtn)},
          {"epochs_mlp", std::to_string(train.epochs_mlp)},
          {"schedule", train::to_string(train.schedule)},
          {"mtn_epochs_per_task", train.mtn_epochs_per_task ? "true" : "false"},
          {"tasks", tasks},
          {"variant", models::to_string(variant)},
          {"jobs", std::to_string(jobs)}};
}

std::string Config::dump() const {
  std::string s;
  for (const auto& [k, v] : items()) s += k + "=" + v + "\n";
  return s;
}

void Config::validate() const {
  train.validate();
  if (k == 0) throw ConfigError("k must be >= 1");
  if (topics < 2) throw ConfigError("topics must be >= 2");
  if (!(width > 0.0)) throw ConfigError("width must be positive");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must be in (0, 1)");
  if (profile != "paper") return;
  const Config ref = for_profile("paper");
  auto locked = [&](const char* key, auto mine, auto theirs) {
    if (mine != theirs) throw ConfigError("profile 'paper' locks " + std::string(key) + "; drop the override");
  };
  locked("k", k, ref.k);
  locked("topics", topics, ref.topics);
  locked("epochs_stn", train.epochs_stn, ref.train.epochs_stn);
  locked("epochs_mtn", train.epochs_mtn, ref.train.epochs_mtn);
  locked("epochs_mlp", train.epochs_mlp, ref.train.epochs_mlp);
}

fs::path Config::cache_path() const {
  if (const char* env = std::getenv("AGF_CACHE_DIR"); env && *env) return env;
  return cache_dir.empty() ? data_dir / "cache" : cache_dir;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

// ---- stage bookkeeping -----------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

void say(const Options& o, const std::string& s) {
  if (o.log) o.log(s);
}

std::string stage_config(const Config& c, std::initializer_list<const char*> keys) {
  std::string out;
  const auto all = c.items();
  for (const char* k : keys)
    for (const auto& [key, v] : all)
      if (key == k) out += key + "=" + v + "\n";
  return out;
}

std::uint64_t combined_hash(const std::vector<fs::path>& files) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    std::uint64_t fh = fs::exists(f) ? store::file_hash(f) : 0;
    for (int i = 0; i < 8; ++i, fh >>= 8) {
      h ^= fh & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

/// Outputs are current when they all exist, none is older than any input,
/// and the stamp records the same stage configuration.
bool up_to_date(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs, const fs::path& stamp,
                const std::string& config) {
  if (!fs::exists(stamp)) return false;
  std::ifstream in(stamp);
  const std::string recorded((std::istreambuf_iterator<char>(in)), {});
  if (recorded != config) return false;
  fs::file_time_type oldest_out = fs::file_time_type::max();
  for (const auto& o : outputs) {
    if (!fs::exists(o)) return false;
    oldest_out = std::min(oldest_out, fs::last_write_time(o));
  }
  for (const auto& i : inputs)
    if (fs::exists(i) && fs::last_write_time(i) > oldest_out) return false;
  return true;
}

void write_stamp(const fs::path& stamp, const std::string& config) {
  fs::create_directories(stamp.parent_path());
  std::ofstream(stamp, std::ios::trunc) << config;
}

void append_run_log(const Config& c, const StageResult& r, const std::vector<fs::path>& inputs,
                    const std::string& stage_cfg) {
  const fs::path path = c.run_log_path();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  json cfg = json::object();
  for (const auto& [k, v] : c.items()) cfg[k] = v;
  json line{{"stage", r.stage},
            {"status", r.skipped ? "skipped" : "ran"},
            {"wall_s", r.wall_s},
            {"inputs", store::hex(combined_hash(inputs))},
            {"outputs", store::hex(combined_hash(r.outputs))},
            {"stage_config", stage_cfg},
            {"config", cfg}};
  std::ofstream(path, std::ios::app) << line.dump() << '\n';
}

template <typename F>
StageResult run_stage(const Config& c, const Options& o, const std::string& name, const std::vector<fs::path>& inputs,
                      const std::vector<fs::path>& outputs, const fs::path& stamp, const std::string& cfg, F&& body) {
  c.validate();
  StageResult r;
  r.stage = name;
  r.outputs = outputs;
  const auto t0 = Clock::now();
  if (!o.force && up_to_date(inputs, outputs, stamp, cfg)) {
    r.skipped = true;
    say(o, name + ": outputs up to date, skipping (use --force to rerun)");
  } else {
    try {
      body(r);
    } catch (const std::exception& e) {
      // Keep the original type where it matters for exit codes.
      if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(name + ": " + e.what());
      throw std::runtime_error(name + ": " + e.what());
    }
    write_stamp(stamp, cfg);
  }
  r.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
  append_run_log(c, r, inputs, cfg);
  return r;
}

void require(const fs::path& p, const std::string& stage, const std::string& what) {
  if (!fs::exists(p))
    throw ConfigError("missing " + what + " (" + p.string() + "); run `" + stage + "` first");
}

fs::path features_file(const Config& c, const std::string& track) {
  return c.cache_path() / "features" / (track + ".agft");
}
fs::path songvec_file(const Config& c) { return c.cache_path() / "songvec_qn.agft"; }
fs::path codebook_file(const Config& c, const std::string& kind) {
  return c.model_path() / ("codebook_" + kind + ".agft");
}
fs::path bow_file(const Config& c, char t) { return c.cache_path() / (std::string("bow_") + t + ".agft"); }
fs::path agf_file(const Config& c, char t) { return c.model_path() / (std::string("agf_") + t + ".agft"); }

data::Manifest manifest_for(const Config& c) {
  const auto p = c.manifest_path();
  if (!fs::exists(p)) throw ConfigError("manifest " + p.string() + " not found; run `synth` or pass --manifest");
  return data::load_manifest(p);
}

constexpr char kAgfTasks[] = {'s', 'e', 'd', 'm'};

}  // namespace

// ---- stages ----------------------------------------------------------------

data::Manifest synth(const data::SynthOptions& options, const fs::path& out_dir) {
  return data::generate_synthetic_dataset(options, out_dir);
}

StageResult features(const Config& c, const Options& o) {
  const auto m = manifest_for(c);
  std::vector<fs::path> inputs{c.manifest_path()}, outputs;
  bool any_song = false;
  for (const auto& t : m.tracks) {
    inputs.push_back(t.audio_path);
    if (!t.song_vector_path.empty()) {
      inputs.push_back(t.song_vector_path);
      any_song = true;
    }
    outputs.push_back(features_file(c, t.track_id));
  }
  if (any_song) outputs.push_back(songvec_file(c));
  const std::string cfg = stage_config(c, {"manifest"});
  return run_stage(c, o, "features", inputs, outputs, c.cache_path() / ".features.stamp", cfg, [&](StageResult&) {
    std::size_t done = 0;
    for (const auto& t : m.tracks) {
      const auto mel = dsp::mel_spectrogram(dsp::read_wav(t.audio_path));
      const auto mf = dsp::mfcc(mel);
      store::write_features(features_file(c, t.track_id), {t.track_id, mel.values, mf.values, dsp::delta(mf).values});
      if (++done % 40 == 0) say(o, "features: " + std::to_string(done) + "/" + std::to_string(m.tracks.size()));
    }
    if (!any_song) return;
    std::vector<dict::SongVector> vecs;
    for (const auto& t : m.tracks) {
      if (t.song_vector_path.empty())
        throw InvalidInput("track '" + t.track_id + "' lacks a song vector while others have one");
      vecs.push_back({t.track_id, data::read_song_vector(t.song_vector_path)});
    }
    const auto qn = dict::quantile_normalize(vecs);
    Tensor<float> mat({qn.size(), dict::kSongVectorDim});
    json ids = json::array();
    for (std::size_t i = 0; i < qn.size(); ++i) {
      std::copy(qn[i].values.begin(), qn[i].values.end(), mat.data() + i * dict::kSongVectorDim);
      ids.push_back(qn[i].track_id);
    }
    store::Container cont;
    cont.put_text("meta", json{{"kind", "song_vectors"}, {"track_ids", ids}}.dump());
    cont.put("vectors", mat);
    store::write_container(songvec_file(c), cont);
  });
}

namespace {

// Stacks per-track [dim, T] frame features into [sum T, dim] rows.
Tensor<float> frame_rows(const std::vector<const Tensor<float>*>& seqs) {
  std::size_t rows = 0;
  const std::size_t dim = seqs.front()->dim(0);
  for (const auto* s : seqs) rows += s->dim(1);
  Tensor<float> out({rows, dim});
  std::size_t r = 0;
  for (const auto* s : seqs)
    for (std::size_t f = 0; f < s->dim(1); ++f, ++r)
      for (std::size_t d = 0; d < dim; ++d) out.at(r, d) = s->at(d, f);
  return out;
}

dict::KMeansOptions kmeans_options(const Config& c, const std::string& stream) {
  dict::KMeansOptions o;
  o.k = c.k;
  o.seed = derive_seed(c.seed, stream);
  o.max_iter = c.kmeans_max_iter;
  o.tol = c.kmeans_tol;
  o.max_samples = c.kmeans_max_samples;
  return o;
}

}  // namespace

StageResult dictionary(const Config& c, const Options& o) {
  const auto m = manifest_for(c);
  std::vector<fs::path> inputs{c.manifest_path()};
  for (const auto& t : m.tracks) {
    require(features_file(c, t.track_id), "features", "frame features for " + t.track_id);
    inputs.push_back(features_file(c, t.track_id));
  }
  const bool songs = fs::exists(songvec_file(c));
  if (songs) inputs.push_back(songvec_file(c));
  std::vector<fs::path> outputs{codebook_file(c, "mfcc"), codebook_file(c, "dmfcc"), bow_file(c, 'm'),
                                bow_file(c, 'd'), bow_file(c, 's')};
  if (songs) {
    outputs.push_back(codebook_file(c, "song"));
    outputs.push_back(bow_file(c, 'e'));
  }
  const std::string cfg = stage_config(c, {"seed", "k", "kmeans_max_iter", "kmeans_tol", "kmeans_max_samples"});
  return run_stage(c, o, "dict", inputs, outputs, c.model_path() / ".dict.stamp", cfg, [&](StageResult& r) {
    const auto owner = m.track_artist();
    std::vector<store::TrackFeatures> feats;
    for (const auto& t : m.tracks) feats.push_back(store::read_features(features_file(c, t.track_id)));

    auto frame_codebook = [&](dict::CodeKind kind, char task, auto member) {
      std::vector<const Tensor<float>*> seqs;
      for (const auto& f : feats) seqs.push_back(&(f.*member));
      const auto rows = frame_rows(seqs);
      const auto name = dict::to_string(kind);
      say(o, "dict: k-means on " + std::to_string(rows.dim(0)) + " " + name + " frames, K=" + std::to_string(c.k));
      const auto fit = dict::kmeans_fit(rows, kmeans_options(c, "kmeans." + name), kind);
      r.notes.push_back(name + ": " + std::to_string(fit.iterations) + " iterations, inertia " +
                        std::to_string(fit.inertia_history.back()));
      store::write_codebook(codebook_file(c, name), fit.codebook);
      std::vector<dict::TrackCodes> codes;
      for (std::size_t i = 0; i < feats.size(); ++i)
        codes.push_back({feats[i].track_id, dict::kmeans_assign(fit.codebook, frame_rows({seqs[i]}))});
      const auto vk = kind == dict::CodeKind::mfcc ? dict::VocabKind::mfcc_code : dict::VocabKind::dmfcc_code;
      const auto bow = dict::artist_bow_from_codes(codes, owner, c.k, vk);
      for (const auto& a : bow.excluded) r.notes.push_back(name + ": artist " + a + " has an empty bag-of-words");
      store::write_bow(bow_file(c, task), bow);
    };
    frame_codebook(dict::CodeKind::mfcc, 'm', &store::TrackFeatures::mfcc);
    frame_codebook(dict::CodeKind::dmfcc, 'd', &store::TrackFeatures::dmfcc);

    if (songs) {
      const auto cont = store::read_container(songvec_file(c));
      const auto ids = json::parse(cont.text("meta")).at("track_ids").get<std::vector<std::string>>();
      const auto vecs = cont.f32("vectors");
      say(o, "dict: k-means on " + std::to_string(vecs.dim(0)) + " song vectors, K=" + std::to_string(c.k));
      const auto fit = dict::kmeans_fit(vecs, kmeans_options(c, "kmeans.song"), dict::CodeKind::song_vector);
      store::write_codebook(codebook_file(c, "song"), fit.codebook);
      const auto assigned = dict::kmeans_assign(fit.codebook, vecs);
      std::vector<dict::TrackCodes> codes;
      for (std::size_t i = 0; i < ids.size(); ++i) codes.push_back({ids[i], {assigned[i]}});
      store::write_bow(bow_file(c, 'e'), dict::artist_bow_from_codes(codes, owner, c.k, dict::VocabKind::song_code));
    }

    std::vector<dict::TrackCodes> subs;
    for (const auto& t : m.tracks)
      subs.push_back({t.track_id, std::vector<std::uint32_t>(t.subgenre_ids.begin(), t.subgenre_ids.end())});
    const auto sbow = dict::artist_bow_from_subgenres(subs, owner);
    for (const auto& a : sbow.excluded) r.notes.push_back("subgenre: artist " + a + " has no labels");
    store::write_bow(bow_file(c, 's'), sbow);
  });
}

StageResult artist_groups(const Config& c, const Options& o) {
  std::vector<fs::path> inputs, outputs;
  for (char t : kAgfTasks)
    if (fs::exists(bow_file(c, t))) {
      inputs.push_back(bow_file(c, t));
      outputs.push_back(agf_file(c, t));
    }
  if (inputs.empty()) require(bow_file(c, 'm'), "dict", "artist bag-of-words tables");
  const std::string cfg = stage_config(c, {"seed", "topics", "alpha", "beta", "lda_iters"});
  return run_stage(c, o, "agf", inputs, outputs, c.model_path() / ".agf.stamp", cfg, [&](StageResult& r) {
    std::map<std::string, std::map<char, std::uint32_t>> table;
    std::vector<char> done;
    for (char t : kAgfTasks) {
      if (!fs::exists(bow_file(c, t))) continue;
      const auto bow = store::read_bow(bow_file(c, t));
      groups::LdaOptions lo;
      lo.n_topics = c.topics;
      lo.beta = c.beta;
      lo.n_iter = c.lda_iters;
      lo.seed = derive_seed(c.seed, std::string("lda.") + t);
      if (c.alpha > 0.0) lo.alpha = c.alpha;
      say(o, std::string("agf: LDA for task ") + t + " on " + std::to_string(bow.bows.size()) + " artists");
      const auto model = groups::lda_fit(bow, lo);
      store::write_agf_model(agf_file(c, t), model);
      const auto assignment = groups::assign_groups(model);
      const auto hist = groups::group_label_histogram(assignment);
      std::string h;
      for (auto v : hist) h += (h.empty() ? "" : " ") + std::to_string(v);
      r.notes.push_back(std::string("task ") + t + " group sizes: " + h);
      for (std::size_t i = 0; i < assignment.artist_ids.size(); ++i) table[assignment.artist_ids[i]][t] = assignment.groups[i];
      done.push_back(t);
    }
    std::ofstream csv(c.model_path() / "groups.csv", std::ios::trunc);
    csv << "artist_id";
    for (char t : done) csv << ',' << t;
    csv << '\n';
    for (const auto& [artist, g] : table) {
      csv << artist;
      for (char t : done) csv << ',' << (g.count(t) ? std::to_string(g.at(t)) : "");
      csv << '\n';
    }
  });
}

// ---- training ---------------------------------------------------------------

std::string net_file_stem(std::span<const Task> tasks, Variant v) {
  return models::combo_string(tasks) + "_" + models::to_string(v);
}

models::Architecture architecture(const Config& c, const data::Manifest& m) {
  auto a = models::Architecture::paper().scaled(c.width);
  a.genre_classes = c.genre_classes ? c.genre_classes : static_cast<std::size_t>(std::max(2, m.genre_count()));
  a.agf_classes = c.topics;
  return a;
}

LoadedData load_training_data(const Config& c, std::span<const Task> tasks) {
  LoadedData d;
  d.manifest = manifest_for(c);
  std::map<Task, groups::AgfAssignment> assignments;
  for (Task t : tasks) {
    if (t == Task::g) continue;
    const auto path = agf_file(c, models::task_char(t));
    if (!fs::exists(path))
      throw ConfigError(std::string("missing artist-group model for task ") + models::task_char(t) + " (" +
                        path.string() + "); run `agf` first");
    assignments[t] = groups::assign_groups(store::read_agf_model(path));
  }
  std::vector<train::GenreLabel> gl;
  for (const auto& t : d.manifest.tracks) gl.push_back({t.track_id, t.genre_id});
  d.split = train::stratified_split(gl, c.split_ratio, derive_seed(c.seed, "split"));
  const std::set<std::string> valid(d.split.valid.begin(), d.split.valid.end());
  for (const auto& t : d.manifest.tracks) {
    const auto ff = features_file(c, t.track_id);
    require(ff, "features", "frame features for " + t.track_id);
    train::LabeledTrack lt{t.track_id, {store::read_features(ff).mel}, {{Task::g, t.genre_id}}};
    for (const auto& [task, a] : assignments) {
      try {
        lt.labels[task] = static_cast<int>(a.group_of(t.artist_id));
      } catch (const InvalidInput&) {
        // Artists left out of the topic model have no label for this task.
      }
    }
    (valid.count(t.track_id) ? d.valid : d.train).push_back(std::move(lt));
  }
  return d;
}

FeatureLearners train_feature_learners(const Config& c, const LoadedData& d, std::span<const Task> tasks,
                                       Variant v, const Log& log) {
  const auto arch = architecture(c, d.manifest);
  const std::string stem = net_file_stem(tasks, v);
  FeatureLearners f;
  auto run = [&](models::NetworkGraph<float>& net, const std::string& label, std::size_t epochs) {
    train::TrainConfig tc = c.train;
    tc.seed = derive_seed(c.seed, "train." + stem + label);
    if (log)
      log("train: " + stem + label + " (" + std::to_string(net.param_count()) + " parameters, " +
          std::to_string(epochs) + " epochs)");
    auto rep = train::train_network(net, d.train, tc, nullptr, epochs);
    f.history.insert(f.history.end(), rep.history.begin(), rep.history.end());
    f.n_params += net.param_count();
  };
  const std::uint64_t net_seed = derive_seed(c.seed, "net." + stem);
  switch (v) {
    case Variant::stn:
      for (Task t : tasks) {
        f.nets.push_back(models::build_stn<float>(t, arch, net_seed));
        run(f.nets.back(), std::string(".") + models::task_char(t), c.train.epochs_stn);
      }
      break;
    case Variant::mtn: {
      if (tasks.size() >= 2) {
        f.nets.push_back(models::build_mtn<float>(tasks, arch, net_seed));
      } else {
        f.nets.push_back(models::build_stn<float>(tasks.front(), arch, net_seed));
        f.nets.back().variant = Variant::mtn;
      }
      auto& net = f.nets.back();
      run(net, "", train::epochs_for(net, c.train));
      break;
    }
    case Variant::wstn: {
      if (tasks.size() < 2) throw InvalidInput("wSTN controls need at least two tasks");
      const auto ref = models::build_mtn<float>(tasks, arch, net_seed).param_count();
      models::WideScale w;
      f.nets.push_back(models::build_wstn<float>(tasks.size(), ref, arch, net_seed, &w));
      if (log) log("train: wSTN width factor " + std::to_string(w.factor) + ", parameter ratio " + std::to_string(w.ratio));
      run(f.nets.back(), "", c.train.epochs_stn);
      break;
    }
  }
  return f;
}

models::FeatureExtractor<float> extractor_for(const FeatureLearners& f) {
  models::FeatureExtractor<float> fx;
  for (const auto& net : f.nets) {
    if (net.variant == Variant::stn) {
      fx.add(net.tasks.front(), &net);
    } else {
      for (Task t : net.tasks) fx.add(t, &net);
    }
  }
  return fx;
}

void write_history_csv(const fs::path& path, std::span<const train::HistoryRow> rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,task,mean_loss\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.mean_loss);
    out << r.epoch << ',' << r.task << ',' << buf << '\n';
  }
}

namespace {

std::vector<fs::path> network_files(const Config& c, std::span<const Task> tasks, Variant v) {
  const auto stem = net_file_stem(tasks, v);
  std::vector<fs::path> out;
  if (v == Variant::stn)
    for (Task t : tasks) out.push_back(c.model_path() / ("net_" + stem + "_" + models::task_char(t) + ".agft"));
  else
    out.push_back(c.model_path() / ("net_" + stem + ".agft"));
  return out;
}

std::vector<fs::path> training_inputs(const Config& c, std::span<const Task> tasks) {
  std::vector<fs::path> in{c.manifest_path()};
  for (Task t : tasks)
    if (t != Task::g) in.push_back(agf_file(c, models::task_char(t)));
  return in;
}

std::string training_config(const Config& c) {
  return stage_config(c, {"seed", "width", "genre_classes", "topics", "split_ratio", "batch_size", "lr", "epochs_stn",
                          "epochs_mtn", "schedule", "mtn_epochs_per_task", "tasks", "variant"});
}

FeatureLearners load_learners(const Config& c, std::span<const Task> tasks, Variant v) {
  FeatureLearners f;
  for (const auto& p : network_files(c, tasks, v)) {
    require(p, "train", "trained network");
    f.nets.push_back(store::read_network(p).net);
    f.n_params += f.nets.back().param_count();
  }
  return f;
}

fs::path mlp_file(const Config& c, const std::string& stem, bool control) {
  return c.model_path() / ("mlp_" + stem + (control ? "_control" : "") + ".agft");
}

}  // namespace

StageResult train_stage(const Config& c, const Options& o) {
  const auto tasks = models::parse_tasks(c.tasks);
  const auto stem = net_file_stem(tasks, c.variant);
  auto outputs = network_files(c, tasks, c.variant);
  outputs.push_back(c.model_path() / ("history_" + stem + ".csv"));
  outputs.push_back(c.model_path() / "split.csv");
  auto inputs = training_inputs(c, tasks);
  for (const auto& t : manifest_for(c).tracks) inputs.push_back(features_file(c, t.track_id));
  return run_stage(c, o, "train", inputs, outputs, c.model_path() / (".train_" + stem + ".stamp"), training_config(c),
                   [&](StageResult& r) {
                     const auto d = load_training_data(c, tasks);
                     for (const auto& w : d.split.warnings) r.notes.push_back(w);
                     auto f = train_feature_learners(c, d, tasks, c.variant, o.log);
                     const auto files = network_files(c, tasks, c.variant);
                     for (std::size_t i = 0; i < f.nets.size(); ++i)
                       store::write_network(files[i], f.nets[i], nullptr, {{"combo", models::combo_string(tasks)}});
                     write_history_csv(c.model_path() / ("history_" + stem + ".csv"), f.history);
                     std::ofstream split(c.model_path() / "split.csv", std::ios::trunc);
                     split << "track_id,subset\n";
                     for (const auto& id : d.split.train) split << id << ",train\n";
                     for (const auto& id : d.split.valid) split << id << ",valid\n";
                   });
}

StageResult transfer(const Config& c, const Options& o, bool shuffle_labels) {
  const auto tasks = models::parse_tasks(c.tasks);
  const auto stem = net_file_stem(tasks, c.variant);
  auto inputs = network_files(c, tasks, c.variant);
  for (const auto& p : inputs) require(p, "train", "trained network for " + stem);
  const std::string tag = shuffle_labels ? "_control" : "";
  const std::vector<fs::path> outputs{mlp_file(c, stem, shuffle_labels),
                                      c.model_path() / ("history_mlp_" + stem + tag + ".csv")};
  const std::string cfg = training_config(c) + stage_config(c, {"epochs_mlp"}) + (shuffle_labels ? "control\n" : "");
  return run_stage(c, o, shuffle_labels ? "transfer-control" : "transfer", inputs, outputs,
                   c.model_path() / (".transfer_" + stem + tag + ".stamp"), cfg, [&](StageResult&) {
                     const auto d = load_training_data(c, std::vector<Task>{Task::g});
                     const auto f = load_learners(c, tasks, c.variant);
                     const auto fx = extractor_for(f);
                     const auto emb = train::embed_tracks(fx, d.train);
                     const auto arch = architecture(c, d.manifest);
                     auto mlp = models::build_transfer_mlp<float>(fx.dim(), arch.genre_classes,
                                                                  derive_seed(c.seed, "mlp." + stem));
                     train::TrainConfig tc = c.train;
                     tc.seed = derive_seed(c.seed, "transfer." + stem);
                     say(o, "transfer: MLP on " + std::to_string(emb.y.size()) + " segment embeddings of dim " +
                                std::to_string(fx.dim()) + (shuffle_labels ? " (shuffled labels)" : ""));
                     const auto rep = train::train_transfer(mlp, emb, tc, shuffle_labels);
                     store::write_mlp(outputs[0], mlp, nullptr, {{"combo", stem}});
                     write_history_csv(outputs[1], rep.history);
                   });
}

namespace {

eval::Metrics score_mlp(const nn::Sequential<float>& mlp, const train::EmbeddedSet& valid, std::size_t classes) {
  return eval::score(eval::predict_tracks(mlp, valid), classes);
}

}  // namespace

StageResult evaluate(const Config& c, const Options& o, eval::Metrics* metrics, std::optional<eval::Metrics>* control) {
  const auto tasks = models::parse_tasks(c.tasks);
  const auto stem = net_file_stem(tasks, c.variant);
  auto inputs = network_files(c, tasks, c.variant);
  inputs.push_back(mlp_file(c, stem, false));
  for (const auto& p : inputs) require(p, p.filename().string().rfind("mlp_", 0) == 0 ? "transfer" : "train", p.stem().string());
  const bool has_control = fs::exists(mlp_file(c, stem, true));
  if (has_control) inputs.push_back(mlp_file(c, stem, true));
  const std::vector<fs::path> outputs{c.results_path()};
  const std::string cfg = training_config(c) + stage_config(c, {"epochs_mlp", "results"}) + (has_control ? "control\n" : "");
  // Always recompute metrics: they are cheap and callers want the numbers.
  Options forced = o;
  forced.force = true;
  return run_stage(c, forced, "eval", inputs, outputs, c.model_path() / (".eval_" + stem + ".stamp"), cfg,
                   [&](StageResult& r) {
                     const auto d = load_training_data(c, std::vector<Task>{Task::g});
                     const auto f = load_learners(c, tasks, c.variant);
                     const auto fx = extractor_for(f);
                     const auto emb = train::embed_tracks(fx, d.valid);
                     const auto classes = architecture(c, d.manifest).genre_classes;
                     const auto mlp = store::read_mlp(mlp_file(c, stem, false));
                     const auto m = score_mlp(mlp.mlp, emb, classes);
                     const eval::ResultRow row{models::combo_string(tasks), c.variant, m.log_loss, m.f1, f.n_params, c.seed};
                     eval::write_results_csv(c.results_path(), std::vector<eval::ResultRow>{row});
                     r.notes.push_back("valid log loss " + std::to_string(m.log_loss) + ", macro F1 " + std::to_string(m.f1) +
                                       " over " + std::to_string(emb.track_ids.size()) + " tracks");
                     if (metrics) *metrics = m;
                     if (has_control) {
                       const auto ctl = score_mlp(store::read_mlp(mlp_file(c, stem, true)).mlp, emb, classes);
                       r.notes.push_back("shuffled-label control: valid log loss " + std::to_string(ctl.log_loss) +
                                         ", macro F1 " + std::to_string(ctl.f1));
                       if (control) *control = ctl;
                     }
                   });
}

StageResult grid(const Config& c, const GridOptions& g, const Options& o, std::vector<eval::ResultRow>* rows_out) {
  if (g.subsets.empty()) throw ConfigError("grid needs at least one task subset");
  std::set<Task> needed;
  for (const auto& s : g.subsets) needed.insert(s.begin(), s.end());
  const std::vector<Task> all(needed.begin(), needed.end());
  auto inputs = training_inputs(c, all);
  const std::vector<fs::path> outputs{c.results_path(), c.results_path().parent_path() / "results_summary.txt"};
  std::string subsets_text;
  for (const auto& s : g.subsets) subsets_text += models::combo_string(s) + " ";
  const std::string cfg = training_config(c) + stage_config(c, {"epochs_mlp", "results"}) + "subsets=" + subsets_text +
                          (g.with_wstn ? "\nwstn" : "") + "\n";
  Options opts = o;
  std::mutex log_mutex;
  if (o.log)
    opts.log = [&](const std::string& s) {
      std::lock_guard lock(log_mutex);
      o.log(s);
    };
  return run_stage(c, opts, "grid", inputs, outputs, c.model_path() / ".grid.stamp", cfg, [&](StageResult& r) {
    const auto d = load_training_data(c, all);
    const auto classes = architecture(c, d.manifest).genre_classes;
    auto run_case = [&](const eval::GridCase& gc) {
      const auto stem = net_file_stem(gc.tasks, gc.variant);
      auto f = train_feature_learners(c, d, gc.tasks, gc.variant, opts.log);
      write_history_csv(c.model_path() / "grid" / ("history_" + stem + ".csv"), f.history);
      const auto fx = extractor_for(f);
      const auto emb_train = train::embed_tracks(fx, d.train);
      const auto emb_valid = train::embed_tracks(fx, d.valid);
      auto mlp = models::build_transfer_mlp<float>(fx.dim(), classes, derive_seed(c.seed, "mlp." + stem));
      train::TrainConfig tc = c.train;
      tc.seed = derive_seed(c.seed, "transfer." + stem);
      train::train_transfer(mlp, emb_train, tc);
      const auto m = score_mlp(mlp, emb_valid, classes);
      if (opts.log) opts.log("grid: " + stem + " log loss " + std::to_string(m.log_loss) + ", F1 " + std::to_string(m.f1));
      return eval::ResultRow{gc.combo(), gc.variant, m.log_loss, m.f1, f.n_params, c.seed};
    };
    auto run_all = [&](const std::vector<eval::GridCase>& cases) {
      if (c.jobs <= 1) return eval::run_grid(cases, run_case);
      // Validate uniqueness up front, then fan out; rows keep case order.
      eval::run_grid(cases, [](const eval::GridCase& gc) { return eval::ResultRow{gc.combo(), gc.variant}; });
      std::vector<eval::ResultRow> rows(cases.size());
      for (std::size_t start = 0; start < cases.size(); start += c.jobs) {
        std::vector<std::future<eval::ResultRow>> futs;
        for (std::size_t i = start; i < std::min(cases.size(), start + c.jobs); ++i)
          futs.push_back(std::async(std::launch::async, run_case, cases[i]));
        for (std::size_t i = 0; i < futs.size(); ++i) rows[start + i] = futs[i].get();
      }
      return rows;
    };
    auto rows = run_all(eval::enumerate_cases(g.subsets));
    if (g.with_wstn) {
      const auto extra = run_all(eval::wstn_controls(rows));
      rows.insert(rows.end(), extra.begin(), extra.end());
    }
    eval::write_results_csv(c.results_path(), rows);
    const auto s = eval::summarize_genre_effect(rows);
    std::ofstream sum(outputs[1], std::ios::trunc);
    sum << "group,n,log_loss,f1\n"
        << "with_g," << s.with_g << ',' << s.log_loss_with_g << ',' << s.f1_with_g << '\n'
        << "without_g," << s.without_g << ',' << s.log_loss_without_g << ',' << s.f1_without_g << '\n';
    r.notes.push_back(std::to_string(rows.size()) + " result rows");
    if (rows_out) *rows_out = rows;
  });
}

}  // namespace agf::pipeline
