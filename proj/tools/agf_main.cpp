// agf: command-line driver for the artist-group-factor pipeline.
#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "agf/error.hpp"
#include "agf/eval.hpp"
#include "agf/pipeline.hpp"

namespace pl = agf::pipeline;

namespace {

struct Flags {
  std::string config_file, profile, data_dir, manifest, cache_dir, model_dir, results, tasks, variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, topics, jobs;
  std::vector<std::string> sets;
  bool force = false, quiet = false;
};

pl::Config resolve(const Flags& f) {
  std::vector<std::pair<std::string, std::string>> file;
  if (!f.config_file.empty()) file = pl::read_config_file(f.config_file);
  std::string profile = "desk";
  for (const auto& [k, v] : file)
    if (k == "profile") profile = v;
  if (!f.profile.empty()) profile = f.profile;
  auto c = pl::Config::for_profile(profile);
  for (const auto& [k, v] : file)
    if (k != "profile") c.set(k, v);
  auto str = [&](const char* key, const std::string& v) {
    if (!v.empty()) c.set(key, v);
  };
  str("data_dir", f.data_dir);
  str("manifest", f.manifest);
  str("cache_dir", f.cache_dir);
  str("model_dir", f.model_dir);
  str("results", f.results);
  str("tasks", f.tasks);
  str("variant", f.variant);
  if (f.seed) c.seed = *f.seed;
  if (f.k) c.k = *f.k;
  if (f.topics) c.topics = *f.topics;
  if (f.jobs) c.jobs = std::max<std::size_t>(1, *f.jobs);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw agf::ConfigError("--set expects key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  c.validate();
  return c;
}

void report(const pl::StageResult& r) {
  for (const auto& n : r.notes) std::cout << r.stage << ": " << n << '\n';
  std::printf("%s: %s in %.2f s\n", r.stage.c_str(), r.skipped ? "up to date" : "done", r.wall_s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Artist-group-factor feature learning and genre transfer pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_file, "key=value config file (flags override it)")->check(CLI::ExistingFile);
  app.add_option("--profile", f.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--data-dir", f.data_dir, "root for manifest, cache, models and results");
  app.add_option("--manifest", f.manifest, "dataset manifest CSV");
  app.add_option("--cache-dir", f.cache_dir, "feature cache (AGF_CACHE_DIR overrides)");
  app.add_option("--model-dir", f.model_dir, "codebooks, topic models and checkpoints");
  app.add_option("--results", f.results, "results CSV path");
  app.add_option("--seed", f.seed, "master seed");
  app.add_option("--tasks", f.tasks, "task letters from g,s,e,d,m (e.g. gs)");
  app.add_option("--variant", f.variant, "stn, mtn or wstn");
  app.add_option("--k", f.k, "codebook size");
  app.add_option("--topics", f.topics, "number of artist groups per task");
  app.add_option("--set", f.sets, "override any config key (key=value), repeatable");
  app.add_flag("--force", f.force, "rerun even when outputs are up to date");
  app.add_flag("-q,--quiet", f.quiet, "no progress lines on stderr");

  agf::data::SynthOptions so;
  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  synth->add_option("--genres", so.n_genres)->check(CLI::PositiveNumber);
  synth->add_option("--artists", so.artists_per_genre, "artists per genre")->check(CLI::PositiveNumber);
  synth->add_option("--tracks", so.tracks_per_artist, "tracks per artist")->check(CLI::PositiveNumber);
  synth->add_option("--duration", so.duration_s, "clip length in seconds")->check(CLI::PositiveNumber);
  synth->add_option("--out", out_dir, "output directory (default: data dir)");

  app.add_subcommand("features", "mel spectrograms, MFCCs and normalized song vectors");
  app.add_subcommand("dict", "k-means codebooks and artist bags-of-words");
  app.add_subcommand("agf", "topic models and artist group labels");
  app.add_subcommand("train", "train the feature-learning networks");
  bool control = false;
  auto* transfer = app.add_subcommand("transfer", "train the genre MLP on frozen embeddings");
  transfer->add_flag("--control", control, "also train a shuffled-label control MLP");
  app.add_subcommand("eval", "score the transfer MLP on the validation split");
  bool all_subsets = false, wstn = false;
  auto* grid = app.add_subcommand("grid", "run every feature-learning case for the task subsets");
  grid->add_flag("--all-subsets", all_subsets, "all 31 non-empty subsets of gsedm");
  grid->add_flag("--wstn", wstn, "add parameter-matched wide single-task controls");
  grid->add_option("--jobs", f.jobs, "parallel case workers")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    auto c = resolve(f);
    pl::Options o;
    o.force = f.force;
    if (!f.quiet) o.log = [](const std::string& s) { std::cerr << s << std::endl; };
    if (f.data_dir.empty() && !out_dir.empty() && stage == "synth") c.data_dir = out_dir;

    if (stage == "synth") {
      so.seed = c.seed;
      const auto m = pl::synth(so, out_dir.empty() ? c.data_dir : pl::fs::path(out_dir));
      std::cout << "synth: wrote " << m.tracks.size() << " tracks by " << m.artists().size() << " artists to "
                << m.source.string() << '\n';
    } else if (stage == "features") {
      report(pl::features(c, o));
    } else if (stage == "dict") {
      report(pl::dictionary(c, o));
    } else if (stage == "agf") {
      report(pl::artist_groups(c, o));
    } else if (stage == "train") {
      report(pl::train_stage(c, o));
    } else if (stage == "transfer") {
      report(pl::transfer(c, o, false));
      if (control) report(pl::transfer(c, o, true));
    } else if (stage == "eval") {
      report(pl::evaluate(c, o));
      std::cout << "eval: results in " << c.results_path().string() << '\n';
    } else if (stage == "grid") {
      pl::GridOptions g;
      g.with_wstn = wstn;
      if (all_subsets)
        g.subsets = agf::eval::enumerate_subsets();
      else
        g.subsets = {agf::models::parse_tasks(c.tasks)};
      std::vector<agf::eval::ResultRow> rows;
      report(pl::grid(c, g, o, &rows));
      for (const auto& r : rows)
        std::printf("%-6s %-5s log_loss %.4f f1 %.4f params %zu\n", r.task_combo.c_str(),
                    agf::models::to_string(r.variant).c_str(), r.log_loss, r.f1, r.n_params);
    }
  } catch (const agf::ConfigError& e) {
    std::cerr << "agf " << stage << ": error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "agf " << stage << ": failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
