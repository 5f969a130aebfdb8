// Acceptance checks: one PASS/FAIL line per criterion with measured values.
// Usage: acceptance [criterion numbers...] [--work DIR]
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "agf/dictionary.hpp"
#include "agf/eval.hpp"
#include "agf/groups.hpp"
#include "agf/models.hpp"
#include "agf/nn/adam.hpp"
#include "agf/nn/gradcheck.hpp"
#include "agf/nn/loss.hpp"
#include "agf/pipeline.hpp"
#include "agf/train.hpp"
#include "fixtures.hpp"

using namespace agf;
using models::Architecture;
using models::Task;
using models::Variant;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 -----------------------------------------------------------------------

Outcome architecture_fidelity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto net = models::build_stn<float>(Task::g, Architecture::paper(), 1);
  const auto trace = net.shape_trace(Task::g);
  std::size_t ok_rows = 0, table_rows = 0;
  const bool input_ok = trace.size() == 19 && trace[0].second == nn::Shape{1, 1, 128, 43};
  for (std::size_t i = 1; i < std::size(fixtures::kReferenceShapes) && i < trace.size(); ++i) {
    const auto& r = fixtures::kReferenceShapes[i];
    ++table_rows;
    if (trace[i].first == r.label && trace[i].second == nn::Shape{1, r.c, r.h, r.w}) ++ok_rows;
  }
  o.require(input_ok, "input row 128x43x1");
  o.require(table_rows == 14 && ok_rows == 14, "table rows " + std::to_string(ok_rows) + "/14");
  o.note(std::to_string(ok_rows) + "/14 table rows exact; input row and 256/256/256/16 head exact; AGF head 40");
  const bool head = trace.size() == 19 && trace[15].second == nn::Shape{1, 256} && trace[16].second == nn::Shape{1, 256} &&
                    trace[17].second == nn::Shape{1, 256} && trace[18].second == nn::Shape{1, 16};
  const auto m = models::build_stn<float>(Task::m, Architecture::paper(), 1).shape_trace(Task::m);
  o.require(head && m.back().second == nn::Shape{1, 40}, "head 256 -> 16/40");
  const double s = seconds_since(t0);
  o.require(s < 1.0, "runtime " + num(s) + " s >= 1 s");
  return o;
}

// ---- 2 -----------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  using nn::LayerSpec;
  double worst = 0.0;
  std::size_t layers_ok = 0, layers = 0;
  auto check_layer = [&](const LayerSpec& spec, nn::Shape in, nn::Mode mode = nn::Mode::train, double lo = -1.0,
                         double hi = 1.0) {
    Rng rng(42);
    auto layer = nn::make_layer<double>(spec);
    layer->init(rng);
    for (auto* p : layer->params())
      if (p->trainable && spec.kind == nn::LayerKind::batchnorm)
        for (auto& v : p->value.values()) v += rng.uniform(-0.5, 0.5);
    Tensor<double> x(std::move(in));
    for (auto& v : x.values()) v = rng.uniform(lo, hi);
    const auto r = nn::check_layer_gradients(*layer, x, mode);
    ++layers;
    layers_ok += r.passed();
    worst = std::max(worst, r.max_rel_error());
    if (!r.passed()) o.require(false, spec.describe());
  };
  check_layer(LayerSpec::conv(3, 4, 3), {2, 3, 5, 4});
  check_layer(LayerSpec::conv(2, 3, 5), {2, 2, 6, 7});
  check_layer(LayerSpec::conv(4, 2, 1), {2, 4, 3, 3});
  check_layer(LayerSpec::maxpool(2, 2), {2, 2, 5, 5});
  check_layer(LayerSpec::maxpool(2, 1), {2, 3, 4, 3});
  check_layer(LayerSpec::batchnorm(3), {4, 3, 2, 3});
  check_layer(LayerSpec::batchnorm(5), {6, 5});
  check_layer(LayerSpec::batchnorm(3), {4, 3, 2, 3}, nn::Mode::infer);
  check_layer(LayerSpec::dropout(0.3), {3, 7});
  check_layer(LayerSpec::elu(), {3, 2, 4, 4}, nn::Mode::train, -3.0, 3.0);
  check_layer(LayerSpec::dense(6, 4), {3, 6});
  check_layer(LayerSpec::global_avg_pool(), {2, 3, 4, 2});
  check_layer(LayerSpec::softmax(), {3, 5}, nn::Mode::train, -2.0, 2.0);
  o.note(std::to_string(layers_ok) + "/" + std::to_string(layers) + " layer checks");

  auto arch = Architecture::paper().scaled(0.0625);
  arch.genre_classes = 4;
  auto net = models::build_stn<double>(Task::g, arch, 11);
  Rng rng(12);
  Tensor<double> x({3, 1, 128, 43});
  for (auto& v : x.values()) v = rng.normal();
  const std::vector<int> y{0, 2, 3};
  const auto full = nn::check_gradients(net.branch(Task::g), x, std::span<const int>(y));
  std::size_t entries = 0, zeros = 0;
  for (const auto& e : full.entries) {
    entries += e.checked;
    zeros += e.zero_checked;
  }
  o.require(full.passed(), "reduced-width network:\n" + full.to_string());
  worst = std::max(worst, full.max_rel_error());
  o.note("reduced-width STN " + std::to_string(entries) + " entries (" + std::to_string(zeros) +
         " structurally zero, checked absolutely)");
  o.require(worst < 1e-4, "max relative error " + num(worst));
  o.note("max relative error " + num(worst, 3));
  const double s = seconds_since(t0);
  o.require(s < 120.0, "runtime " + num(s) + " s >= 120 s");
  return o;
}

// ---- 3 -----------------------------------------------------------------------

Outcome lda_recovery() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = fixtures::two_topic_corpus(2024);
  groups::LdaOptions lo;
  lo.n_topics = 2;
  lo.seed = 7;
  const auto model = groups::lda_fit(corpus.table, lo);
  const double keep = std::min(fixtures::cosine(corpus.phi[0], &model.phi.at(0, 0)),
                               fixtures::cosine(corpus.phi[1], &model.phi.at(1, 0)));
  const double swap = std::min(fixtures::cosine(corpus.phi[0], &model.phi.at(1, 0)),
                               fixtures::cosine(corpus.phi[1], &model.phi.at(0, 0)));
  const bool swapped = swap > keep;
  const double best = std::max(keep, swap);
  const auto assignment = groups::assign_groups(model);
  std::size_t correct = 0;
  for (std::size_t d = 0; d < corpus.table.bows.size(); ++d) {
    const auto g = assignment.group_of(corpus.table.bows[d].artist_id);
    correct += static_cast<int>(swapped ? 1 - g : g) == corpus.topic[d];
  }
  const double frac = static_cast<double>(correct) / static_cast<double>(corpus.table.bows.size());
  o.require(best > 0.95, "cosine " + num(best));
  o.require(frac >= 0.95, "assignments " + num(frac));
  o.note("200 docs x 100 tokens; min best-permutation cosine " + num(best, 5) + ", " + std::to_string(correct) +
         "/200 assigned correctly");
  const double s = seconds_since(t0);
  o.require(s < 60.0, "runtime " + num(s) + " s >= 60 s");
  return o;
}

// ---- 4 -----------------------------------------------------------------------

Outcome kmeans_checks() {
  Outcome o;
  std::size_t runs = 0, monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = fixtures::random_points(600, 5, 100 + seed);
    dict::KMeansOptions opt;
    opt.k = 16;
    opt.seed = seed;
    opt.max_iter = 50;
    const auto r = dict::kmeans_fit(x, opt);
    ++runs;
    monotone += fixtures::non_increasing(r.inertia_history);
  }
  o.require(monotone == runs, "inertia increased in " + std::to_string(runs - monotone) + " runs");
  o.note("inertia non-increasing in " + std::to_string(monotone) + "/" + std::to_string(runs) + " runs");

  Tensor<float> four({4, 2}, std::vector<float>{0, 0, 0, 1, 10, 0, 10, 1});
  const double oracle = fixtures::exhaustive_two_means(four);
  bool four_ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    dict::KMeansOptions opt;
    opt.k = 2;
    opt.seed = seed;
    const auto r = dict::kmeans_fit(four, opt);
    const auto& c = r.codebook.centroids;
    const std::size_t left = c.at(0, 0) < c.at(1, 0) ? 0 : 1;
    four_ok &= std::abs(c.at(left, 0)) < 1e-12 && std::abs(c.at(left, 1) - 0.5) < 1e-12 &&
               std::abs(c.at(1 - left, 0) - 10.0) < 1e-12 && std::abs(c.at(1 - left, 1) - 0.5) < 1e-12 &&
               std::abs(r.inertia_history.back() - oracle) < 1e-9;
  }
  o.require(four_ok, "4-point oracle");
  o.note("4-point/2-cluster oracle SSE " + num(oracle) + " matched");

  const auto pts = fixtures::random_points(100, 4, 21);
  const dict::Codebook cb{fixtures::random_points(7, 4, 22).cast<double>(), dict::CodeKind::mfcc};
  const auto got = dict::kmeans_assign(cb, pts);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 7; ++k)
      if (fixtures::sq_dist(pts, i, cb.centroids, k) < fixtures::sq_dist(pts, i, cb.centroids, best)) best = k;
    agree += got[i] == best;
  }
  o.require(agree == 100, "brute-force agreement " + std::to_string(agree) + "/100");
  o.note("brute-force nearest neighbour " + std::to_string(agree) + "/100");
  return o;
}

// ---- 5 -----------------------------------------------------------------------

Outcome metrics_checks() {
  Outcome o;
  std::vector<eval::Probs> uniform(50, eval::Probs(16, 1.0 / 16.0));
  std::vector<int> y(50);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 16);
  const double ll = eval::log_loss(uniform, y);
  o.require(std::abs(ll - std::log(16.0)) <= 1e-9, "uniform log loss " + num(ll, 17));
  o.note("uniform 16-class log loss - ln 16 = " + num(ll - std::log(16.0), 3));
  double worst_f1 = 0, worst_ll = 0;
  for (const auto& f : fixtures::metric_fixtures()) {
    worst_f1 = std::max(worst_f1, std::abs(eval::f1_score(f.p, f.y, f.classes) - fixtures::f1_oracle(f.p, f.y, f.classes)));
    worst_ll = std::max(worst_ll, std::abs(eval::log_loss(f.p, f.y) - fixtures::log_loss_oracle(f.p, f.y)));
  }
  o.require(worst_f1 <= 1e-12 && worst_ll <= 1e-12, "oracle mismatch");
  o.note("10 fixtures: max |F1 - oracle| " + num(worst_f1, 3) + ", max |log loss - oracle| " + num(worst_ll, 3));
  return o;
}

// ---- 6 -----------------------------------------------------------------------

Outcome mtn_isolation_and_budget() {
  Outcome o;
  const std::vector<Task> all(models::kAllTasks.begin(), models::kAllTasks.end());
  auto arch = Architecture::paper().scaled(0.125);
  std::size_t isolated = 0;
  for (Task t : all) {
    auto net = models::build_mtn<float>(all, arch, 5);
    Rng rng(1);
    Tensor<float> x({4, 1, 128, 43});
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());
    const std::vector<int> y{0, 3, 7, 1};
    std::map<std::string, Tensor<float>> before;
    for (auto& p : net.all_named_params()) before[p.name] = p.param->value;
    nn::Adam<float> adam;
    auto logits = net.forward_logits(t, x, nn::Mode::train, rng);
    net.backward(t, nn::softmax_cross_entropy(logits, std::span<const int>(y)).grad);
    auto params = net.named_params(t);
    adam.step(params);
    bool ok = true, moved = false;
    const std::string own = std::string("branch.") + models::task_char(t) + ".";
    for (auto& p : net.all_named_params()) {
      const bool touched = p.name.starts_with("shared.") || p.name.starts_with(own);
      if (!touched) ok &= p.param->value == before[p.name];
      if (touched && p.name.find("weight") != std::string::npos) moved |= !(p.param->value == before[p.name]);
    }
    isolated += ok && moved;
  }
  o.require(isolated == all.size(), "isolation held for " + std::to_string(isolated) + "/5 tasks");
  o.note("other branches bit-identical after a step on each of 5 tasks");

  train::TrainConfig cfg;
  auto five = models::build_mtn<float>(all, arch, 0);
  const std::size_t epochs = train::epochs_for(five, cfg);
  o.require(epochs == 1000, "epochs_for gave " + std::to_string(epochs));
  // Desk training set (136 tracks) and a full-scale one (21250 tracks).
  for (std::size_t n_train : {std::size_t{136}, std::size_t{21250}}) {
    const std::size_t n = epochs * train::batch_sizes(n_train, cfg.batch_size).size();
    std::map<Task, std::size_t> count;
    for (Task t : train::plan_task_schedule(all, n, cfg.schedule, 0)) ++count[t];
    double lo = 1, hi = 0;
    for (Task t : all) {
      const double share = static_cast<double>(count[t]) / static_cast<double>(n);
      lo = std::min(lo, share);
      hi = std::max(hi, share);
    }
    o.require(lo >= 0.15 && hi <= 0.25, "share outside 20% +/- 5% at " + std::to_string(n_train) + " tracks");
    o.note(std::to_string(n) + " batches: shares " + num(100 * lo, 4) + "%.." + num(100 * hi, 4) + "%");
  }

  // The trainer follows the same plan: a short real run on random spectrograms.
  train::Dataset ds;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    train::LabeledTrack tr{"t" + std::to_string(i), {Tensor<float>({128, 50})}, {}};
    for (auto& v : tr.mel.values.values()) v = static_cast<float>(rng.normal());
    for (Task t : all) tr.labels[t] = i % 2;
    ds.push_back(std::move(tr));
  }
  auto tiny = Architecture::paper().scaled(0.0625);
  tiny.genre_classes = tiny.agf_classes = 2;
  auto net = models::build_mtn<float>(all, tiny, 9);
  train::TrainConfig short_cfg;
  short_cfg.batch_size = 2;
  short_cfg.seed = 4;
  const auto rep = train::train_network(net, ds, short_cfg, nullptr, 40);
  std::map<Task, std::size_t> plan_count;
  for (Task t : train::plan_task_schedule(all, rep.total_batches, short_cfg.schedule, short_cfg.seed)) ++plan_count[t];
  bool same = rep.total_batches == 40 * train::batch_sizes(ds.size(), 2).size();
  for (Task t : all) same &= rep.batches_per_task.at(t) == plan_count[t];
  o.require(same, "trainer batch counts differ from the plan");
  o.note("trainer realizes the plan (" + std::to_string(rep.total_batches) + " batches)");
  return o;
}

// ---- 7 -----------------------------------------------------------------------

Outcome wstn_matching() {
  Outcome o;
  const auto arch = Architecture::paper();
  std::map<std::size_t, double> worst;
  for (const auto& subset : eval::enumerate_subsets()) {
    if (subset.size() < 2) continue;
    const auto ref = models::build_mtn<float>(subset, arch, 0).param_count();
    const auto wide = models::build_wstn<float>(subset.size(), ref, arch, 0);
    const double dev = std::abs(static_cast<double>(wide.param_count()) / static_cast<double>(ref) - 1.0);
    worst[subset.size()] = std::max(worst[subset.size()], dev);
  }
  for (std::size_t n = 2; n <= 5; ++n) {
    o.require(worst.count(n) && worst[n] <= 0.01, "size " + std::to_string(n));
    o.note("|T|=" + std::to_string(n) + " max |ratio-1| " + num(worst[n], 3));
  }
  return o;
}

// ---- 8 and 10 ----------------------------------------------------------------

struct DeskRun {
  double wall_s = 0;
  eval::Metrics metrics;
  std::optional<eval::Metrics> control;
  std::string error;
};

pipeline::Config desk_config(const fs::path& root) {
  auto c = pipeline::Config::for_profile("desk");
  c.data_dir = root;
  c.tasks = "gs";
  c.variant = Variant::mtn;
  return c;
}

DeskRun run_desk(const fs::path& root) {
  DeskRun r;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::remove_all(root);
    const auto c = desk_config(root);
    data::SynthOptions so;
    so.n_genres = 4;
    so.artists_per_genre = 8;
    so.tracks_per_artist = 5;
    so.seed = c.seed;
    pipeline::Options o;
    o.log = [](const std::string& s) { std::fprintf(stderr, "  %s\n", s.c_str()); };
    pipeline::synth(so, c.data_dir);
    pipeline::features(c, o);
    pipeline::dictionary(c, o);
    pipeline::artist_groups(c, o);
    pipeline::train_stage(c, o);
    pipeline::transfer(c, o, false);
    pipeline::transfer(c, o, true);
    pipeline::evaluate(c, o, &r.metrics, &r.control);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.wall_s = seconds_since(t0);
  return r;
}

Outcome end_to_end(const DeskRun& run) {
  Outcome o;
  if (!run.error.empty()) {
    o.require(false, "pipeline error: " + run.error);
    return o;
  }
  const double ln4 = std::log(4.0);
  o.require(run.wall_s < 15 * 60.0, "wall time " + num(run.wall_s) + " s");
  o.require(run.metrics.log_loss < ln4, "valid log loss " + num(run.metrics.log_loss));
  o.require(run.metrics.f1 > 0.5, "macro F1 " + num(run.metrics.f1));
  o.note("wall " + num(run.wall_s, 4) + " s; valid log loss " + num(run.metrics.log_loss, 4) + " (< ln 4 = " +
         num(ln4, 5) + "), macro F1 " + num(run.metrics.f1, 4));
  if (!run.control) {
    o.require(false, "no permutation-control result");
  } else {
    const double rel = run.control->log_loss / ln4 - 1.0;
    o.require(std::abs(rel) <= 0.05, "control log loss " + num(run.control->log_loss) + " is " + num(100 * rel, 3) +
                                          "% from ln 4");
    o.note("shuffled-label control log loss " + num(run.control->log_loss, 5) + " (" + num(100 * rel, 3) +
           "% from ln 4)");
  }
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome reproducibility(const fs::path& a, const fs::path& b, const DeskRun& ra, const DeskRun& rb) {
  Outcome o;
  if (!ra.error.empty() || !rb.error.empty()) {
    o.require(false, "pipeline error: " + ra.error + rb.error);
    return o;
  }
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(a / "models")) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && (name.starts_with("history_") || name.ends_with(".agft")))
      files.push_back(fs::relative(e.path(), a).string());
  }
  files.push_back("results.csv");
  std::sort(files.begin(), files.end());
  std::size_t same = 0;
  for (const auto& f : files) {
    const auto x = slurp(a / f);
    const bool eq = !x.empty() && fs::exists(b / f) && x == slurp(b / f);
    same += eq;
    if (!eq) o.require(false, f + " differs");
  }
  o.note(std::to_string(same) + "/" + std::to_string(files.size()) +
         " artifacts bitwise identical (loss histories, checkpoints, codebooks, topic models, results CSV)");
  o.require(files.size() >= 8, "too few artifacts compared");
  return o;
}

// ---- 9 -----------------------------------------------------------------------

Outcome grid_protocol() {
  Outcome o;
  const auto subsets = eval::enumerate_subsets();
  // Independent enumeration: every non-empty bitmask over the five tasks.
  std::set<std::string> oracle;
  const std::string letters = "gsedm";
  for (unsigned mask = 1; mask < 32; ++mask) {
    std::string s;
    for (unsigned b = 0; b < 5; ++b)
      if (mask & (1u << b)) s += letters[b];
    oracle.insert(s);
  }
  std::set<std::string> got;
  for (const auto& s : subsets) got.insert(models::combo_string(s));
  o.require(subsets.size() == 31 && got == oracle, "subset enumeration");
  const auto cases = eval::enumerate_cases(subsets);
  std::set<std::pair<std::string, Variant>> unique;
  std::size_t stn = 0, mtn = 0;
  for (const auto& c : cases) {
    unique.insert({c.combo(), c.variant});
    stn += c.variant == Variant::stn;
    mtn += c.variant == Variant::mtn;
  }
  o.require(cases.size() == 62 && unique.size() == 62 && stn == 31 && mtn == 31, "case enumeration");
  o.note(std::to_string(got.size()) + " combos; " + std::to_string(cases.size()) + " cases (" + std::to_string(stn) +
         " STN, " + std::to_string(mtn) + " MTN)");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  fs::path work = fs::temp_directory_path() / "agf_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc)
      work = argv[++i];
    else
      wanted.insert(std::stoi(a));
  }
  auto want = [&](int n) { return wanted.empty() || wanted.count(n); };
  ::unsetenv("AGF_CACHE_DIR");

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    if (!want(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::printf("criterion %2d %s  %s: %s [%.2f s]\n", n, o.pass ? "PASS" : "FAIL", name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "architecture fidelity", architecture_fidelity);
  report(2, "gradient correctness", gradient_correctness);
  report(3, "LDA recovery", lda_recovery);
  report(4, "k-means", kmeans_checks);
  report(5, "metrics", metrics_checks);
  report(6, "MTN isolation and budget", mtn_isolation_and_budget);
  report(7, "wSTN parameter matching", wstn_matching);

  DeskRun run_a, run_b;
  if (want(8) || want(10)) run_a = run_desk(work / "run_a");
  report(8, "end-to-end desk run", [&] { return end_to_end(run_a); });
  report(9, "grid protocol", grid_protocol);
  if (want(10)) {
    run_b = run_desk(work / "run_b");
    report(10, "reproducibility", [&] { return reproducibility(work / "run_a", work / "run_b", run_a, run_b); });
  }
  std::printf("%s: %d criterion failure(s)\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
