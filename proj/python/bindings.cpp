#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "agf/dictionary.hpp"
#include "agf/dsp.hpp"
#include "agf/error.hpp"
#include "agf/eval.hpp"
#include "agf/groups.hpp"
#include "agf/models.hpp"
#include "agf/pipeline.hpp"

namespace py = pybind11;
using namespace agf;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I64 = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Tensor<float> matrix(const F32& a, const char* what) {
  if (a.ndim() != 2) throw InvalidInput(std::string(what) + " must be a 2-d array");
  return Tensor<float>({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                       std::vector<float>(a.data(), a.data() + a.size()));
}

std::vector<eval::Probs> rows(const F64& p) {
  if (p.ndim() != 2) throw InvalidInput("predictions must be a 2-d array [n, classes]");
  std::vector<eval::Probs> out(static_cast<std::size_t>(p.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].assign(p.data(i, 0), p.data(i, 0) + p.shape(1));
  return out;
}

dsp::MelSpectrogram mel_from(const F32& mel) { return {matrix(mel, "mel"), static_cast<double>(dsp::kHop) / dsp::kSampleRate}; }

pipeline::Config config_from(const std::map<std::string, std::string>& settings) {
  std::string profile = "desk";
  if (auto it = settings.find("profile"); it != settings.end()) profile = it->second;
  auto c = pipeline::Config::for_profile(profile);
  for (const auto& [k, v] : settings)
    if (k != "profile") c.set(k, v);
  c.validate();
  return c;
}

py::dict stage_dict(const pipeline::StageResult& r) {
  py::dict d;
  d["stage"] = r.stage;
  d["skipped"] = r.skipped;
  d["wall_s"] = r.wall_s;
  std::vector<std::string> outs;
  for (const auto& p : r.outputs) outs.push_back(p.string());
  d["outputs"] = outs;
  d["notes"] = r.notes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_agf, m) {
  m.doc() = "Artist-group-factor feature learning: DSP, codebooks, topic models, metrics and pipeline stages";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<FormatError>(m, "FormatError");
  py::register_exception<NumericError>(m, "NumericError");
  py::register_exception<IoError>(m, "IoError");

  m.attr("SAMPLE_RATE") = dsp::kSampleRate;
  m.attr("MEL_BINS") = dsp::kMelBins;
  m.attr("SEGMENT_FRAMES") = dsp::kSegmentFrames;

  m.def(
      "mel_spectrogram",
      [](const F32& samples, int sample_rate) {
        dsp::AudioClip clip{std::vector<float>(samples.data(), samples.data() + samples.size()), sample_rate};
        return to_numpy(dsp::mel_spectrogram(clip).values);
      },
      py::arg("samples"), py::arg("sample_rate") = dsp::kSampleRate, "Log-mel spectrogram in dB, shape [128, frames].");
  m.def(
      "mfcc", [](const F32& mel) { return to_numpy(dsp::mfcc(mel_from(mel)).values); }, py::arg("mel"),
      "MFCCs of a dB mel spectrogram, shape [coefficients, frames].");
  m.def(
      "delta",
      [](const F32& seq) { return to_numpy(dsp::delta(dsp::FrameFeatureSequence{matrix(seq, "sequence")}).values); },
      py::arg("sequence"), "Frame-wise deltas of a [dim, frames] feature sequence.");

  m.def(
      "kmeans_fit",
      [](const F32& x, std::size_t k, std::uint64_t seed, std::size_t max_iter, double tol, std::size_t max_samples) {
        dict::KMeansOptions o;
        o.k = k;
        o.seed = seed;
        o.max_iter = max_iter;
        o.tol = tol;
        o.max_samples = max_samples;
        const auto r = dict::kmeans_fit(matrix(x, "x"), o);
        py::dict d;
        d["centroids"] = to_numpy(r.codebook.centroids);
        d["inertia_history"] = r.inertia_history;
        d["iterations"] = r.iterations;
        d["converged"] = r.converged;
        return d;
      },
      py::arg("x"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 100, py::arg("tol") = 1e-6,
      py::arg("max_samples") = dict::kMaxKMeansSamples, "Lloyd k-means with k-means++ seeding.");
  m.def(
      "kmeans_assign",
      [](const F64& centroids, const F32& x) {
        if (centroids.ndim() != 2) throw InvalidInput("centroids must be 2-d");
        dict::Codebook cb{Tensor<double>({static_cast<std::size_t>(centroids.shape(0)),
                                          static_cast<std::size_t>(centroids.shape(1))},
                                         std::vector<double>(centroids.data(), centroids.data() + centroids.size())),
                          dict::CodeKind::mfcc};
        return dict::kmeans_assign(cb, matrix(x, "x"));
      },
      py::arg("centroids"), py::arg("x"), "Nearest-centroid code per row; ties go to the lowest index.");
  m.def(
      "quantile_normalize", [](const F32& x) { return to_numpy(dict::quantile_normalize(matrix(x, "x"))); },
      py::arg("x"), "Rank-based mapping of each column onto a standard normal.");

  m.def(
      "lda_fit",
      [](const I64& counts, std::size_t n_topics, std::uint64_t seed, std::size_t n_iter, std::optional<double> alpha,
         double beta) {
        if (counts.ndim() != 2) throw InvalidInput("counts must be a 2-d [documents, vocabulary] array");
        dict::BowTable table;
        table.kind = dict::VocabKind::mfcc_code;
        table.vocab = static_cast<std::size_t>(counts.shape(1));
        for (py::ssize_t d = 0; d < counts.shape(0); ++d) {
          char id[32];
          std::snprintf(id, sizeof id, "doc%08zd", d);
          table.bows.push_back({id, std::vector<std::int64_t>(counts.data(d, 0), counts.data(d, 0) + counts.shape(1))});
        }
        groups::LdaOptions o;
        o.n_topics = n_topics;
        o.seed = seed;
        o.n_iter = n_iter;
        o.alpha = alpha;
        o.beta = beta;
        const auto model = groups::lda_fit(table, o);
        py::dict out;
        out["phi"] = to_numpy(model.phi);
        out["theta"] = to_numpy(model.theta);
        out["alpha"] = model.alpha;
        out["log_likelihood"] = model.log_likelihood;
        out["groups"] = groups::assign_groups(model).groups;
        return out;
      },
      py::arg("counts"), py::arg("n_topics"), py::arg("seed") = 0, py::arg("n_iter") = 500,
      py::arg("alpha") = py::none(), py::arg("beta") = 0.01,
      "Collapsed Gibbs LDA over document rows; groups are the argmax topic per row.");

  m.def(
      "log_loss", [](const F64& p, const std::vector<int>& y) { return eval::log_loss(rows(p), y); },
      py::arg("predictions"), py::arg("labels"));
  m.def(
      "f1_score",
      [](const F64& p, const std::vector<int>& y, std::size_t n_classes) {
        return eval::f1_score(rows(p), y, n_classes);
      },
      py::arg("predictions"), py::arg("labels"), py::arg("n_classes"), "Macro F1 over all classes.");
  m.def(
      "aggregate_segments", [](const F64& p) { return eval::aggregate_segments(rows(p)); }, py::arg("segment_probs"),
      "Mean of segment probabilities.");

  m.def("enumerate_subsets", [] {
    std::vector<std::string> out;
    for (const auto& s : eval::enumerate_subsets()) out.push_back(models::combo_string(s));
    return out;
  });
  m.def("enumerate_cases", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& c : eval::enumerate_cases(eval::enumerate_subsets()))
      out.emplace_back(c.combo(), models::to_string(c.variant));
    return out;
  });
  m.def(
      "shape_trace",
      [](const std::string& task, double width) {
        const auto t = models::parse_tasks(task);
        if (t.size() != 1) throw InvalidInput("shape_trace takes one task letter");
        std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
        for (auto& [label, shape] :
             models::build_stn<float>(t.front(), models::Architecture::paper().scaled(width), 0).shape_trace(t.front()))
          out.emplace_back(label, shape);
        return out;
      },
      py::arg("task") = "g", py::arg("width") = 1.0, "Row labels and [batch, channels, height, width] shapes.");
  m.def(
      "param_count",
      [](const std::string& tasks, const std::string& variant, double width) {
        const auto ts = models::parse_tasks(tasks);
        const auto arch = models::Architecture::paper().scaled(width);
        switch (models::variant_from_string(variant)) {
          case models::Variant::stn: {
            std::size_t n = 0;
            for (auto t : ts) n += models::build_stn<float>(t, arch, 0).param_count();
            return n;
          }
          case models::Variant::mtn:
            return ts.size() < 2 ? models::build_stn<float>(ts.front(), arch, 0).param_count()
                                 : models::build_mtn<float>(ts, arch, 0).param_count();
          case models::Variant::wstn:
            return models::build_wstn<float>(ts.size(), models::build_mtn<float>(ts, arch, 0).param_count(), arch, 0)
                .param_count();
        }
        return std::size_t{0};
      },
      py::arg("tasks"), py::arg("variant") = "mtn", py::arg("width") = 1.0,
      "Trainable parameters of the feature learner(s) for a task set.");

  // Pipeline stages take a dict of config keys (the same keys as the config file).
  m.def(
      "synth",
      [](const std::filesystem::path& out_dir, std::size_t genres, std::size_t artists, std::size_t tracks,
         std::uint64_t seed, double duration_s) {
        data::SynthOptions o;
        o.n_genres = genres;
        o.artists_per_genre = artists;
        o.tracks_per_artist = tracks;
        o.seed = seed;
        o.duration_s = duration_s;
        return pipeline::synth(o, out_dir).source;
      },
      py::arg("out_dir"), py::arg("genres") = 4, py::arg("artists") = 8, py::arg("tracks") = 5, py::arg("seed") = 1,
      py::arg("duration_s") = 30.0, "Writes the synthetic dataset; returns the manifest path.");
  m.def("default_config", [](const std::string& profile) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : pipeline::Config::for_profile(profile).items()) out[k] = v;
    return out;
  }, py::arg("profile") = "desk");
  m.def(
      "run_stage",
      [](const std::string& stage, const std::map<std::string, std::string>& settings, bool force, bool control) {
        const auto c = config_from(settings);
        pipeline::Options o;
        o.force = force;
        pipeline::StageResult r;
        {
        py::gil_scoped_release release;
        if (stage == "features")
          r = pipeline::features(c, o);
        else if (stage == "dict")
          r = pipeline::dictionary(c, o);
        else if (stage == "agf")
          r = pipeline::artist_groups(c, o);
        else if (stage == "train")
          r = pipeline::train_stage(c, o);
        else if (stage == "transfer")
          r = pipeline::transfer(c, o, control);
        else if (stage == "eval")
          r = pipeline::evaluate(c, o);
        else
          throw InvalidInput("unknown stage '" + stage + "' (features, dict, agf, train, transfer, eval)");
        }
        return stage_dict(r);
      },
      py::arg("stage"), py::arg("settings") = std::map<std::string, std::string>{}, py::arg("force") = false,
      py::arg("control") = false, "Runs one pipeline stage; skipped when its outputs are current.");
  m.def(
      "read_results",
      [](const std::filesystem::path& path) {
        std::vector<py::dict> out;
        for (const auto& r : eval::read_results_csv(path)) {
          py::dict d;
          d["task_combo"] = r.task_combo;
          d["variant"] = models::to_string(r.variant);
          d["log_loss"] = r.log_loss;
          d["f1"] = r.f1;
          d["n_params"] = r.n_params;
          d["seed"] = r.seed;
          out.push_back(d);
        }
        return out;
      },
      py::arg("path"));
}
