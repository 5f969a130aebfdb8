#include <cmath>
#include <numeric>

#include "agf/models.hpp"
#include "agf/nn/adam.hpp"
#include "agf/nn/gradcheck.hpp"
#include "agf/nn/loss.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace agf;
using namespace agf::models;
using nn::Shape;

namespace {

using fixtures::kReferenceShapes;

// Closed-form parameter count from the layer arithmetic of the table.
std::size_t stn_params_oracle(const Architecture& a, std::size_t classes) {
  const auto& c = a.conv_channels;
  const std::size_t d = a.dense_units;
  std::size_t n = 5 * 5 * 1 * c[0] + c[0];
  n += 9 * c[0] * c[1] + c[1] + 2 * c[1];
  n += 9 * c[1] * c[2] + c[2];
  n += 9 * c[2] * c[3] + c[3] + 2 * c[3];
  n += 9 * c[3] * c[4] + c[4];
  n += 9 * c[4] * c[5] + c[5];
  n += c[5] * c[6] + c[6] + 2 * c[6];
  n += 2 * c[6];
  n += c[6] * d + d + 2 * d;
  n += d * classes + classes;
  return n;
}

Tensor<float> random_batch(std::size_t b, Rng& rng) {
  Tensor<float> x({b, 1, 128, 43});
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  return x;
}

}  // namespace

TEST_CASE("task parsing is canonical") {
  CHECK(combo_string(parse_tasks("mdesg")) == "gsedm");
  CHECK(combo_string(parse_tasks("s,g")) == "gs");
  CHECK(parse_tasks("gg").size() == 1);
  CHECK_THROWS_AS(parse_tasks("gx"), InvalidInput);
  CHECK(variant_from_string("wstn") == Variant::wstn);
}

TEST_CASE("STN shape trace matches the reference architecture row by row") {
  auto net = build_stn<float>(Task::g, Architecture::paper(), 1);
  auto trace = net.shape_trace(Task::g);
  REQUIRE(trace.size() == 19);
  for (std::size_t i = 0; i < std::size(kReferenceShapes); ++i) {
    INFO(trace[i].first);
    CHECK(trace[i].first == kReferenceShapes[i].label);
    CHECK(trace[i].second == Shape{1, kReferenceShapes[i].c, kReferenceShapes[i].h, kReferenceShapes[i].w});
  }
  CHECK(trace[15].second == Shape{1, 256});
  CHECK(trace[16].second == Shape{1, 256});
  CHECK(trace[17].second == Shape{1, 256});
  CHECK(trace[18].second == Shape{1, 16});
  CHECK(build_stn<float>(Task::m, Architecture::paper(), 1).shape_trace(Task::m).back().second == Shape{1, 40});
}

TEST_CASE("STN parameter counts") {
  const auto arch = Architecture::paper();
  auto g = build_stn<float>(Task::g, arch, 1);
  CHECK(g.param_count() == stn_params_oracle(arch, 16));
  CHECK(g.param_count() == 566928);  // frozen regression constant
  auto m = build_stn<float>(Task::m, arch, 1);
  CHECK(m.param_count() == stn_params_oracle(arch, 40));
  CHECK(param_count(encoder_rows(arch, 16)) == g.param_count());
  CHECK(m.branch(Task::m).layer(m.branch(Task::m).size() - 2).spec().out == 40);
}

TEST_CASE("builds are reproducible from the seed") {
  const auto arch = Architecture::paper().scaled(0.25);
  auto a = build_stn<float>(Task::s, arch, 77);
  auto b = build_stn<float>(Task::s, arch, 77);
  auto c = build_stn<float>(Task::s, arch, 78);
  auto pa = a.all_named_params(), pb = b.all_named_params(), pc = c.all_named_params();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].param->value == pb[i].param->value);
    any_diff |= !(pa[i].param->value == pc[i].param->value);
  }
  CHECK(any_diff);
}

TEST_CASE("MTN shares exactly the first block") {
  const auto arch = Architecture::paper();
  const std::size_t shared = 5 * 5 * 16 + 16;
  const std::vector<Task> gs{Task::g, Task::s};
  auto mtn = build_mtn<float>(gs, arch, 3);
  CHECK(mtn.shared.size() == 3);
  CHECK(mtn.shared.trainable_count() == shared);
  const std::size_t branch_g = stn_params_oracle(arch, 16) - shared;
  const std::size_t branch_s = stn_params_oracle(arch, 40) - shared;
  CHECK(mtn.param_count() == shared + branch_g + branch_s);
  CHECK(mtn.shape_trace(Task::s).size() == 19);
  CHECK(mtn.shape_trace(Task::g) == build_stn<float>(Task::g, arch, 0).shape_trace(Task::g));

  std::vector<Task> all(kAllTasks.begin(), kAllTasks.end());
  auto five = build_mtn<float>(all, arch, 3);
  CHECK(five.branches.size() == 5);
  std::vector<std::size_t> widths;
  for (auto& [t, b] : five.branches) widths.push_back(b.output_shape({1, 16, 64, 43})[1]);
  CHECK(widths == std::vector<std::size_t>{16, 40, 40, 40, 40});

  std::size_t stn_sum = 0;
  for (Task t : all) stn_sum += build_stn<float>(t, arch, 0).param_count();
  CHECK(five.param_count() < stn_sum);
  CHECK(stn_sum - five.param_count() == 4 * shared);

  CHECK_THROWS_AS(build_mtn<float>(std::vector<Task>{Task::g}, arch, 0), InvalidInput);
}

TEST_CASE("MTN step on one task leaves other branches bit-identical") {
  const auto arch = Architecture::paper().scaled(0.125);
  std::vector<Task> tasks{Task::g, Task::s, Task::e};
  auto net = build_mtn<float>(tasks, arch, 5);
  Rng rng(1);
  auto x = random_batch(4, rng);
  std::vector<int> y{0, 3, 7, 1};

  auto snapshot = [&] {
    std::map<std::string, Tensor<float>> s;
    for (auto& p : net.all_named_params()) s[p.name] = p.param->value;
    return s;
  };
  // Shared-block output does not depend on the consuming branch.
  CHECK(net.shared.infer(x) == net.shared.infer(x));

  nn::Adam<float> adam;
  auto before = snapshot();
  auto logits = net.forward_logits(Task::s, x, nn::Mode::train, rng);
  net.backward(Task::s, nn::softmax_cross_entropy(logits, std::span<const int>(y)).grad);
  auto params = net.named_params(Task::s);
  adam.step(params);
  auto after = snapshot();
  for (const auto& [name, value] : before) {
    const bool touched = name.starts_with("shared.") || name.starts_with("branch.s.");
    const bool is_buffer = name.find("running_") != std::string::npos;
    INFO(name);
    if (!touched) CHECK(after[name] == value);
    if (touched && !is_buffer && name.find("weight") != std::string::npos) CHECK_FALSE(after[name] == value);
  }
}

TEST_CASE("wSTN matches the reference parameter count") {
  const auto arch = Architecture::paper();
  const std::size_t stn = build_stn<float>(Task::g, arch, 0).param_count();
  CHECK(param_count(encoder_rows(arch.scaled(1.0), 16)) == stn);

  const std::vector<Task> gs{Task::g, Task::s};
  const std::size_t ref = build_mtn<float>(gs, arch, 0).param_count();
  WideScale w;
  auto wide = build_wstn<float>(2, ref, arch, 0, &w);
  CHECK(std::abs(static_cast<double>(wide.param_count()) / ref - 1.0) <= 0.01);
  CHECK(wide.param_count() == w.params);
  CHECK(wide.tasks == std::vector<Task>{Task::g});
  CHECK(wide.variant == Variant::wstn);
  CHECK(w.factor > 1.0);

  double prev = 0.0;
  for (std::size_t r = 600000; r <= 3000000; r += 150000) {
    const auto s = solve_wide_scale(r, arch);
    CHECK(s.factor >= prev);
    prev = s.factor;
  }
  CHECK_THROWS_AS(build_wstn<float>(1, ref, arch, 0), InvalidInput);
}

TEST_CASE("embeddings") {
  auto net = build_stn<float>(Task::g, Architecture::paper(), 2);
  Rng rng(3);
  auto x = random_batch(2, rng);
  auto e = net.embed(Task::g, x);
  CHECK(e.shape() == Shape{2, 256});
  CHECK(e == net.embed(Task::g, x));
  CHECK(e.all_finite());

  // Pure tone vs white noise segments give different embeddings.
  dsp::AudioClip tone, noise;
  tone.samples.resize(44100);
  noise.samples.resize(44100);
  for (std::size_t n = 0; n < 44100; ++n) {
    tone.samples[n] = 0.5f * static_cast<float>(std::sin(2 * 3.14159265358979 * 440.0 * n / 44100.0));
    noise.samples[n] = static_cast<float>(rng.uniform(-0.5, 0.5));
  }
  std::vector<dsp::Segment> segs{dsp::segment_at(dsp::pad_to_segment(dsp::mel_spectrogram(tone)), 0),
                                 dsp::segment_at(dsp::pad_to_segment(dsp::mel_spectrogram(noise)), 0)};
  auto ee = net.embed(Task::g, segment_batch(segs));
  double l2 = 0.0;
  for (std::size_t i = 0; i < 256; ++i) l2 += std::pow(ee.at(0, i) - ee.at(1, i), 2);
  CHECK(l2 > 0.0);
}

TEST_CASE("feature extractor concatenates in canonical task order") {
  const auto arch = Architecture::paper().scaled(0.125);
  auto g = build_stn<float>(Task::g, arch, 1);
  auto s = build_stn<float>(Task::s, arch, 1);
  FeatureExtractor<float> a, b;
  a.add(Task::s, &s);
  a.add(Task::g, &g);
  b.add(Task::g, &g);
  b.add(Task::s, &s);
  Rng rng(0);
  auto x = random_batch(3, rng);
  CHECK(a.dim() == 2 * arch.embedding_dim());
  CHECK(a.embed(x) == b.embed(x));
  auto eg = g.embed(Task::g, x);
  auto full = a.embed(x);
  for (std::size_t i = 0; i < eg.dim(1); ++i) CHECK(full.at(1, i) == eg.at(1, i));
}

TEST_CASE("transfer MLP") {
  auto mlp = build_transfer_mlp<float>(5 * 256, 16, 1);
  CHECK(mlp.layer(1).spec().in == 1280);
  CHECK(mlp.layer(1).spec().out == 1024);
  CHECK(mlp.layer(0).spec().rate == 0.5);
  CHECK(mlp.layer(3).spec().rate == 0.5);
  Rng rng(2);
  Tensor<float> x({4, 1280});
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  auto p = mlp.infer(x);
  for (std::size_t b = 0; b < 4; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < 16; ++c) s += p.at(b, c);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("one Adam step decreases the batch loss on the desk-scale network") {
  const auto arch = Architecture::paper().scaled(0.25);
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto net = build_stn<float>(Task::g, arch, seed);
    auto& branch = net.branch(Task::g);
    branch.freeze_dropout_masks(true);
    Rng rng(seed + 100);
    auto x = random_batch(8, rng);
    std::vector<int> y(8);
    for (auto& t : y) t = static_cast<int>(rng.below(16));
    nn::Adam<float> adam({1e-3});
    auto l0 = nn::softmax_cross_entropy(net.forward_logits(Task::g, x, nn::Mode::train, rng), std::span<const int>(y));
    net.backward(Task::g, l0.grad);
    auto params = net.named_params(Task::g);
    adam.step(params);
    auto logits = net.forward_logits(Task::g, x, nn::Mode::train, rng);
    auto l1 = nn::softmax_cross_entropy(logits, std::span<const int>(y));
    net.backward(Task::g, l1.grad);
    decreased += l1.loss < l0.loss;
  }
  CHECK(decreased >= 18);
}

TEST_CASE("reduced-width STN passes a full-network gradient check") {
  auto arch = Architecture::paper().scaled(0.0625);
  arch.genre_classes = 4;
  auto net = build_stn<double>(Task::g, arch, 11);
  Rng rng(12);
  Tensor<double> x({3, 1, 128, 43});
  for (auto& v : x.values()) v = rng.normal();
  const std::vector<int> y{0, 2, 3};
  const auto report = nn::check_gradients(net.branch(Task::g), x, std::span<const int>(y));
  INFO(report.to_string());
  MESSAGE("max relative error " << report.max_rel_error());
  CHECK(report.passed());
  CHECK(report.max_rel_error() < 1e-4);
}
