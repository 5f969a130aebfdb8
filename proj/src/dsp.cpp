#include "agf/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <memory>
#include <cmath>
#include <mutex>
#include <numbers>

#include "agf/error.hpp"

namespace agf::dsp {

namespace {

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

// Plan creation is not thread-safe in FFTW; execution on caller-owned
// buffers with matching alignment is.
fftw_plan shared_plan() {
  static std::mutex mu;
  static fftw_plan plan = nullptr;
  std::lock_guard lock(mu);
  if (!plan) {
    std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(kWindow));
    std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(kFftBins));
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(kWindow), in.get(), out.get(), FFTW_ESTIMATE);
  }
  return plan;
}

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWindow);
    for (std::size_t n = 0; n < kWindow; ++n)
      v[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / kWindow);
    return v;
  }();
  return w;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {
std::vector<double> mel_edges() {
  const double top = hz_to_mel(kMaxFrequency);
  std::vector<double> edges(kMelBins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(kMelBins + 1));
  return edges;
}
}  // namespace

std::vector<double> mel_center_frequencies() {
  const auto edges = mel_edges();
  return {edges.begin() + 1, edges.end() - 1};
}

const Tensor<double>& mel_filterbank() {
  static const Tensor<double> bank = [] {
    const auto edges = mel_edges();
    Tensor<double> fb({kMelBins, kFftBins});
    for (std::size_t m = 0; m < kMelBins; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      for (std::size_t k = 0; k < kFftBins; ++k) {
        const double f = static_cast<double>(k) * kSampleRate / kWindow;
        double w = 0.0;
        if (f > lo && f <= mid)
          w = (f - lo) / (mid - lo);
        else if (f > mid && f < hi)
          w = (hi - f) / (hi - mid);
        fb.at(m, k) = w;
      }
    }
    return fb;
  }();
  return bank;
}

std::size_t frame_count(std::size_t n_samples) {
  return n_samples < kWindow ? 0 : (n_samples - kWindow) / kHop + 1;
}

float power_to_db(double power) {
  return static_cast<float>(10.0 * std::log10(std::max(power, kPowerFloor)));
}

MelSpectrogram mel_spectrogram(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate)
    throw InvalidInput("mel_spectrogram: sample rate " + std::to_string(clip.sample_rate) + " Hz, expected 44100");
  if (clip.samples.size() < kWindow)
    throw InvalidInput("mel_spectrogram: clip has " + std::to_string(clip.samples.size()) +
                       " samples, shorter than one 2048-sample window");
  for (float s : clip.samples)
    if (!std::isfinite(s)) throw InvalidInput("mel_spectrogram: non-finite sample");

  const std::size_t n_frames = frame_count(clip.samples.size());
  const auto& window = hann_window();
  const auto& fb = mel_filterbank();
  fftw_plan plan = shared_plan();
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(kWindow));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(kFftBins));
  std::vector<double> power(kFftBins);

  MelSpectrogram spec;
  spec.values = Tensor<float>({kMelBins, n_frames});
  for (std::size_t t = 0; t < n_frames; ++t) {
    const float* src = clip.samples.data() + t * kHop;
    for (std::size_t n = 0; n < kWindow; ++n) in.get()[n] = src[n] * window[n];
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    for (std::size_t k = 0; k < kFftBins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < kMelBins; ++m) {
      const double* row = fb.data() + m * kFftBins;
      double p = 0.0;
      for (std::size_t k = 0; k < kFftBins; ++k) p += row[k] * power[k];
      spec.values.at(m, t) = power_to_db(p);
    }
  }
  return spec;
}

FrameFeatureSequence mfcc(const MelSpectrogram& spec) {
  if (spec.values.rank() != 2 || spec.values.dim(0) != kMelBins)
    throw InvalidInput("mfcc: spectrogram must be [128, n_frames]");
  static const std::vector<double> basis = [] {
    std::vector<double> b(kMfccCoeffs * kMelBins);
    const double n = static_cast<double>(kMelBins);
    for (std::size_t k = 0; k < kMfccCoeffs; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      for (std::size_t i = 0; i < kMelBins; ++i)
        b[k * kMelBins + i] =
            scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) /
                             (2.0 * n));
    }
    return b;
  }();
  const std::size_t T = spec.frames();
  FrameFeatureSequence out{Tensor<float>({kMfccCoeffs, T}), FeatureKind::mfcc};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < kMfccCoeffs; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < kMelBins; ++i) s += basis[k * kMelBins + i] * spec.values.at(i, t);
      out.values.at(k, t) = static_cast<float>(s);
    }
  return out;
}

FrameFeatureSequence delta(const FrameFeatureSequence& seq) {
  if (seq.values.rank() != 2 || seq.frames() < 2)
    throw InvalidInput("delta: need at least 2 frames, got " + std::to_string(seq.frames()));
  const std::size_t D = seq.values.dim(0), T = seq.frames();
  FrameFeatureSequence out{Tensor<float>({D, T - 1}), FeatureKind::dmfcc};
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t t = 0; t + 1 < T; ++t) out.values.at(d, t) = seq.values.at(d, t + 1) - seq.values.at(d, t);
  return out;
}

MelSpectrogram pad_to_segment(const MelSpectrogram& spec) {
  if (spec.frames() == 0) throw InvalidInput("pad_to_segment: empty spectrogram");
  if (spec.frames() >= kSegmentFrames) return spec;
  MelSpectrogram out{Tensor<float>({kMelBins, kSegmentFrames}, kFloorDb), spec.frame_hop_s};
  for (std::size_t m = 0; m < kMelBins; ++m)
    for (std::size_t t = 0; t < spec.frames(); ++t) out.values.at(m, t) = spec.values.at(m, t);
  return out;
}

Segment segment_at(const MelSpectrogram& spec, std::size_t offset) {
  if (offset + kSegmentFrames > spec.frames())
    throw InvalidInput("segment_at: offset " + std::to_string(offset) + " exceeds " +
                       std::to_string(spec.frames()) + " frames");
  Segment seg{Tensor<float>({kMelBins, kSegmentFrames}), offset};
  const std::size_t T = spec.frames();
  for (std::size_t m = 0; m < kMelBins; ++m)
    std::copy_n(spec.values.data() + m * T + offset, kSegmentFrames, seg.values.data() + m * kSegmentFrames);
  return seg;
}

std::vector<Segment> segment_windows(const MelSpectrogram& spec, SegmentMode mode, Rng& rng) {
  if (spec.values.rank() != 2 || spec.values.dim(0) != kMelBins)
    throw InvalidInput("segment_windows: spectrogram must be [128, n_frames]");
  const MelSpectrogram padded = pad_to_segment(spec);
  const std::size_t T = padded.frames();
  std::vector<Segment> out;
  if (mode == SegmentMode::random_crop) {
    out.push_back(segment_at(padded, static_cast<std::size_t>(rng.below(T - kSegmentFrames + 1))));
  } else {
    for (std::size_t k = 0; k < T / kSegmentFrames; ++k) out.push_back(segment_at(padded, k * kSegmentFrames));
  }
  return out;
}

}  // namespace agf::dsp
