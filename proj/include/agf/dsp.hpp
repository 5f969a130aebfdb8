#pragma once

#include <filesystem>
#include <vector>

#include "agf/rng.hpp"
#include "agf/tensor.hpp"

namespace agf::dsp {

inline constexpr int kSampleRate = 44100;
inline constexpr std::size_t kWindow = 2048;  // ~46.4 ms
inline constexpr std::size_t kHop = 1024;     // 50% overlap
inline constexpr std::size_t kFftBins = kWindow / 2 + 1;
inline constexpr std::size_t kMelBins = 128;
inline constexpr double kMaxFrequency = kSampleRate / 2.0;
inline constexpr double kPowerFloor = 1e-10;
inline constexpr float kFloorDb = -100.0f;
inline constexpr std::size_t kMfccCoeffs = 25;
inline constexpr std::size_t kSegmentFrames = 43;  // ~1 second

struct AudioClip {
  std::vector<float> samples;  // mono, [-1, 1]
  int sample_rate = kSampleRate;
};

struct MelSpectrogram {
  Tensor<float> values;  // [kMelBins, n_frames], dB
  double frame_hop_s = static_cast<double>(kHop) / kSampleRate;

  std::size_t frames() const { return values.empty() ? 0 : values.dim(1); }
};

enum class FeatureKind { mfcc, dmfcc };

struct FrameFeatureSequence {
  Tensor<float> values;  // [feature_dim, n_frames]
  FeatureKind kind = FeatureKind::mfcc;

  std::size_t frames() const { return values.empty() ? 0 : values.dim(1); }
};

/// One network input patch, [kMelBins, kSegmentFrames] in dB.
struct Segment {
  Tensor<float> values;
  std::size_t offset = 0;  // first source frame
};

enum class SegmentMode { random_crop, tiled };

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Center frequencies (Hz) of the kMelBins triangular filters.
std::vector<double> mel_center_frequencies();

/// [kMelBins, kFftBins] triangular filters over 0..Nyquist on the HTK mel
/// scale, peak 1 at each filter's center frequency.
const Tensor<double>& mel_filterbank();

std::size_t frame_count(std::size_t n_samples);

/// Hann-windowed power spectrum through the mel filterbank, then
/// 10*log10(max(p, 1e-10)).
MelSpectrogram mel_spectrogram(const AudioClip& clip);

/// Power to dB with the floor applied; monotone non-decreasing.
float power_to_db(double power);

/// Orthonormal DCT-II along the mel axis, coefficients 0..24.
FrameFeatureSequence mfcc(const MelSpectrogram& spec);

/// out[:, t] = in[:, t+1] - in[:, t].
FrameFeatureSequence delta(const FrameFeatureSequence& seq);

/// Pads with kFloorDb on the right up to kSegmentFrames frames.
MelSpectrogram pad_to_segment(const MelSpectrogram& spec);

/// Segment at a fixed frame offset; requires offset + 43 <= frames (after padding).
Segment segment_at(const MelSpectrogram& spec, std::size_t offset);

/// random_crop: one segment at a uniformly drawn offset.
/// tiled: floor(n_frames / 43) consecutive non-overlapping segments.
std::vector<Segment> segment_windows(const MelSpectrogram& spec, SegmentMode mode, Rng& rng);

// ---- WAV ------------------------------------------------------------------

/// Reads little-endian PCM16 or float32 WAV, keeping the first channel.
/// Rejects sample rates other than 44100 Hz.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes mono PCM16 with samples clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace agf::dsp
