#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "agf/dsp.hpp"
#include "agf/error.hpp"

namespace agf::dsp {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t at) {
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw InvalidInput(name + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_at = 0, data_len = 0;
  for (std::size_t pos = 12; pos + 8 <= buf.size();) {
    const std::uint32_t len = read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size()) throw InvalidInput(name + ": truncated chunk");
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && len >= 16) {
      format = read_le<std::uint16_t>(buf, body);
      channels = read_le<std::uint16_t>(buf, body + 2);
      rate = read_le<std::uint32_t>(buf, body + 4);
      bits = read_le<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && len >= 26) format = read_le<std::uint16_t>(buf, body + 24);  // extensible
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      data_at = body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || data_at == 0) throw InvalidInput(name + ": missing fmt or data chunk");
  if (rate != static_cast<std::uint32_t>(kSampleRate))
    throw InvalidInput(name + ": sample rate " + std::to_string(rate) + " Hz, expected 44100");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) throw InvalidInput(name + ": only PCM16 and float32 WAV are supported");
  const std::size_t stride = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t n = data_len / stride;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = data_at + i * stride;
    clip.samples[i] = pcm16 ? static_cast<float>(read_le<std::int16_t>(buf, at)) / 32768.0f : read_le<float>(buf, at);
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  os.write("RIFF", 4);
  put_le<std::uint32_t>(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  put_le<std::uint32_t>(os, 16);
  put_le<std::uint16_t>(os, 1);
  put_le<std::uint16_t>(os, 1);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(clip.sample_rate));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_le<std::uint16_t>(os, 2);
  put_le<std::uint16_t>(os, 16);
  os.write("data", 4);
  put_le<std::uint32_t>(os, data_len);
  for (float s : clip.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    put_le<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32767.0f)));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace agf::dsp
