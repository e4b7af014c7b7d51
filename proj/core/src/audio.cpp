#include "nvsed/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nvsed/error.hpp"

namespace nvsed {
namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw Error(ErrorCode::kRateMismatch,
                "expected 16000 Hz audio, got " + std::to_string(clip.sample_rate) + " Hz");
  }
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const float s = clip.samples[i];
    if (!std::isfinite(s) || s < -1.0f || s > 1.0f) {
      throw Error(ErrorCode::kInvalidArgument,
                  "sample " + std::to_string(i) + " is outside [-1, 1] or not finite");
    }
  }
}

float pcm16_to_float(std::int16_t v) { return static_cast<float>(v) / 32768.0f; }

std::int16_t float_to_pcm16(float v) {
  const float scaled = std::round(std::clamp(v * 32768.0f, -32768.0f, 32767.0f));
  return static_cast<std::int16_t>(scaled);
}

std::vector<float> pcm16_to_float(std::span<const std::int16_t> pcm) {
  std::vector<float> out(pcm.size());
  std::transform(pcm.begin(), pcm.end(), out.begin(),
                 [](std::int16_t v) { return pcm16_to_float(v); });
  return out;
}

std::vector<std::int16_t> float_to_pcm16(std::span<const float> samples) {
  std::vector<std::int16_t> out(samples.size());
  std::transform(samples.begin(), samples.end(), out.begin(),
                 [](float v) { return float_to_pcm16(v); });
  return out;
}

AudioClip parse_wav(std::span<const std::uint8_t> bytes, std::string source) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kFormat, "not a RIFF/WAVE file: " + source);
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) {
        throw Error(ErrorCode::kTruncated, "truncated fmt chunk: " + source);
      }
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw Error(ErrorCode::kFormat, "data chunk before fmt: " + source);
      if (format != 1 || bits != 16) {
        throw Error(ErrorCode::kFormat, "only PCM16 WAV is supported: " + source);
      }
      if (channels != 1) {
        throw Error(ErrorCode::kFormat, "only mono WAV is supported: " + source);
      }
      if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw Error(ErrorCode::kRateMismatch,
                    "expected 16000 Hz, file is " + std::to_string(rate) + " Hz: " + source);
      }
      const std::size_t available = std::min<std::size_t>(size, bytes.size() - body);
      if (available < size) {
        throw Error(ErrorCode::kTruncated, "truncated data chunk: " + source);
      }
      AudioClip clip;
      clip.source = std::move(source);
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        clip.samples[i] = pcm16_to_float(static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i)));
      }
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  throw Error(ErrorCode::kFormat, "no data chunk: " + source);
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_wav(bytes, path.string());
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw Error(ErrorCode::kRateMismatch, "refusing to write non-16 kHz audio");
  }
  const auto pcm = float_to_pcm16(clip.samples);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, kSampleRate);
  put_u32(out, kSampleRate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (std::int16_t s : pcm) put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace nvsed
