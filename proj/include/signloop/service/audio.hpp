#pragma once

// Synthetic speech stand-ins and WAV file I/O.

#include "signloop/core/errors.hpp"
#include "signloop/core/rng.hpp"
#include "signloop/ir/generate.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace signloop::service {

struct AudioLabel {
  std::string gloss;
  double start = 0;  // seconds
  double end = 0;
};

struct AudioClip {
  std::string name;
  int sample_rate = 16000;
  std::vector<float> samples;
  std::vector<AudioLabel> labels;

  [[nodiscard]] double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Linear chirp from f0 to f1 Hz.
inline std::vector<float> tone_sweep(double seconds, double f0, double f1, int sample_rate, double amplitude = 0.5) {
  if (!(seconds >= 0) || sample_rate < 1) throw ConfigError("tone_sweep: bad duration or sample rate");
  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  std::vector<float> out(n);
  const double rate = seconds > 0 ? (f1 - f0) / seconds : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    out[i] = static_cast<float>(amplitude * std::sin(2 * std::numbers::pi * (f0 * t + 0.5 * rate * t * t)));
  }
  return out;
}

/// Gaussian noise under a raised-cosine envelope.
inline std::vector<float> noise_burst(double seconds, int sample_rate, std::uint64_t seed, double amplitude = 0.3) {
  if (!(seconds >= 0) || sample_rate < 1) throw ConfigError("noise_burst: bad duration or sample rate");
  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  Rng rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double env = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / std::max<std::size_t>(1, n - 1));
    out[i] = static_cast<float>(std::clamp(amplitude * env * g(rng), -1.0, 1.0));
  }
  return out;
}

/// Each gloss owns a sweep band; odd gloss indices add a noise burst on top.
inline std::vector<float> gloss_sound(int gloss, double seconds, int sample_rate, std::uint64_t seed) {
  const double f0 = 180.0 + 37.0 * (gloss % 97);
  auto s = tone_sweep(seconds, f0, f0 * 1.5, sample_rate, 0.4);
  if (gloss % 2 == 1) {
    const auto b = noise_burst(seconds, sample_rate, seed, 0.15);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += b[i];
  }
  return s;
}

/// A labeled clip of `words` glosses separated by short silences.
inline AudioClip synthetic_utterance(const ir::GlossVocab& vocab, int words, std::uint64_t seed, int sample_rate = 16000) {
  if (words < 1) throw ConfigError("synthetic_utterance: need at least one word");
  if (vocab.size() < 2) throw ConfigError("synthetic_utterance: vocabulary too small");
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<int> pick(1, vocab.size() - 1);
  std::uniform_real_distribution<double> len(0.3, 0.9), gap(0.05, 0.2);
  AudioClip clip;
  clip.name = "utt_" + std::to_string(seed);
  clip.sample_rate = sample_rate;
  for (int w = 0; w < words; ++w) {
    const double silence = gap(rng);
    clip.samples.resize(clip.samples.size() + static_cast<std::size_t>(std::llround(silence * sample_rate)), 0.0f);
    const int g = pick(rng);
    const double start = clip.duration();
    const auto s = gloss_sound(g, len(rng), sample_rate, hash_seed(seed, static_cast<std::uint64_t>(w)));
    clip.samples.insert(clip.samples.end(), s.begin(), s.end());
    clip.labels.push_back({vocab.name(g), start, clip.duration()});
  }
  return clip;
}

inline nlohmann::ordered_json labels_json(const AudioClip& c) {
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (const auto& l : c.labels) labels.push_back({{"gloss", l.gloss}, {"start", l.start}, {"end", l.end}});
  return {{"name", c.name}, {"sample_rate", c.sample_rate}, {"duration", c.duration()}, {"labels", labels}};
}

// ---------------------------------------------------------------------------
// WAV

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint32_t u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 | static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint16_t u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

}  // namespace detail

/// 16-bit PCM mono.
inline void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);
  detail::put_u16(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32(os, static_cast<std::uint32_t>(sample_rate) * 2);
  detail::put_u16(os, 2);
  detail::put_u16(os, 16);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  for (float s : samples) {
    const auto v = static_cast<std::int16_t>(std::clamp(std::lround(static_cast<double>(s) * 32768.0), -32768L, 32767L));
    detail::put_u16(os, static_cast<std::uint16_t>(v));
  }
}

/// Decodes 16-bit PCM or 32-bit float WAV bytes; channels are averaged.
inline AudioClip parse_wav(std::span<const unsigned char> bytes) {
  auto fail = [](const std::string& m) { return ConfigError("wav: " + m); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  int format = 0, channels = 0, bits = 0;
  AudioClip clip;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* h = bytes.data() + pos;
    const std::uint32_t size = detail::u32(h + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) throw fail("chunk overruns file");
    if (std::memcmp(h, "fmt ", 4) == 0) {
      if (size < 16) throw fail("short fmt chunk");
      format = detail::u16(bytes.data() + body);
      channels = detail::u16(bytes.data() + body + 2);
      clip.sample_rate = static_cast<int>(detail::u32(bytes.data() + body + 4));
      bits = detail::u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(h, "data", 4) == 0) {
      if (!have_fmt) throw fail("data before fmt");
      if (channels < 1) throw fail("no channels");
      const bool pcm16 = format == 1 && bits == 16, f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) throw fail("only 16-bit PCM and 32-bit float are supported");
      const std::size_t width = static_cast<std::size_t>(bits / 8) * static_cast<std::size_t>(channels);
      const std::size_t frames = size / width;
      clip.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0;
        for (int ch = 0; ch < channels; ++ch) {
          const unsigned char* p = bytes.data() + body + i * width + static_cast<std::size_t>(ch) * (bits / 8);
          if (pcm16) {
            acc += static_cast<std::int16_t>(detail::u16(p)) / 32768.0;
          } else {
            const std::uint32_t u = detail::u32(p);
            float f;
            std::memcpy(&f, &u, 4);
            acc += f;
          }
        }
        clip.samples[i] = static_cast<float>(acc / channels);
      }
      return clip;
    }
    pos = body + size + (size & 1);
  }
  throw fail("no data chunk");
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  AudioClip c = parse_wav(bytes);
  c.name = path.stem().string();
  return c;
}

}  // namespace signloop::service
