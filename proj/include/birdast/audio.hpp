#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace birdast::audio {

// Mono waveform, samples normalized to [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

struct Segment {
  std::vector<double> samples;
  std::string source_clip_id;
  double offset_seconds = 0.0;

  // "<clip_id>#<offset_seconds>"
  std::string id() const;
};

enum class SampleFormat { Pcm8, Pcm16, Pcm24, Pcm32, Float32 };

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  SampleFormat format = SampleFormat::Pcm16;
  std::uint64_t frames = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(frames) / sample_rate : 0.0;
  }
};

// Parses RIFF/WAVE headers only. Throws UnsupportedFormat or CorruptHeader.
WavInfo probe_wav(const std::filesystem::path& path);

// Decodes PCM/float WAV to mono. Stereo channels are averaged; integer formats
// are scaled by 2^(bits-1) (8-bit is offset-binary around 128).
AudioClip decode(const std::filesystem::path& path);
AudioClip decode_bytes(std::span<const std::uint8_t> bytes);

// Encodes interleaved samples in [-1, 1]. Integer formats round and saturate.
std::vector<std::uint8_t> encode_wav(std::span<const double> interleaved, int sample_rate,
                                     int channels, SampleFormat format);
void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               SampleFormat format = SampleFormat::Pcm16);

// Linear interpolation; output length round(len * target / source); the last
// input sample is held past the end. Bit-identical copy when the rates match.
AudioClip resample(const AudioClip& clip, int target_rate);

struct SegmentOptions {
  double window_seconds = 10.0;
  double hop_seconds = 5.0;
};

// Fixed-length windows. Clips shorter than the window are tile-repeated into a
// single window; longer clips get windows every hop plus one right-aligned
// window when the last stride would overrun.
std::vector<Segment> segment(const AudioClip& clip, const std::string& clip_id,
                             const SegmentOptions& options = {});

// Window start offsets in samples for a clip of `length` samples.
std::vector<std::size_t> segment_offsets(std::size_t length, std::size_t window, std::size_t hop);

std::string format_offset(double seconds);

}  // namespace birdast::audio
