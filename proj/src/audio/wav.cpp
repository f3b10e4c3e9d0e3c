#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "birdast/audio.hpp"
#include "birdast/error.hpp"

namespace birdast::audio {
namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

int bits_of(SampleFormat f) {
  switch (f) {
    case SampleFormat::Pcm8: return 8;
    case SampleFormat::Pcm16: return 16;
    case SampleFormat::Pcm24: return 24;
    case SampleFormat::Pcm32: return 32;
    case SampleFormat::Float32: return 32;
  }
  return 0;
}

struct ParsedWav {
  WavInfo info;
  const std::uint8_t* data = nullptr;
};

ParsedWav parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::CorruptHeader, "missing RIFF/WAVE signature");
  }

  bool have_fmt = false;
  std::uint16_t format_tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t declared = read_u32(chunk + 4);
    const std::size_t available = bytes.size() - pos - 8;
    const std::size_t size = std::min<std::size_t>(declared, available);

    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw Error(Errc::CorruptHeader, "fmt chunk shorter than 16 bytes");
      format_tag = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      block_align = read_u16(chunk + 20);
      bits = read_u16(chunk + 22);
      if (format_tag == kFormatExtensible) {
        if (size < 40) throw Error(Errc::CorruptHeader, "truncated WAVE_FORMAT_EXTENSIBLE header");
        format_tag = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + static_cast<std::size_t>(declared) + (declared & 1U);
  }

  if (!have_fmt) throw Error(Errc::CorruptHeader, "no fmt chunk");
  if (data == nullptr) throw Error(Errc::CorruptHeader, "no data chunk");

  ParsedWav parsed;
  if (format_tag == kFormatPcm) {
    switch (bits) {
      case 8: parsed.info.format = SampleFormat::Pcm8; break;
      case 16: parsed.info.format = SampleFormat::Pcm16; break;
      case 24: parsed.info.format = SampleFormat::Pcm24; break;
      case 32: parsed.info.format = SampleFormat::Pcm32; break;
      default:
        throw Error(Errc::UnsupportedFormat, "PCM bit depth " + std::to_string(bits));
    }
  } else if (format_tag == kFormatFloat) {
    if (bits != 32) throw Error(Errc::UnsupportedFormat, "float bit depth " + std::to_string(bits));
    parsed.info.format = SampleFormat::Float32;
  } else {
    throw Error(Errc::UnsupportedFormat, "codec tag " + std::to_string(format_tag));
  }
  if (channels != 1 && channels != 2) {
    throw Error(Errc::UnsupportedFormat, std::to_string(channels) + " channels");
  }
  if (rate == 0) throw Error(Errc::CorruptHeader, "sample rate is zero");
  if (block_align != channels * bits / 8) throw Error(Errc::CorruptHeader, "block align mismatch");

  parsed.info.sample_rate = static_cast<int>(rate);
  parsed.info.channels = channels;
  parsed.info.frames = data_size / block_align;
  parsed.data = data;
  return parsed;
}

double sample_at(const std::uint8_t* p, SampleFormat f) {
  switch (f) {
    case SampleFormat::Pcm8: return (static_cast<double>(p[0]) - 128.0) / 128.0;
    case SampleFormat::Pcm16: return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case SampleFormat::Pcm24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    case SampleFormat::Pcm32: return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
    case SampleFormat::Float32: {
      const float v = std::bit_cast<float>(read_u32(p));
      if (!std::isfinite(v)) throw Error(Errc::CorruptHeader, "non-finite float sample");
      return std::clamp(static_cast<double>(v), -1.0, 1.0);
    }
  }
  return 0.0;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

WavInfo probe_wav(const std::filesystem::path& path) {
  // Chunks may appear in any order, so walk the whole file; clips are small.
  const auto bytes = read_file(path);
  return parse(bytes).info;
}

AudioClip decode_bytes(std::span<const std::uint8_t> bytes) {
  const ParsedWav parsed = parse(bytes);
  const WavInfo& info = parsed.info;
  if (info.frames == 0) throw Error(Errc::EmptyAudio, "data chunk holds zero samples");

  const int width = bits_of(info.format) / 8;
  AudioClip clip;
  clip.sample_rate = info.sample_rate;
  clip.samples.resize(info.frames);
  const std::uint8_t* p = parsed.data;
  for (std::uint64_t i = 0; i < info.frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < info.channels; ++c) {
      acc += sample_at(p, info.format);
      p += width;
    }
    clip.samples[i] = acc / info.channels;
  }
  return clip;
}

AudioClip decode(const std::filesystem::path& path) { return decode_bytes(read_file(path)); }

std::vector<std::uint8_t> encode_wav(std::span<const double> interleaved, int sample_rate,
                                     int channels, SampleFormat format) {
  if (channels < 1 || sample_rate <= 0 || interleaved.size() % channels != 0) {
    throw Error(Errc::InvalidArgument, "inconsistent WAV encode request");
  }
  const int bits = bits_of(format);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, format == SampleFormat::Float32 ? kFormatFloat : kFormatPcm);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * block_align);
  put_u16(out, block_align);
  put_u16(out, static_cast<std::uint16_t>(bits));
  put_tag(out, "data");
  put_u32(out, data_bytes);

  for (double s : interleaved) {
    const double x = std::clamp(s, -1.0, 1.0);
    switch (format) {
      case SampleFormat::Pcm8:
        out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(x * 128.0) + 128L, 0L, 255L)));
        break;
      case SampleFormat::Pcm16:
        put_u16(out, static_cast<std::uint16_t>(
                         static_cast<std::int16_t>(std::clamp(std::lround(x * 32768.0), -32768L, 32767L))));
        break;
      case SampleFormat::Pcm24: {
        const std::int32_t v = static_cast<std::int32_t>(
            std::clamp(std::llround(x * 8388608.0), -8388608LL, 8388607LL));
        out.push_back(static_cast<std::uint8_t>(v & 0xFF));
        out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
        out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
        break;
      }
      case SampleFormat::Pcm32:
        put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(
                         std::clamp(std::llround(x * 2147483648.0), -2147483648LL, 2147483647LL))));
        break;
      case SampleFormat::Float32:
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
        break;
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, SampleFormat format) {
  const auto bytes = encode_wav(clip.samples, clip.sample_rate, 1, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

}  // namespace birdast::audio
