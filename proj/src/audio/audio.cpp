#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "birdast/audio.hpp"
#include "birdast/error.hpp"

namespace birdast::audio {

std::string format_offset(double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", seconds);
  std::string s(buf);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

std::string Segment::id() const { return source_clip_id + "#" + format_offset(offset_seconds); }

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (clip.samples.empty()) throw Error(Errc::EmptyAudio, "cannot resample an empty clip");
  if (target_rate <= 0 || clip.sample_rate <= 0) {
    throw Error(Errc::InvalidArgument, "sample rates must be positive");
  }
  if (target_rate == clip.sample_rate) return clip;

  const std::size_t n = clip.samples.size();
  const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_rate / clip.sample_rate));

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<std::size_t>(out_len, 1));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto left = static_cast<std::size_t>(pos);
    if (left + 1 >= n) {
      out.samples[i] = clip.samples[n - 1];
      continue;
    }
    const double t = pos - static_cast<double>(left);
    const double a = clip.samples[left];
    const double b = clip.samples[left + 1];
    // a + (b - a) t keeps constant signals exact.
    out.samples[i] = a + (b - a) * t;
  }
  return out;
}

std::vector<std::size_t> segment_offsets(std::size_t length, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0 || hop > window) {
    throw Error(Errc::InvalidArgument, "need 0 < hop <= window");
  }
  if (length <= window) return {0};
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (; off + window <= length; off += hop) offsets.push_back(off);
  if (offsets.back() + window < length) offsets.push_back(length - window);
  return offsets;
}

std::vector<Segment> segment(const AudioClip& clip, const std::string& clip_id,
                             const SegmentOptions& options) {
  if (clip.samples.empty()) throw Error(Errc::EmptyAudio, "cannot segment an empty clip");
  if (!(options.hop_seconds > 0.0) || options.hop_seconds > options.window_seconds) {
    throw Error(Errc::InvalidArgument, "need 0 < hop_seconds <= window_seconds");
  }
  const auto window = static_cast<std::size_t>(std::llround(options.window_seconds * clip.sample_rate));
  const auto hop = static_cast<std::size_t>(std::llround(options.hop_seconds * clip.sample_rate));
  const std::size_t n = clip.samples.size();

  std::vector<Segment> segments;
  if (n < window) {
    Segment seg;
    seg.source_clip_id = clip_id;
    seg.samples.resize(window);
    for (std::size_t i = 0; i < window; ++i) seg.samples[i] = clip.samples[i % n];
    segments.push_back(std::move(seg));
    return segments;
  }

  for (std::size_t off : segment_offsets(n, window, hop)) {
    Segment seg;
    seg.source_clip_id = clip_id;
    seg.offset_seconds = static_cast<double>(off) / clip.sample_rate;
    seg.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(off),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(off + window));
    segments.push_back(std::move(seg));
  }
  return segments;
}

}  // namespace birdast::audio
