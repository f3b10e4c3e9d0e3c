#include "birdast/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "birdast/audio.hpp"
#include "birdast/csv.hpp"
#include "birdast/error.hpp"
#include "birdast/log.hpp"
#include "birdast/rng.hpp"

namespace birdast::data {
namespace fs = std::filesystem;

namespace {

bool is_wav(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

std::string format_seconds(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return buf;
}

std::map<std::string, std::vector<std::size_t>> indices_by_label(const Manifest& m) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (const auto& label : m.vocabulary) out[label];
  for (std::size_t i = 0; i < m.entries.size(); ++i) out[m.entries[i].label].push_back(i);
  return out;
}

void rebuild_vocabulary(Manifest& m) {
  std::vector<std::string> labels = m.vocabulary;
  for (const auto& e : m.entries) labels.push_back(e.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  m.vocabulary = std::move(labels);
  m.empty_classes.clear();
  const auto counts = m.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) m.empty_classes.push_back(m.vocabulary[c]);
  }
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw Error(Errc::CorruptHeader, "truncated feature cache");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr char kCacheMagic[4] = {'B', 'A', 'F', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

std::size_t Manifest::label_index(const std::string& label) const {
  const auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), label);
  if (it == vocabulary.end() || *it != label) throw Error(Errc::Config, "unknown label '" + label + "'");
  return static_cast<std::size_t>(it - vocabulary.begin());
}

std::vector<std::size_t> Manifest::class_counts() const {
  std::vector<std::size_t> counts(vocabulary.size(), 0);
  for (const auto& e : entries) ++counts[label_index(e.label)];
  return counts;
}

Manifest build_manifest(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error(Errc::EmptyDataset, root.string() + " is not a directory");

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  Manifest m;
  for (const fs::path& dir : class_dirs) {
    const std::string label = dir.filename().string();
    m.vocabulary.push_back(label);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_wav(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t kept = 0;
    for (const fs::path& file : files) {
      try {
        const audio::WavInfo info = audio::probe_wav(file);
        if (info.frames == 0) throw Error(Errc::EmptyAudio, "zero samples");
        m.entries.push_back({file.generic_string(), label, info.duration_seconds()});
        ++kept;
      } catch (const Error& e) {
        ++m.skipped_files;
        log_warning("skipping " + file.string() + ": " + e.what());
      }
    }
    if (kept == 0) {
      m.empty_classes.push_back(label);
      log_warning("class '" + label + "' has no usable audio files");
    }
  }
  std::sort(m.vocabulary.begin(), m.vocabulary.end());
  if (m.entries.empty()) throw Error(Errc::EmptyDataset, "no usable audio under " + root.string());
  return m;
}

Manifest cap_per_class(const Manifest& m, std::size_t cap, std::uint64_t seed) {
  if (cap == 0) throw Error(Errc::InvalidArgument, "cap must be at least 1");
  std::vector<std::size_t> keep;
  std::size_t class_no = 0;
  for (auto& [label, idx] : indices_by_label(m)) {
    if (idx.size() <= cap) {
      keep.insert(keep.end(), idx.begin(), idx.end());
    } else {
      Rng rng(mix_seed(seed, 0x1000 + class_no));
      std::vector<std::size_t> pool = idx;
      rng.shuffle(std::span<std::size_t>(pool));
      keep.insert(keep.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cap));
    }
    ++class_no;
  }
  std::sort(keep.begin(), keep.end());
  Manifest out;
  out.vocabulary = m.vocabulary;
  out.empty_classes = m.empty_classes;
  out.skipped_files = m.skipped_files;
  for (std::size_t i : keep) out.entries.push_back(m.entries[i]);
  return out;
}

DatasetSplit stratified_split(const Manifest& m, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw Error(Errc::InvalidArgument, "val_fraction must be in [0, 1)");
  }
  DatasetSplit split;
  std::size_t class_no = 0;
  for (auto& [label, idx] : indices_by_label(m)) {
    const std::size_t n = idx.size();
    ++class_no;
    if (n == 0) continue;
    if (n == 1) {
      split.train.push_back(idx[0]);
      split.warnings.push_back("ClassTooSmall: class '" + label + "' has a single entry; validation omits it");
      continue;
    }
    auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    if (n_val == 0 && val_fraction > 0.0) n_val = 1;
    n_val = std::min(n_val, n - 1);
    Rng rng(mix_seed(seed, 0x2000 + class_no));
    std::vector<std::size_t> pool = idx;
    rng.shuffle(std::span<std::size_t>(pool));
    split.val.insert(split.val.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  for (const auto& w : split.warnings) log_warning(w);
  return split;
}

std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                              std::size_t epoch, bool shuffle) {
  if (batch_size == 0) throw Error(Errc::InvalidArgument, "batch_size must be at least 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(mix_seed(seed, 0x3000 + epoch));
    rng.shuffle(std::span<std::size_t>(order));
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void write_manifest_csv(const fs::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << csv::format_row({"path", "label", "duration_seconds"}) << '\n';
  for (const auto& e : m.entries) out << csv::format_row({e.path, e.label, format_seconds(e.duration_seconds)}) << '\n';
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

Manifest read_manifest_csv(const fs::path& path) {
  Manifest m;
  for (auto& row : csv::read_table(path, {"path", "label", "duration_seconds"})) {
    m.entries.push_back({row[0], row[1], std::stod(row[2])});
  }
  rebuild_vocabulary(m);
  if (m.entries.empty()) throw Error(Errc::EmptyDataset, path.string() + " lists no entries");
  return m;
}

void add_labels(Manifest& m, const std::vector<std::string>& labels) {
  m.vocabulary.insert(m.vocabulary.end(), labels.begin(), labels.end());
  rebuild_vocabulary(m);
}

void write_split_csv(const fs::path& path, const Manifest& m, const DatasetSplit& split) {
  std::vector<const char*> tag(m.entries.size(), nullptr);
  for (std::size_t i : split.train) tag.at(i) = "train";
  for (std::size_t i : split.val) tag.at(i) = "val";
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << csv::format_row({"path", "label", "split"}) << '\n';
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (tag[i] == nullptr) continue;
    out << csv::format_row({m.entries[i].path, m.entries[i].label, tag[i]}) << '\n';
  }
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

DatasetSplit read_split_csv(const fs::path& path, const Manifest& m) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < m.entries.size(); ++i) index[m.entries[i].path] = i;
  DatasetSplit split;
  for (auto& row : csv::read_table(path, {"path", "label", "split"})) {
    const auto it = index.find(row[0]);
    if (it == index.end()) throw Error(Errc::Config, "split lists " + row[0] + ", absent from the manifest");
    if (row[2] == "train") split.train.push_back(it->second);
    else if (row[2] == "val") split.val.push_back(it->second);
    else throw Error(Errc::CorruptHeader, "unknown split tag '" + row[2] + "'");
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

void write_class_counts_csv(const fs::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << csv::format_row({"label", "count"}) << '\n';
  const auto counts = m.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    out << csv::format_row({m.vocabulary[c], std::to_string(counts[c])}) << '\n';
  }
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

std::vector<std::pair<std::string, std::size_t>> read_class_counts_csv(const fs::path& path) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (auto& row : csv::read_table(path, {"label", "count"})) out.emplace_back(row[0], std::stoul(row[1]));
  return out;
}

void quantize_to_float(dsp::SpectrogramImage& image) {
  for (double& v : image.pixels.data) v = static_cast<double>(static_cast<float>(v));
}

void write_feature_cache(const fs::path& path, const std::vector<CachedImage>& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  const std::uint32_t rows = images.empty() ? 0 : static_cast<std::uint32_t>(images[0].image.pixels.rows);
  const std::uint32_t cols = images.empty() ? 0 : static_cast<std::uint32_t>(images[0].image.pixels.cols);
  out.write(kCacheMagic, 4);
  put_u32(out, kCacheVersion);
  const std::uint64_t count = images.size();
  put_u32(out, static_cast<std::uint32_t>(count & 0xFFFFFFFFU));
  put_u32(out, static_cast<std::uint32_t>(count >> 32));
  put_u32(out, rows);
  put_u32(out, cols);
  for (const auto& img : images) {
    if (img.image.pixels.rows != rows || img.image.pixels.cols != cols) {
      throw Error(Errc::ShapeMismatch, "feature cache images must share one shape");
    }
    put_u32(out, static_cast<std::uint32_t>(img.segment_id.size()));
    out.write(img.segment_id.data(), static_cast<std::streamsize>(img.segment_id.size()));
    for (double v : img.image.pixels.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

std::vector<CachedImage> read_feature_cache(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) throw Error(Errc::CorruptHeader, "not a feature cache");
  if (get_u32(in) != kCacheVersion) throw Error(Errc::UnsupportedFormat, "feature cache version");
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t count = lo | (static_cast<std::uint64_t>(get_u32(in)) << 32);
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  std::vector<CachedImage> images;
  images.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CachedImage img;
    const std::uint32_t len = get_u32(in);
    if (len > 1U << 16) throw Error(Errc::CorruptHeader, "implausible segment id length");
    img.segment_id.resize(len);
    in.read(img.segment_id.data(), len);
    img.image.pixels = Matrix(rows, cols);
    for (double& v : img.image.pixels.data) v = static_cast<double>(std::bit_cast<float>(get_u32(in)));
    images.push_back(std::move(img));
  }
  return images;
}

std::string clip_of_segment(const std::string& segment_id) {
  const auto pos = segment_id.rfind('#');
  return pos == std::string::npos ? segment_id : segment_id.substr(0, pos);
}

}  // namespace birdast::data
