#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "birdast/dsp.hpp"

namespace birdast::data {

struct ManifestEntry {
  std::string path;
  std::string label;
  double duration_seconds = 0.0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> vocabulary;  // sorted, unique
  std::vector<std::string> empty_classes;
  std::size_t skipped_files = 0;

  std::size_t label_index(const std::string& label) const;  // throws Config when unknown
  std::vector<std::size_t> class_counts() const;
};

struct DatasetSplit {
  std::vector<std::size_t> train;  // ascending manifest indices
  std::vector<std::size_t> val;
  std::vector<std::string> warnings;
};

// One immediate subdirectory per class, *.wav files inside it. Entries are
// ordered by (label, filename). Nested directories are ignored; unreadable
// files are skipped and counted. Throws EmptyDataset if nothing usable.
Manifest build_manifest(const std::filesystem::path& root);

// Classes above `cap` are subsampled uniformly without replacement; original
// relative order is kept.
Manifest cap_per_class(const Manifest& m, std::size_t cap, std::uint64_t seed);

// Per class: round(n * fraction) to validation, at least 1 when n >= 2 and
// fraction > 0, never all of the class. Single-entry classes stay in train.
DatasetSplit stratified_split(const Manifest& m, double val_fraction, std::uint64_t seed);

// Positions [0, count) grouped into batches; shuffled with a stream derived
// from (seed, epoch) when `shuffle`, identity order otherwise. The final
// partial batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                              std::size_t epoch, bool shuffle);

void write_manifest_csv(const std::filesystem::path& path, const Manifest& m);
// Vocabulary is rebuilt from the entries; empty classes are not represented
// in the file, see add_labels.
Manifest read_manifest_csv(const std::filesystem::path& path);

// Adds labels to the vocabulary (kept sorted); labels without entries are
// recorded as empty classes.
void add_labels(Manifest& m, const std::vector<std::string>& labels);

// path,label,split with split in {train, val}.
void write_split_csv(const std::filesystem::path& path, const Manifest& m, const DatasetSplit& split);
DatasetSplit read_split_csv(const std::filesystem::path& path, const Manifest& m);

// label,count for every vocabulary label.
void write_class_counts_csv(const std::filesystem::path& path, const Manifest& m);
std::vector<std::pair<std::string, std::size_t>> read_class_counts_csv(const std::filesystem::path& path);

// Feature cache: magic "BAFC", u32 version, u64 count, u32 rows, u32 cols,
// then per image u32 id length, id bytes, rows*cols little-endian float32.
struct CachedImage {
  std::string segment_id;
  dsp::SpectrogramImage image;
};

void write_feature_cache(const std::filesystem::path& path, const std::vector<CachedImage>& images);
std::vector<CachedImage> read_feature_cache(const std::filesystem::path& path);

// Rounds every pixel through float32, the precision the cache stores.
void quantize_to_float(dsp::SpectrogramImage& image);

// Clip id portion of "<clip_id>#<offset>".
std::string clip_of_segment(const std::string& segment_id);

}  // namespace birdast::data
