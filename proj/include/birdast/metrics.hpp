#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "birdast/matrix.hpp"

namespace birdast::metrics {

// Row-major 0/1 matrix, one row per sample, one column per class.
struct LabelMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  LabelMatrix() = default;
  LabelMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::uint8_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// 1 iff prob >= threshold.
LabelMatrix binarize(const Matrix& probs, double threshold = 0.5);

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Zero denominators give 0 for the affected quantity.
Scores f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

struct ClassMetrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  Scores scores;
};

struct MacroF1 {
  double value = 0.0;
  std::vector<ClassMetrics> per_class;
};

// Per-class counts over samples, unweighted mean of per-class F1 over every
// class including those without support.
MacroF1 macro_f1(const LabelMatrix& pred, const LabelMatrix& target);

// Mean over samples of the F1 between predicted and true label sets.
double samples_f1(const LabelMatrix& pred, const LabelMatrix& target);

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
  double samples_f1 = 0.0;
  double threshold = 0.5;
};

MetricsReport evaluate(const Matrix& probs, const LabelMatrix& targets, double threshold = 0.5);

// label,tp,fp,fn,precision,recall,f1 rows followed by macro and samples rows.
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report,
                      const std::vector<std::string>& labels);

}  // namespace birdast::metrics
