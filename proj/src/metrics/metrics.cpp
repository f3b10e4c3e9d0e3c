#include "birdast/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "birdast/error.hpp"

namespace birdast::metrics {
namespace {

void require_same_shape(const LabelMatrix& a, const LabelMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw Error(Errc::ShapeMismatch, "prediction " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                         " vs target " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

LabelMatrix binarize(const Matrix& probs, double threshold) {
  LabelMatrix out(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.data.size(); ++i) out.data[i] = probs.data[i] >= threshold ? 1 : 0;
  return out;
}

Scores f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Scores s;
  s.precision = ratio(tp, tp + fp);
  s.recall = ratio(tp, tp + fn);
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

MacroF1 macro_f1(const LabelMatrix& pred, const LabelMatrix& target) {
  require_same_shape(pred, target);
  MacroF1 out;
  out.per_class.resize(pred.cols);
  for (std::size_t r = 0; r < pred.rows; ++r) {
    for (std::size_t c = 0; c < pred.cols; ++c) {
      const bool p = pred(r, c) != 0;
      const bool t = target(r, c) != 0;
      ClassMetrics& m = out.per_class[c];
      if (p && t) ++m.tp;
      else if (p) ++m.fp;
      else if (t) ++m.fn;
    }
  }
  double total = 0.0;
  for (ClassMetrics& m : out.per_class) {
    m.scores = f1_from_counts(m.tp, m.fp, m.fn);
    total += m.scores.f1;
  }
  out.value = pred.cols == 0 ? 0.0 : total / static_cast<double>(pred.cols);
  return out;
}

double samples_f1(const LabelMatrix& pred, const LabelMatrix& target) {
  require_same_shape(pred, target);
  if (pred.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < pred.rows; ++r) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t c = 0; c < pred.cols; ++c) {
      const bool p = pred(r, c) != 0;
      const bool t = target(r, c) != 0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    total += f1_from_counts(tp, fp, fn).f1;
  }
  return total / static_cast<double>(pred.rows);
}

MetricsReport evaluate(const Matrix& probs, const LabelMatrix& targets, double threshold) {
  const LabelMatrix pred = binarize(probs, threshold);
  MacroF1 macro = macro_f1(pred, targets);
  MetricsReport report;
  report.per_class = std::move(macro.per_class);
  report.macro_f1 = macro.value;
  report.samples_f1 = samples_f1(pred, targets);
  report.threshold = threshold;
  return report;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report,
                      const std::vector<std::string>& labels) {
  if (labels.size() != report.per_class.size()) {
    throw Error(Errc::ShapeMismatch, "label count does not match report classes");
  }
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  char buf[256];
  out << "label,tp,fp,fn,precision,recall,f1\n";
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const ClassMetrics& m = report.per_class[c];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.6f,%.6f,%.6f", m.tp, m.fp, m.fn, m.scores.precision,
                  m.scores.recall, m.scores.f1);
    out << labels[c] << ',' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "macro,,,,,,%.6f\nsamples,,,,,,%.6f\n", report.macro_f1, report.samples_f1);
  out << buf;
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

}  // namespace birdast::metrics
