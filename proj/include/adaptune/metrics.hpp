#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "adaptune/error.hpp"

namespace adaptune::metrics {

/// C×C counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;
  std::vector<std::string> class_names;

  std::size_t operator()(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  std::size_t& operator()(std::size_t truth, std::size_t pred) { return counts[truth * n_classes + pred]; }

  std::size_t total() const {
    std::size_t t = 0;
    for (std::size_t c : counts) t += c;
    return t;
  }
  std::size_t row_sum(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < n_classes; ++p) s += (*this)(c, p);
    return s;
  }
  std::size_t col_sum(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t t = 0; t < n_classes; ++t) s += (*this)(t, c);
    return s;
  }

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows) {
    ConfusionMatrix m;
    m.n_classes = rows.size();
    for (const auto& r : rows) {
      if (r.size() != rows.size()) throw DimensionError("confusion matrix must be square");
      m.counts.insert(m.counts.end(), r.begin(), r.end());
    }
    return m;
  }

  std::vector<std::vector<std::size_t>> to_rows() const {
    std::vector<std::vector<std::size_t>> rows(n_classes, std::vector<std::size_t>(n_classes));
    for (std::size_t t = 0; t < n_classes; ++t)
      for (std::size_t p = 0; p < n_classes; ++p) rows[t][p] = (*this)(t, p);
    return rows;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                 std::size_t n_classes) {
  if (preds.size() != labels.size()) {
    throw DimensionError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (n_classes == 0) throw ConfigError("confusion: class count must be positive");
  ConfusionMatrix m;
  m.n_classes = n_classes;
  m.counts.assign(n_classes * n_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes || labels[i] >= n_classes) {
      throw IndexError("confusion: class index out of range at position " + std::to_string(i));
    }
    ++m(labels[i], preds[i]);
  }
  return m;
}

inline double accuracy(const ConfusionMatrix& m) {
  const std::size_t total = m.total();
  if (total == 0) throw EmptyEvaluationError("accuracy of an empty evaluation is undefined");
  std::size_t trace = 0;
  for (std::size_t c = 0; c < m.n_classes; ++c) trace += m(c, c);
  return static_cast<double>(trace) / static_cast<double>(total);
}

/// F1 per class; any 0/0 (precision, recall or F1) is taken as 0.
inline std::vector<double> per_class_f1(const ConfusionMatrix& m) {
  if (m.total() == 0) throw EmptyEvaluationError("F1 of an empty evaluation is undefined");
  std::vector<double> f1(m.n_classes, 0.0);
  for (std::size_t c = 0; c < m.n_classes; ++c) {
    const double tp = static_cast<double>(m(c, c));
    const std::size_t predicted = m.col_sum(c), actual = m.row_sum(c);
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = actual ? tp / static_cast<double>(actual) : 0.0;
    f1[c] = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

/// Unweighted mean of per-class F1 over all configured classes.
inline double macro_f1(const ConfusionMatrix& m) {
  const std::vector<double> f1 = per_class_f1(m);
  double s = 0.0;
  for (double v : f1) s += v;
  return s / static_cast<double>(f1.size());
}

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  ConfusionMatrix confusion;

  static MetricsReport from(const ConfusionMatrix& m) {
    return {metrics::accuracy(m), metrics::macro_f1(m), metrics::per_class_f1(m), m};
  }
};

inline MetricsReport evaluate(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                              std::size_t n_classes) {
  return MetricsReport::from(confusion(preds, labels, n_classes));
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["per_class_f1"] = r.per_class_f1;
  j["confusion"] = r.confusion.to_rows();
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
    r.confusion = ConfusionMatrix::from_rows(j.at("confusion").get<std::vector<std::vector<std::size_t>>>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
}

/// Index of the largest score; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw EmptyEvaluationError("argmax of an empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

}  // namespace adaptune::metrics
