#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ff/error.hpp"
#include "ff/image.hpp"

namespace ff {

// prediction = score >= threshold (ties count as positive)
inline double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5) {
  if (scores.empty() || scores.size() != labels.size())
    throw ContractError("accuracy: need equal-length nonempty inputs");
  size_t correct = 0;
  for (size_t i = 0; i < scores.size(); ++i)
    correct += (scores[i] >= threshold ? 1 : 0) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

// sample-level F1 at a threshold; 1.0 when no positives exist anywhere,
// 0.0 when exactly one side is empty
inline double f1_score(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5) {
  if (scores.empty() || scores.size() != labels.size())
    throw ContractError("f1_score: need equal-length nonempty inputs");
  size_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] >= threshold ? 1 : 0;
    tp += pred == 1 && labels[i] == 1;
    fp += pred == 1 && labels[i] == 0;
    fn += pred == 0 && labels[i] == 1;
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

// Mann-Whitney rank statistic with midranks for ties
inline double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ContractError("auc_roc: need equal-length nonempty inputs");
  size_t npos = 0, nneg = 0;
  for (int l : labels) (l == 1 ? npos : nneg)++;
  if (npos == 0 || nneg == 0)
    throw ContractError("auc_roc: undefined for single-class input");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // midranks over tie groups
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (size_t k = 0; k < scores.size(); ++k)
    if (labels[k] == 1) rank_sum_pos += rank[k];
  const double u = rank_sum_pos - static_cast<double>(npos) * (static_cast<double>(npos) + 1.0) / 2.0;
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

struct PixelScore {
  double f1 = 0.0;
  double iou = 0.0;
};

// Binary mask overlap at a threshold. Both empty -> (1, 1); exactly one
// empty -> (0, 0).
inline PixelScore pixel_f1_iou(const ImagePlane& pred, const ImagePlane& truth,
                               double threshold = 0.5) {
  if (pred.width != truth.width || pred.height != truth.height)
    throw DimensionError("pixel_f1_iou: mask dimensions differ");
  size_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] >= threshold;
    const bool t = truth.values[i] >= 0.5;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return {1.0, 1.0};
  if (tp == 0) return {0.0, 0.0};
  const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  return {f1, iou};
}

}  // namespace ff
