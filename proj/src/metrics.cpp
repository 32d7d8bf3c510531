#include "gsnf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gsnf {

namespace {

void check_inputs(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw UsageError("metrics: scores and labels differ in length");
  if (scores.empty()) throw UsageError("metrics: empty input");
  for (double s : scores)
    if (!std::isfinite(s)) throw UsageError("metrics: non-finite score");
  for (int l : labels)
    if (l != 0 && l != 1) throw UsageError("metrics: labels must be 0 or 1");
}

}  // namespace

double auroc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  double n_pos = 0.0;
  for (int l : labels) n_pos += l;
  double n_neg = (double)n - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0)
    throw UsageError("auroc: both classes must be present");

  // Mann-Whitney via midranks: AUROC = (R_pos - n_pos(n_pos+1)/2)/(n_pos n_neg)
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double midrank = 0.5 * (double)(i + j) + 1.0;  // ranks are 1-based
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double auprc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  double n_pos = 0.0;
  for (int l : labels) n_pos += l;
  if (n_pos == 0.0) throw UsageError("auprc: no positive labels");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Average precision over thresholds at distinct scores, ties grouped so a
  // shared score enters the curve as one operating point.
  double tp = 0.0, fp = 0.0, ap = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1)
        tp += 1.0;
      else
        fp += 1.0;
    }
    double recall = tp / n_pos;
    double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

}  // namespace gsnf
