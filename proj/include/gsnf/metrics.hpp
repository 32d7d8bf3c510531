#pragma once

#include <vector>

#include "gsnf/errors.hpp"

namespace gsnf {

/// Area under the ROC curve via the Mann-Whitney statistic; ties between a
/// positive and a negative score count 1/2. Requires both classes present.
double auroc(const std::vector<double>& scores,
             const std::vector<int>& labels);

/// Area under the precision-recall curve as average precision: sum over
/// distinct score thresholds of precision times the recall increment.
/// Requires at least one positive.
double auprc(const std::vector<double>& scores,
             const std::vector<int>& labels);

}  // namespace gsnf
