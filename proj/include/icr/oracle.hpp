#pragma once

// Reference implementations written straight from the formulas, in long
// double, sharing no code with the production scoring and metrics paths.

#include <span>

#include "icr/dump.hpp"
#include "icr/icr_score.hpp"

namespace icr {

/// Naive O(L * N^2 * d) ICR matrix.
IcrMatrix oracle_icr(const ActivationRecord& record, const IcrSetting& setting);

/// (#concordant pairs + 0.5 * #tied pairs) / (#pos * #neg).
double oracle_auroc(std::span<const double> scores, std::span<const int> labels);

}  // namespace icr
