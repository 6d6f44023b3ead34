#pragma once

#include <span>

namespace harness {

/// Binary cross entropy at a predicted click probability; pred is clamped
/// into [1e-7, 1-1e-7] first.
double bce_loss(double pred, int label);

/// d(loss)/d(logit) for a sigmoid head: pred - label.
double bce_grad_logit(double pred, int label);

/// Rank statistic: probability a random positive outscores a random
/// negative, ties counted half. Exact integer pair accounting. Throws
/// when only one class is present.
double auc(std::span<const float> scores, std::span<const int> labels);

}  // namespace harness
