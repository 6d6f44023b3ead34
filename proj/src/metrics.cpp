#include "harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace harness {

double bce_loss(double pred, int label) {
    const double p = std::clamp(pred, 1e-7, 1.0 - 1e-7);
    return label ? -std::log(p) : -std::log(1.0 - p);
}

double bce_grad_logit(double pred, int label) { return pred - static_cast<double>(label); }

double auc(std::span<const float> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("auc: scores/labels size mismatch");
    std::uint64_t pos = 0, neg = 0;
    for (int y : labels) (y ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Walk score groups ascending; each positive beats every negative in a
    // strictly lower group and half-ties the negatives in its own group.
    std::uint64_t wins2 = 0;  // doubled win count so ties stay integral
    std::uint64_t negs_below = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::uint64_t group_pos = 0, group_neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? group_pos : group_neg)++;
            ++j;
        }
        wins2 += group_pos * (2 * negs_below + group_neg);
        negs_below += group_neg;
        i = j;
    }
    return static_cast<double>(wins2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace harness
