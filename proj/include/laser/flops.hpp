#pragma once

#include <string>
#include <vector>

#include "laser/attention.hpp"

namespace laser {

struct FlopsTerm {
    std::string name;
    std::string formula;  // the literal cost expression this term evaluates
    double value = 0.0;
};

struct FlopsReport {
    std::string model;
    std::vector<FlopsTerm> terms;
    double total = 0.0;        // always the sum of terms
    double closed_form = 0.0;  // simplified single-expression estimate, when one exists
    LaserConfig config;

    double term(const std::string& name) const;  // 0 when absent
};

FlopsReport flops_sta(const LaserConfig& cfg);
FlopsReport flops_gsta(const LaserConfig& cfg);

/// Sum-of-parts total plus the simplified closed form
/// L*d^2*(1 + d_q/d + (2r+2M)/w); the two agree within a few percent.
FlopsReport flops_laser(const LaserConfig& cfg);

FlopsReport flops_self_attention(const LaserConfig& cfg);    // 4Ld^2 + 2L^2 d
FlopsReport flops_target_attention(const LaserConfig& cfg);  // 2Ld^2 + 2Ld

struct FlopsComparison {
    FlopsReport laser, self_attention, target_attention;
    double sa_over_laser = 0.0;        // using the closed form
    double sa_over_laser_parts = 0.0;  // using the sum of parts
    double laser_over_ta = 0.0;

    std::string text() const;
    std::string json() const;
};

FlopsComparison compare_report(const LaserConfig& cfg);

}  // namespace laser
