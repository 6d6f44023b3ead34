#include "laser/flops.hpp"

#include <sstream>

namespace laser {

namespace {

struct Dims {
    double L, d, dq, w, M, r;
    explicit Dims(const LaserConfig& c)
        : L(static_cast<double>(c.seq_len)),
          d(static_cast<double>(c.embed_dim)),
          dq(static_cast<double>(c.qk_dim)),
          w(static_cast<double>(c.segment_w)),
          M(static_cast<double>(c.gsta_layers)),
          r(static_cast<double>(c.ffn_ratio)) {}
};

void finish(FlopsReport& rep) {
    rep.total = 0.0;
    for (const auto& t : rep.terms) rep.total += t.value;
}

}  // namespace

double FlopsReport::term(const std::string& name) const {
    for (const auto& t : terms)
        if (t.name == name) return t.value;
    return 0.0;
}

FlopsReport flops_sta(const LaserConfig& cfg) {
    const Dims n(cfg);
    FlopsReport rep;
    rep.model = "sta";
    rep.config = cfg;
    rep.terms.push_back({"proj", "L*d^2 + L*d*d_q", n.L * n.d * n.d + n.L * n.d * n.dq});
    rep.terms.push_back({"attn", "L*d_q + L*d", n.L * n.dq + n.L * n.d});
    rep.terms.push_back({"ffn", "(L/w)*2*r*d^2", (n.L / n.w) * 2.0 * n.r * n.d * n.d});
    finish(rep);
    return rep;
}

FlopsReport flops_gsta(const LaserConfig& cfg) {
    const Dims n(cfg);
    FlopsReport rep;
    rep.model = "gsta";
    rep.config = cfg;
    rep.terms.push_back(
        {"layers", "M*(L/w)*(2*d^2 + 2*d)", n.M * (n.L / n.w) * (2.0 * n.d * n.d + 2.0 * n.d)});
    finish(rep);
    return rep;
}

FlopsReport flops_laser(const LaserConfig& cfg) {
    const Dims n(cfg);
    FlopsReport rep;
    rep.model = "laser";
    rep.config = cfg;
    for (const auto& t : flops_sta(cfg).terms)
        rep.terms.push_back({"sta." + t.name, t.formula, t.value});
    for (const auto& t : flops_gsta(cfg).terms)
        rep.terms.push_back({"gsta." + t.name, t.formula, t.value});
    finish(rep);
    rep.closed_form = n.L * n.d * n.d * (1.0 + n.dq / n.d + (2.0 * n.r + 2.0 * n.M) / n.w);
    return rep;
}

FlopsReport flops_self_attention(const LaserConfig& cfg) {
    const Dims n(cfg);
    FlopsReport rep;
    rep.model = "self_attention";
    rep.config = cfg;
    rep.terms.push_back({"proj", "4*L*d^2", 4.0 * n.L * n.d * n.d});
    rep.terms.push_back({"attn", "2*L^2*d", 2.0 * n.L * n.L * n.d});
    finish(rep);
    rep.closed_form = rep.total;
    return rep;
}

FlopsReport flops_target_attention(const LaserConfig& cfg) {
    const Dims n(cfg);
    FlopsReport rep;
    rep.model = "target_attention";
    rep.config = cfg;
    rep.terms.push_back({"proj", "2*L*d^2", 2.0 * n.L * n.d * n.d});
    rep.terms.push_back({"attn", "2*L*d", 2.0 * n.L * n.d});
    finish(rep);
    rep.closed_form = rep.total;
    return rep;
}

FlopsComparison compare_report(const LaserConfig& cfg) {
    FlopsComparison cmp;
    cmp.laser = flops_laser(cfg);
    cmp.self_attention = flops_self_attention(cfg);
    cmp.target_attention = flops_target_attention(cfg);
    if (cmp.laser.closed_form > 0.0)
        cmp.sa_over_laser = cmp.self_attention.total / cmp.laser.closed_form;
    if (cmp.laser.total > 0.0)
        cmp.sa_over_laser_parts = cmp.self_attention.total / cmp.laser.total;
    if (cmp.target_attention.total > 0.0)
        cmp.laser_over_ta = cmp.laser.closed_form / cmp.target_attention.total;
    return cmp;
}

namespace {

void report_lines(std::ostringstream& os, const FlopsReport& rep) {
    for (const auto& t : rep.terms)
        os << "  " << rep.model << "." << t.name << " = " << t.value << "   [" << t.formula
           << "]\n";
    os << "  " << rep.model << ".total = " << rep.total << "\n";
}

}  // namespace

std::string FlopsComparison::text() const {
    std::ostringstream os;
    const LaserConfig& c = laser.config;
    os << "flops comparison (L=" << c.seq_len << " d=" << c.embed_dim << " d_q=" << c.qk_dim
       << " w=" << c.segment_w << " M=" << c.gsta_layers << " r=" << c.ffn_ratio << ")\n";
    report_lines(os, laser);
    os << "  laser.closed_form = " << laser.closed_form
       << "   [L*d^2*(1 + d_q/d + (2r+2M)/w)]\n";
    report_lines(os, self_attention);
    report_lines(os, target_attention);
    os << "  ratio self_attention/laser (closed form) = " << sa_over_laser << "\n";
    os << "  ratio self_attention/laser (sum of parts) = " << sa_over_laser_parts << "\n";
    os << "  ratio laser/target_attention = " << laser_over_ta << "\n";
    return os.str();
}

std::string FlopsComparison::json() const {
    std::ostringstream os;
    os << "{";
    auto emit = [&os](const FlopsReport& rep, bool first) {
        if (!first) os << ",";
        os << "\"" << rep.model << "\":{";
        for (const auto& t : rep.terms) os << "\"" << t.name << "\":" << t.value << ",";
        os << "\"total\":" << rep.total << ",\"closed_form\":" << rep.closed_form << "}";
    };
    emit(laser, true);
    emit(self_attention, false);
    emit(target_attention, false);
    os << ",\"sa_over_laser\":" << sa_over_laser
       << ",\"sa_over_laser_parts\":" << sa_over_laser_parts
       << ",\"laser_over_ta\":" << laser_over_ta << "}";
    return os.str();
}

}  // namespace laser
