#pragma once

// Test-time threshold-controlled pipeline: S_Net's face score gates M_Net,
// M_Net's gates L_Net, and accepted proposals take their final attribute,
// box and landmark predictions from L_Net. Rejection skips all later-stage
// arithmetic.

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mcfa/data.hpp"
#include "mcfa/model.hpp"

namespace mcfa {

struct CascadeThresholds {
    double t_s = 0.5;
    double t_m = 0.5;

    void validate() const {
        if (t_s < 0.0 || t_s > 1.0 || t_m < 0.0 || t_m > 1.0)
            throw std::invalid_argument("cascade thresholds must lie in [0,1]");
    }
};

enum class PredictionStatus { rejected_at_s, rejected_at_m, accepted };

inline const char* status_name(PredictionStatus s) {
    switch (s) {
        case PredictionStatus::rejected_at_s: return "rejected_at_s";
        case PredictionStatus::rejected_at_m: return "rejected_at_m";
        case PredictionStatus::accepted: return "accepted";
    }
    return "?";
}

struct PredictionResult {
    PredictionStatus status = PredictionStatus::rejected_at_s;
    double p_s = 0.0;
    std::optional<double> p_m, p_l;
    std::optional<std::vector<double>> attr_probs;   // P(attribute positive), d entries
    std::optional<std::vector<int>> attr_decisions;  // prob > 0.5, ties negative
    std::optional<std::array<double, 4>> box;
    std::optional<std::vector<double>> landmarks;
    std::optional<std::vector<double>> dyn_weights;  // L_Net head
    std::uint64_t graph_ops = 0;    // scalar arithmetic recorded for this input
    std::size_t graph_nodes = 0;
};

// A proposal passes a stage iff its face score is >= the stage threshold.
inline PredictionResult predict(const McfaModel& m, const Tensor& image,
                                const CascadeThresholds& th) {
    th.validate();
    PredictionResult r;
    Graph g;
    Pyramid pyr = build_pyramid(g, m.config(), image);

    auto [shared_s, out_s] = forward_snet(m, g, pyr.small);
    r.p_s = out_s.face_prob.value();
    if (r.p_s < th.t_s) {
        r.status = PredictionStatus::rejected_at_s;
        r.graph_ops = g.scalar_ops();
        r.graph_nodes = g.node_count();
        return r;
    }

    auto [shared_m, out_m] = forward_mnet(m, g, pyr.medium, shared_s);
    r.p_m = out_m.face_prob.value();
    if (*r.p_m < th.t_m) {
        r.status = PredictionStatus::rejected_at_m;
        r.graph_ops = g.scalar_ops();
        r.graph_nodes = g.node_count();
        return r;
    }

    auto [shared_l, out_l] = forward_lnet(m, g, pyr.large, shared_m);
    (void)shared_l;
    r.status = PredictionStatus::accepted;
    r.p_l = out_l.face_prob.value();
    r.box = std::array<double, 4>{out_l.box.at(0), out_l.box.at(1), out_l.box.at(2),
                                  out_l.box.at(3)};
    r.landmarks = out_l.landmarks.values();
    r.dyn_weights = out_l.dyn_weights.values();

    const int d = m.config().num_attributes;
    std::vector<double> probs(d);
    std::vector<int> decisions(d);
    for (int q = 0; q < d; ++q) {
        probs[q] = g.softmax(g.slice(out_l.attr_logits, 2 * q, 2)).at(1);
        decisions[q] = probs[q] > 0.5 ? 1 : 0;
    }
    r.attr_probs = std::move(probs);
    r.attr_decisions = std::move(decisions);
    r.graph_ops = g.scalar_ops();
    r.graph_nodes = g.node_count();
    return r;
}

struct CascadeStats {
    std::size_t total = 0;
    std::size_t rejected_s = 0;
    std::size_t rejected_m = 0;
    std::size_t accepted = 0;
    std::size_t snet_evals = 0;
    std::size_t mnet_evals = 0;
    std::size_t lnet_evals = 0;
    std::uint64_t total_ops = 0;
};

inline std::pair<std::vector<PredictionResult>, CascadeStats> batch_predict(
    const McfaModel& m, const std::vector<Sample>& samples, const CascadeThresholds& th) {
    std::vector<PredictionResult> results;
    results.reserve(samples.size());
    CascadeStats st;
    st.total = samples.size();
    for (const auto& s : samples) {
        PredictionResult r = predict(m, s.image, th);
        ++st.snet_evals;
        switch (r.status) {
            case PredictionStatus::rejected_at_s: ++st.rejected_s; break;
            case PredictionStatus::rejected_at_m:
                ++st.mnet_evals;
                ++st.rejected_m;
                break;
            case PredictionStatus::accepted:
                ++st.mnet_evals;
                ++st.lnet_evals;
                ++st.accepted;
                break;
        }
        st.total_ops += r.graph_ops;
        results.push_back(std::move(r));
    }
    return {std::move(results), st};
}

// Line-delimited record: `key=value` fields, vectors comma-joined.
inline void write_prediction(std::ostream& os, const PredictionResult& r) {
    auto join = [](const auto& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ',';
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v[i]));
            s += buf;
        }
        return s;
    };
    os << "status=" << status_name(r.status);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", r.p_s);
    os << " p_s=" << buf;
    if (r.p_m) {
        std::snprintf(buf, sizeof(buf), "%.9g", *r.p_m);
        os << " p_m=" << buf;
    }
    if (r.p_l) {
        std::snprintf(buf, sizeof(buf), "%.9g", *r.p_l);
        os << " p_l=" << buf;
    }
    if (r.attr_decisions) os << " attrs=" << join(*r.attr_decisions);
    if (r.attr_probs) os << " attr_probs=" << join(*r.attr_probs);
    if (r.box) os << " box=" << join(*r.box);
    if (r.landmarks) os << " landmarks=" << join(*r.landmarks);
    if (r.dyn_weights) os << " dyn_weights=" << join(*r.dyn_weights);
    os << '\n';
}

}  // namespace mcfa
