#pragma once

// The four task losses and their joint sum. Face classification is negative
// log-likelihood on the face probability; box and landmark losses are
// squared Euclidean distances on normalized coordinates; the attribute loss
// is the dynamic-weight inner product over per-attribute two-way softmax
// cross-entropies. The joint loss sums the per-stage per-task terms that the
// sample's annotation kind and the training variant both enable.

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mcfa/data.hpp"
#include "mcfa/model.hpp"
#include "mcfa/tensor.hpp"

namespace mcfa {

inline constexpr double kProbClamp = 1e-7;

struct TaskMask {
    bool use_cls = false;
    bool use_box = false;
    bool use_landmark = false;
    bool use_attr = false;

    // Annotation kind -> driven losses. Attribute records carry a box but no
    // landmark coordinates, so they cannot drive the landmark loss.
    static TaskMask for_kind(SampleKind kind) {
        switch (kind) {
            case SampleKind::nonface: return {true, false, false, false};
            case SampleKind::face: return {true, true, false, false};
            case SampleKind::landmark: return {true, true, true, false};
            case SampleKind::attribute: return {true, true, false, true};
        }
        return {};
    }

    static TaskMask all() { return {true, true, true, true}; }

    TaskMask intersect(const TaskMask& o) const {
        return {use_cls && o.use_cls, use_box && o.use_box, use_landmark && o.use_landmark,
                use_attr && o.use_attr};
    }

    bool any() const { return use_cls || use_box || use_landmark || use_attr; }
};

// -[y log p + (1-y) log(1-p)] with p clamped away from {0,1}.
inline Tensor face_cls_loss(Graph& g, const Tensor& p, int y) {
    if (p.size() != 1) throw std::invalid_argument("face_cls_loss: p must be scalar");
    if (y != 0 && y != 1) throw std::invalid_argument("face_cls_loss: label must be 0 or 1");
    Tensor pc = g.clamp(p, kProbClamp, 1.0 - kProbClamp);
    Tensor prob = y == 1 ? pc : g.sub(Tensor::scalar(1.0), pc);
    return g.scale(g.log(prob), -1.0);
}

// ||pred - truth||^2
inline Tensor bbox_loss(Graph& g, const Tensor& pred, const Tensor& truth) {
    if (pred.rank() != 1 || truth.rank() != 1 || pred.dim(0) != 4 || truth.dim(0) != 4)
        throw std::invalid_argument("bbox_loss: operands must be 4-vectors");
    Tensor d = g.sub(pred, truth);
    return g.dot(d, d);
}

inline Tensor landmark_loss(Graph& g, const Tensor& pred, const Tensor& truth) {
    if (pred.rank() != 1 || truth.rank() != 1 || pred.dim(0) != truth.dim(0))
        throw std::invalid_argument("landmark_loss: length mismatch " +
                                    detail::shape_str(pred.shape()) + " vs " +
                                    detail::shape_str(truth.shape()));
    Tensor d = g.sub(pred, truth);
    return g.dot(d, d);
}

// Per-attribute two-way softmax cross-entropies, as a [d] vector.
inline Tensor attr_loss_vector(Graph& g, const Tensor& attr_logits,
                               const std::vector<int>& labels) {
    const int d = static_cast<int>(labels.size());
    if (attr_logits.rank() != 1 || attr_logits.dim(0) != 2 * d)
        throw std::invalid_argument("attr_loss_vector: expected " + std::to_string(2 * d) +
                                    " logits, got " + detail::shape_str(attr_logits.shape()));
    Tensor acc({0}, {});
    for (int q = 0; q < d; ++q) {
        if (labels[q] != 0 && labels[q] != 1)
            throw std::invalid_argument("attr_loss_vector: labels must be 0/1");
        Tensor pair = g.slice(attr_logits, 2 * q, 2);
        Tensor prob = g.slice(g.softmax(pair), labels[q], 1);
        Tensor lq = g.scale(g.log(g.clamp(prob, kProbClamp, 1.0)), -1.0);
        acc = g.concat(acc, lq);
    }
    return acc;
}

// mu . l, gradients flowing through both the logits and the weight vector.
inline Tensor attr_loss(Graph& g, const Tensor& attr_logits, const std::vector<int>& labels,
                        const Tensor& dyn_weights) {
    const int d = static_cast<int>(labels.size());
    if (dyn_weights.rank() != 1 || dyn_weights.dim(0) != d)
        throw std::invalid_argument("attr_loss: weight vector must have d entries");
    double sum = 0.0;
    for (int q = 0; q < d; ++q) {
        if (dyn_weights.at(q) <= 0.0)
            throw std::invalid_argument("attr_loss: dynamic weights must be strictly positive");
        sum += dyn_weights.at(q);
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("attr_loss: dynamic weights sum to " + std::to_string(sum));
    return g.dot(dyn_weights, attr_loss_vector(g, attr_logits, labels));
}

enum class Task { cls = 0, box = 1, landmark = 2, attr = 3 };
enum class Weighting { dynamic, fixed_uniform };

struct LossBreakdown {
    std::array<std::array<double, 4>, 3> terms{};   // [stage][task]
    std::array<std::array<bool, 4>, 3> present{};
    double joint_value = 0.0;
    Tensor joint;  // graph scalar (constant zero when no task is enabled)

    double stage_task(int stage, Task t) const { return terms[stage][static_cast<int>(t)]; }
};

// Joint loss over the three stages for one sample. `variant` restricts
// which tasks train at all; the sample's kind determines which have ground
// truth. Masked tasks contribute exactly zero and no gradient.
inline LossBreakdown joint_loss(Graph& g, const FullOutputs& outs, const Sample& sample,
                                const TaskMask& variant = TaskMask::all(),
                                Weighting weighting = Weighting::dynamic) {
    const TaskMask mask = TaskMask::for_kind(sample.kind).intersect(variant);
    LossBreakdown bd;
    const StageOutputs* stages[3] = {&outs.s, &outs.m, &outs.l};

    std::optional<Tensor> total;
    auto accumulate = [&](int j, Task t, Tensor term) {
        bd.terms[j][static_cast<int>(t)] = term.value();
        bd.present[j][static_cast<int>(t)] = true;
        total = total ? g.add(*total, term) : term;
    };

    Tensor box_truth, lm_truth;
    if (mask.use_box) {
        if (!sample.box) throw std::invalid_argument("joint_loss: sample lacks box ground truth");
        box_truth = Tensor({4}, {(*sample.box)[0], (*sample.box)[1], (*sample.box)[2],
                                 (*sample.box)[3]});
    }
    if (mask.use_landmark) {
        if (!sample.landmarks)
            throw std::invalid_argument("joint_loss: sample lacks landmark ground truth");
        lm_truth = Tensor({static_cast<int>(sample.landmarks->size())}, *sample.landmarks);
    }
    if (mask.use_attr && !sample.attributes)
        throw std::invalid_argument("joint_loss: sample lacks attribute ground truth");

    for (int j = 0; j < 3; ++j) {
        const StageOutputs& so = *stages[j];
        if (mask.use_cls)
            accumulate(j, Task::cls, face_cls_loss(g, so.face_prob, sample.is_face() ? 1 : 0));
        if (mask.use_box) accumulate(j, Task::box, bbox_loss(g, so.box, box_truth));
        if (mask.use_landmark)
            accumulate(j, Task::landmark, landmark_loss(g, so.landmarks, lm_truth));
        if (mask.use_attr) {
            const int d = static_cast<int>(sample.attributes->size());
            Tensor mu = weighting == Weighting::dynamic
                            ? so.dyn_weights
                            : Tensor::full({d}, 1.0 / d);
            accumulate(j, Task::attr, attr_loss(g, so.attr_logits, *sample.attributes, mu));
        }
    }
    bd.joint = total ? *total : Tensor::scalar(0.0);
    bd.joint_value = bd.joint.value();
    return bd;
}

}  // namespace mcfa
