#pragma once

// Learned per-sample loss-weight head: a single linear layer on a stage's
// last shared feature followed by softmax, yielding a weight per facial
// attribute on the probability simplex. S_Net realizes the layer as a 1x1
// convolution, M_Net/L_Net as a fully connected layer; both reduce to
// softmax(w^T x + b).

#include <stdexcept>
#include <vector>

#include "mcfa/tensor.hpp"

namespace mcfa {

struct DynamicWeightHead {
    Tensor weight;  // [D, d]
    Tensor bias;    // [d]
};

// mu = softmax(weight^T x + bias); differentiable w.r.t. weight, bias and x.
inline Tensor compute_weights(Graph& g, const DynamicWeightHead& head, const Tensor& x) {
    if (x.rank() != 1 || x.dim(0) != head.weight.dim(0))
        throw std::invalid_argument("compute_weights: feature length " +
                                    std::to_string(x.rank() == 1 ? x.dim(0) : -1) +
                                    " does not match head rows " +
                                    std::to_string(head.weight.dim(0)));
    return g.softmax(g.fully_connected(x, head.weight, head.bias));
}

// S_Net form: 1x1 convolution over the [D,1,1] shared feature.
inline Tensor compute_weights_conv(Graph& g, const Tensor& weight, const Tensor& bias,
                                   const Tensor& x) {
    return g.softmax(g.flatten(g.conv2d(x, weight, bias, 1, 0)));
}

struct WeightPressureReport {
    std::vector<double> logit_grads;  // d(mu . l)/d(logit_q), losses held fixed
    double weighted_mean_loss = 0.0;
};

// Gradient of the weighted attribute loss w.r.t. the weight-head logits with
// the per-attribute losses treated as constants:
//   d(mu . l)/d(alpha_q) = mu_q (l_q - mu . l).
// Negative exactly when l_q is below the weighted mean, i.e. descent on the
// joint loss moves weight toward the easier attributes.
inline WeightPressureReport weight_pressure_check(const std::vector<double>& per_attr_losses,
                                                  const std::vector<double>& mu) {
    if (per_attr_losses.size() != mu.size())
        throw std::invalid_argument("weight_pressure_check: length mismatch");
    WeightPressureReport rep;
    for (std::size_t q = 0; q < mu.size(); ++q) rep.weighted_mean_loss += mu[q] * per_attr_losses[q];
    rep.logit_grads.resize(mu.size());
    for (std::size_t q = 0; q < mu.size(); ++q)
        rep.logit_grads[q] = mu[q] * (per_attr_losses[q] - rep.weighted_mean_loss);
    return rep;
}

}  // namespace mcfa
