// SPDX-License-Identifier: Apache-2.0
//
// Forward-mode tangents carried alongside reverse-mode values. A Dual holds
// a value and its derivative with respect to one scalar (time); both live on
// the tape, so time derivatives stay differentiable w.r.t. parameters.
// An invalid tangent means "identically zero".
#pragma once

#include "flowlm/autodiff.hpp"

#include <vector>

namespace flowlm::ad {

struct Dual {
    Var v;
    Var d;

    Dual() = default;
    Dual(Var value) : v(value) {}  // NOLINT: zero tangent
    Dual(Var value, Var tangent) : v(value), d(tangent) {}

    bool has_tangent() const { return d.valid(); }
};

Dual add(const Dual& a, const Dual& b);
Dual sub(const Dual& a, const Dual& b);
Dual mul(const Dual& a, const Dual& b);
Dual scale(const Dual& a, double s);

// x W + b with constant-in-time weights.
Dual linear(const Dual& x, const Var& w, const Var& b);
Dual add_row(const Dual& a, const Var& row);
Dual mul_col(const Dual& a, const Dual& col);
Dual repeat_rows(const Dual& a, Eigen::Index times);
Dual slice_cols(const Dual& a, Eigen::Index start, Eigen::Index count);
Dual concat_cols(const std::vector<Dual>& parts);
Dual concat_rows(const std::vector<Dual>& parts);
Dual slice_rows(const Dual& a, Eigen::Index start, Eigen::Index count);
Dual reshape(const Dual& a, Eigen::Index rows, Eigen::Index cols);

Dual silu(const Dual& a);
Dual softplus(const Dual& a);
Dual exp(const Dual& a);
// Row-wise (x - mean) / sqrt(var + eps), no affine part.
Dual layer_norm(const Dual& a, double eps = 1e-5);
Dual softmax_rows(const Dual& a);
Dual seq_mean_rows(const Dual& a, Eigen::Index seq_len);
Dual seq_scores(const Dual& q, const Dual& k, Eigen::Index seq_len);
Dual seq_mix(const Dual& p, const Dual& v, Eigen::Index seq_len);

}  // namespace flowlm::ad
