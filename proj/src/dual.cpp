// SPDX-License-Identifier: Apache-2.0
#include "flowlm/dual.hpp"

namespace flowlm::ad {

namespace {

Var tsum(const Var& a, const Var& b) {
    if (!a.valid()) return b;
    if (!b.valid()) return a;
    return add(a, b);
}

}  // namespace

Dual add(const Dual& a, const Dual& b) { return {add(a.v, b.v), tsum(a.d, b.d)}; }

Dual sub(const Dual& a, const Dual& b) {
    Var d;
    if (a.d.valid() && b.d.valid()) {
        d = sub(a.d, b.d);
    } else if (a.d.valid()) {
        d = a.d;
    } else if (b.d.valid()) {
        d = neg(b.d);
    }
    return {sub(a.v, b.v), d};
}

Dual mul(const Dual& a, const Dual& b) {
    Var d;
    if (a.d.valid()) d = mul(a.d, b.v);
    if (b.d.valid()) d = tsum(d, mul(a.v, b.d));
    return {mul(a.v, b.v), d};
}

Dual scale(const Dual& a, double s) { return {scale(a.v, s), a.d.valid() ? scale(a.d, s) : Var()}; }

Dual linear(const Dual& x, const Var& w, const Var& b) {
    Var v = add_row(matmul(x.v, w), b);
    return {v, x.d.valid() ? matmul(x.d, w) : Var()};
}

Dual add_row(const Dual& a, const Var& row) { return {add_row(a.v, row), a.d}; }

Dual mul_col(const Dual& a, const Dual& col) {
    Var d;
    if (a.d.valid()) d = mul_col(a.d, col.v);
    if (col.d.valid()) d = tsum(d, mul_col(a.v, col.d));
    return {mul_col(a.v, col.v), d};
}

Dual repeat_rows(const Dual& a, Eigen::Index times) {
    return {repeat_rows(a.v, times), a.d.valid() ? repeat_rows(a.d, times) : Var()};
}

Dual slice_cols(const Dual& a, Eigen::Index start, Eigen::Index count) {
    return {slice_cols(a.v, start, count), a.d.valid() ? slice_cols(a.d, start, count) : Var()};
}

Dual slice_rows(const Dual& a, Eigen::Index start, Eigen::Index count) {
    return {slice_rows(a.v, start, count), a.d.valid() ? slice_rows(a.d, start, count) : Var()};
}

Dual reshape(const Dual& a, Eigen::Index rows, Eigen::Index cols) {
    return {reshape(a.v, rows, cols), a.d.valid() ? reshape(a.d, rows, cols) : Var()};
}

namespace {

template <typename Concat>
Dual concat_dual(const std::vector<Dual>& parts, Concat concat) {
    std::vector<Var> values;
    std::vector<Var> tangents;
    bool any = false;
    for (const auto& p : parts) {
        values.push_back(p.v);
        any = any || p.d.valid();
    }
    Var d;
    if (any) {
        for (const auto& p : parts) {
            tangents.push_back(p.d.valid() ? p.d : p.v.tape()->constant(Matrix::Zero(p.v.rows(), p.v.cols())));
        }
        d = concat(std::span<const Var>(tangents));
    }
    return {concat(std::span<const Var>(values)), d};
}

}  // namespace

Dual concat_cols(const std::vector<Dual>& parts) {
    return concat_dual(parts, [](std::span<const Var> s) { return concat_cols(s); });
}

Dual concat_rows(const std::vector<Dual>& parts) {
    return concat_dual(parts, [](std::span<const Var> s) { return concat_rows(s); });
}

Dual silu(const Dual& a) {
    Var y = silu(a.v);
    if (!a.d.valid()) return {y};
    // silu'(x) = s + y (1 - s)
    Var s = sigmoid(a.v);
    Var slope = add(s, sub(y, mul(y, s)));
    return {y, mul(a.d, slope)};
}

Dual softplus(const Dual& a) {
    Var y = softplus(a.v);
    if (!a.d.valid()) return {y};
    return {y, mul(a.d, sigmoid(a.v))};
}

Dual exp(const Dual& a) {
    Var y = exp(a.v);
    if (!a.d.valid()) return {y};
    return {y, mul(a.d, y)};
}

Dual layer_norm(const Dual& a, double eps) {
    Var centered = add_col(a.v, neg(row_mean(a.v)));
    Var var = row_mean(square(centered));
    Var inv = reciprocal(sqrt(shift(var, eps)));
    Var y = mul_col(centered, inv);
    if (!a.d.valid()) return {y};
    Var dc = add_col(a.d, neg(row_mean(a.d)));
    Var dvar = scale(row_mean(mul(centered, dc)), 2.0);
    // d(inv) = -0.5 inv^3 dvar
    Var dinv = scale(mul(mul(inv, square(inv)), dvar), -0.5);
    return {y, add(mul_col(dc, inv), mul_col(centered, dinv))};
}

Dual softmax_rows(const Dual& a) {
    Var p = softmax_rows(a.v);
    if (!a.d.valid()) return {p};
    Var inner = row_sum(mul(p, a.d));
    return {p, mul(p, add_col(a.d, neg(inner)))};
}

Dual seq_mean_rows(const Dual& a, Eigen::Index seq_len) {
    return {seq_mean_rows(a.v, seq_len), a.d.valid() ? seq_mean_rows(a.d, seq_len) : Var()};
}

Dual seq_scores(const Dual& q, const Dual& k, Eigen::Index seq_len) {
    Var d;
    if (q.d.valid()) d = seq_scores(q.d, k.v, seq_len);
    if (k.d.valid()) d = tsum(d, seq_scores(q.v, k.d, seq_len));
    return {seq_scores(q.v, k.v, seq_len), d};
}

Dual seq_mix(const Dual& p, const Dual& v, Eigen::Index seq_len) {
    Var d;
    if (p.d.valid()) d = seq_mix(p.d, v.v, seq_len);
    if (v.d.valid()) d = tsum(d, seq_mix(p.v, v.d, seq_len));
    return {seq_mix(p.v, v.v, seq_len), d};
}

}  // namespace flowlm::ad
