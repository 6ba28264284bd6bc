// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation; backward() walks it in reverse.
// Activations of a batch are laid out as [batch * seq_len, features]; the
// seq_* operations treat each run of seq_len rows as one sequence.
#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace flowlm::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
        grad = Matrix::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    Eigen::Index size() const { return value.size(); }
};

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool valid() const { return tape_ != nullptr; }
    bool needs_grad() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    // record=false builds values only (inference); no closures are kept.
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var scalar(double value);
    // Leaf bound to a parameter; backward() accumulates into p.grad.
    Var param(Parameter& p);

    // Seeds d(out)/d(out) = 1 for a 1x1 output (or `seed` for any shape).
    void backward(const Var& out);
    void backward(const Var& out, const Matrix& seed);

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    const Matrix& value(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    // Gradient of a recorded node after backward(); zeros when untouched.
    Matrix grad(const Var& v) const;

    using Backward = std::function<void(Tape&, const Matrix&)>;
    Var push(Matrix value, std::initializer_list<Var> parents, Backward back);
    Var push(Matrix value, std::span<const Var> parents, Backward back);

    template <typename Expr>
    void accumulate(const Var& v, const Expr& contribution) {
        Node& n = nodes_[v.id()];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = contribution;
        } else {
            n.grad += contribution;
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward back;
        bool needs_grad = false;
    };
    // deque keeps value() references valid while the tape grows
    std::deque<Node> nodes_;
    bool record_;
};

// Elementwise binary (shapes must match).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

// Scalar affine.
Var scale(const Var& a, double s);
Var shift(const Var& a, double s);
Var neg(const Var& a);

// Broadcasting: col is [N x 1], row is [1 x C].
Var add_col(const Var& a, const Var& col);
Var mul_col(const Var& a, const Var& col);
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);

// Elementwise unary.
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);

// Reductions.
Var sum(const Var& a);                // [1 x 1]
Var row_sum(const Var& a);            // [N x 1]
Var row_mean(const Var& a);           // [N x 1]
Var col_sum(const Var& a);            // [1 x C]

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// out(r) = a(r, index[r]) as [N x 1]
Var pick(const Var& a, std::span<const int> index);

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
// Rows of `table` selected by ids; gradient scatters back.
Var gather_rows(const Var& table, std::span<const int> ids);

// Sequence-blocked operations; a has B*S rows.
Var repeat_rows(const Var& a, Eigen::Index times);      // [B x C] -> [B*times x C]
Var tile_rows(const Var& a, Eigen::Index times);        // [S x C] -> [times*S x C], stacked copies
Var seq_mean_rows(const Var& a, Eigen::Index seq_len);  // [B*S x C] -> [B x C]
Var seq_sum(const Var& a, Eigen::Index seq_len);        // [B*S x C] -> [B*S x 1], block total
Var seq_scores(const Var& q, const Var& k, Eigen::Index seq_len);  // per block Q K^T -> [B*S x S]
Var seq_mix(const Var& p, const Var& v, Eigen::Index seq_len);     // per block P V -> [B*S x C]

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace flowlm::ad
