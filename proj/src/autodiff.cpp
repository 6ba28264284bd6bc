// SPDX-License-Identifier: Apache-2.0
#include "flowlm/autodiff.hpp"

#include "flowlm/errors.hpp"

#include <cmath>

namespace flowlm::ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

void require_blocked(const Var& a, Eigen::Index seq_len, const char* op) {
    if (seq_len <= 0 || a.rows() % seq_len != 0) {
        throw ShapeError(std::string(op) + ": rows not a multiple of sequence length");
    }
}

double stable_softplus(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::scalar(double value) {
    Matrix m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
}

Var Tape::param(Parameter& p) {
    Node n{p.value, {}, {}, record_};
    if (record_) {
        Parameter* target = &p;
        n.back = [target](Tape&, const Matrix& g) { target->grad += g; };
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward back) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(back));
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward back) {
    bool needs = false;
    if (record_) {
        for (const Var& p : parents) {
            needs = needs || p.needs_grad();
        }
    }
    Node n{std::move(value), {}, {}, needs};
    if (needs) {
        n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& out) {
    if (out.rows() != 1 || out.cols() != 1) {
        throw ShapeError("backward: output must be 1x1 without an explicit seed");
    }
    backward(out, Matrix::Ones(1, 1));
}

void Tape::backward(const Var& out, const Matrix& seed) {
    if (!record_) {
        throw std::logic_error("backward on a non-recording tape");
    }
    Node& root = nodes_[out.id()];
    if (!root.needs_grad) return;
    root.grad = seed;
    for (int i = out.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || !n.back || n.grad.size() == 0) continue;
        n.back(*this, n.grad);
    }
}

Matrix Tape::grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    return a.tape()->push(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    return a.tape()->push(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    return a.tape()->push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g.cwiseProduct(b.value()));
        t.accumulate(b, g.cwiseProduct(a.value()));
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    return a.tape()->push(a.value().cwiseQuotient(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
        const Matrix gb = g.cwiseQuotient(b.value());
        t.accumulate(a, gb);
        t.accumulate(b, -gb.cwiseProduct(a.value()).cwiseQuotient(b.value()));
    });
}

Var scale(const Var& a, double s) {
    return a.tape()->push(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var shift(const Var& a, double s) {
    return a.tape()->push((a.value().array() + s).matrix(), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_col(const Var& a, const Var& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) throw ShapeError("add_col: expected [N x 1]");
    Matrix out = a.value();
    out.colwise() += col.value().col(0);
    return a.tape()->push(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(col, g.rowwise().sum());
    });
}

Var mul_col(const Var& a, const Var& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) throw ShapeError("mul_col: expected [N x 1]");
    Matrix out = col.value().col(0).asDiagonal() * a.value();
    return a.tape()->push(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
        t.accumulate(a, col.value().col(0).asDiagonal() * g);
        t.accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
    });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: expected [1 x C]");
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    return a.tape()->push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(row, g.colwise().sum());
    });
}

Var mul_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("mul_row: expected [1 x C]");
    Matrix out = a.value() * row.value().row(0).asDiagonal();
    return a.tape()->push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
        t.accumulate(a, g * row.value().row(0).asDiagonal());
        t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    return a.tape()->push(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (a.needs_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.needs_grad()) t.accumulate(b, a.value().transpose() * g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    return a.tape()->push(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (a.needs_grad()) t.accumulate(a, g * b.value());
        if (b.needs_grad()) t.accumulate(b, g.transpose() * a.value());
    });
}

Var exp(const Var& a) {
    Matrix out = a.value().array().exp().matrix();
    return a.tape()->push(out, {a}, [a, out](Tape& t, const Matrix& g) {
        t.accumulate(a, g.cwiseProduct(out));
    });
}

Var log(const Var& a) {
    return a.tape()->push(a.value().array().log().matrix(), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, g.cwiseQuotient(a.value()));
    });
}

Var sqrt(const Var& a) {
    Matrix out = a.value().array().sqrt().matrix();
    Matrix half_inv = (0.5 / out.array()).matrix();
    return a.tape()->push(std::move(out), {a}, [a, half_inv](Tape& t, const Matrix& g) {
        t.accumulate(a, g.cwiseProduct(half_inv));
    });
}

Var square(const Var& a) {
    return a.tape()->push(a.value().array().square().matrix(), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
    });
}

Var reciprocal(const Var& a) {
    Matrix out = a.value().array().inverse().matrix();
    return a.tape()->push(out, {a}, [a, out](Tape& t, const Matrix& g) {
        t.accumulate(a, -g.cwiseProduct(out.cwiseProduct(out)));
    });
}

Var sigmoid(const Var& a) {
    Matrix out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
    return a.tape()->push(out, {a}, [a, out](Tape& t, const Matrix& g) {
        t.accumulate(a, g.cwiseProduct((out.array() * (1.0 - out.array())).matrix()));
    });
}

Var softplus(const Var& a) {
    return a.tape()->push(a.value().unaryExpr([](double x) { return stable_softplus(x); }), {a},
                          [a](Tape& t, const Matrix& g) {
                              t.accumulate(a, g.cwiseProduct(a.value().unaryExpr(
                                                  [](double x) { return stable_sigmoid(x); })));
                          });
}

Var silu(const Var& a) {
    return a.tape()->push(a.value().unaryExpr([](double x) { return x * stable_sigmoid(x); }), {a},
                          [a](Tape& t, const Matrix& g) {
                              t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) {
                                  const double s = stable_sigmoid(x);
                                  return s * (1.0 + x * (1.0 - s));
                              })));
                          });
}

Var tanh(const Var& a) {
    Matrix out = a.value().array().tanh().matrix();
    return a.tape()->push(out, {a}, [a, out](Tape& t, const Matrix& g) {
        t.accumulate(a, g.cwiseProduct((1.0 - out.array().square()).matrix()));
    });
}

Var sum(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var row_sum(const Var& a) {
    return a.tape()->push(a.value().rowwise().sum(), {a}, [a](Tape& t, const Matrix& g) {
        Matrix d(a.rows(), a.cols());
        d.colwise() = g.col(0);
        t.accumulate(a, d);
    });
}

Var row_mean(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.cols());
    return a.tape()->push(a.value().rowwise().mean(), {a}, [a, inv](Tape& t, const Matrix& g) {
        Matrix d(a.rows(), a.cols());
        d.colwise() = g.col(0) * inv;
        t.accumulate(a, d);
    });
}

Var col_sum(const Var& a) {
    return a.tape()->push(a.value().colwise().sum(), {a}, [a](Tape& t, const Matrix& g) {
        Matrix d(a.rows(), a.cols());
        d.rowwise() = g.row(0);
        t.accumulate(a, d);
    });
}

Var softmax_rows(const Var& a) {
    Matrix out = a.value();
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double m = out.row(r).maxCoeff();
        out.row(r) = (out.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return a.tape()->push(out, {a}, [a, out](Tape& t, const Matrix& g) {
        const Eigen::VectorXd dot = g.cwiseProduct(out).rowwise().sum();
        Matrix d = g;
        d.colwise() -= dot;
        t.accumulate(a, d.cwiseProduct(out));
    });
}

Var log_softmax_rows(const Var& a) {
    Matrix out = a.value();
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double m = out.row(r).maxCoeff();
        const double lse = m + std::log((out.row(r).array() - m).exp().sum());
        out.row(r).array() -= lse;
    }
    return a.tape()->push(out, {a}, [a, out](Tape& t, const Matrix& g) {
        const Eigen::VectorXd gs = g.rowwise().sum();
        Matrix p = out.array().exp().matrix();
        Matrix d = g - gs.asDiagonal() * p;
        t.accumulate(a, d);
    });
}

Var pick(const Var& a, std::span<const int> index) {
    if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw ShapeError("pick: index length != rows");
    Matrix out(a.rows(), 1);
    std::vector<int> idx(index.begin(), index.end());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        if (idx[r] < 0 || idx[r] >= a.cols()) throw ShapeError("pick: index out of range");
        out(r, 0) = a.value()(r, idx[r]);
    }
    return a.tape()->push(std::move(out), {a}, [a, idx](Tape& t, const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < a.rows(); ++r) d(r, idx[r]) = g(r, 0);
        t.accumulate(a, d);
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
    return a.tape()->push(a.value().middleCols(start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        d.middleCols(start, count) = g;
        t.accumulate(a, d);
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
    return a.tape()->push(a.value().middleRows(start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        d.middleRows(start, count) = g;
        t.accumulate(a, d);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != parts[0].rows()) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(parts[0].rows(), cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    std::vector<Var> keep(parts.begin(), parts.end());
    return parts[0].tape()->push(std::move(out), parts, [keep](Tape& t, const Matrix& g) {
        Eigen::Index off = 0;
        for (const Var& p : keep) {
            t.accumulate(p, g.middleCols(off, p.cols()));
            off += p.cols();
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != parts[0].cols()) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, parts[0].cols());
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    std::vector<Var> keep(parts.begin(), parts.end());
    return parts[0].tape()->push(std::move(out), parts, [keep](Tape& t, const Matrix& g) {
        Eigen::Index off = 0;
        for (const Var& p : keep) {
            t.accumulate(p, g.middleRows(off, p.rows()));
            off += p.rows();
        }
    });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != a.value().size()) throw ShapeError("reshape: size mismatch");
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols()));
    });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
    Matrix out(n, table.cols());
    std::vector<int> idx(ids.begin(), ids.end());
    for (Eigen::Index r = 0; r < n; ++r) {
        if (idx[r] < 0 || idx[r] >= table.rows()) {
            throw InputError("gather_rows: index " + std::to_string(idx[r]) + " out of range");
        }
        out.row(r) = table.value().row(idx[r]);
    }
    return table.tape()->push(std::move(out), {table}, [table, idx](Tape& t, const Matrix& g) {
        Matrix d = Matrix::Zero(table.rows(), table.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) d.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
        t.accumulate(table, d);
    });
}

Var repeat_rows(const Var& a, Eigen::Index times) {
    Matrix out(a.rows() * times, a.cols());
    for (Eigen::Index b = 0; b < a.rows(); ++b) {
        out.middleRows(b * times, times).rowwise() = a.value().row(b);
    }
    return a.tape()->push(std::move(out), {a}, [a, times](Tape& t, const Matrix& g) {
        Matrix d(a.rows(), a.cols());
        for (Eigen::Index b = 0; b < a.rows(); ++b) d.row(b) = g.middleRows(b * times, times).colwise().sum();
        t.accumulate(a, d);
    });
}

Var tile_rows(const Var& a, Eigen::Index times) {
    const Eigen::Index n = a.rows();
    Matrix out(n * times, a.cols());
    for (Eigen::Index b = 0; b < times; ++b) out.middleRows(b * n, n) = a.value();
    return a.tape()->push(std::move(out), {a}, [a, n, times](Tape& t, const Matrix& g) {
        Matrix d = Matrix::Zero(n, a.cols());
        for (Eigen::Index b = 0; b < times; ++b) d += g.middleRows(b * n, n);
        t.accumulate(a, d);
    });
}

Var seq_mean_rows(const Var& a, Eigen::Index seq_len) {
    require_blocked(a, seq_len, "seq_mean_rows");
    const Eigen::Index batch = a.rows() / seq_len;
    Matrix out(batch, a.cols());
    for (Eigen::Index b = 0; b < batch; ++b) out.row(b) = a.value().middleRows(b * seq_len, seq_len).colwise().mean();
    return a.tape()->push(std::move(out), {a}, [a, seq_len, batch](Tape& t, const Matrix& g) {
        Matrix d(a.rows(), a.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
            d.middleRows(b * seq_len, seq_len).rowwise() = g.row(b) / static_cast<double>(seq_len);
        }
        t.accumulate(a, d);
    });
}

Var seq_sum(const Var& a, Eigen::Index seq_len) {
    require_blocked(a, seq_len, "seq_sum");
    const Eigen::Index batch = a.rows() / seq_len;
    Matrix out(a.rows(), 1);
    for (Eigen::Index b = 0; b < batch; ++b) {
        out.middleRows(b * seq_len, seq_len).setConstant(a.value().middleRows(b * seq_len, seq_len).sum());
    }
    return a.tape()->push(std::move(out), {a}, [a, seq_len, batch](Tape& t, const Matrix& g) {
        Matrix d(a.rows(), a.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
            d.middleRows(b * seq_len, seq_len).setConstant(g.middleRows(b * seq_len, seq_len).sum());
        }
        t.accumulate(a, d);
    });
}

Var seq_scores(const Var& q, const Var& k, Eigen::Index seq_len) {
    require_same_shape(q, k, "seq_scores");
    require_blocked(q, seq_len, "seq_scores");
    const Eigen::Index batch = q.rows() / seq_len;
    Matrix out(q.rows(), seq_len);
    for (Eigen::Index b = 0; b < batch; ++b) {
        out.middleRows(b * seq_len, seq_len).noalias() =
            q.value().middleRows(b * seq_len, seq_len) * k.value().middleRows(b * seq_len, seq_len).transpose();
    }
    return q.tape()->push(std::move(out), {q, k}, [q, k, seq_len, batch](Tape& t, const Matrix& g) {
        if (q.needs_grad()) {
            Matrix dq(q.rows(), q.cols());
            for (Eigen::Index b = 0; b < batch; ++b) {
                dq.middleRows(b * seq_len, seq_len).noalias() =
                    g.middleRows(b * seq_len, seq_len) * k.value().middleRows(b * seq_len, seq_len);
            }
            t.accumulate(q, dq);
        }
        if (k.needs_grad()) {
            Matrix dk(k.rows(), k.cols());
            for (Eigen::Index b = 0; b < batch; ++b) {
                dk.middleRows(b * seq_len, seq_len).noalias() =
                    g.middleRows(b * seq_len, seq_len).transpose() * q.value().middleRows(b * seq_len, seq_len);
            }
            t.accumulate(k, dk);
        }
    });
}

Var seq_mix(const Var& p, const Var& v, Eigen::Index seq_len) {
    require_blocked(p, seq_len, "seq_mix");
    if (p.cols() != seq_len || p.rows() != v.rows()) throw ShapeError("seq_mix: expected [B*S x S] and [B*S x C]");
    const Eigen::Index batch = p.rows() / seq_len;
    Matrix out(v.rows(), v.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
        out.middleRows(b * seq_len, seq_len).noalias() =
            p.value().middleRows(b * seq_len, seq_len) * v.value().middleRows(b * seq_len, seq_len);
    }
    return p.tape()->push(std::move(out), {p, v}, [p, v, seq_len, batch](Tape& t, const Matrix& g) {
        if (p.needs_grad()) {
            Matrix dp(p.rows(), p.cols());
            for (Eigen::Index b = 0; b < batch; ++b) {
                dp.middleRows(b * seq_len, seq_len).noalias() =
                    g.middleRows(b * seq_len, seq_len) * v.value().middleRows(b * seq_len, seq_len).transpose();
            }
            t.accumulate(p, dp);
        }
        if (v.needs_grad()) {
            Matrix dv(v.rows(), v.cols());
            for (Eigen::Index b = 0; b < batch; ++b) {
                dv.middleRows(b * seq_len, seq_len).noalias() =
                    p.value().middleRows(b * seq_len, seq_len).transpose() * g.middleRows(b * seq_len, seq_len);
            }
            t.accumulate(v, dv);
        }
    });
}

}  // namespace flowlm::ad
