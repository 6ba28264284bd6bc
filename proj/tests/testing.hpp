// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit and acceptance tests.
#pragma once

#include "flowlm/autodiff.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace flowlm::testing {

using ad::Matrix;

inline Matrix random_matrix(std::mt19937_64& gen, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
    return m;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Worst relative error between reverse-mode gradients and central
// differences for a scalar function of the listed parameters. At most
// `max_entries` coordinates per parameter are probed (spread evenly).
inline double gradient_check(const std::function<ad::Var(ad::Tape&)>& loss,
                             const std::vector<ad::Parameter*>& params, double h = 1e-5,
                             Eigen::Index max_entries = 12, double abs_floor = 1e-7) {
    for (auto* p : params) p->zero_grad();
    {
        ad::Tape tape;
        ad::Var out = loss(tape);
        tape.backward(out);
    }
    auto eval = [&] {
        ad::Tape tape(false);
        return loss(tape).value()(0, 0);
    };
    double worst = 0.0;
    for (auto* p : params) {
        const Eigen::Index n = p->size();
        const Eigen::Index stride = std::max<Eigen::Index>(1, n / max_entries);
        for (Eigen::Index i = 0; i < n; i += stride) {
            double& x = p->value.data()[i];
            const double keep = x;
            x = keep + h;
            const double up = eval();
            x = keep - h;
            const double down = eval();
            x = keep;
            const double fd = (up - down) / (2 * h);
            const double an = p->grad.data()[i];
            const double scale = std::max({std::abs(fd), std::abs(an), abs_floor});
            worst = std::max(worst, std::abs(fd - an) / scale);
        }
    }
    return worst;
}

}  // namespace flowlm::testing

#include "flowlm/model.hpp"

namespace flowlm::testing {

// Tiny model for fast unit tests.
inline ModelSpec tiny_spec(ProcessKind kind, int vocab, int seq_len = 6, int hidden = 4) {
    ModelSpec s;
    s.vocab = vocab;
    s.hidden = hidden;
    s.seq_len = seq_len;
    s.embedding_init_sd = 0.5;
    s.predictor.width = 8;
    s.predictor.layers = 1;
    s.predictor.heads = 2;
    s.predictor.fourier = nn::FourierTime{8, 1.0, 50.0};
    s.process.kind = kind;
    s.process.gamma.degree = 3;
    s.process.gamma.context_width = 8;
    s.process.nfdm_width = 8;
    s.process.nfdm_layers = 1;
    s.process.nfdm_heads = 2;
    s.process.fourier = nn::FourierTime{8, 1.0, 50.0};
    s.process.volatility_width = 8;
    s.context.width = 8;
    s.context.heads = 2;
    return s;
}

}  // namespace flowlm::testing
