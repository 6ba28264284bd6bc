// SPDX-License-Identifier: Apache-2.0
#include "flowlm/forward_process.hpp"

#include "flowlm/errors.hpp"
#include "flowlm/schedule.hpp"

#include <cmath>

namespace flowlm {

using ad::Matrix;
using ad::Tape;
using ad::Var;

ProcessKind parse_process_kind(std::string_view s) {
    if (s == "static" || s == "dlm") return ProcessKind::STATIC_DLM;
    if (s == "mulan") return ProcessKind::MULAN;
    if (s == "nfdm") return ProcessKind::NFDM;
    throw ConfigError("unknown forward process '" + std::string(s) + "' (expected static, mulan or nfdm)");
}

std::string to_string(ProcessKind k) {
    switch (k) {
        case ProcessKind::STATIC_DLM: return "static";
        case ProcessKind::MULAN: return "mulan";
        case ProcessKind::NFDM: return "nfdm";
    }
    return "?";
}

namespace {

void require_times(const std::vector<double>& times) {
    for (double t : times) {
        if (!(t >= 0.0 && t <= 1.0)) throw InputError("time must lie in [0, 1], got " + std::to_string(t));
    }
}

// [B*S x 1] column holding f(t_b) on every row of sequence b.
Var time_col(Tape& tape, const std::vector<double>& times, Eigen::Index seq_len, double (*f)(double, double),
             double arg = 0.0) {
    Matrix c(static_cast<Eigen::Index>(times.size()) * seq_len, 1);
    for (std::size_t b = 0; b < times.size(); ++b) {
        c.middleRows(static_cast<Eigen::Index>(b) * seq_len, seq_len).setConstant(f(times[b], arg));
    }
    return tape.constant(std::move(c));
}

}  // namespace

ForwardProcess::ForwardProcess(nn::ParameterSet& ps, const ProcessSpec& spec, Rng& rng) : spec_(spec) {
    if (!(spec.delta > 0.0 && spec.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
    if (spec.eta < 0.0) throw ConfigError("eta must be non-negative");
    if (spec.kind == ProcessKind::MULAN) {
        nn::GammaNetSpec g = spec.gamma;
        g.seq_len = spec.seq_len;
        g.hidden = spec.hidden;
        spec_.gamma = g;
        gamma_net_ = std::make_unique<nn::GammaNet>(ps, g, rng);
    } else if (spec.kind == ProcessKind::NFDM) {
        nn::BackboneSpec b;
        b.in_dim = spec.hidden;
        b.out_dim = 2 * spec.hidden;
        b.width = spec.nfdm_width;
        b.layers = spec.nfdm_layers;
        b.heads = spec.nfdm_heads;
        b.seq_len = spec.seq_len;
        b.timed = true;
        b.conditioning = spec.nfdm_conditioning;
        b.fourier = spec.fourier;
        nfdm_net_ = std::make_unique<nn::Backbone>(ps, "nfdm", b, rng);
        // keep the learned perturbation small at initialization
        auto& head = ps.get("nfdm.out.w");
        head.value *= 0.1;
        ps.get("nfdm.out.b").value.rightCols(spec.hidden).setConstant(spec.log_sigma_bar_init);
        volatility_net_ = std::make_unique<nn::VolatilityNet>(ps, spec.fourier, spec.volatility_width, rng);
    }
}

Jet ForwardProcess::analytic_jet(Tape& tape, const Var& x, const Var& gamma, const Var& dgamma) const {
    Jet j;
    j.gamma = gamma;
    j.dgamma = dgamma;
    // log alpha^2 = -softplus(gamma), log sigma^2 = -softplus(-gamma)
    Var alpha = ad::exp(ad::scale(ad::softplus(gamma), -0.5));
    Var sigma = ad::exp(ad::scale(ad::softplus(ad::neg(gamma)), -0.5));
    Var alpha2 = ad::square(alpha);
    Var sigma2 = ad::square(sigma);
    j.mu = ad::mul(alpha, x);
    j.sigma = sigma;
    // alpha' = -alpha sigma^2 gamma' / 2, sigma' = sigma alpha^2 gamma' / 2
    Var dalpha = ad::scale(ad::mul(ad::mul(alpha, sigma2), dgamma), -0.5);
    j.dmu = ad::mul(dalpha, x);
    j.dsigma = ad::scale(ad::mul(ad::mul(sigma, alpha2), dgamma), 0.5);
    j.g2 = ad::scale(ad::mul(sigma2, dgamma), spec_.eta);
    (void)tape;
    return j;
}

Jet ForwardProcess::nfdm_jet(Tape& tape, const Var& x, const std::vector<double>& times, bool with_derivatives) const {
    const Eigen::Index s = spec_.seq_len;
    const Eigen::Index h = spec_.hidden;
    ad::Dual out = nfdm_net_->forward(tape, ad::Dual{x}, times, with_derivatives);
    ad::Dual mu_bar = ad::slice_cols(out, 0, h);
    ad::Dual raw = ad::slice_cols(out, h, h);

    const double log_delta = std::log(spec_.delta);
    Var one_minus = time_col(tape, times, s, [](double t, double) { return 1.0 - t; });
    Var bridge = time_col(tape, times, s, [](double t, double) { return t * (1.0 - t); });
    Var delta_pow = time_col(tape, times, s, [](double t, double d) { return std::pow(d, 1.0 - t); }, spec_.delta);

    Jet j;
    j.mu = ad::add(ad::mul_col(x, one_minus), ad::mul_col(mu_bar.v, bridge));
    j.sigma = ad::mul_col(ad::exp(ad::mul_col(raw.v, bridge)), delta_pow);
    if (with_derivatives) {
        Var slope = time_col(tape, times, s, [](double t, double) { return 1.0 - 2.0 * t; });
        j.dmu = ad::add(ad::sub(ad::mul_col(mu_bar.v, slope), x), ad::mul_col(mu_bar.d, bridge));
        Var dlog = ad::shift(ad::add(ad::mul_col(raw.v, slope), ad::mul_col(raw.d, bridge)), -log_delta);
        j.dsigma = ad::mul(j.sigma, dlog);
    }
    Var g2 = ad::repeat_rows(volatility_net_->forward(tape, times), s);
    j.g2 = ad::mul_col(tape.constant(Matrix::Ones(x.rows(), h)), g2);
    return j;
}

Jet ForwardProcess::jet(Tape& tape, const Var& x, const std::vector<double>& times, const Var* context,
                        bool with_derivatives) const {
    require_times(times);
    const Eigen::Index s = spec_.seq_len;
    const auto b = static_cast<Eigen::Index>(times.size());
    if (x.rows() != b * s || x.cols() != spec_.hidden) throw ShapeError("forward process: latent shape mismatch");
    if (needs_context() && context == nullptr) throw InputError("forward process: context required");

    switch (spec_.kind) {
        case ProcessKind::STATIC_DLM: {
            Var g = time_col(tape, times, s, [](double t, double) { return schedule::dlm_gamma_value(t); });
            Var dg = time_col(tape, times, s, [](double t, double) { return schedule::dlm_dgamma_value(t); });
            Var ones = tape.constant(Matrix::Ones(b * s, spec_.hidden));
            return analytic_jet(tape, x, ad::mul_col(ones, g), ad::mul_col(ones, dg));
        }
        case ProcessKind::MULAN: {
            auto out = gamma_net_->forward(tape, times, context);
            Var gamma = out.gamma;
            Var dgamma = out.dgamma;
            if (spec_.fixed_average_snr) {
                // gamma = gamma_dlm + raw - log D + log sum exp(-raw), per sequence
                const double log_d = std::log(static_cast<double>(s * spec_.hidden));
                Var w = ad::exp(ad::neg(gamma));
                Var total = ad::seq_sum(ad::row_sum(w), s);
                Var mean_rate = ad::div(ad::seq_sum(ad::row_sum(ad::mul(w, dgamma)), s), total);
                Var g = time_col(tape, times, s, [](double t, double) { return schedule::dlm_gamma_value(t); });
                Var dg = time_col(tape, times, s, [](double t, double) { return schedule::dlm_dgamma_value(t); });
                gamma = ad::add_col(gamma, ad::add(ad::shift(g, -log_d), ad::log(total)));
                dgamma = ad::add_col(dgamma, ad::sub(dg, mean_rate));
            }
            return analytic_jet(tape, x, gamma, dgamma);
        }
        case ProcessKind::NFDM:
            return nfdm_jet(tape, x, times, with_derivatives);
    }
    throw InputError("unknown forward process");
}

Jet ForwardProcess::eval_jet(Tape& tape, const Matrix& x, double t, const Matrix* context, bool deriv) const {
    if (x.rows() % spec_.seq_len != 0) throw ShapeError("forward process: rows must be a multiple of seq_len");
    std::vector<double> times(static_cast<std::size_t>(x.rows() / spec_.seq_len), t);
    Var xv = tape.constant(x);
    Var cv;
    if (context != nullptr) cv = tape.constant(*context);
    return jet(tape, xv, times, context != nullptr ? &cv : nullptr, deriv);
}

GaussianMarginal ForwardProcess::marginal(const Matrix& x, double t, const Matrix* context) const {
    Tape tape(false);
    Jet j = eval_jet(tape, x, t, context, false);
    return {j.mu.value(), j.sigma.value()};
}

Matrix ForwardProcess::sample_zt(const Matrix& eps, double t, const Matrix& x, const Matrix* context) const {
    GaussianMarginal m = marginal(x, t, context);
    if (eps.rows() != m.mu.rows() || eps.cols() != m.mu.cols()) throw ShapeError("sample_zt: eps shape mismatch");
    return m.mu + m.sigma.cwiseProduct(eps);
}

Matrix ForwardProcess::invert(const Matrix& z, double t, const Matrix& x, const Matrix* context) const {
    GaussianMarginal m = marginal(x, t, context);
    require_sigma_floor(m.sigma);
    return (z - m.mu).cwiseQuotient(m.sigma);
}

Matrix ForwardProcess::ode_drift(const Matrix& z, double t, const Matrix& x, const Matrix* context) const {
    Tape tape(false);
    Jet j = eval_jet(tape, x, t, context, true);
    require_sigma_floor(j.sigma.value());
    return flowlm::ode_drift(j, eps_from_latent(j, tape.constant(z))).value();
}

Matrix ForwardProcess::score(const Matrix& z, double t, const Matrix& x, const Matrix* context) const {
    Tape tape(false);
    Jet j = eval_jet(tape, x, t, context, false);
    require_sigma_floor(j.sigma.value());
    return flowlm::score(j, tape.constant(z)).value();
}

Matrix ForwardProcess::drift_forward(const Matrix& z, double t, const Matrix& x, const Matrix* context) const {
    Tape tape(false);
    Jet j = eval_jet(tape, x, t, context, true);
    require_sigma_floor(j.sigma.value());
    return forward_drift(j, tape.constant(z)).value();
}

Matrix ForwardProcess::drift_backward(const Matrix& z, double t, const Matrix& x, const Matrix* context) const {
    Tape tape(false);
    Jet j = eval_jet(tape, x, t, context, true);
    require_sigma_floor(j.sigma.value());
    return backward_drift(j, tape.constant(z)).value();
}

DriftTerms ForwardProcess::drift_terms(const Matrix& z, double t, const Matrix& x, const Matrix* context) const {
    Tape tape(false);
    Jet j = eval_jet(tape, x, t, context, true);
    require_sigma_floor(j.sigma.value());
    Var zv = tape.constant(z);
    return {flowlm::ode_drift(j, eps_from_latent(j, zv)).value(), flowlm::score(j, zv).value(), j.g2.value()};
}

Matrix ForwardProcess::volatility(const Matrix& x, double t, const Matrix* context) const {
    Tape tape(false);
    return eval_jet(tape, x, t, context, true).g2.value();
}

Matrix ForwardProcess::gamma(const Matrix& x, double t, const Matrix* context) const {
    if (!has_analytic_snr()) throw UnsupportedPolicy("gamma is not defined for the NFDM process");
    Tape tape(false);
    return eval_jet(tape, x, t, context, false).gamma.value();
}

std::pair<Matrix, Matrix> ForwardProcess::nfdm_outputs(const Matrix& x, double t) const {
    if (spec_.kind != ProcessKind::NFDM) throw InputError("nfdm_outputs: process is not NFDM");
    require_times({t});
    Tape tape(false);
    std::vector<double> times(static_cast<std::size_t>(x.rows() / spec_.seq_len), t);
    ad::Dual out = nfdm_net_->forward(tape, ad::Dual{tape.constant(x)}, times, false);
    const Eigen::Index h = spec_.hidden;
    return {out.v.value().leftCols(h), out.v.value().rightCols(h)};
}

Var latent_from_eps(const Jet& j, const Var& eps) { return ad::add(j.mu, ad::mul(j.sigma, eps)); }

Var eps_from_latent(const Jet& j, const Var& z) { return ad::div(ad::sub(z, j.mu), j.sigma); }

Var ode_drift(const Jet& j, const Var& eps) {
    if (!j.dmu.valid()) throw InputError("ode_drift: jet built without time derivatives");
    return ad::add(j.dmu, ad::mul(j.dsigma, eps));
}

Var score(const Jet& j, const Var& z) { return ad::div(ad::sub(j.mu, z), ad::square(j.sigma)); }

Var backward_drift(const Jet& j, const Var& z) {
    return ad::sub(ode_drift(j, eps_from_latent(j, z)), ad::scale(ad::mul(j.g2, score(j, z)), 0.5));
}

Var forward_drift(const Jet& j, const Var& z) {
    return ad::add(ode_drift(j, eps_from_latent(j, z)), ad::scale(ad::mul(j.g2, score(j, z)), 0.5));
}

void require_sigma_floor(const Matrix& sigma) {
    if (sigma.size() > 0 && sigma.minCoeff() < kSigmaFloor) {
        throw DegenerateError("sigma below floor " + std::to_string(kSigmaFloor) + "; cannot invert");
    }
}

}  // namespace flowlm
