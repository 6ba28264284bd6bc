// SPDX-License-Identifier: Apache-2.0
#include "flowlm/sampler.hpp"

#include "flowlm/errors.hpp"
#include "flowlm/rng.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace flowlm {

SamplerMethod parse_sampler_method(std::string_view s) {
    if (s == "star" || s == "ddim") return SamplerMethod::STAR_DDIM;
    if (s == "chain") return SamplerMethod::MARKOV_CHAIN;
    if (s == "sde") return SamplerMethod::SDE;
    if (s == "ode") return SamplerMethod::ODE;
    throw ConfigError("unknown sampling method: " + std::string(s));
}

std::string to_string(SamplerMethod m) {
    switch (m) {
        case SamplerMethod::STAR_DDIM: return "star";
        case SamplerMethod::MARKOV_CHAIN: return "chain";
        case SamplerMethod::SDE: return "sde";
        case SamplerMethod::ODE: return "ode";
    }
    return "?";
}

NoiseMix parse_noise_mix(std::string_view s) {
    if (s == "star") return NoiseMix::constant(1.0);
    if (s == "snr-star") return NoiseMix::star_snr();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !(v >= 0.0 && v <= 1.0)) {
        throw ConfigError("noise mix must be star, snr-star or a number in [0, 1]: " + std::string(s));
    }
    return NoiseMix::constant(v);
}

std::string to_string(const NoiseMix& m) {
    if (m.snr_star) return "snr-star";
    std::ostringstream os;
    os << m.value;
    return os.str();
}

SamplingProblem model_problem(const Model& model, int batch, const Matrix* context) {
    if (model.uses_context() && context == nullptr) throw InputError("sampling: process needs a context");
    SamplingProblem p;
    p.process = &model.process();
    p.table = model.embedding().table().value;
    p.context = context;
    p.batch = batch;
    p.seq_len = model.spec().seq_len;
    p.hidden = model.spec().hidden;
    p.denoise = [&model, context, batch](const Matrix& z, double t) {
        ad::Tape tape(false);
        ad::Var table = model.embedding().var(tape);
        ad::Var cv;
        if (context != nullptr) cv = tape.constant(*context);
        std::vector<double> times(static_cast<std::size_t>(batch), t);
        return model.predictor()
            .forward(tape, tape.constant(z), times, table, context != nullptr ? &cv : nullptr)
            .value();
    };
    return p;
}

Matrix recombine_noise(const Matrix& eps_old, const Matrix& eps_new, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("noise mix must lie in [0, 1]");
    if (eps_old.rows() != eps_new.rows() || eps_old.cols() != eps_new.cols()) {
        throw ShapeError("recombine_noise: shape mismatch");
    }
    if (v == 1.0) return eps_new;
    if (v == 0.0) return eps_old;
    return std::sqrt(1.0 - v) * eps_old + std::sqrt(v) * eps_new;
}

Matrix recombine_noise(const Matrix& eps_old, const Matrix& eps_new, const Matrix& v) {
    if (eps_old.rows() != eps_new.rows() || eps_old.cols() != eps_new.cols() || v.rows() != eps_old.rows() ||
        v.cols() != eps_old.cols()) {
        throw ShapeError("recombine_noise: shape mismatch");
    }
    if ((v.array() < 0.0).any() || (v.array() > 1.0).any()) throw InputError("noise mix must lie in [0, 1]");
    return (1.0 - v.array()).sqrt() * eps_old.array() + v.array().sqrt() * eps_new.array();
}

std::vector<double> time_grid(int steps) {
    if (steps < 1) throw InputError("sampling needs at least one step");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(steps) + 1);
    for (int k = steps; k >= 0; --k) out.push_back(static_cast<double>(k) / steps);
    return out;
}

std::vector<int> decode_final(const Matrix& table, const Matrix& z0) { return nn::decode_argmax(table, z0); }

namespace {

void check_problem(const SamplingProblem& p) {
    if (p.process == nullptr || !p.denoise) throw InputError("sampling: incomplete problem");
    if (p.process->needs_context() && p.context == nullptr) throw InputError("sampling: process needs a context");
}

void require_finite(const Matrix& z, int step) {
    if (!z.allFinite()) throw NumericalError("sampling: non-finite latent at step " + std::to_string(step));
}

Trajectory start(const SamplingProblem& p, const SamplerConfig& cfg, Rng& rng, Matrix& z) {
    check_problem(p);
    Trajectory tr;
    tr.times = time_grid(cfg.steps);
    const Eigen::Index rows = static_cast<Eigen::Index>(p.batch) * p.seq_len;
    if (p.initial.size() > 0) {
        if (p.initial.rows() != rows || p.initial.cols() != p.hidden) throw ShapeError("sampling: initial latent shape");
        z = p.initial;
    } else {
        z = rng.normal_matrix(rows, p.hidden);
    }
    if (cfg.keep_latents) tr.latents.push_back(z);
    return tr;
}

void finish(const SamplingProblem& p, const SamplerConfig& cfg, Trajectory& tr, Matrix z) {
    tr.ids = decode_final(p.table, z);
    if (!cfg.keep_latents) tr.latents.push_back(std::move(z));
}

// Shared step of the star and chain samplers.
Trajectory run_chain(const SamplingProblem& p, const SamplerConfig& cfg, bool fresh_noise) {
    if (fresh_noise && cfg.mix.snr_star && !p.process->has_analytic_snr()) {
        throw UnsupportedPolicy("snr-star noise mix needs an analytic-SNR process");
    }
    Rng rng(cfg.seed);
    Matrix z;
    Trajectory tr = start(p, cfg, rng, z);
    const ForwardProcess& fp = *p.process;
    for (int k = 0; k < cfg.steps; ++k) {
        const double t = tr.times[static_cast<std::size_t>(k)];
        const double s = tr.times[static_cast<std::size_t>(k) + 1];
        const Matrix x_hat = p.denoise(z, t);
        Matrix eps = fp.invert(z, t, x_hat, p.context);
        if (fresh_noise) {
            const Matrix fresh = rng.normal_matrix(z.rows(), z.cols());
            if (cfg.mix.snr_star) {
                const Matrix gt = fp.gamma(x_hat, t, p.context);
                const Matrix gs = fp.gamma(x_hat, s, p.context);
                if ((gs.array() > gt.array()).any()) {
                    throw ScheduleError("snr-star: gamma decreases between sampling steps");
                }
                eps = recombine_noise(eps, fresh, Matrix((1.0 - (gs - gt).array().exp()).matrix()));
            } else {
                eps = recombine_noise(eps, fresh, cfg.mix.value);
            }
        }
        z = fp.sample_zt(eps, s, x_hat, p.context);
        require_finite(z, k);
        if (cfg.keep_latents) tr.latents.push_back(z);
    }
    finish(p, cfg, tr, std::move(z));
    return tr;
}

}  // namespace

Trajectory sample_star(const SamplingProblem& p, const SamplerConfig& cfg) {
    if (cfg.method != SamplerMethod::STAR_DDIM) throw InputError("sample_star: method must be star");
    return run_chain(p, cfg, false);
}

Trajectory sample_chain(const SamplingProblem& p, const SamplerConfig& cfg) {
    if (cfg.method != SamplerMethod::MARKOV_CHAIN) throw InputError("sample_chain: method must be chain");
    if (!cfg.mix.snr_star && !(cfg.mix.value >= 0.0 && cfg.mix.value <= 1.0)) {
        throw InputError("noise mix must lie in [0, 1]");
    }
    return run_chain(p, cfg, true);
}

Trajectory sample_sde(const SamplingProblem& p, const SamplerConfig& cfg) {
    if (cfg.method != SamplerMethod::SDE && cfg.method != SamplerMethod::ODE) {
        throw InputError("sample_sde: method must be sde or ode");
    }
    const double tau = cfg.method == SamplerMethod::ODE ? 0.0 : cfg.tau;
    if (!(tau >= 0.0)) throw InputError("volatility scale must be non-negative");
    Rng rng(cfg.seed);
    Matrix z;
    Trajectory tr = start(p, cfg, rng, z);
    const double dt = 1.0 / cfg.steps;
    for (int k = 0; k < cfg.steps; ++k) {
        const double t = tr.times[static_cast<std::size_t>(k)];
        const Matrix x_hat = p.denoise(z, t);
        const DriftTerms d = p.process->drift_terms(z, t, x_hat, p.context);
        if (tau == 0.0) {
            z -= d.ode * dt;
        } else {
            // a rescaled MULAN coordinate can have g2 < 0; h2 = 0 there keeps the marginals
            const Matrix g2 = (tau * tau * d.g2).cwiseMax(0.0);
            const Matrix drift = d.ode - 0.5 * g2.cwiseProduct(d.score);
            const Matrix w = rng.normal_matrix(z.rows(), z.cols());
            z = z - drift * dt + (g2.array().sqrt() * w.array() * std::sqrt(dt)).matrix();
        }
        require_finite(z, k);
        if (cfg.keep_latents) tr.latents.push_back(z);
    }
    finish(p, cfg, tr, std::move(z));
    return tr;
}

Trajectory sample(const SamplingProblem& p, const SamplerConfig& cfg) {
    switch (cfg.method) {
        case SamplerMethod::STAR_DDIM: return sample_star(p, cfg);
        case SamplerMethod::MARKOV_CHAIN: return sample_chain(p, cfg);
        case SamplerMethod::SDE:
        case SamplerMethod::ODE: return sample_sde(p, cfg);
    }
    throw InputError("unknown sampling method");
}

}  // namespace flowlm
